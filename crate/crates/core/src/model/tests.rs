use rand::seq::SliceRandom;
use rand::Rng as _;

use super::*;
use crate::autodiff::gradient_check;
use crate::priors::{build_prior_dataset, FunctionDraw, KernelFamily, PriorConfig, PriorDataset};
use crate::rng::{seeded, standard_normals};

fn arch(d: usize, c: usize) -> Architecture {
    Architecture {
        input_dim: d,
        features: 6,
        latent_dim: 3,
        channels: c,
        centres: 5,
        phi_hidden: vec![7, 7],
        encoder_hidden: vec![8],
        decoder_hidden: vec![8],
        activation: Activation::Tanh,
    }
}

fn random_model(d: usize, c: usize, seed: u64) -> PiVaeModel {
    let a = arch(d, c);
    let bbox = vec![(-1.0, 1.0); d];
    let params = a.init_params(&bbox, &mut seeded(seed));
    let scale = (0..c).map(|i| 1.0 + i as f64).collect();
    PiVaeModel::new(a, params, scale).unwrap()
}

fn with(model: &PiVaeModel, edits: impl Fn(&str, &mut Tensor)) -> PiVaeModel {
    let mut params = model.params().clone();
    for (name, t) in params.iter_mut() {
        edits(name, t);
    }
    PiVaeModel::new(model.architecture().clone(), params, model.value_scale().to_vec()).unwrap()
}

fn zero_prefix(prefix: &'static str) -> impl Fn(&str, &mut Tensor) {
    move |name, t| {
        if name.starts_with(prefix) {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// A model whose feature map is the raw RBF layer (`F = M`, identity readout).
fn rbf_only() -> PiVaeModel {
    let a = Architecture { features: 3, centres: 3, phi_hidden: vec![], ..arch(2, 1) };
    let mut params = a.init_params(&[(-1.0, 1.0), (-1.0, 1.0)], &mut seeded(1));
    let mut eye = vec![0.0; 9];
    for i in 0..3 {
        eye[i * 4] = 1.0;
    }
    params.insert("phi.out.w".into(), Tensor::matrix(3, 3, eye));
    params.insert("phi.centres".into(), Tensor::matrix(3, 2, vec![0.0, 0.0, 1.0, -1.0, 0.5, 0.5]));
    params.insert("phi.log_bw".into(), Tensor::row(vec![0.0, 0.5f64.ln(), 2f64.ln()]));
    PiVaeModel::new(a, params, vec![1.0]).unwrap()
}

#[test]
fn rbf_layer_at_centre_and_unit_distance() {
    let m = rbf_only();
    let phi = m.phi(&[vec![0.0, 0.0]]).unwrap();
    assert_eq!(phi.get(0, 0), 1.0);
    // Centre 1 has bandwidth 0.5; move 0.5 along the first axis.
    let phi = m.phi(&[vec![1.5, -1.0], vec![0.5, 2.5]]).unwrap();
    assert!((phi.get(0, 1) - (-1f64).exp()).abs() < 1e-15);
    // Centre 2 has bandwidth 2.
    assert!((phi.get(1, 2) - (-1f64).exp()).abs() < 1e-15);
}

#[test]
fn phi_is_pure_and_checks_dimension() {
    let m = random_model(2, 1, 3);
    let s = vec![vec![0.3, -0.2], vec![0.3, -0.2]];
    let phi = m.phi(&s).unwrap();
    assert_eq!(phi.row_slice(0), phi.row_slice(1));
    assert_eq!(phi, m.phi(&s).unwrap());
    assert_eq!(phi.cols(), 6);
    assert!(matches!(m.phi(&[vec![0.0]]), Err(ModelError::Dimension { .. })));
}

#[test]
fn reconstruct_is_linear() {
    let m = random_model(1, 2, 4);
    let s: Vec<Vec<f64>> = (0..9).map(|i| vec![-1.0 + 0.25 * i as f64]).collect();
    let fc = m.architecture().beta_len();
    let zero = m.reconstruct(&vec![0.0; fc], &s).unwrap();
    assert!(zero.iter().flatten().all(|&v| v == 0.0));

    let phi = m.phi(&s).unwrap();
    let mut unit = vec![0.0; fc];
    unit[2] = 1.0;
    let sel = m.reconstruct(&unit, &s).unwrap();
    for (k, v) in sel.iter().enumerate() {
        assert_eq!(v[0], phi.get(k, 2));
        assert_eq!(v[1], 0.0);
    }

    let mut rng = seeded(5);
    let b1: Vec<f64> = standard_normals(&mut rng, fc);
    let b2: Vec<f64> = standard_normals(&mut rng, fc);
    let sum: Vec<f64> = b1.iter().zip(&b2).map(|(a, b)| a + b).collect();
    let (r1, r2, r12) = (m.reconstruct(&b1, &s).unwrap(), m.reconstruct(&b2, &s).unwrap(), m.reconstruct(&sum, &s).unwrap());
    for k in 0..s.len() {
        for c in 0..2 {
            let lhs = r12[k][c];
            let rhs = r1[k][c] + r2[k][c];
            assert!((lhs - rhs).abs() <= 8.0 * f64::EPSILON * (r1[k][c].abs() + r2[k][c].abs() + 1.0));
        }
    }
    assert!(matches!(m.reconstruct(&[1.0], &s), Err(ModelError::Dimension { .. })));
    assert!(m.reconstruct(&b1, &[]).unwrap().is_empty());
}

#[test]
fn zero_networks() {
    let m = random_model(1, 1, 6);
    let zero_enc = with(&m, zero_prefix("enc."));
    let (mu, sd) = zero_enc.encode(&vec![0.7; 6]).unwrap();
    assert_eq!(mu, vec![0.0; 3]);
    assert_eq!(sd, vec![1.0; 3]);

    let zero_dec = with(&m, zero_prefix("dec."));
    let beta = zero_dec.decode(&[0.4, -1.0, 2.0]).unwrap();
    assert_eq!(beta, vec![0.0; 6]);
    let f = zero_dec.evaluate(&[0.4, -1.0, 2.0], &[vec![0.1], vec![0.9]]).unwrap();
    assert!(f.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn encoder_decoder_shapes_and_determinism() {
    let m = random_model(2, 2, 7);
    let beta: Vec<f64> = (0..12).map(|i| i as f64 / 10.0).collect();
    let (mu, sd) = m.encode(&beta).unwrap();
    assert_eq!((mu.len(), sd.len()), (3, 3));
    assert!(sd.iter().all(|&s| s > 0.0));
    assert_eq!(m.encode(&beta).unwrap(), (mu, sd));
    let z = [0.1, 0.2, -0.3];
    let d = m.decode(&z).unwrap();
    assert_eq!(d.len(), 12);
    assert_eq!(m.decode(&z).unwrap(), d);
    assert!(m.decode(&[0.0]).is_err());
    assert!(m.encode(&[0.0]).is_err());
}

fn point(id: usize, s: f64, x: f64) -> FunctionDraw {
    FunctionDraw { id, locations: vec![vec![s]], values: vec![x], integral: None }
}

#[test]
fn loss_hand_values() {
    // Phi(s) = [1] via a zero output layer with unit bias; zero encoder gives
    // z_mu = 0, z_sd = 1 so KL = 0; zero decoder gives beta_hat = 0.
    let a = Architecture { features: 1, ..arch(1, 1) };
    let params = a.init_params(&[(-1.0, 1.0)], &mut seeded(8));
    let m = PiVaeModel::new(a, params, vec![1.0]).unwrap();
    let m = with(&m, |name, t| {
        if name.starts_with("enc.") || name.starts_with("dec.") || name == "phi.out.w" {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        if name == "phi.out.b" {
            t.data_mut()[0] = 1.0;
        }
    });
    let mut rng = seeded(9);
    let loss = pivae_loss(&m, &[point(0, 0.2, 1.0)], &[vec![0.0]], 1.0, &mut rng).unwrap();
    assert_eq!(loss.total, 2.0);
    assert_eq!(loss.kl, 0.0);
    let perfect = pivae_loss(&m, &[point(0, 0.2, 0.0)], &[vec![0.0]], 1.0, &mut rng).unwrap();
    assert_eq!(perfect.total, 0.0);
}

#[test]
fn loss_is_non_negative_and_checks_channels() {
    let m = random_model(1, 1, 10);
    let mut rng = seeded(11);
    for _ in 0..50 {
        let batch: Vec<FunctionDraw> = (0..3)
            .map(|i| FunctionDraw {
                id: i,
                locations: (0..4).map(|_| vec![rng.random_range(-1.0..1.0)]).collect(),
                values: standard_normals(&mut rng, 4),
                integral: None,
            })
            .collect();
        let betas: Vec<Vec<f64>> = (0..3).map(|_| standard_normals(&mut rng, 6)).collect();
        assert!(pivae_loss(&m, &batch, &betas, 1.0, &mut rng).unwrap().total >= 0.0);
    }
    let two = random_model(1, 2, 10);
    let err = pivae_loss(&two, &[point(0, 0.0, 1.0)], &[vec![0.0; 12]], 1.0, &mut rng);
    assert!(matches!(err, Err(ModelError::Dataset(_))));
}

#[test]
fn loss_gradients_match_finite_differences() {
    for (c, seed) in [(1, 12), (2, 13)] {
        let m = random_model(2, c, seed);
        let mut rng = seeded(seed);
        let batch: Vec<FunctionDraw> = (0..2)
            .map(|i| FunctionDraw {
                id: i,
                locations: (0..3).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect(),
                values: standard_normals(&mut rng, 3),
                integral: (c == 2).then(|| standard_normals(&mut rng, 3)),
            })
            .collect();
        let refs: Vec<&FunctionDraw> = batch.iter().collect();
        let eps = Tensor::matrix(2, 3, standard_normals(&mut rng, 6));
        let inputs = loss::batch_inputs(m.architecture(), &refs, eps, m.value_scale()).unwrap();
        let mut params = m.params().clone();
        params.insert("beta".into(), Tensor::matrix(2, 6 * c, standard_normals(&mut rng, 12 * c)));
        let lg = LossGraph::new(m.architecture(), 0.7);
        let err = gradient_check(&lg.graph, lg.total, &inputs, &params, 1e-5, 1e-3).unwrap();
        assert!(err < 1e-4, "channels {c}: relative error {err}");
    }
}

#[test]
fn exchangeability_and_consistency_are_bit_exact() {
    let m = random_model(2, 2, 14);
    let mut rng = seeded(15);
    for _ in 0..50 {
        let z = standard_normals(&mut rng, 3);
        let n = rng.random_range(1..30);
        let s: Vec<Vec<f64>> = (0..=n).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let prefix = &s[..n];
        let f = m.evaluate(&z, prefix).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| prefix[i].clone()).collect();
        let fp = m.evaluate(&z, &permuted).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert_eq!(fp[j], f[i]);
        }
        let superset = m.evaluate(&z, &s).unwrap();
        assert_eq!(&superset[..n], &f[..]);
    }
}

#[test]
fn model_file_round_trip() {
    let m = random_model(2, 2, 16);
    let mut buf = Vec::new();
    write_model(&m, &mut buf).unwrap();
    let back = read_model(&mut buf.as_slice()).unwrap();
    assert_eq!(back, m);
    let z = [0.3, -0.1, 1.2];
    assert_eq!(back.decode(&z).unwrap(), m.decode(&z).unwrap());

    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(read_model(&mut bad.as_slice()), Err(ModelError::Format(_))));
    let mut wrong_version = buf.clone();
    wrong_version[5] = 99;
    assert!(matches!(read_model(&mut wrong_version.as_slice()), Err(ModelError::Version { found: 99, .. })));
    let truncated = &buf[..buf.len() - 3];
    assert!(matches!(read_model(&mut &truncated[..]), Err(ModelError::Truncated)));
    let mut trailing = buf.clone();
    trailing.push(0);
    assert!(matches!(read_model(&mut trailing.as_slice()), Err(ModelError::Format(_))));
}

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        latent_dim: 4,
        features: 10,
        centres: 12,
        phi_hidden: vec![16, 16],
        encoder_hidden: vec![32],
        decoder_hidden: vec![32],
        epochs,
        batch_size: 16,
        adam: crate::autodiff::AdamConfig::with_lr(3e-3),
        ..TrainConfig::default()
    }
}

#[test]
fn constant_zero_corpus_reconstructs() {
    let draws = (0..64)
        .map(|i| FunctionDraw {
            id: i,
            locations: (0..8).map(|k| vec![-1.0 + k as f64 / 4.0]).collect(),
            values: vec![0.0; 8],
            integral: None,
        })
        .collect();
    let ds = PriorDataset::new(draws).unwrap();
    let out = train_prior(&ds, &small_config(30)).unwrap();
    assert!(out.report.reconstruction_mse < 1e-3, "{}", out.report.reconstruction_mse);
}

fn gp_corpus(n: usize, seed: u64) -> PriorDataset {
    let cfg = PriorConfig::gp(KernelFamily::Rbf, [0.3, 0.8], n, 16);
    build_prior_dataset(&cfg, seed).unwrap()
}

#[test]
fn training_loss_decreases_and_is_reproducible() {
    let ds = gp_corpus(128, 17);
    let cfg = small_config(40);
    let a = train_prior(&ds, &cfg).unwrap();
    let losses: Vec<f64> = a.report.epochs.iter().map(|e| e.loss).collect();
    let windows: Vec<f64> = losses.chunks(10).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    assert!(windows.windows(2).all(|w| w[1] <= w[0]), "{windows:?}");
    assert!(a.report.epochs.iter().enumerate().all(|(i, e)| e.epoch == i));
    let b = train_prior(&ds, &cfg).unwrap();
    assert_eq!(a.report.final_loss.to_bits(), b.report.final_loss.to_bits());
    assert_eq!(a.model, b.model);
    assert_eq!(a.betas.len(), 128);
}

#[test]
fn divergence_names_epoch_and_batch() {
    let ds = gp_corpus(32, 18);
    let cfg = TrainConfig { adam: crate::autodiff::AdamConfig::with_lr(1e300), ..small_config(3) };
    match train_prior(&ds, &cfg) {
        Err(ModelError::Diverged { epoch, batch }) => assert!(epoch < 3 && batch < 2),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.report.final_loss)),
    }
}
