//! Binary model files.
//!
//! Layout, all integers `u32` and all reals `f64`, little-endian:
//! magic `PIVAE`, format version, `D F L C`, centre count, activation byte
//! (0 tanh, 1 relu), the three hidden-width lists (length then widths), `C`
//! value scales, tensor count, then each tensor as rank, extents and values in
//! [`Architecture::param_shapes`] order.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::autodiff::{Activation, Tensor, TensorMap};
use crate::FORMAT_VERSION;

use super::{Architecture, ModelError, PiVaeModel};

pub const MAGIC: &[u8; 5] = b"PIVAE";

pub fn write_model(model: &PiVaeModel, w: &mut impl Write) -> Result<(), ModelError> {
    let arch = model.architecture();
    let u32_ = |w: &mut dyn Write, v: usize| -> std::io::Result<()> {
        let v = u32::try_from(v).map_err(|_| std::io::Error::new(ErrorKind::InvalidInput, "size exceeds u32"))?;
        w.write_all(&v.to_le_bytes())
    };
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for v in [arch.input_dim, arch.features, arch.latent_dim, arch.channels, arch.centres] {
        u32_(w, v)?;
    }
    w.write_all(&[match arch.activation {
        Activation::Tanh => 0,
        Activation::Relu => 1,
    }])?;
    for widths in [&arch.phi_hidden, &arch.encoder_hidden, &arch.decoder_hidden] {
        u32_(w, widths.len())?;
        for &v in widths.iter() {
            u32_(w, v)?;
        }
    }
    for s in model.value_scale() {
        w.write_all(&s.to_le_bytes())?;
    }
    let shapes = arch.param_shapes();
    u32_(w, shapes.len())?;
    for (name, _, _) in &shapes {
        let t = &model.params()[name];
        u32_(w, t.shape().len())?;
        for &e in t.shape() {
            u32_(w, e)?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], ModelError> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof => ModelError::Truncated,
            _ => ModelError::Io(e),
        })?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<usize, ModelError> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    /// A length field, bounded so a corrupt file cannot request a huge allocation.
    fn len(&mut self, limit: usize, what: &str) -> Result<usize, ModelError> {
        let v = self.u32()?;
        if v > limit {
            return Err(ModelError::Format(format!("{what} {v} exceeds {limit}")));
        }
        Ok(v)
    }
}

pub fn read_model(r: &mut impl Read) -> Result<PiVaeModel, ModelError> {
    let mut r = Reader { inner: r };
    if &r.bytes::<5>()? != MAGIC {
        return Err(ModelError::Format("bad magic bytes".into()));
    }
    let version = r.u32()? as u32;
    if version != FORMAT_VERSION {
        return Err(ModelError::Version { found: version, expected: FORMAT_VERSION });
    }
    const MAX_WIDTH: usize = 1 << 20;
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = r.len(MAX_WIDTH, "dimension")?;
    }
    let activation = match r.bytes::<1>()?[0] {
        0 => Activation::Tanh,
        1 => Activation::Relu,
        other => return Err(ModelError::Format(format!("unknown activation code {other}"))),
    };
    let mut widths = Vec::with_capacity(3);
    for _ in 0..3 {
        let n = r.len(64, "layer count")?;
        widths.push((0..n).map(|_| r.len(MAX_WIDTH, "layer width")).collect::<Result<Vec<_>, _>>()?);
    }
    let [input_dim, features, latent_dim, channels, centres] = dims;
    let decoder_hidden = widths.pop().unwrap();
    let encoder_hidden = widths.pop().unwrap();
    let phi_hidden = widths.pop().unwrap();
    let arch = Architecture {
        input_dim,
        features,
        latent_dim,
        channels,
        centres,
        phi_hidden,
        encoder_hidden,
        decoder_hidden,
        activation,
    };
    arch.validate().map_err(|e| ModelError::Format(e.to_string()))?;
    let value_scale = (0..channels).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    let shapes = arch.param_shapes();
    let count = r.u32()?;
    if count != shapes.len() {
        return Err(ModelError::Format(format!("{count} tensors, architecture has {}", shapes.len())));
    }
    let mut params = TensorMap::new();
    for (name, rows, cols) in shapes {
        let rank = r.u32()?;
        let extents = (0..rank).map(|_| r.len(1 << 28, "extent")).collect::<Result<Vec<_>, _>>()?;
        if extents != [rows, cols] {
            return Err(ModelError::Format(format!("`{name}` stored as {extents:?}, expected [{rows}, {cols}]")));
        }
        let data = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        params.insert(name, Tensor::matrix(rows, cols, data));
    }
    if r.inner.read(&mut [0u8; 1])? != 0 {
        return Err(ModelError::Format("trailing bytes after last tensor".into()));
    }
    PiVaeModel::new(arch, params, value_scale).map_err(|e| ModelError::Format(e.to_string()))
}

pub fn save_model(model: &PiVaeModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<PiVaeModel, ModelError> {
    read_model(&mut BufReader::new(File::open(path)?))
}
