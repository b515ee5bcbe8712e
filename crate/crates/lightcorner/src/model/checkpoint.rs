//! Versioned binary checkpoints for one light type's regressor.
//!
//! Byte layout, version 1 (all integers little-endian):
//!
//! ```text
//! magic            8 bytes, b"LITECKPT"
//! version          u32
//! arch_id          u32 length + UTF-8 bytes
//! input_size       u32
//! light_type       u8, LightType index (FL=0, FR=1, RL=2, RR=3)
//! param_count      u32
//! per parameter:
//!   name           u32 length + UTF-8 bytes
//!   ndim           u32
//!   dims           ndim x u64
//!   data           product(dims) x f64
//! swa_count        u64 (number of averaged snapshots)
//! if swa_count > 0:
//!   per parameter, in the order above: data  product(dims) x f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::swa::SwaState;
use super::tensor::{RegressorParams, Tensor};
use super::Backbone;
use crate::geometry::LightType;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"LITECKPT";
const VERSION: u32 = 1;
/// Caps on string and shape fields so a corrupt length prefix cannot drive
/// enormous allocations.
const MAX_STRING: u32 = 4096;
const MAX_NDIM: u32 = 8;
const MAX_SCALARS: u64 = 1 << 28;

/// Everything needed to restore one per-light-type model.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub arch_id: String,
    pub input_size: u32,
    pub light_type: LightType,
    pub params: RegressorParams,
    pub swa: SwaState,
}

impl Checkpoint {
    /// Rejects a checkpoint whose architecture, input size, or parameter
    /// layout does not match `backbone`.
    pub fn validate_for<B: Backbone>(&self, backbone: &B) -> Result<()> {
        if self.arch_id != backbone.arch_id() {
            return Err(Error::Checkpoint(format!(
                "architecture {} does not match expected {}",
                self.arch_id,
                backbone.arch_id()
            )));
        }
        if self.input_size != backbone.input_size() {
            return Err(Error::Checkpoint(format!(
                "input size {} does not match expected {}",
                self.input_size,
                backbone.input_size()
            )));
        }
        let template = backbone.param_template();
        if self.params.len() != template.len() {
            return Err(Error::Checkpoint(format!(
                "{} parameter tensors, expected {}",
                self.params.len(),
                template.len()
            )));
        }
        for (idx, (name, shape)) in template.iter().enumerate() {
            if self.params.name(idx) != name || self.params.tensor(idx).shape() != &shape[..] {
                return Err(Error::Checkpoint(format!(
                    "parameter {idx} is {} {:?}, expected {name} {shape:?}",
                    self.params.name(idx),
                    self.params.tensor(idx).shape()
                )));
            }
        }
        Ok(())
    }
}

/// Writes `ckpt` to `path`, refusing non-finite parameter values.
pub fn save(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    if !ckpt.params.all_finite() {
        return Err(Error::NonFinite("checkpoint parameters"));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);

    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    write_str(&mut w, &ckpt.arch_id).map_err(io)?;
    w.write_all(&ckpt.input_size.to_le_bytes()).map_err(io)?;
    w.write_all(&[ckpt.light_type.index() as u8]).map_err(io)?;
    w.write_all(&(ckpt.params.len() as u32).to_le_bytes()).map_err(io)?;
    for (name, tensor) in ckpt.params.iter() {
        write_str(&mut w, name).map_err(io)?;
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes()).map_err(io)?;
        for &d in tensor.shape() {
            w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
        }
        for v in tensor.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.write_all(&ckpt.swa.snapshot_count().to_le_bytes()).map_err(io)?;
    if let Some(sums) = ckpt.swa.sums() {
        if !sums.same_layout(&ckpt.params) {
            return Err(Error::Checkpoint(
                "averaging sums do not match the parameter layout".into(),
            ));
        }
        for (_, tensor) in sums.iter() {
            for v in tensor.data() {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

/// Reads a checkpoint back, validating structure and value finiteness.
pub fn load(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { inner: BufReader::new(file), path };

    let mut magic = [0u8; 8];
    r.exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let arch_id = r.string("architecture id")?;
    let input_size = r.u32()?;
    let light_byte = r.u8()?;
    let light_type = *LightType::ALL
        .get(light_byte as usize)
        .ok_or_else(|| Error::Checkpoint(format!("invalid light type byte {light_byte}")))?;
    let param_count = r.u32()?;
    if param_count > MAX_STRING {
        return Err(Error::Checkpoint(format!("implausible parameter count {param_count}")));
    }

    let mut params = RegressorParams::new();
    let mut shapes = Vec::with_capacity(param_count as usize);
    for _ in 0..param_count {
        let name = r.string("parameter name")?;
        let ndim = r.u32()?;
        if ndim > MAX_NDIM {
            return Err(Error::Checkpoint(format!("parameter {name} has {ndim} dimensions")));
        }
        let mut shape = Vec::with_capacity(ndim as usize);
        let mut numel: u64 = 1;
        for _ in 0..ndim {
            let d = r.u64()?;
            numel = numel
                .checked_mul(d)
                .filter(|&n| n <= MAX_SCALARS)
                .ok_or_else(|| Error::Checkpoint(format!("parameter {name} is implausibly large")))?;
            shape.push(d as usize);
        }
        let data = r.f64s(numel as usize)?;
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Checkpoint(format!("non-finite value in parameter {name}")));
        }
        shapes.push((name.clone(), shape.clone(), numel as usize));
        let tensor = Tensor::from_data(&shape, data)
            .map_err(|e| Error::Checkpoint(format!("parameter {name}: {e}")))?;
        params
            .push(name, tensor)
            .map_err(|e| Error::Checkpoint(format!("duplicate parameter: {e}")))?;
    }

    let swa_count = r.u64()?;
    let swa = if swa_count > 0 {
        let mut sums = RegressorParams::new();
        for (name, shape, numel) in &shapes {
            let data = r.f64s(*numel)?;
            if !data.iter().all(|v| v.is_finite()) {
                return Err(Error::Checkpoint(format!("non-finite value in averaging sum {name}")));
            }
            let tensor = Tensor::from_data(shape, data)
                .map_err(|e| Error::Checkpoint(format!("averaging sum {name}: {e}")))?;
            sums.push(name.clone(), tensor)
                .map_err(|e| Error::Checkpoint(format!("duplicate averaging sum: {e}")))?;
        }
        SwaState::from_parts(Some(sums), swa_count)
            .map_err(|e| Error::Checkpoint(e.to_string()))?
    } else {
        SwaState::new()
    };

    let mut probe = [0u8; 1];
    match r.inner.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => return Err(Error::Checkpoint("trailing data after checkpoint".into())),
        Err(e) => return Err(Error::io(path, e)),
    }

    Ok(Checkpoint { arch_id, input_size, light_type, params, swa })
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

struct Reader<'a> {
    inner: BufReader<File>,
    path: &'a Path,
}

impl Reader<'_> {
    fn exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Checkpoint("truncated checkpoint".into())
            } else {
                Error::io(self.path, e)
            }
        })
    }

    fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.exact(&mut b)?;
        Ok(b[0])
    }

    fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32()?;
        if len > MAX_STRING {
            return Err(Error::Checkpoint(format!("{what} is implausibly long ({len} bytes)")));
        }
        let mut buf = vec![0u8; len as usize];
        self.exact(&mut buf)?;
        String::from_utf8(buf).map_err(|_| Error::Checkpoint(format!("{what} is not UTF-8")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut bytes = vec![0u8; n * 8];
        self.exact(&mut bytes)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Backbone, RefCnn};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_checkpoint() -> Checkpoint {
        let net = RefCnn::new(8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let params = net.init_params(&mut rng);
        let mut swa = SwaState::new();
        swa.observe(&params).unwrap();
        swa.observe(&params).unwrap();
        Checkpoint {
            arch_id: net.arch_id().to_string(),
            input_size: 8,
            light_type: LightType::RearLeft,
            params,
            swa,
        }
    }

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rl.ckpt");
        let ckpt = small_checkpoint();
        save(&ckpt, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back.arch_id, ckpt.arch_id);
        assert_eq!(back.input_size, 8);
        assert_eq!(back.light_type, LightType::RearLeft);
        assert_eq!(back.params, ckpt.params);
        assert_eq!(back.swa.snapshot_count(), 2);
        assert_eq!(back.swa.sums().unwrap(), ckpt.swa.sums().unwrap());
        let net = RefCnn::new(8).unwrap();
        back.validate_for(&net).unwrap();
    }

    #[test]
    fn save_then_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        let ckpt = small_checkpoint();
        save(&ckpt, &a).unwrap();
        save(&ckpt, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        std::fs::write(&path, b"NOTACKPT").unwrap();
        assert!(matches!(load(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn truncation_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ckpt");
        save(&small_checkpoint(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        match load(&path) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("truncated")),
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ckpt");
        save(&small_checkpoint(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        match load(&path) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("trailing")),
            other => panic!("expected trailing-data error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_values_are_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.ckpt");
        let ckpt = small_checkpoint();
        save(&ckpt, &path).unwrap();
        // Overwrite the first stored value of conv1.kernel with NaN by
        // locating its exact byte pattern in the file.
        let needle = ckpt.params.tensor(0).data()[0].to_le_bytes();
        let mut bytes = std::fs::read(&path).unwrap();
        let pos = bytes.windows(8).position(|w| w == needle).unwrap();
        bytes[pos..pos + 8].copy_from_slice(&f64::NAN.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        match load(&path) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("non-finite")),
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn save_refuses_non_finite_parameters() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        let mut ckpt = small_checkpoint();
        ckpt.params.tensor_mut(0).data_mut()[0] = f64::INFINITY;
        assert!(matches!(save(&ckpt, &path), Err(Error::NonFinite(_))));
    }

    #[test]
    fn validate_rejects_wrong_architecture() {
        let ckpt = small_checkpoint();
        let other = RefCnn::new(16).unwrap();
        assert!(ckpt.validate_for(&other).is_err());
    }

    #[test]
    fn unsupported_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.ckpt");
        save(&small_checkpoint(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        match load(&path) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("version")),
            other => panic!("expected version error, got {other:?}"),
        }
    }
}
