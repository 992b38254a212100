//! Binary checkpoint format.
//!
//! ```text
//! magic     8 bytes  "FRCKPT\0\0"
//! version   u32 LE   (currently 1)
//! meta_len  u64 LE
//! meta      meta_len bytes, UTF-8 (opaque to this crate; JSON in practice)
//! count     u32 LE   number of tensors
//! repeated count times, in declaration order:
//!   name_len u32 LE, name bytes (UTF-8)
//!   ndim     u32 LE, dims u64 LE × ndim
//!   dtype    u8 (0 = f32, 1 = f64)
//!   data     little-endian elements, row-major
//! ```

use std::io::{Read, Write};

use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};
use crate::NnError;

pub const MAGIC: &[u8; 8] = b"FRCKPT\0\0";
pub const VERSION: u32 = 1;

fn dtype_of<T: Real>() -> u8 {
    if std::mem::size_of::<T>() == 4 {
        0
    } else {
        1
    }
}

pub fn write_checkpoint<T: Real, W: Write>(
    mut w: W,
    meta: &str,
    tensors: &[(&str, &Tensor<T>)],
) -> Result<(), NnError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(meta.len() as u64).to_le_bytes())?;
    w.write_all(meta.as_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    let dtype = dtype_of::<T>();
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for d in t.shape() {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        w.write_all(&[dtype])?;
        let mut buf = Vec::with_capacity(t.len() * 8);
        for v in t.data() {
            if dtype == 0 {
                buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            } else {
                buf.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

/// Serialise a whole store plus extra named tensors (e.g. optimiser state).
pub fn save_store<T: Real, W: Write>(
    w: W,
    meta: &str,
    store: &ParamStore<T>,
    extra: &[(String, Tensor<T>)],
) -> Result<(), NnError> {
    let mut tensors: Vec<(&str, &Tensor<T>)> = store.iter().map(|(_, n, t)| (n, t)).collect();
    tensors.extend(extra.iter().map(|(n, t)| (n.as_str(), t)));
    write_checkpoint(w, meta, &tensors)
}

pub struct Checkpoint<T> {
    pub meta: String,
    pub tensors: Vec<(String, Tensor<T>)>,
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NnError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, NnError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint<T: Real, R: Read>(mut r: R) -> Result<Checkpoint<T>, NnError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }
    let meta_len = read_u64(&mut r)? as usize;
    let mut meta = vec![0u8; meta_len];
    r.read_exact(&mut meta)?;
    let meta =
        String::from_utf8(meta).map_err(|_| NnError::Checkpoint("meta is not UTF-8".into()))?;
    let count = read_u32(&mut r)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name =
            String::from_utf8(name).map_err(|_| NnError::Checkpoint("name is not UTF-8".into()))?;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let mut dtype = [0u8; 1];
        r.read_exact(&mut dtype)?;
        let n: usize = shape.iter().product();
        let width = match dtype[0] {
            0 => 4,
            1 => 8,
            d => return Err(NnError::Checkpoint(format!("unknown dtype {d} for {name}"))),
        };
        let mut raw = vec![0u8; n * width];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(width)
            .map(|c| {
                let v = if width == 4 {
                    f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64
                } else {
                    f64::from_le_bytes(c.try_into().expect("8 bytes"))
                };
                T::from_f64_lossy(v)
            })
            .collect();
        tensors.push((name, Tensor::new(shape, data)));
    }
    Ok(Checkpoint { meta, tensors })
}

impl<T: Real> Checkpoint<T> {
    /// Overwrite the values of every store parameter from this checkpoint.
    /// Missing names or shape disagreements are errors.
    pub fn restore_into(&self, store: &mut ParamStore<T>) -> Result<(), NnError> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.name(id).to_string();
            let (_, t) = self
                .tensors
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| NnError::MissingParam(name.clone()))?;
            if t.shape() != store.get(id).shape() {
                return Err(NnError::ShapeMismatch {
                    name,
                    expected: store.get(id).shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
            *store.get_mut(id) = t.clone();
        }
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transformer::{Encoder, EncoderConfig};
    use crate::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn encoder(seed: u64) -> (Encoder, ParamStore<f32>) {
        let cfg = EncoderConfig {
            layers: 1,
            model_dim: 8,
            heads: 2,
            ffn_dim: 12,
            max_positions: 8,
            vocab_size: 10,
            segment_count: 2,
        };
        let mut store = ParamStore::new();
        let enc =
            Encoder::init(cfg, "e.", &mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (enc, store)
    }

    fn forward(enc: &Encoder, store: &ParamStore<f32>) -> Tensor<f32> {
        let mut g = Graph::new(store);
        let out = enc.forward(&mut g, &[2, 5, 6, 3], &[0, 0, 1, 1]).unwrap();
        g.value(out.hidden).clone()
    }

    #[test]
    fn round_trip_restores_identical_outputs() {
        let (enc, store) = encoder(1);
        let extra = vec![(
            "adam.m.x".to_string(),
            Tensor::new(vec![2], vec![1.5f32, -2.0]),
        )];
        let mut buf = Vec::new();
        save_store(&mut buf, "{\"k\":1}", &store, &extra).unwrap();
        let ckpt: Checkpoint<f32> = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(ckpt.meta, "{\"k\":1}");
        assert_eq!(ckpt.tensor("adam.m.x").unwrap().data(), &[1.5, -2.0]);
        let (enc2, mut other) = encoder(2);
        assert_ne!(forward(&enc2, &other).data(), forward(&enc, &store).data());
        ckpt.restore_into(&mut other).unwrap();
        assert_eq!(forward(&enc2, &other).data(), forward(&enc, &store).data());
    }

    #[test]
    fn rejects_corruption() {
        let (_, store) = encoder(1);
        let mut buf = Vec::new();
        save_store(&mut buf, "", &store, &[]).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint::<f32, _>(bad.as_slice()).is_err());
        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(read_checkpoint::<f32, _>(bad.as_slice()).is_err());
        assert!(read_checkpoint::<f32, _>(&buf[..buf.len() - 3]).is_err());
        let mut small = ParamStore::<f32>::new();
        small.add("e.embeddings.token", Tensor::zeros(&[3, 8]));
        let ckpt: Checkpoint<f32> = read_checkpoint(buf.as_slice()).unwrap();
        assert!(ckpt.restore_into(&mut small).is_err());
        let mut missing = ParamStore::<f32>::new();
        missing.add("nope", Tensor::zeros(&[1]));
        assert!(ckpt.restore_into(&mut missing).is_err());
    }
}
