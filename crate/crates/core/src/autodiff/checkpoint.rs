//! Binary parameter checkpoints with bit-exact round-trips.
//!
//! Layout, all little-endian: format version (u32), parameter count (u64),
//! then per parameter: name length (u64), UTF-8 name bytes, rank (u64), one
//! extent (u64) per axis, then the values as 64-bit floats in row-major
//! order. Parameters are written in sorted name order, so identical stores
//! produce identical files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::params::ParamStore;
use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const FORMAT_VERSION: u32 = 1;

pub fn save_checkpoint<S: Scalar>(store: &ParamStore<S>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));

    put(&FORMAT_VERSION.to_le_bytes())?;
    put(&(store.len() as u64).to_le_bytes())?;
    for (name, tensor) in store.iter() {
        put(&(name.len() as u64).to_le_bytes())?;
        put(name.as_bytes())?;
        put(&(tensor.rank() as u64).to_le_bytes())?;
        for &extent in tensor.shape() {
            put(&(extent as u64).to_le_bytes())?;
        }
        for &v in tensor.values() {
            put(&v.to_f64_lossy().to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<ParamStore<S>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut store = ParamStore::new(0);

    let version = read_u32(&mut r, path)?;
    if version != FORMAT_VERSION {
        return Err(Error::checkpoint(
            path,
            format!("unsupported format version {version}, expected {FORMAT_VERSION}"),
        ));
    }
    let count = read_u64(&mut r, path)?;
    for _ in 0..count {
        let name_len = read_u64(&mut r, path)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes, path)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::checkpoint(path, "parameter name is not valid UTF-8"))?;
        if store.contains(&name) {
            return Err(Error::checkpoint(path, format!("duplicate parameter '{name}'")));
        }
        let rank = read_u64(&mut r, path)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r, path)? as usize);
        }
        let numel: usize = shape.iter().product();
        if shape.contains(&0) || rank == 0 {
            return Err(Error::checkpoint(
                path,
                format!("parameter '{name}' has invalid shape {shape:?}"),
            ));
        }
        let mut values = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            read_exact(&mut r, &mut buf, path)?;
            values.push(S::of(f64::from_le_bytes(buf)));
        }
        store.insert(&name, Tensor::new(shape, values)?);
    }
    let mut trailing = [0u8; 1];
    match r.read(&mut trailing) {
        Ok(0) => Ok(store),
        Ok(_) => Err(Error::checkpoint(path, "trailing bytes after last parameter")),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::checkpoint(path, "file truncated")
        } else {
            Error::io(path, e)
        }
    })
}

fn read_u32<R: Read>(r: &mut R, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, path)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R, path: &Path) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf, path)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");

        let mut store = ParamStore::<f64>::new(99);
        store.register("qgen.embed", vec![11, 4]).unwrap();
        store.register("qgen.lstm.w_i", vec![4, 8]).unwrap();
        store.insert("exact", Tensor::vector(vec![0.1, -0.2, 3.0e-300, f64::MIN_POSITIVE]));

        save_checkpoint(&store, &path).unwrap();
        let loaded = load_checkpoint::<f64>(&path).unwrap();

        assert_eq!(loaded.len(), store.len());
        for (name, t) in store.iter() {
            let lt = loaded.get(name).unwrap();
            assert_eq!(lt.shape(), t.shape());
            let a: Vec<u64> = t.values().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = lt.values().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b, "values for '{name}' changed across round-trip");
        }
    }

    #[test]
    fn identical_stores_produce_identical_files() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");

        let mut s1 = ParamStore::<f64>::new(5);
        s1.register("b", vec![3]).unwrap();
        s1.register("a", vec![2, 2]).unwrap();
        let mut s2 = ParamStore::<f64>::new(5);
        // Opposite registration order; file bytes must not care.
        s2.register("a", vec![2, 2]).unwrap();
        s2.register("b", vec![3]).unwrap();

        save_checkpoint(&s1, &p1).unwrap();
        save_checkpoint(&s2, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncated_file_is_rejected_with_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut store = ParamStore::<f64>::new(0);
        store.register("w", vec![4]).unwrap();
        save_checkpoint(&store, &path).unwrap();

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let err = load_checkpoint::<f64>(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("model.ckpt"), "{msg}");
        assert!(msg.contains("truncated"), "{msg}");
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut store = ParamStore::<f64>::new(0);
        store.register("w", vec![2]).unwrap();
        save_checkpoint(&store, &path).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint::<f64>(&path).is_err());
    }

    #[test]
    fn missing_file_reports_path() {
        let err = load_checkpoint::<f64>(Path::new("/nonexistent/nothing.ckpt")).unwrap_err();
        assert!(err.to_string().contains("nothing.ckpt"));
    }

    #[test]
    fn f32_store_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut store = ParamStore::<f32>::new(3);
        store.register("w", vec![5, 2]).unwrap();
        save_checkpoint(&store, &path).unwrap();
        let loaded = load_checkpoint::<f32>(&path).unwrap();
        assert_eq!(loaded.get("w").unwrap().values(), store.get("w").unwrap().values());
    }
}
