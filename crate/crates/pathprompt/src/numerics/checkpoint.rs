//! Flat parameter archive: a plain-text manifest followed by raw binary data.
//!
//! Layout (all manifest lines end with `\n`):
//!
//! ```text
//! PPCK v1
//! meta <key> <value>
//! tensor <name> <d0>x<d1>...
//! end
//! <f32 little-endian payload, tensors in manifest order>
//! ```
//!
//! Values are stored as 32-bit floats regardless of the in-memory width, so
//! a saved file reloads and re-saves byte-for-byte.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ParamSet;
use super::tensor::Tensor;
use super::NumericsError;

const MAGIC: &str = "PPCK v1";

/// A checkpoint read back from disk.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Overwrite matching parameters of `params`, checking names and shapes.
    pub fn restore_into(&self, params: &mut ParamSet) -> Result<(), NumericsError> {
        for (name, tensor) in &self.tensors {
            let p = params.get_mut(name)?;
            if p.value.shape() != tensor.shape() {
                return Err(NumericsError::ShapeMismatch {
                    op: "checkpoint restore".into(),
                    detail: format!(
                        "param `{}` has shape {:?}, checkpoint holds {:?}",
                        name,
                        p.value.shape(),
                        tensor.shape()
                    ),
                });
            }
            p.value = tensor.clone();
        }
        Ok(())
    }
}

pub fn save(params: &ParamSet, meta: &[(String, String)], path: &Path) -> Result<(), NumericsError> {
    let file = File::create(path).map_err(|e| NumericsError::Io { path: path.display().to_string(), source: e })?;
    let mut w = BufWriter::new(file);
    let io_err = |e| NumericsError::Io { path: path.display().to_string(), source: e };

    writeln!(w, "{}", MAGIC).map_err(io_err)?;
    for (k, v) in meta {
        writeln!(w, "meta {} {}", k, v).map_err(io_err)?;
    }
    for p in params.iter() {
        let dims: Vec<String> = p.value.shape().iter().map(|d| d.to_string()).collect();
        writeln!(w, "tensor {} {}", p.name, dims.join("x")).map_err(io_err)?;
    }
    writeln!(w, "end").map_err(io_err)?;
    for p in params.iter() {
        for v in p.value.data() {
            w.write_all(&(*v as f32).to_le_bytes()).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint, NumericsError> {
    let file = File::open(path).map_err(|e| NumericsError::Io { path: path.display().to_string(), source: e })?;
    let mut r = BufReader::new(file);
    let io_err = |e| NumericsError::Io { path: path.display().to_string(), source: e };
    let bad = |detail: String| NumericsError::BadCheckpoint { path: path.display().to_string(), detail };

    let mut line = String::new();
    r.read_line(&mut line).map_err(io_err)?;
    if line.trim_end() != MAGIC {
        return Err(bad(format!("expected `{}` header, found `{}`", MAGIC, line.trim_end())));
    }

    let mut meta = Vec::new();
    let mut specs: Vec<(String, Vec<usize>)> = Vec::new();
    loop {
        line.clear();
        let n = r.read_line(&mut line).map_err(io_err)?;
        if n == 0 {
            return Err(bad("manifest not terminated by `end`".into()));
        }
        let trimmed = line.trim_end_matches('\n');
        if trimmed == "end" {
            break;
        }
        if let Some(rest) = trimmed.strip_prefix("meta ") {
            match rest.split_once(' ') {
                Some((k, v)) => meta.push((k.to_string(), v.to_string())),
                None => return Err(bad(format!("malformed meta line `{}`", trimmed))),
            }
        } else if let Some(rest) = trimmed.strip_prefix("tensor ") {
            let (name, dims) = rest
                .split_once(' ')
                .ok_or_else(|| bad(format!("malformed tensor line `{}`", trimmed)))?;
            let shape: Result<Vec<usize>, _> = dims.split('x').map(str::parse).collect();
            let shape = shape.map_err(|_| bad(format!("bad dims in `{}`", trimmed)))?;
            specs.push((name.to_string(), shape));
        } else {
            return Err(bad(format!("unexpected manifest line `{}`", trimmed)));
        }
    }

    let mut tensors = Vec::with_capacity(specs.len());
    for (name, shape) in specs {
        let numel: usize = shape.iter().product();
        let mut bytes = vec![0u8; numel * 4];
        r.read_exact(&mut bytes).map_err(io_err)?;
        let data: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    let mut trailing = Vec::new();
    r.read_to_end(&mut trailing).map_err(io_err)?;
    if !trailing.is_empty() {
        return Err(bad(format!("{} unexpected trailing bytes", trailing.len())));
    }
    Ok(Checkpoint { meta, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_params() -> ParamSet {
        let mut ps = ParamSet::new();
        ps.insert("a.w", Tensor::matrix(2, 2, vec![1.5, -2.25, 0.125, 3.0]).unwrap()).unwrap();
        ps.insert("a.b", Tensor::vector(&[0.5, -0.5]).unwrap()).unwrap();
        ps
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("one.ckpt");
        let p2 = dir.path().join("two.ckpt");
        let ps = sample_params();
        let meta = vec![("d".to_string(), "2".to_string())];
        save(&ps, &meta, &p1).unwrap();

        let loaded = load(&p1).unwrap();
        let mut restored = sample_params();
        restored.get_mut("a.w").unwrap().value = Tensor::zeros(vec![2, 2]);
        loaded.restore_into(&mut restored).unwrap();
        save(&restored, &loaded.meta, &p2).unwrap();

        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn restore_checks_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.ckpt");
        save(&sample_params(), &[], &path).unwrap();
        let loaded = load(&path).unwrap();
        let mut other = ParamSet::new();
        other.insert("a.w", Tensor::zeros(vec![3, 3])).unwrap();
        other.insert("a.b", Tensor::zeros(vec![2])).unwrap();
        assert!(loaded.restore_into(&mut other).is_err());
    }

    #[test]
    fn meta_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.ckpt");
        let meta = vec![
            ("mode".to_string(), "h+r-t".to_string()),
            ("note".to_string(), "spaces are fine here".to_string()),
        ];
        save(&sample_params(), &meta, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.meta_value("mode"), Some("h+r-t"));
        assert_eq!(loaded.meta_value("note"), Some("spaces are fine here"));
    }

    #[test]
    fn rejects_garbage_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(load(&path).is_err());
    }
}
