//! Flat tensor archive: a line-oriented text header naming every tensor
//! and its shape, a `---` separator, then all values back to back as
//! little-endian scalars in header order. Free-form string metadata rides
//! along as escaped `meta` lines. Writes go through a sibling temp file
//! and rename, so a crash never leaves a half-written archive behind.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::scalar::Elem;
use crate::tensor::Tensor;

const MAGIC: &str = "tensor-archive v1";

#[derive(Debug, Clone, Default)]
pub struct Archive<E: Elem> {
    meta: BTreeMap<String, String>,
    entries: Vec<(String, Tensor<E>)>,
}

fn check_token(kind: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        return Err(CoreError::InvalidArgument(format!(
            "{kind} {s:?} must be non-empty and free of whitespace"
        )));
    }
    Ok(())
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n")
}

fn unescape(s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('n') => out.push('\n'),
            other => {
                return Err(CoreError::Archive(format!("bad escape \\{other:?}")));
            }
        }
    }
    Ok(out)
}

impl<E: Elem> Archive<E> {
    pub fn new() -> Self {
        Self { meta: BTreeMap::new(), entries: Vec::new() }
    }

    pub fn set_meta(&mut self, key: &str, value: &str) {
        debug_assert!(check_token("meta key", key).is_ok());
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn meta_keys(&self) -> impl Iterator<Item = &str> {
        self.meta.keys().map(String::as_str)
    }

    pub fn push(&mut self, name: &str, tensor: Tensor<E>) -> Result<()> {
        check_token("tensor name", name)?;
        if self.entries.iter().any(|(n, _)| n == name) {
            return Err(CoreError::InvalidArgument(format!("duplicate tensor {name:?}")));
        }
        self.entries.push((name.to_string(), tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<E>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(format!("dtype {}\n", E::DTYPE).as_bytes());
        for (k, v) in &self.meta {
            check_token("meta key", k)?;
            out.extend_from_slice(format!("meta {k} {}\n", escape(v)).as_bytes());
        }
        for (name, t) in &self.entries {
            let dims = if t.shape().is_empty() {
                "-".to_string()
            } else {
                t.shape().iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
            };
            out.extend_from_slice(format!("tensor {name} {dims}\n").as_bytes());
        }
        out.extend_from_slice(b"---\n");
        for (_, t) in &self.entries {
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        let file_name = path
            .file_name()
            .ok_or_else(|| CoreError::InvalidArgument(format!("bad archive path {path:?}")))?;
        let tmp = path.with_file_name(format!("{}.tmp", file_name.to_string_lossy()));
        fs::write(&tmp, &out)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let sep = b"\n---\n";
        let pos = bytes
            .windows(sep.len())
            .position(|w| w == sep)
            .ok_or_else(|| CoreError::Archive(format!("{path:?}: missing header separator")))?;
        let header = std::str::from_utf8(&bytes[..pos])
            .map_err(|e| CoreError::Archive(format!("{path:?}: header not UTF-8: {e}")))?;
        let mut payload = &bytes[pos + sep.len()..];

        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(CoreError::Archive(format!("{path:?}: not a tensor archive")));
        }
        let mut archive = Self::new();
        let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
        let mut saw_dtype = false;
        for line in lines {
            let (kind, rest) = line
                .split_once(' ')
                .ok_or_else(|| CoreError::Archive(format!("bad header line {line:?}")))?;
            match kind {
                "dtype" => {
                    if rest != E::DTYPE {
                        return Err(CoreError::Archive(format!(
                            "dtype mismatch: archive holds {rest}, expected {}",
                            E::DTYPE
                        )));
                    }
                    saw_dtype = true;
                }
                "meta" => {
                    let (k, v) = rest
                        .split_once(' ')
                        .ok_or_else(|| CoreError::Archive(format!("bad meta line {line:?}")))?;
                    archive.meta.insert(k.to_string(), unescape(v)?);
                }
                "tensor" => {
                    let (name, dims) = rest
                        .split_once(' ')
                        .ok_or_else(|| CoreError::Archive(format!("bad tensor line {line:?}")))?;
                    let shape: Vec<usize> = if dims == "-" {
                        Vec::new()
                    } else {
                        dims.split(',')
                            .map(|d| {
                                d.parse::<usize>().map_err(|e| {
                                    CoreError::Archive(format!("bad dim {d:?} in {line:?}: {e}"))
                                })
                            })
                            .collect::<Result<_>>()?
                    };
                    shapes.push((name.to_string(), shape));
                }
                other => {
                    return Err(CoreError::Archive(format!("unknown header entry {other:?}")));
                }
            }
        }
        if !saw_dtype {
            return Err(CoreError::Archive(format!("{path:?}: header missing dtype")));
        }
        for (name, shape) in shapes {
            let numel: usize = shape.iter().product();
            let need = numel * E::BYTES;
            if payload.len() < need {
                return Err(CoreError::Archive(format!(
                    "{path:?}: truncated payload at tensor {name:?}"
                )));
            }
            let data: Vec<E> = payload[..need].chunks_exact(E::BYTES).map(E::read_le).collect();
            payload = &payload[need..];
            archive.push(&name, Tensor::from_vec(&shape, data)?)?;
        }
        if !payload.is_empty() {
            return Err(CoreError::Archive(format!(
                "{path:?}: {} trailing bytes after last tensor",
                payload.len()
            )));
        }
        Ok(archive)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp_path(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("archive-test-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let mut a: Archive<f32> = Archive::new();
        a.set_meta("arch", "z");
        a.set_meta("note", "line one\nline two \\ backslash");
        a.push("w", Tensor::from_vec(&[2, 2], vec![1.5, -0.0, 3.25e-7, -1e30]).unwrap()).unwrap();
        a.push("b", Tensor::scalar(0.125)).unwrap();
        let p = tmp_path("round.bin");
        a.save(&p).unwrap();
        let back: Archive<f32> = Archive::load(&p).unwrap();
        assert_eq!(back.meta("arch"), Some("z"));
        assert_eq!(back.meta("note"), Some("line one\nline two \\ backslash"));
        let w = back.get("w").unwrap();
        assert_eq!(w.shape(), &[2, 2]);
        for (x, y) in w.data().iter().zip(a.get("w").unwrap().data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(back.get("b").unwrap().shape(), &[] as &[usize]);
        assert_eq!(back.get("b").unwrap().item().unwrap(), 0.125);
    }

    #[test]
    fn dtype_mismatch_is_rejected() {
        let mut a: Archive<f32> = Archive::new();
        a.push("w", Tensor::zeros(&[3])).unwrap();
        let p = tmp_path("dtype.bin");
        a.save(&p).unwrap();
        assert!(matches!(Archive::<f64>::load(&p), Err(CoreError::Archive(_))));
    }

    #[test]
    fn truncation_is_rejected() {
        let mut a: Archive<f32> = Archive::new();
        a.push("w", Tensor::zeros(&[4])).unwrap();
        let p = tmp_path("trunc.bin");
        a.save(&p).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 2]).unwrap();
        assert!(matches!(Archive::<f32>::load(&p), Err(CoreError::Archive(_))));
        fs::write(&p, [bytes.clone(), vec![0u8; 4]].concat()).unwrap();
        assert!(matches!(Archive::<f32>::load(&p), Err(CoreError::Archive(_))));
    }

    #[test]
    fn bad_names_are_rejected() {
        let mut a: Archive<f32> = Archive::new();
        assert!(a.push("has space", Tensor::zeros(&[1])).is_err());
        assert!(a.push("", Tensor::zeros(&[1])).is_err());
        a.push("ok", Tensor::zeros(&[1])).unwrap();
        assert!(a.push("ok", Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn no_temp_file_left_behind() {
        let mut a: Archive<f32> = Archive::new();
        a.push("w", Tensor::zeros(&[2])).unwrap();
        let p = tmp_path("clean.bin");
        a.save(&p).unwrap();
        let tmp = p.with_file_name("clean.bin.tmp");
        assert!(!tmp.exists());
        assert!(p.exists());
    }
}
