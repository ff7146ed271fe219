//! Raw little-endian int16 tensor files with a one-line sidecar
//! (`<file>.meta`) of the form `length=N exponent=E`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn parse_sidecar(text: &str) -> Result<(usize, i32)> {
    let (mut length, mut exponent) = (None, None);
    for field in text.split_whitespace() {
        match field.split_once('=') {
            Some(("length", v)) => length = Some(v.parse().with_context(|| format!("bad length `{v}`"))?),
            Some(("exponent", v)) => exponent = Some(v.parse().with_context(|| format!("bad exponent `{v}`"))?),
            _ => bail!("unknown sidecar field `{field}`"),
        }
    }
    match (length, exponent) {
        (Some(l), Some(e)) => Ok((l, e)),
        _ => bail!("sidecar needs `length=N exponent=E`"),
    }
}

pub fn format_sidecar(length: usize, exponent: i32) -> String {
    format!("length={length} exponent={exponent}\n")
}

/// Read an int16 tensor. Without a sidecar the exponent defaults to -14.
pub fn read_tensor(path: &Path) -> Result<(Vec<i16>, i32)> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    if bytes.len() % 2 != 0 {
        bail!("{} has an odd byte length {}", path.display(), bytes.len());
    }
    let values: Vec<i16> = bytes.chunks_exact(2).map(|c| i16::from_le_bytes([c[0], c[1]])).collect();
    let meta = sidecar_path(path);
    let exponent = if meta.exists() {
        let text = std::fs::read_to_string(&meta).with_context(|| format!("cannot read {}", meta.display()))?;
        let (length, exponent) = parse_sidecar(&text).with_context(|| meta.display().to_string())?;
        if length != values.len() {
            bail!("{} declares {length} values but {} holds {}", meta.display(), path.display(), values.len());
        }
        exponent
    } else {
        -14
    };
    Ok((values, exponent))
}

pub fn write_tensor(path: &Path, values: &[i16], exponent: i32) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
    let meta = sidecar_path(path);
    std::fs::write(&meta, format_sidecar(values.len(), exponent)).with_context(|| format!("cannot write {}", meta.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_roundtrip() {
        assert_eq!(parse_sidecar(&format_sidecar(42, -14)).unwrap(), (42, -14));
        assert!(parse_sidecar("length=3").is_err());
        assert!(parse_sidecar("length=3 exponent=x").is_err());
    }

    #[test]
    fn tensor_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.i16");
        write_tensor(&p, &[1, -2, i16::MIN], -12).unwrap();
        assert_eq!(read_tensor(&p).unwrap(), (vec![1, -2, i16::MIN], -12));
        std::fs::write(sidecar_path(&p), "length=4 exponent=0").unwrap();
        assert!(read_tensor(&p).is_err());
    }
}
