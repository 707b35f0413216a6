//! Full-precision number rendering shared by every file this crate writes.

use std::io;
use std::path::Path;

use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter};

use crate::error::{Error, Result};

/// Renders `x` with 17 significant digits in scientific notation, which
/// round-trips every finite `f64` exactly.
pub fn f64_17(x: f64) -> String {
    format!("{x:.16e}")
}

struct FullPrecision;

impl Formatter for FullPrecision {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            writer.write_all(f64_17(value).as_bytes())
        } else {
            CompactFormatter.write_null(writer)
        }
    }
}

/// Serializes to compact JSON with 17-significant-digit floats and a
/// trailing newline.
pub fn to_json(value: &impl Serialize) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FullPrecision);
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits utf-8"))
}

/// Deserializes JSON, reporting the offending field path on failure.
pub fn from_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    Ok(serde_path_to_error::deserialize(de)?)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text).map_err(|e| match e {
        Error::Json {
            path: field,
            message,
        } => Error::Json {
            path: format!("{}: {field}", path.display()),
            message,
        },
        other => other,
    })
}

/// Writes `contents` to `path` through a sibling temp file and a rename, so
/// readers never observe a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_atomic(path, &to_json(value)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, 4.5398899216870535e-5, -2.0, 0.0, 1e300] {
            let s = f64_17(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        assert_eq!(f64_17(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn json_floats_are_full_precision() {
        let text = to_json(&vec![0.1_f64, 2.0]).unwrap();
        assert_eq!(text, "[1.0000000000000001e-1,2.0000000000000000e0]\n");
        let back: Vec<f64> = from_json(&text).unwrap();
        assert_eq!(back, vec![0.1, 2.0]);
    }
}
