//! Binary weight checkpoints, little-endian:
//! `"WFMLP1"`, `u32` input_dim, width, hidden_layers, frequencies, `u64` h,
//! then `h` f32 values in flatten order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{FieldError, FieldMlpConfig, WeightVector};

const MAGIC: &[u8; 6] = b"WFMLP1";

pub fn write_checkpoint(v: &WeightVector, mut out: impl Write) -> std::io::Result<()> {
    let c = v.config();
    out.write_all(MAGIC)?;
    for field in [c.input_dim, c.width, c.hidden_layers, c.frequencies] {
        out.write_all(&(field as u32).to_le_bytes())?;
    }
    out.write_all(&(v.len() as u64).to_le_bytes())?;
    for &x in v.values() {
        out.write_all(&x.to_le_bytes())?;
    }
    out.flush()
}

fn read_exact(input: &mut impl Read, buf: &mut [u8], what: &str) -> Result<(), FieldError> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => FieldError::Truncated(what.to_string()),
        _ => FieldError::Io {
            path: String::new(),
            source: e,
        },
    })
}

/// Reads a checkpoint; when `expected` is given, the header must match its
/// architecture, and its iso-level is carried over.
pub fn read_checkpoint(
    mut input: impl Read,
    expected: Option<&FieldMlpConfig>,
) -> Result<WeightVector, FieldError> {
    let mut magic = [0u8; 6];
    read_exact(&mut input, &mut magic, "header")?;
    if &magic != MAGIC {
        return Err(FieldError::BadMagic);
    }
    let mut fields = [0usize; 4];
    for f in &mut fields {
        let mut b = [0u8; 4];
        read_exact(&mut input, &mut b, "header")?;
        *f = u32::from_le_bytes(b) as usize;
    }
    let mut b = [0u8; 8];
    read_exact(&mut input, &mut b, "header")?;
    let h = u64::from_le_bytes(b) as usize;

    let [input_dim, width, hidden_layers, frequencies] = fields;
    let config = FieldMlpConfig {
        input_dim,
        width,
        hidden_layers,
        frequencies,
        iso: expected.map_or(FieldMlpConfig::default().iso, |e| e.iso),
    };
    if let Some(e) = expected {
        if (e.input_dim, e.width, e.hidden_layers, e.frequencies)
            != (input_dim, width, hidden_layers, frequencies)
        {
            return Err(FieldError::ConfigMismatch {
                expected: e.describe(),
                found: config.describe(),
            });
        }
    }
    config.validate()?;
    if h != config.param_count() {
        return Err(FieldError::LengthMismatch {
            expected: config.param_count(),
            actual: h,
        });
    }
    let mut bytes = vec![0u8; h * 4];
    read_exact(&mut input, &mut bytes, &format!("expected {h} weights"))?;
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    WeightVector::new(config, values)
}

pub fn save_checkpoint(v: &WeightVector, path: impl AsRef<Path>) -> Result<(), FieldError> {
    let path = path.as_ref();
    let io_err = |source| FieldError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    write_checkpoint(v, BufWriter::new(file)).map_err(io_err)
}

pub fn load_checkpoint(
    path: impl AsRef<Path>,
    expected: Option<&FieldMlpConfig>,
) -> Result<WeightVector, FieldError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| FieldError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_checkpoint(BufReader::new(file), expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_mlp::FieldMlp;

    fn bytes_of(v: &WeightVector) -> Vec<u8> {
        let mut buf = Vec::new();
        write_checkpoint(v, &mut buf).unwrap();
        buf
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let v = FieldMlp::random(FieldMlpConfig::default(), 2)
            .unwrap()
            .flatten();
        let buf = bytes_of(&v);
        assert_eq!(buf.len(), 6 + 16 + 8 + 4 * 36_353);
        assert_eq!(
            read_checkpoint(buf.as_slice(), Some(v.config())).unwrap(),
            v
        );

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("shape.wfmlp");
        save_checkpoint(&v, &path).unwrap();
        assert_eq!(load_checkpoint(&path, None).unwrap(), v);
    }

    #[test]
    fn truncated_and_foreign_files_are_rejected() {
        let v = FieldMlp::random(FieldMlpConfig::default(), 2)
            .unwrap()
            .flatten();
        let buf = bytes_of(&v);
        assert!(matches!(
            read_checkpoint(&buf[..buf.len() - 3], None),
            Err(FieldError::Truncated(_))
        ));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_checkpoint(bad.as_slice(), None),
            Err(FieldError::BadMagic)
        ));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let v = FieldMlp::zeros(FieldMlpConfig::default())
            .unwrap()
            .flatten();
        let expect_4d = FieldMlpConfig::default().with_input_dim(4);
        assert!(matches!(
            read_checkpoint(bytes_of(&v).as_slice(), Some(&expect_4d)),
            Err(FieldError::ConfigMismatch { .. })
        ));
    }
}
