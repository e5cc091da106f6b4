//! Little-endian field dump: `"DFLD"`, u32 width, u32 height, then `map_x`
//! and `map_y` as row-major f32.

use std::fs;
use std::path::Path;

use super::FieldError;
use crate::imgcore::DisplacementField;

pub const FIELD_MAGIC: &[u8; 4] = b"DFLD";

pub fn encode_field(field: &DisplacementField) -> Vec<u8> {
    let n = field.width() * field.height();
    let mut out = Vec::with_capacity(12 + 8 * n);
    out.extend_from_slice(FIELD_MAGIC);
    out.extend_from_slice(&(field.width() as u32).to_le_bytes());
    out.extend_from_slice(&(field.height() as u32).to_le_bytes());
    for v in field.map_x().iter().chain(field.map_y()) {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_field(bytes: &[u8]) -> Result<DisplacementField, String> {
    if bytes.len() < 12 || &bytes[..4] != FIELD_MAGIC {
        return Err("missing DFLD header".into());
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (w, h) = (word(4), word(8));
    let n = w * h;
    if bytes.len() != 12 + 8 * n {
        return Err(format!(
            "expected {} bytes for {w}x{h}, found {}",
            12 + 8 * n,
            bytes.len()
        ));
    }
    let floats: Vec<f64> = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let (mx, my) = floats.split_at(n);
    DisplacementField::new(w, h, mx.to_vec(), my.to_vec()).map_err(|e| e.to_string())
}

pub fn write_field_dump(field: &DisplacementField, path: &Path) -> Result<(), FieldError> {
    fs::write(path, encode_field(field)).map_err(|e| FieldError::Dump {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

pub fn read_field_dump(path: &Path) -> Result<DisplacementField, FieldError> {
    let dump_err = |reason: String| FieldError::Dump {
        path: path.display().to_string(),
        reason,
    };
    let bytes = fs::read(path).map_err(|e| dump_err(e.to_string()))?;
    decode_field(&bytes).map_err(dump_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_layout() {
        let f = DisplacementField::new(2, 1, vec![0.5, 1.0], vec![-2.0, 3.25]).unwrap();
        let bytes = encode_field(&f);
        let mut expect = b"DFLD".to_vec();
        expect.extend_from_slice(&[2, 0, 0, 0, 1, 0, 0, 0]);
        for v in [0.5f32, 1.0, -2.0, 3.25] {
            expect.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(bytes, expect);
        assert_eq!(decode_field(&bytes).unwrap(), f);
    }

    #[test]
    fn rejects_truncated_and_foreign_files() {
        let f = DisplacementField::identity(3, 3);
        let bytes = encode_field(&f);
        assert!(decode_field(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_field(b"XXXX\0\0\0\0\0\0\0\0").is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.dfld");
        write_field_dump(&f, &p).unwrap();
        assert_eq!(read_field_dump(&p).unwrap(), f);
    }
}
