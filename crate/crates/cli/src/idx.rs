//! Reader for the IDX binary format: a big-endian magic `0x000008NN`
//! (unsigned bytes, `NN` dimensions), `NN` big-endian `u32` extents, then
//! the payload.

use std::path::Path;

use jiio_core::tasks::{Dataset, Provenance};

use crate::error::{CliError, Result};

/// Magic of a one-dimensional unsigned-byte array (labels).
pub const MAGIC_LABELS: u32 = 0x0000_0801;
/// Magic of a three-dimensional unsigned-byte array (images).
pub const MAGIC_IMAGES: u32 = 0x0000_0803;

/// A decoded unsigned-byte IDX array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Decodes IDX bytes; `path` is only used in error messages.
pub fn parse_idx(bytes: &[u8], path: &Path) -> Result<IdxArray> {
    let truncated = || CliError::TruncatedFile { path: path.to_path_buf() };
    let magic = read_u32(bytes, 0).ok_or_else(truncated)?;
    let rank = match magic {
        MAGIC_LABELS => 1,
        MAGIC_IMAGES => 3,
        _ => return Err(CliError::BadMagic { path: path.to_path_buf() }),
    };
    let dims = (0..rank)
        .map(|i| read_u32(bytes, 4 + 4 * i).map(|v| v as usize).ok_or_else(truncated))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * rank;
    let len = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or_else(truncated)?;
    let payload = bytes.get(start..start + len).ok_or_else(truncated)?;
    Ok(IdxArray {
        dims,
        data: payload.to_vec(),
    })
}

fn read_u32(bytes: &[u8], at: usize) -> Option<u32> {
    let b = bytes.get(at..at + 4)?;
    Some(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

fn read_file(path: &Path) -> Result<IdxArray> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    parse_idx(&bytes, path)
}

/// Loads an image file as a dataset of row-major flattened images scaled to
/// `[0, 1]`. A label file loads as one-pixel items.
pub fn load_idx(path: &Path) -> Result<Dataset> {
    let arr = read_file(path)?;
    let count = arr.dims[0];
    let item_len = arr.dims[1..].iter().product::<usize>();
    let items = (0..count)
        .map(|i| {
            arr.data[i * item_len..(i + 1) * item_len]
                .iter()
                .map(|&b| f64::from(b) / 255.0)
                .collect()
        })
        .collect();
    Ok(Dataset::new(items, None, Provenance::IdxFile)?)
}

/// Loads a label file as class indices.
pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let arr = read_file(path)?;
    if arr.dims.len() != 1 {
        return Err(CliError::BadMagic { path: path.to_path_buf() });
    }
    Ok(arr.data.iter().map(|&b| b as usize).collect())
}

/// Images with their labels.
pub fn load_idx_labeled(images: &Path, labels: &Path) -> Result<Dataset> {
    let data = load_idx(images)?;
    let labels = load_idx_labels(labels)?;
    Ok(Dataset::new(data.items, Some(labels), Provenance::IdxFile)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(dims: [u32; 3], payload: &[u8]) -> Vec<u8> {
        let mut b = MAGIC_IMAGES.to_be_bytes().to_vec();
        for d in dims {
            b.extend(d.to_be_bytes());
        }
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn decodes_images_and_scales_pixels() {
        let mut payload: Vec<u8> = (0..24).collect();
        payload[5] = 255;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.idx");
        std::fs::write(&path, images([2, 3, 4], &payload)).unwrap();
        let d = load_idx(&path).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.dim(), 12);
        assert_eq!(d.items[0][5], 1.0);
        assert_eq!(d.items[1][0], 12.0 / 255.0);
        assert_eq!(d.provenance, Provenance::IdxFile);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let p = Path::new("mem");
        let mut bad = images([1, 1, 1], &[0]);
        bad[2] = 0x09;
        assert!(matches!(parse_idx(&bad, p), Err(CliError::BadMagic { .. })));
        assert!(matches!(
            parse_idx(&images([2, 3, 4], &[0; 23]), p),
            Err(CliError::TruncatedFile { .. })
        ));
        assert!(matches!(parse_idx(&[0, 0, 8], p), Err(CliError::TruncatedFile { .. })));
    }

    #[test]
    fn decodes_labels() {
        let mut b = MAGIC_LABELS.to_be_bytes().to_vec();
        b.extend(3u32.to_be_bytes());
        b.extend([7, 0, 2]);
        let arr = parse_idx(&b, Path::new("mem")).unwrap();
        assert_eq!(arr.dims, vec![3]);
        assert_eq!(arr.data, vec![7, 0, 2]);
    }
}
