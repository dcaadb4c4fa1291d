//! Binary checkpoints: the magic `JIIO1\n`, then per tensor a `u32` name
//! length, the UTF-8 name, a `u32` rank, `rank` `u32` extents and the
//! little-endian `f64` payload, and finally a `u32` tensor count. All
//! integers are little-endian.

use std::path::Path;

use jiio_core::layer::{EquilibriumLayer, LayerKind, LayerParams};
use jiio_core::linalg::Matrix;
use jiio_core::loss::OutputHead;
use jiio_core::tasks::Model;

use crate::error::{CliError, Result};

pub const MAGIC: &[u8] = b"JIIO1\n";

/// A named tensor with row-major data.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: &str, shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            name: name.to_string(),
            shape,
            data,
        }
    }

    pub fn scalar(name: &str, v: f64) -> Self {
        Self::new(name, Vec::new(), vec![v])
    }
}

pub fn encode(tensors: &[Tensor]) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for t in tensors {
        out.extend((t.name.len() as u32).to_le_bytes());
        out.extend(t.name.as_bytes());
        out.extend((t.shape.len() as u32).to_le_bytes());
        for &e in &t.shape {
            out.extend((e as u32).to_le_bytes());
        }
        for v in &t.data {
            out.extend(v.to_le_bytes());
        }
    }
    out.extend((tensors.len() as u32).to_le_bytes());
    out
}

/// Decodes checkpoint bytes; `path` is only used in error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<Tensor>> {
    if !bytes.starts_with(MAGIC) {
        return Err(CliError::BadMagic { path: path.to_path_buf() });
    }
    let corrupt = || CliError::CorruptFooter { path: path.to_path_buf() };
    if bytes.len() < MAGIC.len() + 4 {
        return Err(CliError::TruncatedFile { path: path.to_path_buf() });
    }
    let body_end = bytes.len() - 4;
    let count = u32::from_le_bytes(bytes[body_end..].try_into().expect("four footer bytes")) as usize;
    let mut cur = Cursor {
        bytes: &bytes[..body_end],
        pos: MAGIC.len(),
    };
    let mut tensors = Vec::new();
    while cur.pos < body_end {
        if tensors.len() == count {
            return Err(corrupt());
        }
        let parsed = (|| {
            let name_len = cur.u32()? as usize;
            let name = String::from_utf8(cur.take(name_len)?.to_vec()).ok()?;
            let rank = cur.u32()? as usize;
            let shape = (0..rank).map(|_| cur.u32().map(|e| e as usize)).collect::<Option<Vec<_>>>()?;
            let len = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e))?;
            let raw = cur.take(len.checked_mul(8)?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
                .collect();
            Some(Tensor { name, shape, data })
        })();
        tensors.push(parsed.ok_or_else(corrupt)?);
    }
    if tensors.len() != count {
        return Err(corrupt());
    }
    Ok(tensors)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("four bytes")))
    }
}

pub fn save_checkpoint(tensors: &[Tensor], path: &Path) -> Result<()> {
    std::fs::write(path, encode(tensors)).map_err(|e| CliError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<Tensor>> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes, path)
}

/// Tensors for a model plus metadata: layer kind, training step count and
/// the configuration hash (as two exact 32-bit halves).
pub fn model_tensors(model: &Model, step: usize, config_hash: u64) -> Vec<Tensor> {
    let p = &model.layer.params;
    let (n, d) = (p.w.rows(), p.u.cols());
    let q = model.head.output_dim();
    let kind = match model.layer.kind {
        LayerKind::Linear => 0.0,
        LayerKind::Tanh => 1.0,
    };
    vec![
        Tensor::new("layer.w", vec![n, n], p.w.as_slice().to_vec()),
        Tensor::new("layer.u", vec![n, d], p.u.as_slice().to_vec()),
        Tensor::new("layer.b", vec![n], p.b.clone()),
        Tensor::new("head.c", vec![q, n], model.head.c.as_slice().to_vec()),
        Tensor::new("head.d", vec![q], model.head.d.clone()),
        Tensor::scalar("meta.kind", kind),
        Tensor::scalar("meta.step", step as f64),
        Tensor::new(
            "meta.config_hash",
            vec![2],
            vec![(config_hash >> 32) as f64, (config_hash & 0xffff_ffff) as f64],
        ),
    ]
}

/// Rebuilds a model from [`model_tensors`] output.
pub fn model_from_tensors(tensors: &[Tensor], path: &Path) -> Result<Model> {
    let corrupt = || CliError::CorruptFooter { path: path.to_path_buf() };
    let get = |name: &str| tensors.iter().find(|t| t.name == name).ok_or_else(corrupt);
    let matrix = |name: &str| -> Result<Matrix> {
        let t = get(name)?;
        if t.shape.len() != 2 {
            return Err(corrupt());
        }
        Ok(Matrix::from_vec(t.shape[0], t.shape[1], t.data.clone())?)
    };
    let kind = match get("meta.kind")?.data.first() {
        Some(0.0) => LayerKind::Linear,
        Some(1.0) => LayerKind::Tanh,
        _ => return Err(corrupt()),
    };
    let params = LayerParams::new(matrix("layer.w")?, matrix("layer.u")?, get("layer.b")?.data.clone())?;
    let head = OutputHead::new(matrix("head.c")?, get("head.d")?.data.clone())?;
    Ok(Model {
        layer: EquilibriumLayer::new(kind, params),
        head,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let model = Model::random(LayerKind::Tanh, 4, 3, 2, 0.6, 1).unwrap();
        let tensors = model_tensors(&model, 17, 0xdead_beef_0123_4567);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&tensors, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.len(), tensors.len());
        for (a, b) in tensors.iter().zip(&back) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            let bits = |t: &Tensor| t.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
        assert_eq!(model_from_tensors(&back, &path).unwrap(), model);
        let h = &back[7].data;
        assert_eq!(((h[0] as u64) << 32) | h[1] as u64, 0xdead_beef_0123_4567);
    }

    #[test]
    fn empty_checkpoint_is_magic_plus_footer() {
        let bytes = encode(&[]);
        assert_eq!(bytes, b"JIIO1\n\0\0\0\0");
        assert!(decode(&bytes, Path::new("mem")).unwrap().is_empty());
    }

    #[test]
    fn detects_bad_magic_and_corruption() {
        let p = Path::new("mem");
        let good = encode(&[Tensor::new("a", vec![2], vec![1.0, 2.0])]);
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad, p), Err(CliError::BadMagic { .. })));
        let mut wrong_count = good.clone();
        let n = wrong_count.len();
        wrong_count[n - 4] = 2;
        assert!(matches!(decode(&wrong_count, p), Err(CliError::CorruptFooter { .. })));
        let mut short = good[..good.len() - 5].to_vec();
        short.extend(1u32.to_le_bytes());
        assert!(matches!(decode(&short, p), Err(CliError::CorruptFooter { .. })));
    }
}
