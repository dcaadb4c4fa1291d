//! Seeded synthetic corpora: two-blob images, two-class spirals and
//! linearly realizable meta-learning tasks.

use crate::error::{check_len, Error, Result};
use crate::linalg::Matrix;
use crate::rng::SeededRng;

/// Side length of the synthetic blob images.
pub const BLOB_SIDE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Synthetic,
    IdxFile,
}

/// A homogeneous collection of target vectors with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub items: Vec<Vec<f64>>,
    pub labels: Option<Vec<usize>>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(items: Vec<Vec<f64>>, labels: Option<Vec<usize>>, provenance: Provenance) -> Result<Self> {
        if let Some(first) = items.first() {
            for item in &items {
                check_len("dataset item", item.len(), first.len())?;
            }
        }
        if let Some(l) = &labels {
            check_len("label count", l.len(), items.len())?;
        }
        Ok(Self {
            items,
            labels,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Item dimension; 0 for an empty dataset.
    pub fn dim(&self) -> usize {
        self.items.first().map_or(0, Vec::len)
    }

    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |m| m + 1)
    }

    /// Splits off the last `count` items.
    pub fn split_tail(&self, count: usize) -> (Dataset, Dataset) {
        let cut = self.len().saturating_sub(count);
        let labels = |r: std::ops::Range<usize>| self.labels.as_ref().map(|l| l[r].to_vec());
        (
            Dataset {
                items: self.items[..cut].to_vec(),
                labels: labels(0..cut),
                provenance: self.provenance,
            },
            Dataset {
                items: self.items[cut..].to_vec(),
                labels: labels(cut..self.len()),
                provenance: self.provenance,
            },
        )
    }
}

/// 8×8 images, each the clamped sum of two Gaussian bumps with random
/// centers and widths. Pixels lie in `[0, 1]`.
pub fn blobs(count: usize, seed: u64) -> Dataset {
    let mut rng = SeededRng::new(seed);
    let side = BLOB_SIDE as f64;
    let items = (0..count)
        .map(|_| {
            let bumps: Vec<(f64, f64, f64)> = (0..2)
                .map(|_| {
                    (
                        rng.uniform_range(1.0, side - 2.0),
                        rng.uniform_range(1.0, side - 2.0),
                        rng.uniform_range(0.9, 1.6),
                    )
                })
                .collect();
            (0..BLOB_SIDE * BLOB_SIDE)
                .map(|p| {
                    let (r, c) = ((p / BLOB_SIDE) as f64, (p % BLOB_SIDE) as f64);
                    let v: f64 = bumps
                        .iter()
                        .map(|(br, bc, s)| (-((r - br).powi(2) + (c - bc).powi(2)) / (2.0 * s * s)).exp())
                        .sum();
                    v.clamp(0.0, 1.0)
                })
                .collect()
        })
        .collect();
    Dataset {
        items,
        labels: None,
        provenance: Provenance::Synthetic,
    }
}

/// Two interleaved 2-D spirals; labels alternate between the arms.
pub fn spirals(count: usize, seed: u64) -> Dataset {
    let mut rng = SeededRng::new(seed);
    let mut items = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for i in 0..count {
        let class = i % 2;
        let t = rng.uniform_range(0.25, 1.0);
        let angle = 3.0 * std::f64::consts::PI * t + class as f64 * std::f64::consts::PI;
        let r = 2.0 * t;
        items.push(vec![
            r * angle.cos() + 0.05 * rng.normal(),
            r * angle.sin() + 0.05 * rng.normal(),
        ]);
        labels.push(class);
    }
    Dataset {
        items,
        labels: Some(labels),
        provenance: Provenance::Synthetic,
    }
}

/// One meta-learning task: disjoint support and query pairs `(features,
/// target)` sharing a planted task vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaTask {
    pub support: Vec<(Vec<f64>, Vec<f64>)>,
    pub query: Vec<(Vec<f64>, Vec<f64>)>,
    pub task_dim: usize,
    /// The task vector used to generate the targets.
    pub planted: Vec<f64>,
}

impl MetaTask {
    pub fn feature_dim(&self) -> usize {
        self.support.first().map_or(0, |(a, _)| a.len())
    }

    pub fn target_dim(&self) -> usize {
        self.support.first().map_or(0, |(_, y)| y.len())
    }
}

/// Shape of a family of linearly realizable tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskFamily {
    pub feature_dim: usize,
    pub task_dim: usize,
    pub target_dim: usize,
    pub support: usize,
    pub query: usize,
}

/// Tasks with targets `y = A a + B t` for shared teacher matrices `A`, `B`,
/// Gaussian features `a` and a per-task planted vector `t`.
pub fn linreal_tasks(family: TaskFamily, count: usize, seed: u64) -> Result<Vec<MetaTask>> {
    if family.support == 0 {
        return Err(Error::InvalidArgument("tasks need at least one support example".into()));
    }
    let mut rng = SeededRng::new(seed);
    let a_mat = Matrix::random_normal(family.target_dim, family.feature_dim, 0.5, &mut rng);
    let b_mat = Matrix::random_normal(family.target_dim, family.task_dim, 0.5, &mut rng);
    Ok((0..count)
        .map(|_| {
            let planted = rng.normal_vec(family.task_dim);
            let shift = b_mat.matvec(&planted);
            let pair = |rng: &mut SeededRng| {
                let a = rng.normal_vec(family.feature_dim);
                let y: Vec<f64> = a_mat.matvec(&a).iter().zip(&shift).map(|(u, v)| u + v).collect();
                (a, y)
            };
            let support = (0..family.support).map(|_| pair(&mut rng)).collect();
            let query = (0..family.query).map(|_| pair(&mut rng)).collect();
            MetaTask {
                support,
                query,
                task_dim: family.task_dim,
                planted,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_deterministic() {
        assert!(blobs(0, 1).is_empty());
        assert!(spirals(0, 1).is_empty());
        assert_eq!(blobs(5, 3), blobs(5, 3));
        assert_eq!(spirals(7, 3), spirals(7, 3));
        assert_ne!(blobs(5, 3), blobs(5, 4));
    }

    #[test]
    fn blob_pixels_in_unit_range() {
        let d = blobs(50, 9);
        assert_eq!(d.dim(), 64);
        assert!(d.items.iter().flatten().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn spirals_are_balanced() {
        let d = spirals(10, 2);
        assert_eq!(d.num_classes(), 2);
        assert_eq!(d.labels.as_ref().unwrap().iter().filter(|&&l| l == 1).count(), 5);
    }

    #[test]
    fn tasks_are_realizable_and_disjoint() {
        let fam = TaskFamily {
            feature_dim: 3,
            task_dim: 2,
            target_dim: 2,
            support: 4,
            query: 3,
        };
        let tasks = linreal_tasks(fam, 3, 5).unwrap();
        assert_eq!(tasks.len(), 3);
        for t in &tasks {
            assert_eq!((t.support.len(), t.query.len()), (4, 3));
            for s in &t.support {
                assert!(!t.query.contains(s));
            }
        }
        assert_eq!(tasks, linreal_tasks(fam, 3, 5).unwrap());
        assert!(linreal_tasks(TaskFamily { support: 0, ..fam }, 1, 0).is_err());
    }

    #[test]
    fn mismatched_items_rejected() {
        assert!(Dataset::new(vec![vec![0.0], vec![0.0, 1.0]], None, Provenance::Synthetic).is_err());
        assert!(Dataset::new(vec![vec![0.0]], Some(vec![0, 1]), Provenance::Synthetic).is_err());
    }

    #[test]
    fn split_tail_partitions() {
        let d = spirals(10, 1);
        let (a, b) = d.split_tail(3);
        assert_eq!((a.len(), b.len()), (7, 3));
        assert_eq!(b.items[0], d.items[7]);
    }
}
