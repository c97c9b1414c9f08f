//! Embedding dumps and a cluster-separation score for trained models.

use crate::embed::{embed_target, EmbeddingModel};
use crate::error::{Error, Result};
use crate::mtcl::train::FrameSource;
use crate::scalar::Scalar;
use crate::vector::{dot, l2_normalize, Embedding};

#[derive(Debug, Clone, PartialEq)]
pub struct DumpRow<T> {
    pub trajectory: usize,
    pub frame: usize,
    pub embedding: Embedding<T>,
}

/// Inference embeddings of every labeled target in every `stride`-th frame.
pub fn dump_embeddings<T: Scalar, S: FrameSource<T> + ?Sized>(
    source: &S,
    model: &EmbeddingModel<T>,
    stride: usize,
) -> Result<Vec<DumpRow<T>>> {
    let mut rows = Vec::new();
    for frame in (0..source.num_frames()).step_by(stride.max(1)) {
        let data = source.frame(frame)?;
        for &(trajectory, ref bbox) in &data.targets {
            if let Ok(embedding) = embed_target(&data.map, bbox, model) {
                rows.push(DumpRow {
                    trajectory,
                    frame,
                    embedding,
                });
            }
        }
    }
    Ok(rows)
}

/// Mean intra-identity cosine distance divided by mean inter-identity cosine distance,
/// over all unordered pairs. Smaller means tighter, better separated clusters.
///
/// Uses `Σ_{i≠j} u_i·u_j = ‖Σ u‖² − n` for unit vectors, so the cost is linear in the
/// number of rows.
pub fn separation_ratio<T: Scalar>(rows: &[(usize, &[T])]) -> Result<f64> {
    let Some(&(_, first)) = rows.first() else {
        return Err(Error::Empty("embeddings"));
    };
    let dim = first.len();
    let n_labels = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    let mut sums = vec![vec![0.0f64; dim]; n_labels];
    let mut counts = vec![0usize; n_labels];
    let mut total = vec![0.0f64; dim];
    for &(label, v) in rows {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        let u = l2_normalize(v).vector;
        for ((s, t), &x) in sums[label].iter_mut().zip(total.iter_mut()).zip(u.iter()) {
            *s += x.as_f64();
            *t += x.as_f64();
        }
        counts[label] += 1;
    }

    let mut intra_sum = 0.0;
    let mut intra_pairs = 0.0;
    for (s, &n) in sums.iter().zip(&counts) {
        if n >= 2 {
            intra_sum += dot(s, s) - n as f64;
            intra_pairs += (n * (n - 1)) as f64;
        }
    }
    let n = rows.len() as f64;
    let all_sum = dot(&total, &total) - n;
    let all_pairs = n * (n - 1.0);
    let inter_sum = all_sum - intra_sum;
    let inter_pairs = all_pairs - intra_pairs;
    if intra_pairs == 0.0 || inter_pairs == 0.0 {
        return Err(Error::Undefined("separation ratio needs two identities with two samples"));
    }
    let intra = 1.0 - intra_sum / intra_pairs;
    let inter = 1.0 - inter_sum / inter_pairs;
    if inter <= 0.0 {
        return Err(Error::Undefined("inter-identity distance is zero"));
    }
    Ok(intra / inter)
}

/// Separation ratio of a model's inference embeddings on a source.
pub fn model_separation<T: Scalar, S: FrameSource<T> + ?Sized>(
    source: &S,
    model: &EmbeddingModel<T>,
    stride: usize,
) -> Result<f64> {
    let rows = dump_embeddings(source, model, stride)?;
    let refs: Vec<(usize, &[T])> = rows
        .iter()
        .map(|r| (r.trajectory, r.embedding.0.as_slice()))
        .collect();
    separation_ratio(&refs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(rows: &[(usize, Vec<f64>)]) -> f64 {
        let (mut a, mut na, mut b, mut nb) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..rows.len() {
            for j in 0..rows.len() {
                if i == j {
                    continue;
                }
                let u = l2_normalize(&rows[i].1).vector;
                let v = l2_normalize(&rows[j].1).vector;
                let d = 1.0 - dot(&u, &v);
                if rows[i].0 == rows[j].0 {
                    a += d;
                    na += 1.0;
                } else {
                    b += d;
                    nb += 1.0;
                }
            }
        }
        (a / na) / (b / nb)
    }

    #[test]
    fn matches_pairwise_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let rows: Vec<(usize, Vec<f64>)> = (0..15)
                .map(|i| (i % 3, (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()))
                .collect();
            let refs: Vec<(usize, &[f64])> = rows.iter().map(|(l, v)| (*l, v.as_slice())).collect();
            assert_relative_eq!(separation_ratio(&refs).unwrap(), brute(&rows), epsilon = 1e-10);
        }
    }

    #[test]
    fn perfect_clusters_score_zero() {
        let a = [1.0, 0.0];
        let b = [0.0, 1.0];
        let rows = [(0, &a[..]), (0, &a[..]), (1, &b[..]), (1, &b[..])];
        assert_eq!(separation_ratio(&rows).unwrap(), 0.0);
    }

    #[test]
    fn single_identity_is_undefined() {
        let a = [1.0, 0.0];
        assert!(separation_ratio(&[(0, &a[..]), (0, &a[..])]).is_err());
        assert!(separation_ratio::<f64>(&[]).is_err());
    }
}
