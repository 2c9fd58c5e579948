//! Post-processing and retrieval evaluation: mean pooling of patch
//! embeddings into one document feature, optional PCA reduction (applied
//! per patch, before pooling), distance matrices, and leave-one-out
//! retrieval with Top-k accuracy, precision@k, and mAP.

use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingMatrix;
use crate::{Error, Result};

/// Column-wise arithmetic mean over the patch rows. The matrix type
/// guarantees at least one row, so pooling cannot fail.
pub fn mean_pool(m: &EmbeddingMatrix) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = (0..m.rows())
        .map(|i| m.row(i).iter().map(|v| *v as f64).collect())
        .collect();
    mean_rows(&rows)
}

fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let cols = rows[0].len();
    let mut out = vec![0.0; cols];
    for row in rows {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    let n = rows.len() as f64;
    for o in &mut out {
        *o /= n;
    }
    out
}

/// PCA fitted by an explicit Jacobi eigendecomposition of the sample
/// covariance. Component rows are orthonormal, ordered by descending
/// eigenvalue, and signed so each component's largest-magnitude entry is
/// positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    mean: Vec<f64>,
    components: Vec<Vec<f64>>,
    eigenvalues: Vec<f64>,
    /// Sum over *all* covariance eigenvalues, kept so explained-variance
    /// fractions stay meaningful after truncation to `dims` components.
    total_variance: f64,
    input_dim: usize,
}

impl PcaModel {
    pub fn dims(&self) -> usize {
        self.components.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    /// Retained eigenvalues (variance along each component), descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Fraction of total variance along each retained component.
    pub fn explained_variance_fractions(&self) -> Vec<f64> {
        let total: f64 = self.total_variance;
        if total <= 0.0 {
            return vec![0.0; self.eigenvalues.len()];
        }
        self.eigenvalues.iter().map(|l| l / total).collect()
    }
}

/// Fit PCA on feature rows. `dims` must not exceed min(rows-1, cols).
pub fn pca_fit(rows: &[Vec<f64>], dims: usize) -> Result<PcaModel> {
    if rows.len() < 2 {
        return Err(Error::InvalidParam(format!(
            "pca needs at least 2 rows, got {}",
            rows.len()
        )));
    }
    let cols = rows[0].len();
    if cols == 0 {
        return Err(Error::InvalidParam("pca rows are empty".into()));
    }
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidParam("pca rows have differing lengths".into()));
    }
    let max_dims = cols.min(rows.len() - 1);
    if dims == 0 || dims > max_dims {
        return Err(Error::InvalidParam(format!(
            "pca dims {dims} out of range 1..={max_dims} for {} rows x {cols} cols",
            rows.len()
        )));
    }

    let mean = mean_rows(rows);
    // Sample covariance (divisor n-1).
    let n = rows.len() as f64;
    let mut cov = vec![vec![0.0; cols]; cols];
    for row in rows {
        let centered: Vec<f64> = row.iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..cols {
            for j in i..cols {
                cov[i][j] += centered[i] * centered[j];
            }
        }
    }
    for i in 0..cols {
        for j in i..cols {
            cov[i][j] /= n - 1.0;
            cov[j][i] = cov[i][j];
        }
    }

    let (mut eigenvalues, mut vectors) = jacobi_eigen(cov);
    // Descending eigenvalue order; clamp the tiny negatives Jacobi can
    // leave on rank-deficient inputs.
    let mut order: Vec<usize> = (0..eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eigenvalues[b].partial_cmp(&eigenvalues[a]).unwrap());
    eigenvalues = order.iter().map(|&i| eigenvalues[i].max(0.0)).collect();
    vectors = order.iter().map(|&i| std::mem::take(&mut vectors[i])).collect();

    for v in &mut vectors {
        // Sign convention: largest-magnitude entry positive (first such
        // index on exact ties).
        let lead = v
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| {
                a.abs()
                    .partial_cmp(&b.abs())
                    .unwrap()
                    .then(ib.cmp(ia))
            })
            .map(|(i, _)| i)
            .unwrap();
        if v[lead] < 0.0 {
            for x in v.iter_mut() {
                *x = -*x;
            }
        }
    }

    let total_variance: f64 = eigenvalues.iter().sum();
    eigenvalues.truncate(dims);
    vectors.truncate(dims);
    Ok(PcaModel {
        mean,
        components: vectors,
        eigenvalues,
        total_variance,
        input_dim: cols,
    })
}

/// Project rows onto the retained components: (x - mean) * C^T.
pub fn pca_project(model: &PcaModel, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        if row.len() != model.input_dim {
            return Err(Error::InvalidParam(format!(
                "pca expects dim {}, got row of dim {}",
                model.input_dim,
                row.len()
            )));
        }
        let centered: Vec<f64> = row.iter().zip(&model.mean).map(|(v, m)| v - m).collect();
        out.push(
            model
                .components
                .iter()
                .map(|c| c.iter().zip(&centered).map(|(a, b)| a * b).sum())
                .collect(),
        );
    }
    Ok(out)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// (eigenvalues, eigenvectors as rows), unordered.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    // v starts as identity; columns accumulate the rotations.
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let scale: f64 = a
        .iter()
        .flat_map(|r| r.iter())
        .map(|x| x.abs())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let tol = 1e-15 * scale;

    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() <= tol {
                    continue;
                }
                rotated = true;
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                let (app, aqq, apq) = (a[p][p], a[q][q], a[p][q]);
                a[p][p] = c * c * app - 2.0 * s * c * apq + s * s * aqq;
                a[q][q] = s * s * app + 2.0 * s * c * apq + c * c * aqq;
                a[p][q] = 0.0;
                a[q][p] = 0.0;
                for k in 0..n {
                    if k != p && k != q {
                        let akp = a[k][p];
                        let akq = a[k][q];
                        a[k][p] = c * akp - s * akq;
                        a[p][k] = a[k][p];
                        a[k][q] = s * akp + c * akq;
                        a[q][k] = a[k][q];
                    }
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let eigenvalues: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    // Column i of v is the eigenvector for eigenvalue i; emit as rows.
    let vectors: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|k| v[k][i]).collect()).collect();
    (eigenvalues, vectors)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    Euclidean,
    Cosine,
}

/// Pairwise document distances: symmetric, zero diagonal. Cosine is
/// converted to a distance as 1 - cos and rejects zero vectors.
pub fn distance_matrix(gallery: &[Vec<f64>], metric: DistanceMetric) -> Result<Vec<Vec<f64>>> {
    let n = gallery.len();
    if n < 2 {
        return Err(Error::InvalidParam(format!(
            "distance matrix needs at least 2 documents, got {n}"
        )));
    }
    let dim = gallery[0].len();
    for (i, g) in gallery.iter().enumerate() {
        if g.len() != dim {
            return Err(Error::InvalidParam(format!(
                "document {i} has dim {}, expected {dim}",
                g.len()
            )));
        }
    }
    let norms: Vec<f64> = gallery
        .iter()
        .map(|g| g.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    if metric == DistanceMetric::Cosine {
        if let Some(i) = norms.iter().position(|&n| n == 0.0) {
            return Err(Error::InvalidParam(format!(
                "zero vector at document {i}: cosine distance undefined"
            )));
        }
    }
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = match metric {
                DistanceMetric::Euclidean => gallery[i]
                    .iter()
                    .zip(&gallery[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt(),
                DistanceMetric::Cosine => {
                    let dot: f64 = gallery[i].iter().zip(&gallery[j]).map(|(a, b)| a * b).sum();
                    1.0 - dot / (norms[i] * norms[j])
                }
            };
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    Ok(dist)
}

/// One query's outcome: the gallery ranked by ascending distance (ties
/// broken by ascending document id) and the derived relevance flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_id: String,
    pub writer: String,
    /// Gallery document ids in rank order.
    pub ranking: Vec<String>,
    /// Same-writer flag per rank position.
    pub hits: Vec<bool>,
    /// Number of same-writer documents in the gallery.
    pub relevant: usize,
    pub average_precision: f64,
}

/// Leave-one-out retrieval results plus the configuration that produced
/// them. Headline rates cover evaluated queries only; queries without a
/// same-writer partner are excluded and counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub metric: DistanceMetric,
    pub pooling: String,
    pub pca_dims: Option<usize>,
    /// Patch rows per document, in document order (empty when the report
    /// was built directly from a distance matrix).
    pub patch_counts: Vec<usize>,
    pub evaluated_queries: usize,
    pub excluded_queries: usize,
    pub top1: f64,
    pub top5: f64,
    pub precision_at_2: f64,
    pub mean_average_precision: f64,
    pub queries: Vec<QueryOutcome>,
}

impl RetrievalReport {
    /// Fraction of evaluated queries with a same-writer document in the
    /// first k ranks.
    pub fn topk(&self, k: usize) -> f64 {
        if self.queries.is_empty() {
            return 0.0;
        }
        let hits = self
            .queries
            .iter()
            .filter(|q| q.hits.iter().take(k).any(|h| *h))
            .count();
        hits as f64 / self.queries.len() as f64
    }

    /// Mean fraction of same-writer documents among the first k ranks.
    pub fn precision_at(&self, k: usize) -> f64 {
        if self.queries.is_empty() || k == 0 {
            return 0.0;
        }
        let sum: f64 = self
            .queries
            .iter()
            .map(|q| q.hits.iter().take(k).filter(|h| **h).count() as f64 / k as f64)
            .sum();
        sum / self.queries.len() as f64
    }
}

/// Rank every document against all others by ascending distance and
/// score Top-k, P@k, and AP per query. `dist` must be square and aligned
/// with `writers` and `doc_ids`.
pub fn leave_one_out_retrieval(
    dist: &[Vec<f64>],
    writers: &[String],
    doc_ids: &[String],
) -> Result<RetrievalReport> {
    let n = dist.len();
    if writers.len() != n || doc_ids.len() != n {
        return Err(Error::InvalidParam(format!(
            "distance matrix is {n}x{n} but got {} writers / {} doc ids",
            writers.len(),
            doc_ids.len()
        )));
    }
    for (i, row) in dist.iter().enumerate() {
        if row.len() != n {
            return Err(Error::InvalidParam(format!(
                "distance matrix row {i} has length {}, expected {n}",
                row.len()
            )));
        }
    }
    {
        let mut seen = std::collections::BTreeSet::new();
        for id in doc_ids {
            if !seen.insert(id) {
                return Err(Error::InvalidParam(format!("duplicate document id '{id}'")));
            }
        }
    }

    let mut queries = Vec::new();
    let mut excluded = 0usize;
    for q in 0..n {
        let relevant = (0..n)
            .filter(|&i| i != q && writers[i] == writers[q])
            .count();
        if relevant == 0 {
            excluded += 1;
            continue;
        }
        let mut order: Vec<usize> = (0..n).filter(|&i| i != q).collect();
        order.sort_by(|&a, &b| {
            dist[q][a]
                .partial_cmp(&dist[q][b])
                .unwrap()
                .then_with(|| doc_ids[a].cmp(&doc_ids[b]))
        });
        let hits: Vec<bool> = order.iter().map(|&i| writers[i] == writers[q]).collect();
        let mut seen_relevant = 0usize;
        let mut ap_sum = 0.0;
        for (rank0, hit) in hits.iter().enumerate() {
            if *hit {
                seen_relevant += 1;
                ap_sum += seen_relevant as f64 / (rank0 + 1) as f64;
            }
        }
        queries.push(QueryOutcome {
            query_id: doc_ids[q].clone(),
            writer: writers[q].clone(),
            ranking: order.iter().map(|&i| doc_ids[i].clone()).collect(),
            hits,
            relevant,
            average_precision: ap_sum / relevant as f64,
        });
    }

    let evaluated = queries.len();
    let map = if evaluated == 0 {
        0.0
    } else {
        queries.iter().map(|q| q.average_precision).sum::<f64>() / evaluated as f64
    };
    let mut report = RetrievalReport {
        metric: DistanceMetric::Euclidean,
        pooling: "mean".to_string(),
        pca_dims: None,
        patch_counts: Vec::new(),
        evaluated_queries: evaluated,
        excluded_queries: excluded,
        top1: 0.0,
        top5: 0.0,
        precision_at_2: 0.0,
        mean_average_precision: map,
        queries,
    };
    report.top1 = report.topk(1);
    report.top5 = report.topk(5);
    report.precision_at_2 = report.precision_at(2);
    Ok(report)
}

/// Post-processing configuration for [`evaluate_pipeline`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostprocConfig {
    pub metric: DistanceMetric,
    /// Per-patch PCA target dimensionality; None skips PCA.
    pub pca_dims: Option<usize>,
}

impl Default for PostprocConfig {
    fn default() -> Self {
        PostprocConfig {
            metric: DistanceMetric::Euclidean,
            pca_dims: None,
        }
    }
}

/// Evaluate embedded documents: optional per-patch PCA (fit on all patch
/// rows of the gallery, applied before pooling), mean pooling, distance
/// matrix, leave-one-out retrieval.
pub fn evaluate_pipeline(
    docs: &[EmbeddingMatrix],
    writers: &[String],
    postproc: &PostprocConfig,
) -> Result<RetrievalReport> {
    if docs.len() < 2 {
        return Err(Error::InvalidParam(format!(
            "evaluation needs at least 2 documents, got {}",
            docs.len()
        )));
    }
    if writers.len() != docs.len() {
        return Err(Error::InvalidParam(format!(
            "{} documents but {} writer labels",
            docs.len(),
            writers.len()
        )));
    }
    let cols = docs[0].cols();
    if docs.iter().any(|d| d.cols() != cols) {
        return Err(Error::InvalidParam(
            "documents have differing embedding dimensions".into(),
        ));
    }

    let doc_rows: Vec<Vec<Vec<f64>>> = docs
        .iter()
        .map(|d| {
            (0..d.rows())
                .map(|i| d.row(i).iter().map(|v| *v as f64).collect())
                .collect()
        })
        .collect();

    let features: Vec<Vec<f64>> = match postproc.pca_dims {
        Some(dims) => {
            let all_rows: Vec<Vec<f64>> = doc_rows.iter().flatten().cloned().collect();
            let model = pca_fit(&all_rows, dims)?;
            doc_rows
                .iter()
                .map(|rows| Ok(mean_rows(&pca_project(&model, rows)?)))
                .collect::<Result<_>>()?
        }
        None => doc_rows.iter().map(|rows| mean_rows(rows)).collect(),
    };

    let dist = distance_matrix(&features, postproc.metric)?;
    let doc_ids: Vec<String> = docs.iter().map(|d| d.doc_id.clone()).collect();
    let mut report = leave_one_out_retrieval(&dist, writers, &doc_ids)?;
    report.metric = postproc.metric;
    report.pca_dims = postproc.pca_dims;
    report.patch_counts = docs.iter().map(|d| d.rows()).collect();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matrix(doc_id: &str, rows: &[Vec<f64>]) -> EmbeddingMatrix {
        let data: Vec<f32> = rows.iter().flatten().map(|v| *v as f32).collect();
        EmbeddingMatrix::new(doc_id, rows.len(), rows[0].len(), data).unwrap()
    }

    #[test]
    fn mean_pool_examples_and_oracle() {
        let m = matrix("a", &[vec![0.0, 2.0], vec![2.0, 0.0]]);
        assert_eq!(mean_pool(&m), vec![1.0, 1.0]);

        let m = matrix("b", &vec![vec![0.5, -1.0, 3.0]; 4]);
        assert_eq!(mean_pool(&m), vec![0.5, -1.0, 3.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (r, c) = (rng.gen_range(1..10), rng.gen_range(1..6));
            let rows: Vec<Vec<f64>> = (0..r)
                .map(|_| (0..c).map(|_| rng.gen_range(-2.0f64..2.0)).collect())
                .collect();
            // f32 storage: build the oracle over the f32-rounded values.
            let m = matrix("r", &rows);
            let pooled = mean_pool(&m);
            for j in 0..c {
                let oracle: f64 =
                    (0..r).map(|i| rows[i][j] as f32 as f64).sum::<f64>() / r as f64;
                assert!((pooled[j] - oracle).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pca_line_dataset_single_dominant_component() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, i as f64]).collect();
        let model = pca_fit(&rows, 1).unwrap();
        let fracs = model.explained_variance_fractions();
        assert!(fracs[0] >= 0.99999, "{fracs:?}");
        let c = &model.components()[0];
        let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
        assert!((c[0] - inv_sqrt2).abs() < 1e-9 && (c[1] - inv_sqrt2).abs() < 1e-9, "{c:?}");
    }

    #[test]
    fn pca_matches_hand_eigendecomposition() {
        // Rows engineered so the sample covariance is exactly
        // 2/(n-1) * (a^2 v1 v1^T + b^2 v2 v2^T) with eigenvalues 6 and 1.
        let s5 = 5.0f64.sqrt();
        let v1 = [2.0 / s5, 1.0 / s5];
        let v2 = [-1.0 / s5, 2.0 / s5];
        let a = 3.0;
        let b = 1.5f64.sqrt();
        let rows = vec![
            vec![a * v1[0], a * v1[1]],
            vec![-a * v1[0], -a * v1[1]],
            vec![b * v2[0], b * v2[1]],
            vec![-b * v2[0], -b * v2[1]],
        ];
        let model = pca_fit(&rows, 2).unwrap();
        assert!((model.eigenvalues()[0] - 6.0).abs() < 1e-9);
        assert!((model.eigenvalues()[1] - 1.0).abs() < 1e-9);
        let c0 = &model.components()[0];
        let c1 = &model.components()[1];
        assert!((c0[0] - v1[0]).abs() < 1e-9 && (c0[1] - v1[1]).abs() < 1e-9, "{c0:?}");
        // Largest-magnitude entry of the second component is made
        // positive, which keeps (-1,2)/sqrt(5) as-is.
        assert!((c1[0] - v2[0]).abs() < 1e-9 && (c1[1] - v2[1]).abs() < 1e-9, "{c1:?}");
    }

    #[test]
    fn pca_full_dim_preserves_distances() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..6).map(|_| rng.gen_range(-1.0f64..1.0)).collect())
            .collect();
        let model = pca_fit(&rows, 6).unwrap();
        let proj = pca_project(&model, &rows).unwrap();
        for i in 0..rows.len() {
            for j in 0..rows.len() {
                let d0: f64 = rows[i]
                    .iter()
                    .zip(&rows[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let d1: f64 = proj[i]
                    .iter()
                    .zip(&proj[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!((d0 - d1).abs() < 1e-8, "{d0} vs {d1}");
            }
        }
    }

    #[test]
    fn pca_constant_dataset_is_all_zero() {
        // Dyadic constants so the column means are exact.
        let rows = vec![vec![0.25, -0.5, 0.75]; 6];
        let model = pca_fit(&rows, 3).unwrap();
        assert!(model.eigenvalues().iter().all(|l| *l == 0.0));
        let proj = pca_project(&model, &rows).unwrap();
        assert!(proj.iter().flatten().all(|v| *v == 0.0));

        // Non-dyadic constants leave at most rounding-level residue.
        let rows = vec![vec![0.3, -0.4, 0.9]; 6];
        let model = pca_fit(&rows, 3).unwrap();
        assert!(model.eigenvalues().iter().all(|l| *l < 1e-30));
    }

    #[test]
    fn pca_rejects_bad_dims() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        assert!(pca_fit(&rows, 3).is_err()); // > cols
        assert!(pca_fit(&rows, 0).is_err());
        assert!(pca_fit(&rows[..1], 1).is_err()); // < 2 rows
        // dims bounded by rows-1 as well.
        let two = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]];
        assert!(pca_fit(&two, 2).is_err());
        assert!(pca_fit(&two, 1).is_ok());
    }

    #[test]
    fn pca_components_are_orthonormal_and_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let rows: Vec<Vec<f64>> = (0..15)
                .map(|_| (0..5).map(|_| rng.gen_range(-3.0f64..3.0)).collect())
                .collect();
            let model = pca_fit(&rows, 5).unwrap();
            let c = model.components();
            for i in 0..5 {
                for j in 0..5 {
                    let dot: f64 = c[i].iter().zip(&c[j]).map(|(a, b)| a * b).sum();
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - expected).abs() < 1e-8, "gram[{i}][{j}] = {dot}");
                }
            }
            let ev = model.eigenvalues();
            for w in ev.windows(2) {
                assert!(w[0] >= w[1]);
            }
            assert!(ev.iter().all(|l| *l >= 0.0));
            let fracs = model.explained_variance_fractions();
            assert!(fracs.iter().sum::<f64>() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn pca_reconstruction_error_non_increasing_in_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..6).map(|_| rng.gen_range(-2.0f64..2.0)).collect())
            .collect();
        let mut prev = f64::INFINITY;
        for dims in 1..=6 {
            let model = pca_fit(&rows, dims).unwrap();
            let proj = pca_project(&model, &rows).unwrap();
            let mut err = 0.0;
            for (row, p) in rows.iter().zip(&proj) {
                for k in 0..6 {
                    let recon = model.mean()[k]
                        + model
                            .components()
                            .iter()
                            .zip(p)
                            .map(|(c, y)| c[k] * y)
                            .sum::<f64>();
                    err += (row[k] - recon) * (row[k] - recon);
                }
            }
            assert!(err <= prev + 1e-9, "dims {dims}: {err} > {prev}");
            prev = err;
        }
        assert!(prev < 1e-16, "full-dim reconstruction should be exact");
    }

    #[test]
    fn distance_matrix_examples() {
        // Duplicates at zero distance.
        let g = vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![4.0, 6.0]];
        let d = distance_matrix(&g, DistanceMetric::Euclidean).unwrap();
        assert_eq!(d[0][1], 0.0);
        assert_eq!(d[0][2], 5.0);
        for i in 0..3 {
            assert_eq!(d[i][i], 0.0);
            for j in 0..3 {
                assert_eq!(d[i][j], d[j][i]);
            }
        }

        // Orthogonal unit vectors under cosine.
        let g = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let d = distance_matrix(&g, DistanceMetric::Cosine).unwrap();
        assert_eq!(d[0][1], 1.0);

        let g = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        let err = distance_matrix(&g, DistanceMetric::Cosine).unwrap_err();
        assert!(err.to_string().contains("document 1"), "{err}");

        assert!(distance_matrix(&[vec![1.0]], DistanceMetric::Euclidean).is_err());
        assert!(
            distance_matrix(&[vec![1.0], vec![1.0, 2.0]], DistanceMetric::Euclidean).is_err()
        );
    }

    #[test]
    fn distance_matrix_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..5).map(|_| rng.gen_range(0.1f64..2.0)).collect())
            .collect();
        for metric in [DistanceMetric::Euclidean, DistanceMetric::Cosine] {
            let d = distance_matrix(&g, metric).unwrap();
            for i in 0..8 {
                for j in 0..8 {
                    let expected = if i == j {
                        0.0
                    } else {
                        match metric {
                            DistanceMetric::Euclidean => {
                                let mut s = 0.0;
                                for k in 0..5 {
                                    s += (g[i][k] - g[j][k]).powi(2);
                                }
                                s.sqrt()
                            }
                            DistanceMetric::Cosine => {
                                let mut dot = 0.0;
                                let mut ni = 0.0;
                                let mut nj = 0.0;
                                for k in 0..5 {
                                    dot += g[i][k] * g[j][k];
                                    ni += g[i][k] * g[i][k];
                                    nj += g[j][k] * g[j][k];
                                }
                                1.0 - dot / (ni.sqrt() * nj.sqrt())
                            }
                        }
                    };
                    // The lower triangle mirrors the upper, so allow the
                    // oracle's (i,j)/(j,i) evaluation-order difference.
                    assert!((d[i][j] - expected).abs() < 1e-12);
                }
            }
        }
    }

    /// Distance matrix with the ranking for query 0 fixed by increasing
    /// distances; remaining pairs get large distinct values.
    fn dist_for_query0(n: usize, order: &[usize]) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; n]; n];
        for (rank, &i) in order.iter().enumerate() {
            d[0][i] = (rank + 1) as f64;
            d[i][0] = d[0][i];
        }
        let mut filler = 100.0;
        for i in 1..n {
            for j in (i + 1)..n {
                d[i][j] = filler;
                d[j][i] = filler;
                filler += 1.0;
            }
        }
        d
    }

    #[test]
    fn retrieval_worked_example() {
        // Query d0 (writer A): relevant at ranks 1 and 3 of 5.
        let writers: Vec<String> =
            ["A", "A", "B", "A", "B", "B"].iter().map(|s| s.to_string()).collect();
        let ids: Vec<String> = (0..6).map(|i| format!("d{i}")).collect();
        let dist = dist_for_query0(6, &[1, 2, 3, 4, 5]);
        let report = leave_one_out_retrieval(&dist, &writers, &ids).unwrap();
        let q0 = &report.queries[0];
        assert_eq!(q0.query_id, "d0");
        assert_eq!(q0.hits, vec![true, false, true, false, false]);
        assert!((q0.average_precision - 5.0 / 6.0).abs() < 1e-12);
        // P@2 for this query: 1 hit of first 2.
        assert_eq!(q0.hits.iter().take(2).filter(|h| **h).count(), 1);
    }

    #[test]
    fn retrieval_perfect_ranking() {
        let writers: Vec<String> = ["A", "A", "B", "B"].iter().map(|s| s.to_string()).collect();
        let ids: Vec<String> = (0..4).map(|i| format!("d{i}")).collect();
        // Same-writer pairs at tiny distances, cross pairs large.
        let mut dist = vec![vec![0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    dist[i][j] = if writers[i] == writers[j] { 1.0 } else { 10.0 };
                }
            }
        }
        let report = leave_one_out_retrieval(&dist, &writers, &ids).unwrap();
        assert_eq!(report.top1, 1.0);
        assert_eq!(report.mean_average_precision, 1.0);
        assert_eq!(report.precision_at(1), 1.0);
    }

    #[test]
    fn retrieval_single_match_ranked_second() {
        // d0's only partner is ranked 2nd of 5.
        let writers: Vec<String> =
            ["A", "B", "A", "B", "B", "B"].iter().map(|s| s.to_string()).collect();
        let ids: Vec<String> = (0..6).map(|i| format!("d{i}")).collect();
        let dist = dist_for_query0(6, &[1, 2, 3, 4, 5]);
        let report = leave_one_out_retrieval(&dist, &writers, &ids).unwrap();
        let q0 = &report.queries[0];
        assert_eq!(q0.hits, vec![false, true, false, false, false]);
        assert!(!q0.hits[0]);
        assert!(q0.hits.iter().take(5).any(|h| *h));
        assert!((q0.average_precision - 0.5).abs() < 1e-12);
    }

    #[test]
    fn retrieval_tie_breaks_by_doc_id() {
        let writers: Vec<String> = ["A", "B", "A"].iter().map(|s| s.to_string()).collect();
        let ids: Vec<String> = ["q", "z_doc", "a_doc"].iter().map(|s| s.to_string()).collect();
        // Both gallery docs at the same distance from q.
        let dist = vec![
            vec![0.0, 1.0, 1.0],
            vec![1.0, 0.0, 2.0],
            vec![1.0, 2.0, 0.0],
        ];
        let report = leave_one_out_retrieval(&dist, &writers, &ids).unwrap();
        assert_eq!(report.queries[0].ranking, vec!["a_doc".to_string(), "z_doc".to_string()]);
    }

    #[test]
    fn retrieval_excludes_partnerless_queries() {
        let writers: Vec<String> = ["A", "A", "C"].iter().map(|s| s.to_string()).collect();
        let ids: Vec<String> = (0..3).map(|i| format!("d{i}")).collect();
        let dist = vec![
            vec![0.0, 1.0, 2.0],
            vec![1.0, 0.0, 2.0],
            vec![2.0, 2.0, 0.0],
        ];
        let report = leave_one_out_retrieval(&dist, &writers, &ids).unwrap();
        assert_eq!(report.evaluated_queries, 2);
        assert_eq!(report.excluded_queries, 1);
        assert_eq!(report.top1, 1.0);
    }

    #[test]
    fn retrieval_rejects_malformed_inputs() {
        let dist = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let ids: Vec<String> = vec!["a".into(), "b".into()];
        assert!(leave_one_out_retrieval(&dist, &["A".to_string()], &ids).is_err());
        let dup: Vec<String> = vec!["a".into(), "a".into()];
        let writers: Vec<String> = vec!["A".into(), "A".into()];
        assert!(leave_one_out_retrieval(&dist, &writers, &dup).is_err());
        let ragged = vec![vec![0.0, 1.0], vec![1.0]];
        assert!(leave_one_out_retrieval(&ragged, &writers, &ids).is_err());
    }

    /// Independent brute-force scorer for one query.
    fn oracle_query(
        dist: &[Vec<f64>],
        writers: &[String],
        ids: &[String],
        q: usize,
    ) -> Option<(bool, bool, f64, f64)> {
        let n = dist.len();
        let mut others: Vec<usize> = (0..n).filter(|&i| i != q).collect();
        if !others.iter().any(|&i| writers[i] == writers[q]) {
            return None;
        }
        others.sort_by(|&a, &b| {
            dist[q][a]
                .partial_cmp(&dist[q][b])
                .unwrap()
                .then_with(|| ids[a].cmp(&ids[b]))
        });
        let rel: Vec<bool> = others.iter().map(|&i| writers[i] == writers[q]).collect();
        let top1 = rel[0];
        let top5 = rel.iter().take(5).any(|r| *r);
        let p2 = rel.iter().take(2).filter(|r| **r).count() as f64 / 2.0;
        let total_rel = rel.iter().filter(|r| **r).count();
        let mut seen = 0;
        let mut ap = 0.0;
        for (i, r) in rel.iter().enumerate() {
            if *r {
                seen += 1;
                ap += seen as f64 / (i + 1) as f64;
            }
        }
        Some((top1, top5, p2, ap / total_rel as f64))
    }

    #[test]
    fn retrieval_matches_brute_force_oracle_on_500_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        for _ in 0..500 {
            let n = rng.gen_range(3..12);
            let writers: Vec<String> =
                (0..n).map(|_| format!("w{}", rng.gen_range(0..4))).collect();
            let ids: Vec<String> = (0..n).map(|i| format!("doc{i:02}")).collect();
            let mut dist = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in (i + 1)..n {
                    // Coarse grid so ties actually occur.
                    let d = rng.gen_range(1..6) as f64;
                    dist[i][j] = d;
                    dist[j][i] = d;
                }
            }
            let report = leave_one_out_retrieval(&dist, &writers, &ids).unwrap();

            let mut evaluated = 0;
            let (mut t1, mut t5, mut p2, mut map) = (0.0, 0.0, 0.0, 0.0);
            for q in 0..n {
                if let Some((o1, o5, op2, oap)) = oracle_query(&dist, &writers, &ids, q) {
                    evaluated += 1;
                    t1 += o1 as u8 as f64;
                    t5 += o5 as u8 as f64;
                    p2 += op2;
                    map += oap;
                }
            }
            assert_eq!(report.evaluated_queries, evaluated);
            if evaluated == 0 {
                continue;
            }
            let e = evaluated as f64;
            assert!((report.top1 - t1 / e).abs() < 1e-12);
            assert!((report.top5 - t5 / e).abs() < 1e-12);
            assert!((report.precision_at_2 - p2 / e).abs() < 1e-12);
            assert!((report.mean_average_precision - map / e).abs() < 1e-12);
        }
    }

    #[test]
    fn pipeline_duplicate_documents_hit_top1() {
        // Identical embedding matrices per writer regardless of content.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut docs = Vec::new();
        let mut writers = Vec::new();
        for w in 0..3 {
            let rows: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..6).map(|_| rng.gen_range(-1.0f64..1.0)).collect())
                .collect();
            for d in 0..2 {
                docs.push(matrix(&format!("w{w}_d{d}"), &rows));
                writers.push(format!("w{w}"));
            }
        }
        let report =
            evaluate_pipeline(&docs, &writers, &PostprocConfig::default()).unwrap();
        assert_eq!(report.top1, 1.0);
        assert_eq!(report.patch_counts, vec![4; 6]);
    }

    #[test]
    fn pipeline_full_dim_pca_preserves_top1() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut docs = Vec::new();
        let mut writers = Vec::new();
        for w in 0..4 {
            for d in 0..3 {
                let rows: Vec<Vec<f64>> = (0..5)
                    .map(|_| {
                        (0..6)
                            .map(|k| {
                                0.3 * w as f64 * (k as f64 + 1.0).sin()
                                    + rng.gen_range(-0.2f64..0.2)
                            })
                            .collect()
                    })
                    .collect();
                docs.push(matrix(&format!("w{w}_d{d}"), &rows));
                writers.push(format!("w{w}"));
            }
        }
        let plain =
            evaluate_pipeline(&docs, &writers, &PostprocConfig::default()).unwrap();
        let full_pca = evaluate_pipeline(
            &docs,
            &writers,
            &PostprocConfig {
                metric: DistanceMetric::Euclidean,
                pca_dims: Some(6),
            },
        )
        .unwrap();
        assert_eq!(plain.top1, full_pca.top1);
        assert_eq!(full_pca.pca_dims, Some(6));
    }

    #[test]
    fn pipeline_reports_are_byte_identical() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let mut docs = Vec::new();
            let mut writers = Vec::new();
            for w in 0..3 {
                for d in 0..2 {
                    let rows: Vec<Vec<f64>> = (0..3)
                        .map(|_| (0..4).map(|_| rng.gen_range(-1.0f64..1.0)).collect())
                        .collect();
                    docs.push(matrix(&format!("w{w}_d{d}"), &rows));
                    writers.push(format!("w{w}"));
                }
            }
            let report = evaluate_pipeline(
                &docs,
                &writers,
                &PostprocConfig {
                    metric: DistanceMetric::Cosine,
                    pca_dims: Some(2),
                },
            )
            .unwrap();
            serde_json::to_vec_pretty(&report).unwrap()
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn pipeline_rejects_mismatched_inputs() {
        let docs = vec![
            matrix("a", &[vec![1.0, 2.0]]),
            matrix("b", &[vec![1.0, 2.0, 3.0]]),
        ];
        let writers: Vec<String> = vec!["A".into(), "B".into()];
        assert!(evaluate_pipeline(&docs, &writers, &PostprocConfig::default()).is_err());
        let one = vec![matrix("a", &[vec![1.0]])];
        assert!(
            evaluate_pipeline(&one, &writers[..1], &PostprocConfig::default()).is_err()
        );
    }
}
