//! Linear algebra and sampling kernel for zero-mean multivariate Gaussian
//! classical variables: validation, conditioning, seeded sampling, empirical
//! moments, and mutual information.
//!
//! All variances are expressed in shot-noise units (vacuum quadrature
//! variance = 1). Second moments are uncentered throughout: the protocol
//! defines every variable as zero-mean.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Relative tolerance for the symmetry check in [`CovarianceMatrix::validate`].
pub const SYMMETRY_RTOL: f64 = 1e-12;

/// PSD tolerance: eigenvalues above `-PSD_RTOL * trace` are accepted and
/// clipped to zero.
pub const PSD_RTOL: f64 = 1e-10;

/// Conditioning floor: a conditioned block whose smallest eigenvalue is below
/// `CONDITIONING_FLOOR * trace` is rejected as singular rather than silently
/// regularized, so estimator bugs stay visible.
pub const CONDITIONING_FLOOR: f64 = 1e-12;

/// Rounds per RNG stream. Sampling partitions rounds into fixed-size batches,
/// one counter-based stream per batch, so output is independent of the degree
/// of parallelism.
const SAMPLE_BATCH: usize = 8192;

/// Symmetric positive-semidefinite matrix of uncentered second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    entries: DMatrix<f64>,
}

impl CovarianceMatrix {
    /// Validate a square matrix as a covariance matrix.
    ///
    /// Symmetrizes via `(M + Mᵀ)/2` before the PSD check. Eigenvalues in
    /// `[-PSD_RTOL * trace, 0)` are treated as finite-sample noise and
    /// clipped to zero; anything lower is rejected.
    pub fn validate(entries: DMatrix<f64>) -> Result<Self> {
        Self::build(entries, false)
    }

    /// Accept a symmetric matrix as a covariance matrix, clipping every
    /// negative eigenvalue to zero.
    ///
    /// For matrices assembled from finite-sample estimates, where genuine
    /// negative excursions of near-zero eigenvalues are expected and the
    /// documented repair is eigenvalue clipping.
    pub fn repair_psd(entries: DMatrix<f64>) -> Result<Self> {
        Self::build(entries, true)
    }

    fn build(entries: DMatrix<f64>, repair: bool) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "covariance matrix must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.is_empty() {
            return Err(Error::DimensionMismatch(
                "covariance matrix must have dimension >= 1".into(),
            ));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "entries".into(),
                reason: "covariance entries must be finite".into(),
            });
        }

        let scale = entries.amax().max(1.0);
        let max_asymmetry = (&entries - entries.transpose()).amax();
        let sym_tol = SYMMETRY_RTOL * scale;
        if max_asymmetry > sym_tol {
            return Err(Error::NotSymmetric {
                max_asymmetry,
                tolerance: sym_tol,
            });
        }

        let symmetrized = (&entries + entries.transpose()) * 0.5;
        let trace = symmetrized.trace();
        let psd_tol = -PSD_RTOL * trace.max(0.0);
        let eigen = SymmetricEigen::new(symmetrized.clone());
        let min_eigenvalue = eigen.eigenvalues.min();
        if !repair && min_eigenvalue < psd_tol {
            return Err(Error::NotPsd {
                min_eigenvalue,
                tolerance: psd_tol,
            });
        }

        // Reconstruct only when a marginally negative eigenvalue needs
        // clipping; otherwise keep the entries bit-exact.
        let entries = if min_eigenvalue < 0.0 {
            let clipped = eigen.eigenvalues.map(|l| l.max(0.0));
            &eigen.eigenvectors
                * DMatrix::from_diagonal(&clipped)
                * eigen.eigenvectors.transpose()
        } else {
            symmetrized
        };
        Ok(Self { entries })
    }

    /// Number of scalar variables.
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// Largest absolute entrywise difference to another matrix of the same dim.
    pub fn max_abs_diff(&self, other: &CovarianceMatrix) -> f64 {
        (&self.entries - &other.entries).amax()
    }
}

/// Zero-mean multivariate Gaussian law. The mean is kept explicit even though
/// it is always the zero vector here.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    mean: DVector<f64>,
    cov: CovarianceMatrix,
}

impl GaussianModel {
    pub fn new(mean: DVector<f64>, cov: CovarianceMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::DimensionMismatch(format!(
                "mean length {} does not match covariance dimension {}",
                mean.len(),
                cov.dim()
            )));
        }
        Ok(Self { mean, cov })
    }

    /// Zero-mean model over `cov.dim()` variables.
    pub fn zero_mean(cov: CovarianceMatrix) -> Self {
        let mean = DVector::zeros(cov.dim());
        Self { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.cov.dim()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &CovarianceMatrix {
        &self.cov
    }
}

/// Batch of i.i.d. realizations, one row per round, one column per variable.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    labels: Vec<String>,
    n: usize,
    dim: usize,
    /// Row-major storage, length `n * dim`.
    data: Vec<f64>,
}

impl SampleBatch {
    pub fn new(labels: Vec<String>, data: Vec<f64>) -> Result<Self> {
        let dim = labels.len();
        if dim == 0 {
            return Err(Error::DimensionMismatch("batch needs at least one column".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::DimensionMismatch(format!(
                "data length {} is not a multiple of dim {}",
                data.len(),
                dim
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "data".into(),
                reason: "batch entries must be finite".into(),
            });
        }
        let n = data.len() / dim;
        Ok(Self { labels, n, dim, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.dim + col]
    }

    /// Copy of one column.
    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.value(i, col)).collect()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Condition a Gaussian model on a subset of its variables.
///
/// Returns the law of the kept variables given the conditioned ones, i.e. the
/// Schur complement `V_kept - C V_cond^-1 Cᵀ`. Kept variables appear in their
/// original relative order.
pub fn condition_on(model: &GaussianModel, conditioned_vars: &[usize]) -> Result<GaussianModel> {
    let dim = model.dim();
    let mut cond: Vec<usize> = conditioned_vars.to_vec();
    cond.sort_unstable();
    cond.dedup();
    if cond.is_empty() {
        return Err(Error::InvalidParameter {
            name: "conditioned_vars".into(),
            reason: "index set must be nonempty".into(),
        });
    }
    if cond.last().copied().unwrap_or(0) >= dim {
        return Err(Error::InvalidParameter {
            name: "conditioned_vars".into(),
            reason: format!("index out of range for dimension {dim}"),
        });
    }
    if cond.len() >= dim {
        return Err(Error::InvalidParameter {
            name: "conditioned_vars".into(),
            reason: "index set must be a proper subset of the variables".into(),
        });
    }
    let kept: Vec<usize> = (0..dim).filter(|i| !cond.contains(i)).collect();

    let v = model.cov().entries();
    let v_kk = v.select_rows(kept.iter()).select_columns(kept.iter());
    let v_kc = v.select_rows(kept.iter()).select_columns(cond.iter());
    let v_cc = v.select_rows(cond.iter()).select_columns(cond.iter());

    let inv = invert_spd_block(&v_cc)?;
    let schur = &v_kk - &v_kc * inv * v_kc.transpose();
    let cov = CovarianceMatrix::validate(schur)?;
    Ok(GaussianModel::zero_mean(cov))
}

/// Invert a symmetric positive-definite block, rejecting near-singular input.
fn invert_spd_block(block: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eigen = SymmetricEigen::new(block.clone());
    let min_eigenvalue = eigen.eigenvalues.min();
    let floor = CONDITIONING_FLOOR * block.trace().abs();
    if min_eigenvalue <= floor || min_eigenvalue <= 0.0 {
        return Err(Error::SingularBlock { min_eigenvalue });
    }
    let inv_diag = eigen.eigenvalues.map(|l| 1.0 / l);
    Ok(&eigen.eigenvectors * DMatrix::from_diagonal(&inv_diag) * eigen.eigenvectors.transpose())
}

/// Draw `n` i.i.d. rounds from the model.
///
/// Deterministic for fixed `(model, n, seed)`: rounds are partitioned into
/// fixed batches, each fed from its own counter-based RNG stream, so the
/// result does not depend on how the work is scheduled across threads.
pub fn sample(model: &GaussianModel, n: usize, seed: u64) -> Result<SampleBatch> {
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "n".into(),
            reason: "round count must be >= 1".into(),
        });
    }
    let dim = model.dim();
    let factor = sampling_factor(model.cov());

    let n_batches = n.div_ceil(SAMPLE_BATCH);
    let chunks: Vec<Vec<f64>> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let start = b * SAMPLE_BATCH;
            let rows = SAMPLE_BATCH.min(n - start);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let mut out = vec![0.0; rows * dim];
            let mut eps = vec![0.0; dim];
            for r in 0..rows {
                for e in eps.iter_mut() {
                    *e = rng.sample(StandardNormal);
                }
                let row = &mut out[r * dim..(r + 1) * dim];
                for i in 0..dim {
                    let mut acc = 0.0;
                    for j in 0..dim {
                        acc += factor[(i, j)] * eps[j];
                    }
                    row[i] = acc;
                }
            }
            out
        })
        .collect();

    let mut data = Vec::with_capacity(n * dim);
    for chunk in chunks {
        data.extend_from_slice(&chunk);
    }
    let labels = (0..dim).map(|i| format!("x{i}")).collect();
    SampleBatch::new(labels, data)
}

/// Square root factor `L` with `L Lᵀ = cov`, valid for semidefinite input.
fn sampling_factor(cov: &CovarianceMatrix) -> DMatrix<f64> {
    let eigen = SymmetricEigen::new(cov.entries().clone());
    let sqrt_diag = eigen.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eigen.eigenvectors * DMatrix::from_diagonal(&sqrt_diag)
}

/// Matrix of uncentered second moments `(1/n) Σ x_i x_j`.
///
/// Uncentered because the protocol defines every variable as zero-mean.
pub fn empirical_cm(batch: &SampleBatch) -> Result<CovarianceMatrix> {
    if batch.n() < 2 {
        return Err(Error::TooFewSamples {
            required: 2,
            actual: batch.n(),
        });
    }
    let dim = batch.dim();
    let n = batch.n();
    let n_upper = dim * (dim + 1) / 2;

    // Fixed-size chunks with an ordered fold keep the floating-point
    // summation order independent of thread scheduling.
    const CHUNK_ROWS: usize = 16384;
    let chunk_len = CHUNK_ROWS * dim;
    let partials: Vec<Vec<f64>> = batch
        .data()
        .par_chunks(chunk_len)
        .map(|chunk| {
            let mut acc = vec![0.0; n_upper];
            for row in chunk.chunks_exact(dim) {
                let mut k = 0;
                for i in 0..dim {
                    for j in i..dim {
                        acc[k] += row[i] * row[j];
                        k += 1;
                    }
                }
            }
            acc
        })
        .collect();

    let mut sums = vec![0.0; n_upper];
    for p in &partials {
        for (s, v) in sums.iter_mut().zip(p) {
            *s += v;
        }
    }

    let mut m = DMatrix::zeros(dim, dim);
    let mut k = 0;
    for i in 0..dim {
        for j in i..dim {
            let v = sums[k] / n as f64;
            m[(i, j)] = v;
            m[(j, i)] = v;
            k += 1;
        }
    }
    CovarianceMatrix::validate(m)
}

/// Uncentered cross moment `(1/n) Σ a_i b_i` with a deterministic summation
/// order.
pub fn mean_product(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "column lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::TooFewSamples { required: 1, actual: 0 });
    }
    const CHUNK: usize = 65536;
    let partials: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(ca, cb)| ca.iter().zip(cb).map(|(x, y)| x * y).sum::<f64>())
        .collect();
    Ok(partials.iter().sum::<f64>() / a.len() as f64)
}

/// Mutual information (nats) between two disjoint groups of variables that
/// together cover the model: `(1/2) ln( det(V_a) det(V_b) / det(V_ab) )`.
pub fn gaussian_mutual_information(
    model: &GaussianModel,
    part_a: &[usize],
    part_b: &[usize],
) -> Result<f64> {
    let dim = model.dim();
    let mut a: Vec<usize> = part_a.to_vec();
    let mut b: Vec<usize> = part_b.to_vec();
    a.sort_unstable();
    a.dedup();
    b.sort_unstable();
    b.dedup();
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidParameter {
            name: "parts".into(),
            reason: "both index sets must be nonempty".into(),
        });
    }
    if a.iter().any(|i| b.contains(i)) {
        return Err(Error::InvalidParameter {
            name: "parts".into(),
            reason: "index sets must be disjoint".into(),
        });
    }
    if a.len() + b.len() != dim || a.iter().chain(&b).any(|&i| i >= dim) {
        return Err(Error::InvalidParameter {
            name: "parts".into(),
            reason: format!("index sets must cover all {dim} variables exactly once"),
        });
    }

    let v = model.cov().entries();
    let det_a = v.select_rows(a.iter()).select_columns(a.iter()).determinant();
    let det_b = v.select_rows(b.iter()).select_columns(b.iter()).determinant();
    let det_ab = v.determinant();
    if det_a <= 0.0 || det_b <= 0.0 || det_ab <= 0.0 {
        return Err(Error::SingularBlock {
            min_eigenvalue: det_a.min(det_b).min(det_ab),
        });
    }
    Ok((0.5 * (det_a.ln() + det_b.ln() - det_ab.ln())).max(0.0))
}
