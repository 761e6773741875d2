//! Low-rank random input features.
//!
//! Instead of one-hot (identity) inputs of width `n`, each node gets a
//! compressed random projection of its normalized interaction signal. The
//! projection width follows the compressed-sensing dimension rule
//! `h = c * r * ln(n / r)` where `r` is the sparsity level of the signals,
//! so `h` scales with the data's sparsity rather than with `n`.

use ndarray::{s, Array2, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::Digest as _;

use crate::data::InteractionMatrix;
use crate::error::{Error, Result};
use crate::graph::{normalized_interaction, CsrMatrix};
use crate::rng::SeedStream;

/// Entry distribution for the random projection matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomDistribution {
    /// N(0, 1/h) entries.
    Gaussian,
    /// +-1/sqrt(h) entries with equal probability.
    Bernoulli,
    /// Uniform [0, 1) scaled to entry variance 1/h. Deliberately uncentered;
    /// kept for the distribution ablation, where it underperforms.
    Uniform,
    /// QR-orthogonalized Gaussian, rescaled to preserve norms on average.
    Orthogonal,
}

/// How the sparsity level `r` is estimated from the degree distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SparsityEstimator {
    /// Average degree: nnz / #signals.
    Mean,
    /// k-quantile of the degree distribution, k in (0, 1].
    Quantile(f64),
}

/// Full recipe for generating the feature matrix; stored alongside the
/// output for provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomMatrixSpec {
    pub distribution: RandomDistribution,
    /// Dimension multiplier, >= 1 for minimal RIP dimensioning.
    pub c: f64,
    pub sparsity_estimator: SparsityEstimator,
    pub seed: u64,
    /// Scale entries so projections preserve norms in expectation. Disable
    /// to get the raw +-1 / unit-variance forms.
    pub normalize: bool,
    /// Explicit (h_user, h_item) override, bypassing the dimension rule.
    pub fixed_h: Option<(usize, usize)>,
}

impl RandomMatrixSpec {
    pub fn new(distribution: RandomDistribution, c: f64, seed: u64) -> Self {
        Self {
            distribution,
            c,
            sparsity_estimator: SparsityEstimator::Mean,
            seed,
            normalize: true,
            fixed_h: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.c < 1.0 {
            return Err(Error::Domain(format!(
                "c must be >= 1 for minimal RIP dimensioning, got {}",
                self.c
            )));
        }
        if let SparsityEstimator::Quantile(k) = self.sparsity_estimator {
            if !(k > 0.0 && k <= 1.0) {
                return Err(Error::Domain(format!(
                    "quantile k must lie in (0,1], got {k}"
                )));
            }
        }
        Ok(())
    }
}

/// Dense feature matrix with its block widths and generation recipe.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub data: Array2<f64>,
    pub h_user: usize,
    pub h_item: usize,
    pub spec: RandomMatrixSpec,
}

impl FeatureMatrix {
    pub fn h(&self) -> usize {
        self.h_user + self.h_item
    }
}

fn h_from_sparsity(n: usize, r: f64, c: f64) -> Result<usize> {
    let mut r = r;
    if r < 1.0 {
        log::warn!("sparsity level {r} < 1; clamping to 1");
        r = 1.0;
    }
    if r >= n as f64 {
        return Err(Error::Domain(format!(
            "sparsity exceeds signal dimension: r={r} >= n={n}"
        )));
    }
    let h = (c * r * (n as f64 / r).ln()).ceil() as usize;
    Ok(h.max(1))
}

/// Projection width for signals of dimension `n` with `nnz/f` average
/// sparsity: `ceil(c * r * ln(n/r))`.
pub fn compute_h(n: usize, f: usize, nnz: usize, c: f64) -> Result<usize> {
    if f == 0 || nnz == 0 {
        return Err(Error::Domain(
            "compute_h requires f > 0 and nnz > 0".into(),
        ));
    }
    if c <= 0.0 {
        return Err(Error::Domain(format!("c must be positive, got {c}")));
    }
    h_from_sparsity(n, nnz as f64 / f as f64, c)
}

/// Random `rows x cols` projection matrix, mapping length-`cols` signals to
/// length-`rows` outputs. With `normalize` set, entries have variance
/// `1/rows` so `E||S p||^2 = ||p||^2`.
pub fn gen_random_matrix(rows: usize, cols: usize, spec: &RandomMatrixSpec) -> Array2<f64> {
    assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
    let mut rng = SeedStream::new(spec.seed).child("random-matrix", (rows ^ (cols << 32)) as u64);
    let scale = if spec.normalize {
        1.0 / (rows as f64).sqrt()
    } else {
        1.0
    };
    match spec.distribution {
        RandomDistribution::Gaussian => Array2::from_shape_fn((rows, cols), |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        }),
        RandomDistribution::Bernoulli => Array2::from_shape_fn((rows, cols), |_| {
            if rng.random::<bool>() {
                scale
            } else {
                -scale
            }
        }),
        RandomDistribution::Uniform => {
            // Entry variance 1/rows but nonzero mean.
            let s = if spec.normalize {
                (12.0 / rows as f64).sqrt()
            } else {
                1.0
            };
            Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>() * s)
        }
        RandomDistribution::Orthogonal => {
            let g = nalgebra::DMatrix::from_fn(cols.max(rows), cols.min(rows), |_, _| {
                StandardNormal.sample(&mut rng)
            });
            let q = g.qr().q();
            let alpha = if spec.normalize {
                (cols as f64 / rows as f64).sqrt()
            } else {
                1.0
            };
            if rows <= cols {
                // q: cols x rows with orthonormal columns; S = alpha * q^T.
                Array2::from_shape_fn((rows, cols), |(i, j)| alpha * q[(j, i)])
            } else {
                Array2::from_shape_fn((rows, cols), |(i, j)| alpha * q[(i, j)])
            }
        }
    }
}

/// Generates the block-diagonal feature matrix
/// `X = [[B S1, 0], [0, B^T S2]]` where `B` is the degree-normalized
/// interaction matrix, `S1: |I| x h_user` and `S2: |U| x h_item` are random
/// projections sized by `compute_h`.
pub fn gen_feat(r: &InteractionMatrix, spec: &RandomMatrixSpec) -> Result<FeatureMatrix> {
    spec.validate()?;
    if r.nnz() == 0 {
        return Err(Error::EmptyDataset("gen_feat".into()));
    }
    let nu = r.num_users();
    let ni = r.num_items();
    let b = normalized_interaction(r)?;

    let user_degrees: Vec<usize> = (0..nu).map(|u| r.degree(u)).collect();
    let item_degrees = r.item_degrees();
    let (h_user, h_item) = match spec.fixed_h {
        Some(pair) => pair,
        None => {
            let r_user = estimate_sparsity(&user_degrees, spec.sparsity_estimator);
            let r_item = estimate_sparsity(&item_degrees, spec.sparsity_estimator);
            (block_width(ni, r_user, spec.c)?, block_width(nu, r_item, spec.c)?)
        }
    };
    if h_user == 0 || h_item == 0 {
        return Err(Error::Domain("block widths must be positive".into()));
    }
    let n = nu + ni;
    let h = h_user + h_item;
    if h >= n {
        log::warn!("h={h} is not smaller than n={n}; compression is ineffective");
    }

    let child_seed = |label: &str| {
        let mut s = *spec;
        s.seed = u64::from_le_bytes(
            sha2::Sha256::digest(
                [spec.seed.to_le_bytes().as_slice(), label.as_bytes()].concat(),
            )[..8]
                .try_into()
                .unwrap(),
        );
        s
    };
    // Generated in projection orientation (h x n), applied transposed.
    let s1 = gen_random_matrix(h_user, ni, &child_seed("s1"));
    let s2 = gen_random_matrix(h_item, nu, &child_seed("s2"));

    let user_block = b.spmm(&s1.t())?;
    let item_block = b.transpose().spmm(&s2.t())?;

    let mut data = Array2::zeros((n, h));
    data.slice_mut(s![..nu, ..h_user]).assign(&user_block);
    data.slice_mut(s![nu.., h_user..]).assign(&item_block);
    if !data.iter().all(|v| v.is_finite()) {
        return Err(Error::Domain("feature matrix contains non-finite values".into()));
    }

    Ok(FeatureMatrix {
        data,
        h_user,
        h_item,
        spec: *spec,
    })
}

fn block_width(signal_dim: usize, sparsity: f64, c: f64) -> Result<usize> {
    if signal_dim == 1 {
        // A one-dimensional signal cannot be compressed further.
        return Ok(1);
    }
    h_from_sparsity(signal_dim, sparsity, c)
}

fn estimate_sparsity(degrees: &[usize], estimator: SparsityEstimator) -> f64 {
    match estimator {
        SparsityEstimator::Mean => {
            degrees.iter().sum::<usize>() as f64 / degrees.len().max(1) as f64
        }
        SparsityEstimator::Quantile(k) => {
            let mut sorted: Vec<usize> = degrees.to_vec();
            sorted.sort_unstable();
            if sorted.is_empty() {
                return 0.0;
            }
            let rank = ((k * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
            sorted[rank - 1] as f64
        }
    }
}

/// Restricted-isometry spot check report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RipReport {
    /// Fraction of sampled rows with `(1-delta) <= ratio <= (1+delta)`.
    pub pass_fraction: f64,
    /// Ratio `||S^T p||^2 / ||p||^2` farthest from 1 among the samples.
    pub worst_ratio: f64,
    pub sampled: usize,
    pub skipped: usize,
}

/// Samples rows `p` of `B` and checks the isometry bounds
/// `(1-delta) ||p||^2 <= ||S^T p||^2 <= (1+delta) ||p||^2`.
/// `S` must have `B.cols()` rows (the orientation used by `gen_feat`, where
/// a row's projection is `p^T S`). All-zero rows are skipped.
pub fn rip_check(
    s: &ArrayView2<f64>,
    b: &CsrMatrix,
    delta: f64,
    sample_count: usize,
    seed: u64,
) -> Result<RipReport> {
    if s.nrows() != b.cols() {
        return Err(Error::Dimension {
            context: "rip_check".into(),
            expected: format!("S with {} rows", b.cols()),
            found: format!("{}", s.nrows()),
        });
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta must lie in (0,1), got {delta}")));
    }
    let h = s.ncols();
    let mut rng = SeedStream::new(seed).child("rip", 0);
    let mut passes = 0usize;
    let mut used = 0usize;
    let mut skipped = 0usize;
    let mut worst = 1.0f64;
    let mut proj = vec![0.0f64; h];
    for _ in 0..sample_count {
        let row = rng.random_range(0..b.rows());
        let (cols, vals) = b.row(row);
        let norm2: f64 = vals.iter().map(|v| v * v).sum();
        if norm2 == 0.0 {
            skipped += 1;
            continue;
        }
        proj.iter_mut().for_each(|x| *x = 0.0);
        for (&c, &v) in cols.iter().zip(vals) {
            let srow = s.row(c);
            for (p, sv) in proj.iter_mut().zip(srow.iter()) {
                *p += v * sv;
            }
        }
        let pn2: f64 = proj.iter().map(|v| v * v).sum();
        let ratio = pn2 / norm2;
        if (ratio - 1.0).abs() > (worst - 1.0).abs() {
            worst = ratio;
        }
        if ratio >= 1.0 - delta && ratio <= 1.0 + delta {
            passes += 1;
        }
        used += 1;
    }
    Ok(RipReport {
        pass_fraction: if used > 0 { passes as f64 / used as f64 } else { 0.0 },
        worst_ratio: worst,
        sampled: used,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn default_spec(dist: RandomDistribution, seed: u64) -> RandomMatrixSpec {
        RandomMatrixSpec::new(dist, 2.0, seed)
    }

    #[test]
    fn compute_h_formula() {
        // r = 5000/500 = 10, h = ceil(2 * 10 * ln(100)) = ceil(92.103) = 93.
        assert_eq!(compute_h(1000, 500, 5000, 2.0).unwrap(), 93);
    }

    #[test]
    fn compute_h_domain_errors() {
        // Dense signal: r = f with f >= n.
        assert!(compute_h(100, 100, 100 * 100, 2.0).is_err());
        assert!(compute_h(50, 100, 100 * 100, 2.0).is_err());
        // r < 1 clamps instead of erroring.
        assert_eq!(
            compute_h(1000, 100, 50, 1.0).unwrap(),
            (1000f64.ln()).ceil() as usize
        );
    }

    #[test]
    fn compute_h_monotone() {
        let base = compute_h(1000, 500, 5000, 2.0).unwrap();
        assert!(compute_h(1000, 500, 5000, 3.0).unwrap() >= base);
        assert!(compute_h(1000, 500, 9000, 2.0).unwrap() >= base);
        assert!(compute_h(2000, 500, 5000, 2.0).unwrap() >= base);
    }

    #[test]
    fn bernoulli_support() {
        let spec = default_spec(RandomDistribution::Bernoulli, 1);
        let m = gen_random_matrix(16, 40, &spec);
        let mag = 1.0 / 4.0;
        assert!(m.iter().all(|&v| v == mag || v == -mag));
    }

    #[test]
    fn gaussian_moments() {
        let spec = default_spec(RandomDistribution::Gaussian, 2);
        let rows = 100;
        let m = gen_random_matrix(rows, 100, &spec);
        let nsamples = (rows * 100) as f64;
        let mean = m.sum() / nsamples;
        let var = m.mapv(|v| v * v).sum() / nsamples - mean * mean;
        let sigma = (1.0 / rows as f64 / nsamples).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean} vs 3sigma {}", 3.0 * sigma);
        let expected = 1.0 / rows as f64;
        assert!((var - expected).abs() / expected < 0.1, "variance {var}");
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = default_spec(RandomDistribution::Gaussian, 3);
        assert_eq!(gen_random_matrix(8, 9, &spec), gen_random_matrix(8, 9, &spec));
    }

    #[test]
    fn orthogonal_rows_are_orthonormal_after_unscaling() {
        let mut spec = default_spec(RandomDistribution::Orthogonal, 4);
        spec.normalize = false;
        let m = gen_random_matrix(6, 50, &spec);
        for i in 0..6 {
            for j in 0..6 {
                let dot: f64 = m.row(i).dot(&m.row(j));
                let want = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(dot, want, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn gen_feat_single_edge() {
        // B = [1]; both blocks are 1x1 with entries +-1.
        let r = InteractionMatrix::synthetic(1, 1, &[(0, 0)]);
        let spec = default_spec(RandomDistribution::Bernoulli, 5);
        let x = gen_feat(&r, &spec).unwrap();
        assert_eq!(x.data.dim(), (2, 2));
        assert_eq!(x.data[(0, 0)].abs(), 1.0);
        assert_eq!(x.data[(1, 1)].abs(), 1.0);
        assert_eq!(x.data[(0, 1)], 0.0);
        assert_eq!(x.data[(1, 0)], 0.0);
    }

    #[test]
    fn gen_feat_block_structure() {
        let mut pairs = Vec::new();
        for u in 0..30usize {
            for k in 0..4usize {
                pairs.push((u, (u * 3 + k * 7) % 50));
            }
        }
        let r = InteractionMatrix::synthetic(30, 50, &pairs);
        let spec = default_spec(RandomDistribution::Gaussian, 6);
        let x = gen_feat(&r, &spec).unwrap();
        assert_eq!(x.data.nrows(), 80);
        assert_eq!(x.data.ncols(), x.h_user + x.h_item);
        // Upper-right and lower-left blocks are exactly zero.
        assert!(x
            .data
            .slice(s![..30, x.h_user..])
            .iter()
            .all(|&v| v == 0.0));
        assert!(x
            .data
            .slice(s![30.., ..x.h_user])
            .iter()
            .all(|&v| v == 0.0));
        // Determinism.
        let x2 = gen_feat(&r, &spec).unwrap();
        assert_eq!(x.data, x2.data);
    }

    #[test]
    fn fixed_h_override() {
        let r = InteractionMatrix::synthetic(4, 5, &[(0, 0), (1, 1), (2, 2), (3, 3), (0, 4)]);
        let mut spec = default_spec(RandomDistribution::Gaussian, 7);
        spec.fixed_h = Some((3, 2));
        let x = gen_feat(&r, &spec).unwrap();
        assert_eq!((x.h_user, x.h_item), (3, 2));
        assert_eq!(x.data.ncols(), 5);
    }

    #[test]
    fn rip_identity_and_zero() {
        let b = CsrMatrix::from_triplets(
            3,
            3,
            &[(0, 0, 1.0), (1, 1, 2.0), (2, 0, 0.5), (2, 2, 1.0)],
        )
        .unwrap();
        let eye = Array2::eye(3);
        let rep = rip_check(&eye.view(), &b, 0.5, 100, 0).unwrap();
        assert_eq!(rep.pass_fraction, 1.0);
        assert_eq!(rep.worst_ratio, 1.0);

        let zero = Array2::zeros((3, 3));
        let rep = rip_check(&zero.view(), &b, 0.5, 100, 0).unwrap();
        assert_eq!(rep.pass_fraction, 0.0);
        assert_eq!(rep.worst_ratio, 0.0);
    }

    #[test]
    fn gaussian_projection_preserves_norm_on_average() {
        let mut rng = SeedStream::new(11).child("test", 0);
        let n = 400;
        let mut triplets = Vec::new();
        for r in 0..300usize {
            for _ in 0..8 {
                triplets.push((r, rng.random_range(0..n), rng.random::<f64>() + 0.1));
            }
        }
        let b = CsrMatrix::from_triplets(300, n, &triplets).unwrap();
        let h = compute_h(n, 300, b.nnz(), 2.0).unwrap();
        let spec = default_spec(RandomDistribution::Gaussian, 12);
        let s = gen_random_matrix(h, n, &spec);
        let st = s.t().as_standard_layout().to_owned();

        let mut sum_ratio = 0.0;
        let mut count = 0;
        for row in 0..300 {
            let (cols, vals) = b.row(row);
            let norm2: f64 = vals.iter().map(|v| v * v).sum();
            if norm2 == 0.0 {
                continue;
            }
            let mut proj = vec![0.0f64; h];
            for (&c, &v) in cols.iter().zip(vals) {
                for (p, sv) in proj.iter_mut().zip(st.row(c).iter()) {
                    *p += v * sv;
                }
            }
            sum_ratio += proj.iter().map(|v| v * v).sum::<f64>() / norm2;
            count += 1;
        }
        let mean_ratio = sum_ratio / count as f64;
        assert!(
            (mean_ratio - 1.0).abs() < 0.05,
            "mean projection ratio {mean_ratio}"
        );
    }
}
