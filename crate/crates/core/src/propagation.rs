//! Precomputed propagation matrices.
//!
//! All variants reduce training-time graph work to a table lookup: the
//! layer-weighted propagation `Z = sum_l w_l P^l X` (plain), the Jacobi
//! polynomial filter bank (three-term recurrence applied to `P`), and the
//! SVD-perturbed propagation used by the contrastive variant. Each is
//! computed once by successive sparse-dense multiplies; `P^l` is never
//! formed.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution as _, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CsrMatrix;
use crate::rng::SeedStream;

/// Which propagation produced a `PropagationResult`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagationKind {
    Plain,
    Jacobi { a: f64, b: f64 },
    Perturbed { q: usize },
}

/// Dense `n x h` precomputed propagation with its layer weights.
#[derive(Debug, Clone)]
pub struct PropagationResult {
    pub z: Array2<f64>,
    pub layer_weights: Vec<f64>,
    pub kind: PropagationKind,
    pub layers: usize,
}

fn resolve_weights(layers: usize, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    match weights {
        None => Ok(vec![1.0 / (layers as f64 + 1.0); layers + 1]),
        Some(w) => {
            if w.len() != layers + 1 {
                return Err(Error::Dimension {
                    context: "layer weights".into(),
                    expected: format!("{} weights", layers + 1),
                    found: format!("{}", w.len()),
                });
            }
            Ok(w.to_vec())
        }
    }
}

fn check_square_and_rows(p: &CsrMatrix, x: &ArrayView2<f64>) -> Result<()> {
    if p.rows() != p.cols() {
        return Err(Error::Dimension {
            context: "propagate".into(),
            expected: "square propagation matrix".into(),
            found: format!("{}x{}", p.rows(), p.cols()),
        });
    }
    if p.cols() != x.nrows() {
        return Err(Error::Dimension {
            context: "propagate".into(),
            expected: format!("{} feature rows", p.cols()),
            found: format!("{}", x.nrows()),
        });
    }
    Ok(())
}

/// `Z = sum_{l=0}^{L} w_l P^l X` by `L` successive sparse-dense multiplies.
pub fn propagate(
    p: &CsrMatrix,
    x: &ArrayView2<f64>,
    layers: usize,
    weights: Option<&[f64]>,
) -> Result<PropagationResult> {
    check_square_and_rows(p, x)?;
    let w = resolve_weights(layers, weights)?;
    let mut acc = x.to_owned() * w[0];
    let mut cur = x.to_owned();
    for wl in w.iter().take(layers + 1).skip(1) {
        cur = p.spmm(&cur.view())?;
        acc.scaled_add(*wl, &cur);
    }
    Ok(PropagationResult {
        z: acc,
        layer_weights: w,
        kind: PropagationKind::Plain,
        layers,
    })
}

/// Recurrence coefficients `(theta, theta', theta'')` of the `l`-th Jacobi
/// basis, `l >= 2`.
pub fn jacobi_theta(l: usize, a: f64, b: f64) -> Result<(f64, f64, f64)> {
    if l < 2 {
        return Err(Error::Domain(format!(
            "jacobi_theta requires l >= 2, got {l}"
        )));
    }
    let lf = l as f64;
    let d1 = 2.0 * lf * (lf + a + b);
    let d2 = 2.0 * lf + a + b - 2.0;
    if d1 == 0.0 || d2 == 0.0 {
        return Err(Error::Domain(format!(
            "degenerate Jacobi parameters: l={l}, a={a}, b={b}"
        )));
    }
    let theta = (2.0 * lf + a + b) * (2.0 * lf + a + b - 1.0) / d1;
    let theta_p = (2.0 * lf + a + b - 1.0) * (a * a - b * b) / (d1 * d2);
    let theta_pp =
        (lf + a - 1.0) * (lf + b - 1.0) * (2.0 * lf + a + b) / (lf * (lf + a + b) * d2);
    Ok((theta, theta_p, theta_pp))
}

/// Jacobi-filtered propagation `Z = sum_l w_l J_l^{a,b}(P) X`.
///
/// Base cases: `Z^(0) = X`, `Z^(1) = ((a-b)/2) X + ((a+b+2)/2) P X`; higher
/// layers follow the three-term recurrence. Only the two most recent layer
/// buffers are kept.
pub fn jacobi_propagate(
    p: &CsrMatrix,
    x: &ArrayView2<f64>,
    layers: usize,
    a: f64,
    b: f64,
    weights: Option<&[f64]>,
) -> Result<PropagationResult> {
    check_square_and_rows(p, x)?;
    let w = resolve_weights(layers, weights)?;
    let mut acc = x.to_owned() * w[0];
    if layers >= 1 {
        let mut prev = x.to_owned(); // Z^(l-2) after the loop shift
        let px = p.spmm(x)?;
        let mut cur = x.to_owned() * ((a - b) / 2.0) + &px * ((a + b + 2.0) / 2.0);
        acc.scaled_add(w[1], &cur);
        for (l, wl) in w.iter().enumerate().take(layers + 1).skip(2) {
            let (theta, theta_p, theta_pp) = jacobi_theta(l, a, b)?;
            let mut next = p.spmm(&cur.view())? * theta;
            next.scaled_add(theta_p, &cur);
            next.scaled_add(-theta_pp, &prev);
            acc.scaled_add(*wl, &next);
            prev = cur;
            cur = next;
        }
    }
    Ok(PropagationResult {
        z: acc,
        layer_weights: w,
        kind: PropagationKind::Jacobi { a, b },
        layers,
    })
}

/// Truncated SVD factors `R ~ U diag(singular) V^T`.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: Array2<f64>,
    pub singular: Vec<f64>,
    pub v: Array2<f64>,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.singular.len()
    }
}

fn to_nalgebra(a: &ArrayView2<f64>) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn from_nalgebra(a: &nalgebra::DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), a.ncols()), |(i, j)| a[(i, j)])
}

/// Randomized truncated SVD (range finder with power iterations).
pub fn truncated_svd(
    r: &CsrMatrix,
    q: usize,
    oversample: usize,
    power_iters: usize,
    seed: u64,
) -> Result<SvdFactors> {
    let min_dim = r.rows().min(r.cols());
    if q == 0 || q > min_dim {
        return Err(Error::Domain(format!(
            "rank q={q} out of range 1..={min_dim}"
        )));
    }
    let k = (q + oversample).min(min_dim);
    let mut rng = SeedStream::new(seed).child("svd", 0);
    let omega = Array2::from_shape_fn((r.cols(), k), |_| StandardNormal.sample(&mut rng));
    let rt = r.transpose();

    let y = r.spmm(&omega.view())?;
    let mut qm = to_nalgebra(&y.view()).qr().q();
    for _ in 0..power_iters {
        let w = rt.spmm(&from_nalgebra(&qm).view())?;
        let qw = to_nalgebra(&w.view()).qr().q();
        let y = r.spmm(&from_nalgebra(&qw).view())?;
        qm = to_nalgebra(&y.view()).qr().q();
    }

    // B = Q^T R, computed through R^T Q to stay in CSR row form.
    let t = rt.spmm(&from_nalgebra(&qm).view())?; // |I| x k
    let b = to_nalgebra(&t.view()).transpose(); // k x |I|
    let svd = b.svd(true, true);
    let u_small = svd.u.ok_or_else(|| Error::Domain("svd failed to produce U".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Domain("svd failed to produce V^T".into()))?;

    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .unwrap()
    });
    let order = &order[..q];

    let u_big = &qm * &u_small; // |U| x k
    let mut u = Array2::zeros((r.rows(), q));
    let mut v = Array2::zeros((r.cols(), q));
    let mut singular = Vec::with_capacity(q);
    for (dst, &src) in order.iter().enumerate() {
        singular.push(svd.singular_values[src]);
        for row in 0..r.rows() {
            u[(row, dst)] = u_big[(row, src)];
        }
        for row in 0..r.cols() {
            v[(row, dst)] = v_t[(src, row)];
        }
    }
    Ok(SvdFactors { u, singular, v })
}

/// The perturbed propagation operator `Phat = Dhat^(-1/2) Ahat Dhat^(-1/2)`
/// with `Ahat = [[0, Rhat], [Rhat^T, 0]]`, `Rhat = U diag(sigma) V^T`, kept
/// in factored form. Degrees come from `Rhat`'s absolute row/column sums;
/// zero-degree rows map to zero.
#[derive(Debug, Clone)]
pub struct PerturbedOperator {
    u: Array2<f64>,
    singular: Array1<f64>,
    v: Array2<f64>,
    du_invsqrt: Array1<f64>,
    di_invsqrt: Array1<f64>,
}

/// Builds the factored perturbed operator from SVD factors.
pub fn perturbed_adjacency(f: &SvdFactors) -> PerturbedOperator {
    PerturbedOperator::new(f)
}

impl PerturbedOperator {
    pub fn new(f: &SvdFactors) -> Self {
        let nu = f.u.nrows();
        let ni = f.v.nrows();
        let q = f.rank();
        let sigma = Array1::from_vec(f.singular.clone());

        // Absolute row/column sums of Rhat require materializing it row by
        // row; rows are processed in parallel chunks and merged in order.
        let chunk = 256usize;
        let results: Vec<(Vec<f64>, Vec<f64>)> = (0..nu.div_ceil(chunk))
            .into_par_iter()
            .map(|ci| {
                let start = ci * chunk;
                let end = (start + chunk).min(nu);
                let mut row_sums = vec![0.0; end - start];
                let mut col_sums = vec![0.0; ni];
                let mut row_val = vec![0.0; ni];
                for urow in start..end {
                    row_val.iter_mut().for_each(|x| *x = 0.0);
                    for k in 0..q {
                        let coef = f.u[(urow, k)] * sigma[k];
                        if coef == 0.0 {
                            continue;
                        }
                        for (dst, vk) in row_val.iter_mut().zip(f.v.column(k).iter()) {
                            *dst += coef * vk;
                        }
                    }
                    let mut s = 0.0;
                    for (i, rv) in row_val.iter().enumerate() {
                        let a = rv.abs();
                        s += a;
                        col_sums[i] += a;
                    }
                    row_sums[urow - start] = s;
                }
                (row_sums, col_sums)
            })
            .collect();
        let mut du = Vec::with_capacity(nu);
        let mut di = vec![0.0f64; ni];
        for (rows, cols) in results {
            du.extend(rows);
            for (d, c) in di.iter_mut().zip(cols) {
                *d += c;
            }
        }
        let inv = |d: f64| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 };
        PerturbedOperator {
            u: f.u.clone(),
            singular: sigma,
            v: f.v.clone(),
            du_invsqrt: Array1::from_iter(du.into_iter().map(inv)),
            di_invsqrt: Array1::from_iter(di.into_iter().map(inv)),
        }
    }

    pub fn num_users(&self) -> usize {
        self.u.nrows()
    }

    pub fn num_items(&self) -> usize {
        self.v.nrows()
    }

    pub fn n(&self) -> usize {
        self.num_users() + self.num_items()
    }

    /// Applies `Phat` to a stacked `[users; items]` dense matrix without
    /// materializing the `n x n` operator: three thin GEMMs per block.
    pub fn apply(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        let (nu, ni) = (self.num_users(), self.num_items());
        if x.nrows() != nu + ni {
            return Err(Error::Dimension {
                context: "PerturbedOperator::apply".into(),
                expected: format!("{} rows", nu + ni),
                found: format!("{}", x.nrows()),
            });
        }
        let xu = x.slice(s![..nu, ..]);
        let xi = x.slice(s![nu.., ..]);

        // out_u = Du^{-1/2} U diag(sigma) V^T Di^{-1/2} x_i
        let mut xi_scaled = xi.to_owned();
        for (mut row, &sc) in xi_scaled.axis_iter_mut(Axis(0)).zip(self.di_invsqrt.iter()) {
            row *= sc;
        }
        let t = self.v.t().dot(&xi_scaled); // q x h
        let t = &t * &self.singular.view().insert_axis(ndarray::Axis(1));
        let mut out_u = self.u.dot(&t);
        for (mut row, &sc) in out_u.axis_iter_mut(Axis(0)).zip(self.du_invsqrt.iter()) {
            row *= sc;
        }

        // out_i = Di^{-1/2} V diag(sigma) U^T Du^{-1/2} x_u
        let mut xu_scaled = xu.to_owned();
        for (mut row, &sc) in xu_scaled.axis_iter_mut(Axis(0)).zip(self.du_invsqrt.iter()) {
            row *= sc;
        }
        let t = self.u.t().dot(&xu_scaled);
        let t = &t * &self.singular.view().insert_axis(ndarray::Axis(1));
        let mut out_i = self.v.dot(&t);
        for (mut row, &sc) in out_i.axis_iter_mut(Axis(0)).zip(self.di_invsqrt.iter()) {
            row *= sc;
        }

        let mut out = Array2::zeros((nu + ni, x.ncols()));
        out.slice_mut(s![..nu, ..]).assign(&out_u);
        out.slice_mut(s![nu.., ..]).assign(&out_i);
        Ok(out)
    }
}

/// Perturbed propagation `Zhat = sum_l w_l Zhat^(l)` with
/// `Zhat^(0) = X` and `Zhat^(l) = Phat P^(l-1) X`.
pub fn perturbed_propagate(
    phat: &PerturbedOperator,
    p: &CsrMatrix,
    x: &ArrayView2<f64>,
    layers: usize,
    weights: Option<&[f64]>,
) -> Result<PropagationResult> {
    check_square_and_rows(p, x)?;
    if phat.n() != x.nrows() {
        return Err(Error::Dimension {
            context: "perturbed_propagate".into(),
            expected: format!("{} rows", phat.n()),
            found: format!("{}", x.nrows()),
        });
    }
    let w = resolve_weights(layers, weights)?;
    let mut acc = x.to_owned() * w[0];
    let mut pw = x.to_owned(); // P^(l-1) X
    for (l, wl) in w.iter().enumerate().take(layers + 1).skip(1) {
        let zhat = phat.apply(&pw.view())?;
        acc.scaled_add(*wl, &zhat);
        if l < layers {
            pw = p.spmm(&pw.view())?;
        }
    }
    Ok(PropagationResult {
        z: acc,
        layer_weights: w,
        kind: PropagationKind::Perturbed { q: phat.singular.len() },
        layers,
    })
}
