//! Breakpoint-aware composite Gauss-Legendre evaluation of the distributed
//! functional `ν = ∫_{-Δ}^0 G(t, s, ψ(s)) ds`.
//!
//! The integration cells are the intersections of the history's pieces with
//! a fixed refinement of `[-Δ, 0]` into at least [`MIN_SUBCELLS`] subcells,
//! so the integrand is smooth on every cell and an order-`q` rule is exact
//! (to roundoff) whenever `s ↦ G(t, s, ψ(s))` is a polynomial of degree at
//! most `2q - 1` there. The fixed refinement bounds the error of
//! non-polynomial kernels without any adaptivity machinery; the error probe
//! compares orders `q` and `q + 2` so callers can escalate when a kernel is
//! stiffer than expected.
//!
//! History values are always read through the annotation-free evaluation
//! path: a representative changed on a measure-zero set yields bit-identical
//! integrals, even if a Gauss node lands exactly on an annotated point.

use std::sync::OnceLock;

use thiserror::Error;

use crate::history::{poly_eval, HistoryError, PiecewisePoly};
use crate::system::{DistributedKernel, EvalFault, Scratch};

/// Minimum number of fixed refinement subcells of `[-Δ, 0]`.
pub const MIN_SUBCELLS: usize = 32;

/// Smallest admissible Gauss-Legendre order.
pub const MIN_ORDER: usize = 2;

/// Largest admissible Gauss-Legendre order (the error probe needs two more).
pub const MAX_ORDER: usize = 16;

#[derive(Debug, Error)]
pub enum QuadratureError {
    #[error("quadrature order {0} outside {MIN_ORDER}..={MAX_ORDER}")]
    BadOrder(usize),
    #[error("kernel evaluation fault: {0}")]
    KernelFault(#[from] EvalFault),
    #[error("non-finite integrand at s = {0}")]
    NonFiniteIntegrand(f64),
    #[error(transparent)]
    History(#[from] HistoryError),
}

/// Nodes and weights of the `q`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(q: usize) -> (&'static [f64], &'static [f64]) {
    const MAX_CACHED: usize = MAX_ORDER + 2;
    static CACHE: OnceLock<Vec<(Vec<f64>, Vec<f64>)>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| {
        (0..=MAX_CACHED)
            .map(|n| if n >= 1 { compute_gauss_legendre(n) } else { (Vec::new(), Vec::new()) })
            .collect()
    });
    let entry = &cache[q.min(MAX_CACHED)];
    (&entry.0, &entry.1)
}

fn compute_gauss_legendre(q: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; q];
    let mut weights = vec![0.0; q];
    for i in 0..q {
        // Newton iteration from the Chebyshev-based initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(q, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(q, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    nodes.reverse();
    weights.reverse();
    (nodes, weights)
}

fn legendre_with_derivative(q: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if q == 1 {
        return (x, 1.0);
    }
    for k in 2..=q {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = q as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Integration cells: the history's pieces intersected with the fixed
/// uniform refinement.
fn cells_of(psi: &PiecewisePoly) -> Vec<f64> {
    let a = psi.t_start();
    let b = psi.t_end();
    let mut bounds: Vec<f64> = psi.breakpoints().to_vec();
    for j in 1..MIN_SUBCELLS {
        bounds.push(a + (b - a) * (j as f64) / (MIN_SUBCELLS as f64));
    }
    bounds.sort_by(|x, y| x.total_cmp(y));
    bounds.dedup();
    bounds
}

/// Composite Gauss-Legendre value of `∫ G(t, s, ψ(s)) ds` over the history's
/// domain, written into `out` (length p).
pub fn distributed_eval_into(
    kernel: &DistributedKernel,
    t: f64,
    psi: &PiecewisePoly,
    order: usize,
    scratch: &mut Scratch,
    out: &mut [f64],
) -> Result<(), QuadratureError> {
    if !(MIN_ORDER..=MAX_ORDER + 2).contains(&order) {
        return Err(QuadratureError::BadOrder(order));
    }
    out.fill(0.0);
    if kernel.is_zero() {
        return Ok(());
    }
    let bounds = cells_of(psi);
    let (nodes, weights) = gauss_legendre(order);
    let mut eta = vec![0.0; psi.dim()];
    let mut val = vec![0.0; out.len()];
    let mut piece_idx = 0usize;
    let bps = psi.breakpoints();
    for cell in bounds.windows(2) {
        let (lo, hi) = (cell[0], cell[1]);
        if hi <= lo {
            continue;
        }
        // advance the piece cursor; each cell lies inside one piece
        while piece_idx + 2 < bps.len() && bps[piece_idx + 1] <= lo {
            piece_idx += 1;
        }
        let base = bps[piece_idx];
        let piece = &psi.pieces()[piece_idx];
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        for (&xg, &wg) in nodes.iter().zip(weights) {
            let s = mid + half * xg;
            let u = s - base;
            for (slot, row) in eta.iter_mut().zip(piece) {
                *slot = poly_eval(row, u);
            }
            kernel.integrand_into(t, s, &eta, scratch, &mut val)?;
            let w = wg * half;
            for (acc, &v) in out.iter_mut().zip(&val) {
                if !v.is_finite() {
                    return Err(QuadratureError::NonFiniteIntegrand(s));
                }
                *acc += w * v;
            }
        }
    }
    Ok(())
}

/// Allocating wrapper around [`distributed_eval_into`].
pub fn distributed_eval(
    kernel: &DistributedKernel,
    t: f64,
    psi: &PiecewisePoly,
    order: usize,
) -> Result<Vec<f64>, QuadratureError> {
    if !(MIN_ORDER..=MAX_ORDER).contains(&order) {
        return Err(QuadratureError::BadOrder(order));
    }
    let mut out = vec![0.0; kernel.output_dim()];
    distributed_eval_into(kernel, t, psi, order, &mut Scratch::default(), &mut out)?;
    Ok(out)
}

/// Componentwise difference between the order-`q` and order-`q+2` values;
/// the escalation signal for stiff kernels.
pub fn quadrature_error_probe(
    kernel: &DistributedKernel,
    t: f64,
    psi: &PiecewisePoly,
    order: usize,
) -> Result<Vec<f64>, QuadratureError> {
    if !(MIN_ORDER..=MAX_ORDER).contains(&order) {
        return Err(QuadratureError::BadOrder(order));
    }
    let mut scratch = Scratch::default();
    let mut lo = vec![0.0; kernel.output_dim()];
    let mut hi = vec![0.0; kernel.output_dim()];
    distributed_eval_into(kernel, t, psi, order, &mut scratch, &mut lo)?;
    distributed_eval_into(kernel, t, psi, order + 2, &mut scratch, &mut hi)?;
    Ok(lo.iter().zip(&hi).map(|(a, b)| (a - b).abs()).collect())
}
