//! Computable weak-* machinery on histories.
//!
//! The dual pairing of `L¹` against `L∞` on `[-Δ, 0]` is realized through a
//! fixed countable family of probes in the unit ball of `L¹`. A probe is a
//! signed, component-selecting indicator of a dyadic subinterval, scaled to
//! unit `L¹` norm. The truncated norm
//! `‖φ‖* ≈ Σ_{i=1}^{J} 2^{-i} |∫ gᵢᵀ φ|` comes with the rigorous tail bound
//! `2^{-J}·‖φ‖`, so every reported value is an interval, never a point.
//!
//! # Probe enumeration (version-pinned contract)
//!
//! Probes are indexed from 1. Index `i` decodes level-major into the tuple
//! `(level, cell, component, sign)`:
//!
//! * level `k = 0, 1, 2, …` selects the dyadic resolution; the cells of level
//!   `k` are the `2^k` subintervals of `[-Δ, 0]` of width `Δ·2^{-k}`;
//! * within a level, cells are visited left to right, components in
//!   ascending order within a cell, and the positive sign before the
//!   negative one.
//!
//! So for a scalar history, probe 1 is `+1/Δ` on all of `[-Δ, 0]`, probe 2 is
//! its negative, probes 3-6 are the signed half-interval indicators, and so
//! on. This order is part of the public contract: norm values are
//! reproducible bit for bit for a fixed truncation index.

use thiserror::Error;

use crate::history::{ExtendedPath, HistoryError, InitialCondition, PiecewisePoly};

/// Default truncation index for the probe series.
pub const DEFAULT_TRUNCATION: u32 = 24;

/// Identifier of the pinned enumeration scheme.
pub const ENUMERATION_SCHEME: &str = "dyadic-indicator-v1";

/// Shift grid resolution for [`WeakStarGauge::shift_sup_dist`], relative to Δ.
pub const SHIFT_GRID_REL: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum WeakStarError {
    #[error("probe index must be >= 1")]
    BadIndex,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("domain mismatch: expected [{expected_start}, {expected_end}], got [{got_start}, {got_end}]")]
    DomainMismatch { expected_start: f64, expected_end: f64, got_start: f64, got_end: f64 },
    #[error("probe is not piecewise constant")]
    NotPiecewiseConstant,
    #[error("probe L1 norm {0} exceeds 1")]
    L1NormTooLarge(f64),
    #[error("paths do not share the same trajectory")]
    MismatchedTrajectories,
    #[error("shift horizon outside the trajectory span")]
    BadShiftHorizon,
    #[error(transparent)]
    History(#[from] HistoryError),
}

/// One element of the probe family: a piecewise-constant function in the
/// unit ball of `L¹([-Δ,0], ℝⁿ)`.
#[derive(Debug, Clone)]
pub struct L1Probe {
    /// Position in the enumeration, when the probe comes from it.
    pub index: Option<u64>,
    /// The probe as a piecewise-constant function.
    pub g: PiecewisePoly,
    /// Cached `‖g‖₁`.
    pub l1_norm: f64,
}

impl L1Probe {
    /// Wraps an arbitrary piecewise-constant function with `‖g‖₁ ≤ 1`.
    pub fn from_piecewise(g: PiecewisePoly) -> Result<Self, WeakStarError> {
        let mut l1 = 0.0;
        for (i, piece) in g.pieces().iter().enumerate() {
            let w = g.breakpoints()[i + 1] - g.breakpoints()[i];
            for row in piece {
                if row[1..].iter().any(|&c| c != 0.0) {
                    return Err(WeakStarError::NotPiecewiseConstant);
                }
                l1 += row[0].abs() * w;
            }
        }
        if l1 > 1.0 + 1e-12 {
            return Err(WeakStarError::L1NormTooLarge(l1));
        }
        Ok(Self { index: None, g, l1_norm: l1 })
    }
}

/// Decoded enumeration tuple of a probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProbeTuple {
    pub level: u32,
    pub cell: u64,
    pub component: usize,
    pub negative: bool,
}

/// Realizes the truncated norm `‖·‖*` and the metric it induces on balls of
/// `L∞([-Δ,0], ℝⁿ)`.
#[derive(Debug, Clone)]
pub struct WeakStarGauge {
    /// Enumeration scheme; fixed, recorded for reproducibility.
    pub scheme: &'static str,
    /// Maximum delay: probes live on `[-Δ, 0]`.
    pub delta: f64,
    /// Component count of the histories being probed.
    pub dim: usize,
    /// Default truncation index.
    pub truncation: u32,
    /// Ball radius the gauge serves; used for a priori tail bounds when a
    /// specific history is not at hand.
    pub radius: f64,
}

impl WeakStarGauge {
    pub fn new(delta: f64, dim: usize) -> Self {
        Self { scheme: ENUMERATION_SCHEME, delta, dim, truncation: DEFAULT_TRUNCATION, radius: 1.0 }
    }

    pub fn with_truncation(mut self, truncation: u32) -> Self {
        self.truncation = truncation;
        self
    }

    pub fn with_radius(mut self, radius: f64) -> Self {
        self.radius = radius;
        self
    }

    /// Decodes a 1-based probe index into its enumeration tuple.
    pub fn probe_tuple(&self, index: u64) -> Result<ProbeTuple, WeakStarError> {
        if index == 0 {
            return Err(WeakStarError::BadIndex);
        }
        let per_entry = (self.dim as u64) * 2;
        let mut r = index - 1;
        let mut level: u32 = 0;
        loop {
            let block = (1u64 << level) * per_entry;
            if r < block {
                break;
            }
            r -= block;
            level += 1;
        }
        let cell = r / per_entry;
        let rem = r % per_entry;
        Ok(ProbeTuple {
            level,
            cell,
            component: (rem / 2) as usize,
            negative: rem % 2 == 1,
        })
    }

    /// The `index`-th probe of the enumeration.
    pub fn probe(&self, index: u64) -> Result<L1Probe, WeakStarError> {
        let tup = self.probe_tuple(index)?;
        let cells = 1u64 << tup.level;
        let a = self.dyadic_point(tup.cell, cells);
        let b = self.dyadic_point(tup.cell + 1, cells);
        let width = b - a;
        let magnitude = if tup.negative { -1.0 / width } else { 1.0 / width };
        let mut breakpoints = Vec::with_capacity(4);
        let mut pieces = Vec::with_capacity(3);
        let zero_piece = |_: ()| -> Vec<Vec<f64>> { vec![vec![0.0]; self.dim] };
        breakpoints.push(-self.delta);
        if a > -self.delta {
            breakpoints.push(a);
            pieces.push(zero_piece(()));
        }
        let mut live = zero_piece(());
        live[tup.component][0] = magnitude;
        pieces.push(live);
        breakpoints.push(b);
        if b < 0.0 {
            breakpoints.push(0.0);
            pieces.push(zero_piece(()));
        }
        let g = PiecewisePoly::new(self.dim, breakpoints, pieces)?;
        Ok(L1Probe { index: Some(index), g, l1_norm: 1.0 })
    }

    fn dyadic_point(&self, num: u64, den: u64) -> f64 {
        -self.delta + self.delta * (num as f64 / den as f64)
    }

    fn check_history(&self, phi: &PiecewisePoly) -> Result<(), WeakStarError> {
        if phi.dim() != self.dim {
            return Err(WeakStarError::DimensionMismatch { expected: self.dim, got: phi.dim() });
        }
        if phi.t_start() != -self.delta || phi.t_end() != 0.0 {
            return Err(WeakStarError::DomainMismatch {
                expected_start: -self.delta,
                expected_end: 0.0,
                got_start: phi.t_start(),
                got_end: phi.t_end(),
            });
        }
        Ok(())
    }

    /// Exact dual pairing `∫ gᵀ φ`: piecewise-constant probe against a
    /// piecewise polynomial integrates in closed form. Annotations of `φ`
    /// never contribute.
    pub fn pairing(&self, probe: &L1Probe, phi: &PiecewisePoly) -> Result<f64, WeakStarError> {
        self.check_history(phi)?;
        if probe.g.dim() != self.dim {
            return Err(WeakStarError::DimensionMismatch { expected: self.dim, got: probe.g.dim() });
        }
        let mut acc = 0.0;
        let bps = probe.g.breakpoints();
        for (i, piece) in probe.g.pieces().iter().enumerate() {
            let (lo, hi) = (bps[i], bps[i + 1]);
            for (j, row) in piece.iter().enumerate() {
                let c = row[0];
                if c != 0.0 {
                    acc += c * phi.integrate_component(j, lo, hi)?;
                }
            }
        }
        Ok(acc)
    }

    /// Truncated weak-* norm: `value = Σ_{i=1}^{J} 2^{-i} |∫ gᵢᵀ φ|`,
    /// `tail_bound = 2^{-J}·‖φ‖`, with the true norm in
    /// `[value, value + tail_bound]`.
    pub fn norm_star(&self, phi: &PiecewisePoly, trunc: u32) -> Result<(f64, f64), WeakStarError> {
        self.check_history(phi)?;
        let mut value = 0.0;
        for i in 1..=u64::from(trunc) {
            let probe = self.probe(i)?;
            let p = self.pairing(&probe, phi)?;
            value += 0.5f64.powi(i as i32) * p.abs();
        }
        let tail = 0.5f64.powi(trunc as i32) * phi.ess_sup_norm();
        Ok((value, tail))
    }

    /// Truncated metric `d(φ, ψ) = ‖φ - ψ‖*`.
    pub fn dist(&self, phi: &PiecewisePoly, psi: &PiecewisePoly, trunc: u32) -> Result<(f64, f64), WeakStarError> {
        self.check_history(phi)?;
        self.check_history(psi)?;
        let diff = phi.sub(psi)?;
        self.norm_star(&diff, trunc)
    }

    /// Supremum over time shifts `q ∈ [0, T - t0]` of the truncated distance
    /// between the segments of two paths that share the same trajectory.
    ///
    /// The integrand is Lipschitz in `q` away from alignments of probe cell
    /// boundaries with breakpoints of the history difference, so a fine grid
    /// (resolution `1e-3·Δ`) with those alignment shifts inserted bounds the
    /// sup. Shifts `q ≥ Δ` contribute exactly zero: both segments are then
    /// restrictions of the shared trajectory.
    pub fn shift_sup_dist(
        &self,
        path_a: &ExtendedPath,
        path_b: &ExtendedPath,
        horizon: f64,
        trunc: u32,
    ) -> Result<f64, WeakStarError> {
        if path_a.x() != path_b.x() || path_a.t0() != path_b.t0() {
            return Err(WeakStarError::MismatchedTrajectories);
        }
        let t0 = path_a.t0();
        if horizon < t0 || horizon > path_a.t_end() {
            return Err(WeakStarError::BadShiftHorizon);
        }
        let span = horizon - t0;
        let q_max = span.min(self.delta);
        let mut shifts: Vec<f64> = Vec::new();
        let step = SHIFT_GRID_REL * self.delta;
        let n_grid = (q_max / step).floor() as usize;
        for i in 0..=n_grid {
            shifts.push((i as f64) * step);
        }
        shifts.push(q_max);
        // alignment shifts: probe cell boundary meets a breakpoint of the
        // history difference, or a breakpoint meets the segment's right edge
        let mut probe_bounds: Vec<f64> = Vec::new();
        for i in 1..=u64::from(trunc) {
            let tup = self.probe_tuple(i)?;
            let cells = 1u64 << tup.level;
            probe_bounds.push(self.dyadic_point(tup.cell, cells));
            probe_bounds.push(self.dyadic_point(tup.cell + 1, cells));
        }
        probe_bounds.sort_by(|x, y| x.total_cmp(y));
        probe_bounds.dedup();
        let mut diff_bps: Vec<f64> = path_a
            .phi()
            .breakpoints()
            .iter()
            .chain(path_b.phi().breakpoints().iter())
            .copied()
            .collect();
        diff_bps.sort_by(|x, y| x.total_cmp(y));
        diff_bps.dedup();
        for &d in &diff_bps {
            for &c in &probe_bounds {
                let q = d - c;
                if q > 0.0 && q < q_max {
                    shifts.push(q);
                }
            }
            let q = -d;
            if q > 0.0 && q < q_max {
                shifts.push(q);
            }
        }
        shifts.sort_by(|x, y| x.total_cmp(y));
        shifts.dedup();

        let mut best: f64 = 0.0;
        for &q in &shifts {
            if q >= self.delta {
                continue;
            }
            let seg_a = path_a.segment(t0 + q)?;
            let seg_b = path_b.segment(t0 + q)?;
            let (value, _) = self.dist(&seg_a, &seg_b, trunc)?;
            best = best.max(value);
        }
        Ok(best)
    }
}

/// `phi0` plus a square wave with `2k` equal cells on `[-Δ, 0]`, alternating
/// `±amplitude` starting positive at `-Δ`. The perturbation pairs to
/// `O(1/k)` against every fixed probe while keeping ess-sup distance
/// `amplitude` away from `phi0`.
pub fn make_oscillating(phi0: &PiecewisePoly, k: u32, amplitude: f64) -> PiecewisePoly {
    if amplitude == 0.0 || k == 0 {
        return phi0.clone();
    }
    let delta = -phi0.t_start();
    let cells = 2 * u64::from(k);
    let mut breakpoints = Vec::with_capacity(cells as usize + 1);
    for j in 0..=cells {
        breakpoints.push(-delta + delta * (j as f64 / cells as f64));
    }
    let mut pieces = Vec::with_capacity(cells as usize);
    for j in 0..cells {
        let v = if j % 2 == 0 { amplitude } else { -amplitude };
        pieces.push(vec![vec![v]; phi0.dim()]);
    }
    let wave = PiecewisePoly::new(phi0.dim(), breakpoints, pieces).expect("valid wave");
    phi0.linear_combination(1.0, &wave, 1.0).expect("same domain")
}

/// Continuous approximant `ψᵏ` of a pair-form initial condition: linear
/// crossfades of width `Δ/(4k·#breakpoints)` are inserted to the left of
/// every jump of `φ` (and of the mismatch between `φ(0⁻)` and `ξ₀`), so that
/// `ψᵏ(0) = ξ₀`, `‖ψᵏ‖∞ ≤ max(‖φ‖, |ξ₀|)`, and `ψᵏ → φ` almost everywhere
/// as `k → ∞`.
pub fn make_continuous_approximants(ic: &InitialCondition, k: u32) -> Result<PiecewisePoly, WeakStarError> {
    let phi = &ic.phi;
    let delta = ic.delta();
    let m = phi.breakpoints().len();
    let w = delta / (4.0 * f64::from(k.max(1)) * m as f64);

    // jump locations: interior breakpoints with unequal one-sided limits,
    // plus the right endpoint when the left limit misses xi0
    let mut jumps: Vec<(f64, Vec<f64>)> = Vec::new();
    let bps = phi.breakpoints().to_vec();
    for &b in &bps[1..bps.len() - 1] {
        let (left, right) = phi.one_sided_limits(b)?;
        if left != right {
            jumps.push((b, right));
        }
    }
    let end_left: Vec<f64> = {
        let last = phi.pieces().len() - 1;
        let u = phi.t_end() - phi.breakpoints()[last];
        phi.pieces()[last]
            .iter()
            .map(|row| crate::history::poly_eval(row, u))
            .collect()
    };
    if end_left != ic.xi0 {
        jumps.push((0.0, ic.xi0.clone()));
    }
    if jumps.is_empty() {
        return Ok(phi.clone());
    }

    let mut out = phi.clone();
    // process right to left so earlier splits stay untouched
    for (b, target) in jumps.iter().rev() {
        let idx = out
            .breakpoints()
            .iter()
            .position(|&x| x == *b)
            .map(|p| p - 1)
            .unwrap_or(out.pieces().len() - 1);
        let left_bp = out.breakpoints()[idx];
        let w_eff = w.min(0.5 * (*b - left_bp));
        let start = *b - w_eff;
        let v0: Vec<f64> = out
            .pieces()[idx]
            .iter()
            .map(|row| crate::history::poly_eval(row, start - left_bp))
            .collect();
        let fade: Vec<Vec<f64>> = v0
            .iter()
            .zip(target.iter())
            .map(|(&a, &z)| vec![a, (z - a) / w_eff])
            .collect();
        let mut breakpoints = out.breakpoints().to_vec();
        let mut pieces = out.pieces().to_vec();
        breakpoints.insert(idx + 1, start);
        pieces.insert(idx + 1, fade);
        out = PiecewisePoly::new(out.dim(), breakpoints, pieces)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn gauge() -> WeakStarGauge {
        WeakStarGauge::new(1.0, 1)
    }

    fn const_phi(c: f64) -> PiecewisePoly {
        PiecewisePoly::constant(-1.0, 0.0, &[c]).unwrap()
    }

    #[test]
    fn probe_one_is_full_interval_average() {
        let g = gauge();
        let p = g.probe(1).unwrap();
        assert_eq!(p.g.eval(-0.5).unwrap()[0], 1.0);
        assert_eq!(p.l1_norm, 1.0);
        // averaging probe: pairing with constant c returns c
        assert!((g.pairing(&p, &const_phi(3.25)).unwrap() - 3.25).abs() < 1e-15);
    }

    #[test]
    fn probes_are_normalized() {
        let g = gauge();
        for i in 1..200u64 {
            let p = g.probe(i).unwrap();
            let mut l1 = 0.0;
            for (j, piece) in p.g.pieces().iter().enumerate() {
                let w = p.g.breakpoints()[j + 1] - p.g.breakpoints()[j];
                for row in piece {
                    l1 += row[0].abs() * w;
                }
            }
            assert!((l1 - 1.0).abs() < 1e-12, "probe {i}: l1 = {l1}");
        }
    }

    #[test]
    fn enumeration_bijective_first_1000() {
        for n in [1usize, 2, 3] {
            let g = WeakStarGauge::new(1.0, n);
            let mut seen = HashSet::new();
            for i in 1..=1000u64 {
                let t = g.probe_tuple(i).unwrap();
                assert!((t.cell as u64) < (1u64 << t.level));
                assert!(t.component < n);
                assert!(seen.insert(t), "duplicate tuple at index {i} for n={n}");
            }
        }
    }

    #[test]
    fn pairing_examples() {
        let g = gauge();
        // phi ≡ 0 pairs to 0 with every probe
        for i in 1..50u64 {
            let p = g.probe(i).unwrap();
            assert_eq!(g.pairing(&p, &const_phi(0.0)).unwrap(), 0.0);
        }
        // Haar-style probe: +1 on [-1,-0.5), -1 on [-0.5,0], phi(s)=s → -0.25
        let haar = PiecewisePoly::new(
            1,
            vec![-1.0, -0.5, 0.0],
            vec![vec![vec![1.0]], vec![vec![-1.0]]],
        )
        .unwrap();
        let probe = L1Probe::from_piecewise(haar).unwrap();
        let phi = PiecewisePoly::new(1, vec![-1.0, 0.0], vec![vec![vec![-1.0, 1.0]]]).unwrap();
        let got = g.pairing(&probe, &phi).unwrap();
        assert!((got - (-0.25)).abs() < 1e-15, "got {got}");
    }

    #[test]
    fn norm_star_examples() {
        let g = gauge();
        // phi ≡ 0 → (0, 0)
        assert_eq!(g.norm_star(&const_phi(0.0), 24).unwrap(), (0.0, 0.0));
        // phi ≡ 1, J = 1 → value 0.5, tail 0.5
        let (v, t) = g.norm_star(&const_phi(1.0), 1).unwrap();
        assert_eq!(v, 0.5);
        assert_eq!(t, 0.5);
        // value never exceeds the ess-sup norm
        let phi = PiecewisePoly::new(
            1,
            vec![-1.0, -0.25, 0.0],
            vec![vec![vec![2.0, -1.0]], vec![vec![-1.5, 0.0, 4.0]]],
        )
        .unwrap();
        for j in [1, 4, 12, 24] {
            let (v, _) = g.norm_star(&phi, j).unwrap();
            assert!(v <= phi.ess_sup_norm() + 1e-12);
        }
    }

    #[test]
    fn norm_star_truncation_sandwich() {
        let g = gauge();
        let phi = PiecewisePoly::new(
            1,
            vec![-1.0, -0.6, -0.1, 0.0],
            vec![vec![vec![1.0, 2.0]], vec![vec![-3.0]], vec![vec![0.5, 0.0, 1.0]]],
        )
        .unwrap();
        let sup = phi.ess_sup_norm();
        let mut prev = 0.0;
        for j in 1..=20u32 {
            let (v, _) = g.norm_star(&phi, j).unwrap();
            assert!(v + 1e-15 >= prev, "monotone in J");
            if j > 1 {
                let (vp, _) = g.norm_star(&phi, j - 1).unwrap();
                assert!(v <= vp + 0.5f64.powi((j - 1) as i32) * sup + 1e-15);
            }
            prev = v;
        }
    }

    #[test]
    fn dist_of_identical_is_zero() {
        let g = gauge();
        let phi = const_phi(2.5);
        assert_eq!(g.dist(&phi, &phi, 24).unwrap().0, 0.0);
    }

    #[test]
    fn dist_square_wave_decreases_with_k() {
        let g = gauge();
        let zero = const_phi(0.0);
        let mut prev = f64::INFINITY;
        for k in [1u32, 2, 4, 8, 16] {
            let wave = make_oscillating(&zero, k, 1.0);
            let (v, _) = g.dist(&wave, &zero, 12).unwrap();
            assert!(v <= prev + 1e-15, "k={k}: {v} > {prev}");
            prev = v;
        }
    }

    #[test]
    fn oscillating_basics() {
        let zero = const_phi(0.0);
        assert_eq!(make_oscillating(&zero, 5, 0.0), zero);
        let phi = PiecewisePoly::new(1, vec![-1.0, 0.0], vec![vec![vec![0.5, 0.25]]]).unwrap();
        let osc = make_oscillating(&phi, 3, 2.0);
        assert!(osc.ess_sup_norm() <= phi.ess_sup_norm() + 2.0 + 1e-15);
        // symmetric cancellation against the averaging probe
        let g = gauge();
        let wave = make_oscillating(&zero, 4, 1.0);
        let p1 = g.probe(1).unwrap();
        assert_eq!(g.pairing(&p1, &wave).unwrap(), 0.0);
    }

    #[test]
    fn riemann_lebesgue_bound() {
        // |pairing(probe_i, wave_k)| <= 2·Δ·‖probe_i‖∞ / k, checked over the
        // first 64 probes and k ∈ {2..256}
        let g = gauge();
        let zero = const_phi(0.0);
        for k in [2u32, 3, 5, 8, 16, 33, 64, 100, 256] {
            let wave = make_oscillating(&zero, k, 1.0);
            for i in 1..=64u64 {
                let tup = g.probe_tuple(i).unwrap();
                let probe = g.probe(i).unwrap();
                let sup = 2f64.powi(tup.level as i32); // ‖probe‖∞ on Δ=1
                let c = 2.0 * sup;
                let p = g.pairing(&probe, &wave).unwrap().abs();
                assert!(
                    p <= c / f64::from(k) + 1e-12,
                    "i={i} level={} k={k}: |pairing|={p} > {}",
                    tup.level,
                    c / f64::from(k)
                );
            }
        }
    }

    #[test]
    fn shift_sup_dist_basics() {
        let g = gauge();
        let phi = const_phi(1.0);
        let x = PiecewisePoly::new(1, vec![0.0, 2.0], vec![vec![vec![1.0, -0.25]]]).unwrap();
        let pa = crate::history::concat(phi.clone(), 0.0, x.clone()).unwrap();
        let pb = crate::history::concat(phi, 0.0, x.clone()).unwrap();
        // identical histories → 0
        assert_eq!(g.shift_sup_dist(&pa, &pb, 2.0, 12).unwrap(), 0.0);
        // mismatched trajectories rejected
        let other_x = PiecewisePoly::new(1, vec![0.0, 2.0], vec![vec![vec![2.0]]]).unwrap();
        let pc = crate::history::concat(const_phi(0.0), 0.0, other_x).unwrap();
        assert_eq!(
            g.shift_sup_dist(&pa, &pc, 2.0, 12),
            Err(WeakStarError::MismatchedTrajectories)
        );
    }

    #[test]
    fn shift_sup_dist_oscillatory_trend() {
        let g = gauge();
        let zero = const_phi(0.0);
        let x = PiecewisePoly::new(1, vec![0.0, 2.0], vec![vec![vec![0.5, 0.1]]]).unwrap();
        let base = crate::history::concat(zero.clone(), 0.0, x.clone()).unwrap();
        let mut prev = f64::INFINITY;
        for k in [4u32, 8, 16, 32, 64] {
            let wave = make_oscillating(&zero, k, 1.0);
            let path = crate::history::concat(wave, 0.0, x.clone()).unwrap();
            let v = g.shift_sup_dist(&path, &base, 2.0, 12).unwrap();
            assert!(v <= prev * 1.1 + 1e-15, "k={k}: {v} vs prev {prev}");
            prev = v;
        }
        assert!(prev < 0.05, "should decay towards 0, got {prev}");
    }

    #[test]
    fn continuous_approximants() {
        // already-continuous pair is returned unchanged
        let phi = PiecewisePoly::new(1, vec![-1.0, 0.0], vec![vec![vec![2.0, -2.0]]]).unwrap();
        let ic = InitialCondition::new(vec![0.0], phi.clone()).unwrap();
        for k in [1u32, 4, 16] {
            assert_eq!(make_continuous_approximants(&ic, k).unwrap(), phi);
        }

        // step history: crossfade width halves as k doubles
        let step = PiecewisePoly::new(
            1,
            vec![-1.0, -0.5, 0.0],
            vec![vec![vec![1.0]], vec![vec![-1.0]]],
        )
        .unwrap();
        let ic = InitialCondition::new(vec![-1.0], step.clone()).unwrap();
        let psi2 = make_continuous_approximants(&ic, 2).unwrap();
        let psi4 = make_continuous_approximants(&ic, 4).unwrap();
        let width = |p: &PiecewisePoly| {
            let bps = p.breakpoints();
            // fade cell sits immediately left of -0.5
            let pos = bps.iter().position(|&b| b == -0.5).unwrap();
            bps[pos] - bps[pos - 1]
        };
        let w2 = width(&psi2);
        let w4 = width(&psi4);
        assert!((w2 / w4 - 2.0).abs() < 1e-12);

        // continuity and endpoint pinning
        for (k, psi) in [(2u32, &psi2), (4u32, &psi4)] {
            for &b in &psi.breakpoints()[1..psi.breakpoints().len() - 1] {
                let (l, r) = psi.one_sided_limits(b).unwrap();
                for (a, b) in l.iter().zip(r.iter()) {
                    assert!((a - b).abs() < 1e-12, "k={k} jump at {b}");
                }
            }
            assert_eq!(psi.eval(0.0).unwrap()[0], -1.0);
            assert!(psi.ess_sup_norm() <= step.ess_sup_norm().max(1.0) + 1e-12);
        }

        // weak-* distance to the original step vanishes with k
        let g = gauge();
        let mut prev = f64::INFINITY;
        for k in [1u32, 2, 4, 8, 16, 64, 256] {
            let psi = make_continuous_approximants(&ic, k).unwrap();
            let (v, _) = g.dist(&psi, &step, 12).unwrap();
            assert!(v <= prev + 1e-15);
            prev = v;
        }
        assert!(prev < 1e-3, "dist should vanish, got {prev}");
    }

    #[test]
    fn lemma3_liminf_on_fixtures() {
        // weak-* convergent oscillations: ‖φ⁰‖ ≤ liminf ‖φᵏ‖
        let g = gauge();
        let phi0 = PiecewisePoly::new(1, vec![-1.0, 0.0], vec![vec![vec![0.3, 0.4]]]).unwrap();
        let base = phi0.ess_sup_norm();
        let mut sups = Vec::new();
        for k in [8u32, 16, 32, 64, 128] {
            let w = make_oscillating(&phi0, k, 0.7);
            let (d, _) = g.dist(&w, &phi0, 16).unwrap();
            assert!(d < 0.2, "weak-* distance should be small");
            sups.push(w.ess_sup_norm());
        }
        let liminf = sups.iter().rev().take(3).cloned().fold(f64::INFINITY, f64::min);
        assert!(base <= liminf + 1e-12);
    }
}
