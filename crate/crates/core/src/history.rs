//! Piecewise-polynomial carriers for essentially bounded histories and
//! trajectories.
//!
//! A [`PiecewisePoly`] represents a vector-valued function on a time interval
//! as one polynomial per breakpoint cell. It is the carrier for initial
//! histories, solution trajectories, and the L¹ probes of the weak-* module.
//! Evaluation follows a fixed side convention: at an interior breakpoint the
//! value of the piece to the *right* is returned, and at the right domain
//! endpoint the piece to the left governs. Histories may additionally carry
//! zero-width point annotations that override pointwise evaluation at
//! isolated times without affecting any norm or integral; these model
//! representatives of an L∞ class that differ on a measure-zero set.

use std::fmt::Write as _;

use thiserror::Error;

/// Maximum polynomial degree a piece may carry.
pub const P_MAX: usize = 16;

/// Relative width below which a cell is merged into its neighbour.
pub const MERGE_REL_WIDTH: f64 = 1e-14;

/// Relative tolerance for per-piece extremum isolation.
const SUP_REL_TOL: f64 = 1e-13;

#[derive(Debug, Error, PartialEq)]
pub enum HistoryError {
    #[error("component count mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),
    #[error("breakpoints must strictly increase (index {0})")]
    BreakpointsNotIncreasing(usize),
    #[error("empty breakpoint list or piece list")]
    Empty,
    #[error("piece {piece} has degree {degree}, maximum is {max}")]
    DegreeTooHigh { piece: usize, degree: usize, max: usize },
    #[error("non-finite coefficient in piece {0}")]
    NonFiniteCoefficient(usize),
    #[error("time {t} outside domain [{start}, {end}]")]
    OutOfDomain { t: f64, start: f64, end: f64 },
    #[error("perturbation point {0} must lie strictly inside the history interval; 0 would alter the initial vector")]
    PerturbationAtEndpoint(f64),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

// ---------------------------------------------------------------------------
// scalar polynomial helpers (coefficients ascending, local variable u)
// ---------------------------------------------------------------------------

#[inline]
pub(crate) fn poly_eval(coeffs: &[f64], u: f64) -> f64 {
    let mut acc = 0.0;
    for &c in coeffs.iter().rev() {
        acc = acc * u + c;
    }
    acc
}

pub(crate) fn poly_derivative(coeffs: &[f64]) -> Vec<f64> {
    if coeffs.len() <= 1 {
        return vec![0.0];
    }
    coeffs[1..]
        .iter()
        .enumerate()
        .map(|(i, &c)| c * (i + 1) as f64)
        .collect()
}

pub(crate) fn poly_antiderivative(coeffs: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(coeffs.len() + 1);
    out.push(0.0);
    for (i, &c) in coeffs.iter().enumerate() {
        out.push(c / (i + 1) as f64);
    }
    out
}

/// Re-expand `p(u)` around `u = c`: returns `q` with `q(v) = p(v + c)`.
pub(crate) fn poly_shift(coeffs: &[f64], c: f64) -> Vec<f64> {
    let n = coeffs.len();
    let mut out = coeffs.to_vec();
    if c == 0.0 || n <= 1 {
        return out;
    }
    // repeated synthetic division by (u - c)
    for i in 0..n.saturating_sub(1) {
        for j in (i..n - 1).rev() {
            let next = out[j + 1];
            out[j] += c * next;
        }
    }
    out
}

fn poly_trim(coeffs: &mut Vec<f64>) {
    while coeffs.len() > 1 && *coeffs.last().unwrap() == 0.0 {
        coeffs.pop();
    }
}

/// Real roots of `p` inside the open interval `(a, b)`, found by recursive
/// critical-point isolation and bisection. Exact for the degrees allowed here.
pub(crate) fn poly_roots_in(coeffs: &[f64], a: f64, b: f64, tol: f64) -> Vec<f64> {
    let mut c = coeffs.to_vec();
    poly_trim(&mut c);
    let deg = c.len() - 1;
    if deg == 0 {
        return Vec::new();
    }
    if deg == 1 {
        let r = -c[0] / c[1];
        return if r > a && r < b { vec![r] } else { Vec::new() };
    }
    let deriv = poly_derivative(&c);
    let crit = poly_roots_in(&deriv, a, b, tol);
    let mut nodes = Vec::with_capacity(crit.len() + 2);
    nodes.push(a);
    nodes.extend(crit);
    nodes.push(b);
    let mut roots = Vec::new();
    for w in nodes.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let flo = poly_eval(&c, lo);
        let fhi = poly_eval(&c, hi);
        if flo == 0.0 && lo > a {
            roots.push(lo);
            continue;
        }
        if flo * fhi > 0.0 {
            continue;
        }
        // monotone between critical points: bisect
        let (mut lo, mut hi) = (lo, hi);
        let (mut flo, _) = (flo, fhi);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if hi - lo <= tol {
                break;
            }
            let fm = poly_eval(&c, mid);
            if fm == 0.0 {
                lo = mid;
                hi = mid;
                break;
            }
            if flo * fm < 0.0 {
                hi = mid;
            } else {
                lo = mid;
                flo = fm;
            }
        }
        let r = 0.5 * (lo + hi);
        if r > a && r < b {
            roots.push(r);
        }
    }
    roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
    roots.dedup_by(|x, y| (*x - *y).abs() <= tol);
    roots
}

/// Exact supremum of `|p|` over the closed interval `[0, w]`.
pub(crate) fn poly_abs_sup(coeffs: &[f64], w: f64) -> f64 {
    let mut best = poly_eval(coeffs, 0.0).abs().max(poly_eval(coeffs, w).abs());
    let deriv = poly_derivative(coeffs);
    if deriv.len() > 1 || deriv[0] != 0.0 {
        for r in poly_roots_in(&deriv, 0.0, w, SUP_REL_TOL * w.max(f64::MIN_POSITIVE)) {
            best = best.max(poly_eval(coeffs, r).abs());
        }
    }
    best
}

// ---------------------------------------------------------------------------
// PiecewisePoly
// ---------------------------------------------------------------------------

/// One cell of a piecewise polynomial: per-component coefficient rows in the
/// local variable `u = t - left_breakpoint`, ascending powers.
pub type Piece = Vec<Vec<f64>>;

/// Breakpointed polynomial vector function on `[t_start, t_end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePoly {
    dim: usize,
    breakpoints: Vec<f64>,
    pieces: Vec<Piece>,
    /// Zero-width overrides `(time, value)`; honoured by [`Self::eval`] only.
    annotations: Vec<(f64, Vec<f64>)>,
}

impl PiecewisePoly {
    pub fn new(dim: usize, breakpoints: Vec<f64>, pieces: Vec<Piece>) -> Result<Self, HistoryError> {
        if dim == 0 || breakpoints.len() < 2 || pieces.len() != breakpoints.len() - 1 {
            return Err(HistoryError::Empty);
        }
        for (i, w) in breakpoints.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(HistoryError::BreakpointsNotIncreasing(i));
            }
        }
        for (i, piece) in pieces.iter().enumerate() {
            if piece.len() != dim {
                return Err(HistoryError::DimensionMismatch { expected: dim, got: piece.len() });
            }
            for row in piece {
                if row.is_empty() {
                    return Err(HistoryError::Empty);
                }
                if row.len() - 1 > P_MAX {
                    return Err(HistoryError::DegreeTooHigh { piece: i, degree: row.len() - 1, max: P_MAX });
                }
                if row.iter().any(|c| !c.is_finite()) {
                    return Err(HistoryError::NonFiniteCoefficient(i));
                }
            }
        }
        // normalize each piece to a rectangular coefficient matrix
        let mut pieces = pieces;
        for piece in &mut pieces {
            let len = piece.iter().map(|r| r.len()).max().unwrap_or(1);
            for row in piece.iter_mut() {
                row.resize(len, 0.0);
            }
        }
        let mut out = Self { dim, breakpoints, pieces, annotations: Vec::new() };
        out.merge_degenerate();
        Ok(out)
    }

    /// Constant function `values` on `[a, b]`.
    pub fn constant(a: f64, b: f64, values: &[f64]) -> Result<Self, HistoryError> {
        let piece: Piece = values.iter().map(|&v| vec![v]).collect();
        Self::new(values.len(), vec![a, b], vec![piece])
    }

    pub fn zero(dim: usize, a: f64, b: f64) -> Self {
        Self::constant(a, b, &vec![0.0; dim]).expect("valid constant")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t_start(&self) -> f64 {
        self.breakpoints[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn annotations(&self) -> &[(f64, Vec<f64>)] {
        &self.annotations
    }

    fn merge_degenerate(&mut self) {
        let span = self.t_end() - self.t_start();
        let floor = MERGE_REL_WIDTH * span;
        let mut i = 0;
        while self.pieces.len() > 1 && i < self.pieces.len() {
            let w = self.breakpoints[i + 1] - self.breakpoints[i];
            if w < floor {
                // extend the neighbouring piece over the sliver
                if i + 1 < self.pieces.len() {
                    // absorb into the right piece: move its origin left
                    let width = w;
                    let piece = &mut self.pieces[i + 1];
                    for row in piece.iter_mut() {
                        *row = poly_shift(row, -width);
                    }
                    self.pieces.remove(i);
                    self.breakpoints.remove(i + 1);
                } else {
                    // last cell: absorb into the left piece
                    self.pieces.remove(i);
                    self.breakpoints.remove(i);
                }
            } else {
                i += 1;
            }
        }
    }

    /// Index of the piece governing `t` under the side convention.
    pub fn piece_index(&self, t: f64) -> Result<usize, HistoryError> {
        if t < self.t_start() || t > self.t_end() {
            return Err(HistoryError::OutOfDomain { t, start: self.t_start(), end: self.t_end() });
        }
        if t >= *self.breakpoints.last().unwrap() {
            return Ok(self.pieces.len() - 1);
        }
        // rightmost breakpoint <= t
        let idx = self.breakpoints.partition_point(|&b| b <= t);
        Ok(idx - 1)
    }

    /// Pointwise evaluation honouring annotations and the side convention.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<(), HistoryError> {
        if out.len() != self.dim {
            return Err(HistoryError::DimensionMismatch { expected: self.dim, got: out.len() });
        }
        for (p, v) in &self.annotations {
            if *p == t {
                out.copy_from_slice(v);
                return Ok(());
            }
        }
        self.eval_essential_into(t, out)
    }

    /// Evaluation of the underlying piecewise polynomial, ignoring
    /// annotations. All quadrature and norm computations go through here.
    pub fn eval_essential_into(&self, t: f64, out: &mut [f64]) -> Result<(), HistoryError> {
        let idx = self.piece_index(t)?;
        let u = t - self.breakpoints[idx];
        for (j, row) in self.pieces[idx].iter().enumerate() {
            out[j] = poly_eval(row, u);
        }
        Ok(())
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>, HistoryError> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    pub fn eval_essential(&self, t: f64) -> Result<Vec<f64>, HistoryError> {
        let mut out = vec![0.0; self.dim];
        self.eval_essential_into(t, &mut out)?;
        Ok(out)
    }

    /// Essential supremum: max over pieces and components of the exact
    /// polynomial sup on the closed cell. Annotations never contribute.
    pub fn ess_sup_norm(&self) -> f64 {
        let mut best: f64 = 0.0;
        for (i, piece) in self.pieces.iter().enumerate() {
            let w = self.breakpoints[i + 1] - self.breakpoints[i];
            for row in piece {
                best = best.max(poly_abs_sup(row, w));
            }
        }
        best
    }

    /// Exact integral of one component over `[a, b] ⊆ domain`.
    pub fn integrate_component(&self, comp: usize, a: f64, b: f64) -> Result<f64, HistoryError> {
        if comp >= self.dim {
            return Err(HistoryError::DimensionMismatch { expected: self.dim, got: comp });
        }
        if a > b || a < self.t_start() - 1e-12 || b > self.t_end() + 1e-12 {
            return Err(HistoryError::DomainMismatch(format!(
                "integral bounds [{a}, {b}] outside [{}, {}]",
                self.t_start(),
                self.t_end()
            )));
        }
        let a = a.max(self.t_start());
        let b = b.min(self.t_end());
        if a == b {
            return Ok(0.0);
        }
        let mut acc = 0.0;
        let i0 = self.piece_index(a)?;
        for i in i0..self.pieces.len() {
            let lo = self.breakpoints[i].max(a);
            let hi = self.breakpoints[i + 1].min(b);
            if hi <= lo {
                break;
            }
            let anti = poly_antiderivative(&self.pieces[i][comp]);
            let base = self.breakpoints[i];
            acc += poly_eval(&anti, hi - base) - poly_eval(&anti, lo - base);
            if hi >= b {
                break;
            }
        }
        Ok(acc)
    }

    /// Translate in time by `dt` (exact: local coordinates are unchanged).
    pub fn shift_time(&self, dt: f64) -> Self {
        let mut out = self.clone();
        for b in &mut out.breakpoints {
            *b += dt;
        }
        for (p, _) in &mut out.annotations {
            *p += dt;
        }
        out
    }

    /// Restriction to `[a, b] ⊆ domain`. Annotations inside the window are
    /// carried over.
    pub fn restrict(&self, a: f64, b: f64) -> Result<Self, HistoryError> {
        if !(b > a) || a < self.t_start() - 1e-12 || b > self.t_end() + 1e-12 {
            return Err(HistoryError::DomainMismatch(format!(
                "restriction [{a}, {b}] outside [{}, {}]",
                self.t_start(),
                self.t_end()
            )));
        }
        let a = a.max(self.t_start());
        let b = b.min(self.t_end());
        let mut breakpoints = vec![a];
        let mut pieces = Vec::new();
        let i0 = self.piece_index(a)?;
        for i in i0..self.pieces.len() {
            let lo = self.breakpoints[i].max(a);
            let hi = self.breakpoints[i + 1].min(b);
            if hi <= lo {
                break;
            }
            let offset = lo - self.breakpoints[i];
            let piece: Piece = if offset == 0.0 {
                self.pieces[i].clone()
            } else {
                self.pieces[i].iter().map(|row| poly_shift(row, offset)).collect()
            };
            pieces.push(piece);
            breakpoints.push(hi);
            if hi >= b {
                break;
            }
        }
        let mut out = Self::new(self.dim, breakpoints, pieces)?;
        out.annotations = self
            .annotations
            .iter()
            .filter(|(p, _)| *p >= a && *p <= b)
            .cloned()
            .collect();
        Ok(out)
    }

    pub fn with_annotations(mut self, annotations: Vec<(f64, Vec<f64>)>) -> Self {
        self.annotations = annotations;
        self.annotations.sort_by(|x, y| x.0.total_cmp(&y.0));
        self
    }

    /// Union of both breakpoint grids over a common domain.
    fn common_breakpoints(&self, other: &Self) -> Vec<f64> {
        let mut all: Vec<f64> = self
            .breakpoints
            .iter()
            .chain(other.breakpoints.iter())
            .copied()
            .collect();
        all.sort_by(|x, y| x.total_cmp(y));
        all.dedup();
        all
    }

    /// Pointwise linear combination `alpha*self + beta*other` on a common
    /// refinement. Domains must coincide.
    pub fn linear_combination(&self, alpha: f64, other: &Self, beta: f64) -> Result<Self, HistoryError> {
        if self.dim != other.dim {
            return Err(HistoryError::DimensionMismatch { expected: self.dim, got: other.dim });
        }
        if self.t_start() != other.t_start() || self.t_end() != other.t_end() {
            return Err(HistoryError::DomainMismatch(format!(
                "[{}, {}] vs [{}, {}]",
                self.t_start(),
                self.t_end(),
                other.t_start(),
                other.t_end()
            )));
        }
        let grid = self.common_breakpoints(other);
        let mut pieces = Vec::with_capacity(grid.len() - 1);
        for w in grid.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let mid = 0.5 * (lo + hi);
            let ia = self.piece_index(mid)?;
            let ib = other.piece_index(mid)?;
            let offa = lo - self.breakpoints[ia];
            let offb = lo - other.breakpoints[ib];
            let mut piece = Vec::with_capacity(self.dim);
            for j in 0..self.dim {
                let ra = poly_shift(&self.pieces[ia][j], offa);
                let rb = poly_shift(&other.pieces[ib][j], offb);
                let len = ra.len().max(rb.len());
                let mut row = vec![0.0; len];
                for (k, slot) in row.iter_mut().enumerate() {
                    let ca = ra.get(k).copied().unwrap_or(0.0);
                    let cb = rb.get(k).copied().unwrap_or(0.0);
                    *slot = alpha * ca + beta * cb;
                }
                piece.push(row);
            }
            pieces.push(piece);
        }
        Self::new(self.dim, grid, pieces)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, HistoryError> {
        self.linear_combination(1.0, other, -1.0)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        for piece in &mut out.pieces {
            for row in piece {
                for c in row {
                    *c *= alpha;
                }
            }
        }
        for (_, v) in &mut out.annotations {
            for c in v {
                *c *= alpha;
            }
        }
        out
    }

    /// Componentwise derivative (for smoothness diagnostics in tests).
    pub fn derivative(&self) -> Self {
        let pieces = self
            .pieces
            .iter()
            .map(|piece| piece.iter().map(|row| poly_derivative(row)).collect())
            .collect();
        Self { dim: self.dim, breakpoints: self.breakpoints.clone(), pieces, annotations: Vec::new() }
    }

    /// One-sided limits at a time inside the domain: `(left, right)`.
    pub fn one_sided_limits(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>), HistoryError> {
        if t <= self.t_start() || t >= self.t_end() {
            return Err(HistoryError::OutOfDomain { t, start: self.t_start(), end: self.t_end() });
        }
        let right_idx = self.piece_index(t)?;
        let left_idx = if self.breakpoints[right_idx] == t { right_idx - 1 } else { right_idx };
        let left = self.pieces[left_idx]
            .iter()
            .map(|row| poly_eval(row, t - self.breakpoints[left_idx]))
            .collect();
        let right = self.pieces[right_idx]
            .iter()
            .map(|row| poly_eval(row, t - self.breakpoints[right_idx]))
            .collect();
        Ok((left, right))
    }

    // -- serialization ------------------------------------------------------

    /// Structured text record; floats carry 17 significant digits so the
    /// round trip is exact for binary64.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "ppoly 1").unwrap();
        writeln!(s, "dim {}", self.dim).unwrap();
        let bps: Vec<String> = self.breakpoints.iter().map(|b| fmt_f64(*b)).collect();
        writeln!(s, "breakpoints {}", bps.join(" ")).unwrap();
        for piece in &self.pieces {
            writeln!(s, "piece {}", piece[0].len()).unwrap();
            for row in piece {
                let cs: Vec<String> = row.iter().map(|c| fmt_f64(*c)).collect();
                writeln!(s, "{}", cs.join(" ")).unwrap();
            }
        }
        writeln!(s, "annotations {}", self.annotations.len()).unwrap();
        for (p, v) in &self.annotations {
            let vs: Vec<String> = v.iter().map(|c| fmt_f64(*c)).collect();
            writeln!(s, "{} {}", fmt_f64(*p), vs.join(" ")).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, HistoryError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let perr = |line: usize, message: &str| HistoryError::Parse { line: line + 1, message: message.to_string() };
        let (ln, header) = lines.next().ok_or_else(|| perr(0, "empty record"))?;
        if header.trim() != "ppoly 1" {
            return Err(perr(ln, "expected header 'ppoly 1'"));
        }
        let (ln, dim_line) = lines.next().ok_or_else(|| perr(ln, "missing dim"))?;
        let dim: usize = dim_line
            .trim()
            .strip_prefix("dim ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| perr(ln, "bad dim line"))?;
        let (ln, bp_line) = lines.next().ok_or_else(|| perr(ln, "missing breakpoints"))?;
        let bps_str = bp_line
            .trim()
            .strip_prefix("breakpoints ")
            .ok_or_else(|| perr(ln, "bad breakpoints line"))?;
        let breakpoints = parse_f64_list(bps_str).map_err(|m| perr(ln, &m))?;
        let n_pieces = breakpoints.len().saturating_sub(1);
        let mut pieces = Vec::with_capacity(n_pieces);
        let mut last_ln = ln;
        for _ in 0..n_pieces {
            let (ln, pl) = lines.next().ok_or_else(|| perr(last_ln, "missing piece"))?;
            let ncoef: usize = pl
                .trim()
                .strip_prefix("piece ")
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| perr(ln, "bad piece line"))?;
            let mut piece = Vec::with_capacity(dim);
            last_ln = ln;
            for _ in 0..dim {
                let (ln, row_line) = lines.next().ok_or_else(|| perr(last_ln, "missing coefficient row"))?;
                let row = parse_f64_list(row_line).map_err(|m| perr(ln, &m))?;
                if row.len() != ncoef {
                    return Err(perr(ln, "coefficient row length mismatch"));
                }
                piece.push(row);
                last_ln = ln;
            }
            pieces.push(piece);
        }
        let mut out = Self::new(dim, breakpoints, pieces)?;
        if let Some((ln, al)) = lines.next() {
            let count: usize = al
                .trim()
                .strip_prefix("annotations ")
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| perr(ln, "bad annotations line"))?;
            let mut annotations = Vec::with_capacity(count);
            let mut last = ln;
            for _ in 0..count {
                let (ln, row_line) = lines.next().ok_or_else(|| perr(last, "missing annotation row"))?;
                let row = parse_f64_list(row_line).map_err(|m| perr(ln, &m))?;
                if row.len() != dim + 1 {
                    return Err(perr(ln, "annotation row length mismatch"));
                }
                annotations.push((row[0], row[1..].to_vec()));
                last = ln;
            }
            out = out.with_annotations(annotations);
        }
        Ok(out)
    }
}

pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    s.split_whitespace()
        .map(|tok| tok.parse::<f64>().map_err(|e| format!("bad float '{tok}': {e}")))
        .collect()
}

// ---------------------------------------------------------------------------
// InitialCondition
// ---------------------------------------------------------------------------

/// The pair `(ξ₀, φ)`: an initial vector together with an essentially
/// bounded history on `[-Δ, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialCondition {
    pub xi0: Vec<f64>,
    pub phi: PiecewisePoly,
}

impl InitialCondition {
    pub fn new(xi0: Vec<f64>, phi: PiecewisePoly) -> Result<Self, HistoryError> {
        if xi0.len() != phi.dim() {
            return Err(HistoryError::DimensionMismatch { expected: phi.dim(), got: xi0.len() });
        }
        if phi.t_end() != 0.0 {
            return Err(HistoryError::DomainMismatch(format!(
                "history must end at 0, ends at {}",
                phi.t_end()
            )));
        }
        if !(phi.t_start() < 0.0) {
            return Err(HistoryError::DomainMismatch("history must start before 0".into()));
        }
        Ok(Self { xi0, phi })
    }

    /// Constant history `c` with `ξ₀ = c`.
    pub fn constant(delta: f64, values: &[f64]) -> Result<Self, HistoryError> {
        let phi = PiecewisePoly::constant(-delta, 0.0, values)?;
        Self::new(values.to_vec(), phi)
    }

    pub fn delta(&self) -> f64 {
        -self.phi.t_start()
    }

    pub fn dim(&self) -> usize {
        self.phi.dim()
    }

    /// A representative differing from this one only at the listed interior
    /// points. Norms, integrals and the solver are unaffected; only pointwise
    /// evaluation sees the new values.
    pub fn perturb_zero_measure(
        &self,
        points: &[f64],
        values: &[Vec<f64>],
    ) -> Result<Self, HistoryError> {
        if points.len() != values.len() {
            return Err(HistoryError::DimensionMismatch { expected: points.len(), got: values.len() });
        }
        let delta = self.delta();
        for (&p, v) in points.iter().zip(values) {
            if p == 0.0 {
                return Err(HistoryError::PerturbationAtEndpoint(p));
            }
            if !(p > -delta && p < 0.0) {
                return Err(HistoryError::PerturbationAtEndpoint(p));
            }
            if v.len() != self.dim() {
                return Err(HistoryError::DimensionMismatch { expected: self.dim(), got: v.len() });
            }
            if v.iter().any(|c| !c.is_finite()) {
                return Err(HistoryError::NonFiniteCoefficient(0));
            }
        }
        let mut annotations = self.phi.annotations().to_vec();
        for (&p, v) in points.iter().zip(values) {
            annotations.retain(|(q, _)| *q != p);
            annotations.push((p, v.clone()));
        }
        let phi = self.phi.clone().with_annotations(annotations);
        Ok(Self { xi0: self.xi0.clone(), phi })
    }
}

// ---------------------------------------------------------------------------
// ExtendedPath
// ---------------------------------------------------------------------------

/// Concatenation `(φ ⋄ x)`: the shifted history before `t0`, the trajectory
/// from `t0` on. The jump at `t0` is permitted and expected.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedPath {
    t0: f64,
    phi: PiecewisePoly,
    x: PiecewisePoly,
}

/// Builds `(φ ⋄ x)` from a history on `[-Δ, 0]` and a trajectory starting at
/// `t0`.
pub fn concat(phi: PiecewisePoly, t0: f64, x: PiecewisePoly) -> Result<ExtendedPath, HistoryError> {
    if phi.dim() != x.dim() {
        return Err(HistoryError::DimensionMismatch { expected: phi.dim(), got: x.dim() });
    }
    if phi.t_end() != 0.0 {
        return Err(HistoryError::DomainMismatch(format!(
            "history must end at 0, ends at {}",
            phi.t_end()
        )));
    }
    if x.t_start() != t0 {
        return Err(HistoryError::DomainMismatch(format!(
            "trajectory starts at {}, expected t0 = {t0}",
            x.t_start()
        )));
    }
    Ok(ExtendedPath { t0, phi, x })
}

impl ExtendedPath {
    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.x.t_end()
    }

    pub fn delta(&self) -> f64 {
        -self.phi.t_start()
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    pub fn phi(&self) -> &PiecewisePoly {
        &self.phi
    }

    pub fn x(&self) -> &PiecewisePoly {
        &self.x
    }

    /// Value at a global time in `[t0 - Δ, T]`. Before `t0` the shifted
    /// history governs; from `t0` on the trajectory does.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>, HistoryError> {
        if t < self.t0 {
            if t < self.t0 - self.delta() {
                return Err(HistoryError::OutOfDomain {
                    t,
                    start: self.t0 - self.delta(),
                    end: self.t_end(),
                });
            }
            self.phi.eval(t - self.t0)
        } else {
            self.x.eval(t)
        }
    }

    /// Like [`Self::eval`] but through the annotation-free view.
    pub fn eval_essential(&self, t: f64) -> Result<Vec<f64>, HistoryError> {
        if t < self.t0 {
            self.phi.eval_essential(t - self.t0)
        } else {
            self.x.eval_essential(t)
        }
    }

    /// The history segment at time `t`: `s ↦ path(t + s)` on `[-Δ, 0]`.
    /// The right endpoint value is pinned to `x(t)` by a zero-width
    /// annotation, so `segment(t)(0) = x(t)` always holds.
    pub fn segment(&self, t: f64) -> Result<PiecewisePoly, HistoryError> {
        if t < self.t0 || t > self.t_end() {
            return Err(HistoryError::OutOfDomain { t, start: self.t0, end: self.t_end() });
        }
        let delta = self.delta();
        let x_at_t = self.x.eval_essential(t)?;
        let seg = if t == self.t0 {
            self.phi.clone()
        } else if t - delta >= self.t0 {
            self.x.restrict(t - delta, t)?.shift_time(-t)
        } else {
            // part of phi, part of x
            let phi_part = self.phi.restrict(t - self.t0 - delta, 0.0)?.shift_time(-(t - self.t0));
            let x_part = self.x.restrict(self.t0, t)?.shift_time(-t);
            let mut breakpoints = phi_part.breakpoints.clone();
            breakpoints.pop();
            breakpoints.extend_from_slice(&x_part.breakpoints);
            let mut pieces = phi_part.pieces.clone();
            pieces.extend_from_slice(&x_part.pieces);
            let mut annotations = phi_part.annotations.clone();
            annotations.extend_from_slice(&x_part.annotations);
            PiecewisePoly::new(self.dim(), breakpoints, pieces)?.with_annotations(annotations)
        };
        let mut annotations: Vec<(f64, Vec<f64>)> =
            seg.annotations.iter().filter(|(p, _)| *p != 0.0).cloned().collect();
        annotations.push((0.0, x_at_t));
        Ok(seg.with_annotations(annotations))
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    fn poly1(a: f64, b: f64, coeffs: &[f64]) -> PiecewisePoly {
        PiecewisePoly::new(1, vec![a, b], vec![vec![coeffs.to_vec()]]).unwrap()
    }

    #[test]
    fn eval_side_convention() {
        // two pieces: 1 on [0,1), 2 on [1,2]
        let f = PiecewisePoly::new(1, vec![0.0, 1.0, 2.0], vec![vec![vec![1.0]], vec![vec![2.0]]]).unwrap();
        assert_eq!(f.eval(0.0).unwrap()[0], 1.0);
        assert_eq!(f.eval(1.0).unwrap()[0], 2.0); // right limit at interior breakpoint
        assert_eq!(f.eval(2.0).unwrap()[0], 2.0); // left limit at t_end
        assert_eq!(f.eval(0.5).unwrap()[0], 1.0);
        assert!(f.eval(2.5).is_err());
    }

    #[test]
    fn ess_sup_examples() {
        // f ≡ 0 → 0
        assert_eq!(PiecewisePoly::zero(1, -1.0, 0.0).ess_sup_norm(), 0.0);
        // f(s) = s on [-1, 0] → 1 (linear extremum at endpoint)
        let f = poly1(-1.0, 0.0, &[-1.0, 1.0]); // u - 1 with u = s + 1
        assert_eq!(f.ess_sup_norm(), 1.0);
        // f(s) = s(s+1) on [-1, 0] → 0.25 at the vertex s = -1/2.
        // In local u = s + 1: (u-1)u = u^2 - u.
        let f = poly1(-1.0, 0.0, &[0.0, -1.0, 1.0]);
        assert!((f.ess_sup_norm() - 0.25).abs() < 1e-14);
    }

    #[test]
    fn ess_sup_ignores_annotations() {
        let f = poly1(-1.0, 0.0, &[1.0]).with_annotations(vec![(-0.5, vec![100.0])]);
        assert_eq!(f.ess_sup_norm(), 1.0);
        assert_eq!(f.eval(-0.5).unwrap()[0], 100.0);
        assert_eq!(f.eval_essential(-0.5).unwrap()[0], 1.0);
    }

    #[test]
    fn concat_examples() {
        // phi ≡ 1 on [-1,0], x ≡ 2 on [0,1]
        let phi = poly1(-1.0, 0.0, &[1.0]);
        let x = poly1(0.0, 1.0, &[2.0]);
        let path = concat(phi, 0.0, x).unwrap();
        assert_eq!(path.eval(-0.5).unwrap()[0], 1.0);
        assert_eq!(path.eval(-1e-12).unwrap()[0], 1.0);
        assert_eq!(path.eval(0.0).unwrap()[0], 2.0);
        assert_eq!(path.eval(1.0).unwrap()[0], 2.0);

        // phi(s) = s on [-1,0], t0 = 3, eval at 2.5 → -0.5
        let phi = poly1(-1.0, 0.0, &[-1.0, 1.0]);
        let x = poly1(3.0, 4.0, &[0.0]);
        let path = concat(phi, 3.0, x).unwrap();
        assert!((path.eval(2.5).unwrap()[0] - (-0.5)).abs() < 1e-15);
    }

    #[test]
    fn concat_dimension_and_domain_errors() {
        let phi = poly1(-1.0, 0.0, &[1.0]);
        let x2 = PiecewisePoly::constant(0.0, 1.0, &[1.0, 2.0]).unwrap();
        assert!(matches!(
            concat(phi.clone(), 0.0, x2),
            Err(HistoryError::DimensionMismatch { .. })
        ));
        let x = poly1(0.5, 1.0, &[1.0]);
        assert!(matches!(concat(phi, 0.0, x), Err(HistoryError::DomainMismatch(_))));
    }

    #[test]
    fn segment_at_t0_is_phi_with_xi0_at_zero() {
        let phi = poly1(-1.0, 0.0, &[7.0]);
        let x = poly1(0.0, 1.0, &[3.0]);
        let path = concat(phi, 0.0, x).unwrap();
        let seg = path.segment(0.0).unwrap();
        assert_eq!(seg.eval(-0.25).unwrap()[0], 7.0);
        assert_eq!(seg.eval(0.0).unwrap()[0], 3.0); // xi0 at 0
        assert_eq!(seg.eval_essential(0.0).unwrap()[0], 7.0);
    }

    #[test]
    fn segment_pure_restriction_after_delta() {
        // t >= t0 + delta: segment depends only on x
        let phi = poly1(-1.0, 0.0, &[9.0]);
        let x = poly1(0.0, 3.0, &[0.0, 1.0]); // x(t) = t
        let path = concat(phi, 0.0, x).unwrap();
        let seg = path.segment(2.0).unwrap();
        for s in [-1.0, -0.7, -0.3, 0.0] {
            assert!((seg.eval(s).unwrap()[0] - (2.0 + s)).abs() < 1e-14, "s={s}");
        }
    }

    #[test]
    fn segment_mixed_against_substitution_oracle() {
        // phi ≡ 1, x(t) = 1 - t on [0,1], delta = 1, t = 0.5:
        // segment(s) = 1 on [-1,-0.5), 1-(0.5+s) on [-0.5,0]
        let phi = poly1(-1.0, 0.0, &[1.0]);
        let x = poly1(0.0, 1.0, &[1.0, -1.0]);
        let path = concat(phi, 0.0, x).unwrap();
        let seg = path.segment(0.5).unwrap();
        // oracle: direct substitution path(t+s)
        for i in 0..=100 {
            let s = -1.0 + i as f64 / 100.0;
            let want = if 0.5 + s < 0.0 { 1.0 } else { 1.0 - (0.5 + s) };
            assert!((seg.eval(s).unwrap()[0] - want).abs() < 1e-14, "s={s}");
        }
        assert_eq!(seg.eval(0.0).unwrap()[0], 0.5);
    }

    #[test]
    fn segment_concat_round_trip() {
        let phi = PiecewisePoly::new(
            1,
            vec![-1.0, -0.4, 0.0],
            vec![vec![vec![2.0, 1.0]], vec![vec![-1.0, 0.0, 3.0]]],
        )
        .unwrap();
        let x = poly1(5.0, 6.0, &[4.0, -2.0]);
        let path = concat(phi.clone(), 5.0, x.clone()).unwrap();
        let seg = path.segment(5.0).unwrap();
        for i in 0..100 {
            let s = -1.0 + 0.99 * i as f64 / 100.0;
            assert!((seg.eval(s).unwrap()[0] - phi.eval(s).unwrap()[0]).abs() < 1e-14);
        }
        assert_eq!(seg.eval(0.0).unwrap()[0], x.eval(5.0).unwrap()[0]);
    }

    #[test]
    fn segment_out_of_range() {
        let phi = poly1(-1.0, 0.0, &[1.0]);
        let x = poly1(0.0, 1.0, &[1.0]);
        let path = concat(phi, 0.0, x).unwrap();
        assert!(path.segment(-0.1).is_err());
        assert!(path.segment(1.1).is_err());
    }

    #[test]
    fn perturbation_rules() {
        let ic = InitialCondition::constant(1.0, &[1.0]).unwrap();
        // no points → identical
        let same = ic.perturb_zero_measure(&[], &[]).unwrap();
        assert_eq!(same, ic);
        // point at -0.5 with value 100 → ess sup still 1
        let p = ic.perturb_zero_measure(&[-0.5], &[vec![100.0]]).unwrap();
        assert_eq!(p.phi.ess_sup_norm(), 1.0);
        assert_eq!(p.phi.eval(-0.5).unwrap()[0], 100.0);
        // point at 0 rejected
        assert!(matches!(
            ic.perturb_zero_measure(&[0.0], &[vec![5.0]]),
            Err(HistoryError::PerturbationAtEndpoint(_))
        ));
        // point outside (-delta, 0) rejected
        assert!(ic.perturb_zero_measure(&[-1.0], &[vec![5.0]]).is_err());
    }

    #[test]
    fn integrate_component_exact() {
        // s^2 on [-1, 0]: local u = s + 1 → (u-1)^2 = 1 - 2u + u^2, integral 1/3
        let f = poly1(-1.0, 0.0, &[1.0, -2.0, 1.0]);
        assert!((f.integrate_component(0, -1.0, 0.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((f.integrate_component(0, -0.5, 0.0).unwrap() - 1.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn linear_combination_refines() {
        let f = PiecewisePoly::new(1, vec![0.0, 1.0, 2.0], vec![vec![vec![1.0]], vec![vec![2.0]]]).unwrap();
        let g = PiecewisePoly::new(1, vec![0.0, 0.5, 2.0], vec![vec![vec![3.0]], vec![vec![4.0]]]).unwrap();
        let d = f.sub(&g).unwrap();
        assert_eq!(d.eval(0.25).unwrap()[0], -2.0);
        assert_eq!(d.eval(0.75).unwrap()[0], -3.0);
        assert_eq!(d.eval(1.5).unwrap()[0], -2.0);
    }

    #[test]
    fn serialization_round_trip_exact() {
        let f = PiecewisePoly::new(
            2,
            vec![-1.0, -0.3333333333333333, 0.0],
            vec![
                vec![vec![1.0 / 3.0, std::f64::consts::PI], vec![0.1, 0.2, 0.3]],
                vec![vec![-2.5e-13], vec![7.0, 1e17]],
            ],
        )
        .unwrap()
        .with_annotations(vec![(-0.5, vec![1e-300, 2.0])]);
        let text = f.to_text();
        let g = PiecewisePoly::from_text(&text).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn degenerate_pieces_merge() {
        let eps = 1e-16;
        let f = PiecewisePoly::new(
            1,
            vec![0.0, eps, 1.0],
            vec![vec![vec![5.0]], vec![vec![1.0]]],
        )
        .unwrap();
        assert_eq!(f.pieces().len(), 1);
        assert_eq!(f.eval(0.5).unwrap()[0], 1.0);
    }

    #[test]
    fn poly_shift_is_taylor_shift() {
        // p(u) = 1 + 2u + 3u^2, q(v) = p(v + 1) = 6 + 8v + 3v^2
        let q = poly_shift(&[1.0, 2.0, 3.0], 1.0);
        assert_eq!(q, vec![6.0, 8.0, 3.0]);
    }

    #[test]
    fn root_isolation_degree_five() {
        // p(u) = (u-0.1)(u-0.5)(u-0.9) * (u^2 + 1)
        let p = {
            let mut p = vec![1.0];
            for r in [0.1, 0.5, 0.9] {
                let mut q = vec![0.0; p.len() + 1];
                for (i, &c) in p.iter().enumerate() {
                    q[i + 1] += c;
                    q[i] -= r * c;
                }
                p = q;
            }
            // multiply by u^2 + 1
            let mut q = vec![0.0; p.len() + 2];
            for (i, &c) in p.iter().enumerate() {
                q[i] += c;
                q[i + 2] += c;
            }
            q
        };
        let roots = poly_roots_in(&p, 0.0, 1.0, 1e-14);
        assert_eq!(roots.len(), 3);
        for (r, want) in roots.iter().zip([0.1, 0.5, 0.9]) {
            assert!((r - want).abs() < 1e-12);
        }
    }
}
