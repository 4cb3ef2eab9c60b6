//! Switching functions `g_i(t) = ⟨ζ, e^{±At} b_i⟩`: evaluation, zeros with
//! multiplicities, and sign patterns.
//!
//! Roots are isolated cell by cell on a uniform grid. Inside a cell the critical
//! points of `g^{(m)}` are the sign changes of `g^{(m+1)}`, found recursively,
//! so every monotone piece holds at most one crossing. A cheap derivative bound
//! discards cells whose value cannot reach zero before any recursion happens.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{dot, Direction, Flow, MAXN, V};
use crate::linalg::expm;
use crate::sphere::random_unit;
use crate::system::LinearSystem;

/// Relative threshold below which an extremum of `g` counts as a touching zero.
pub const EPS_ZERO: f64 = 1e-9;
/// Relative derivative threshold for multiplicities.
pub const EPS_MULT: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Zero {
    pub t: f64,
    pub multiplicity: usize,
}

/// Open interval on which `g` has the constant sign `sign`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub start: f64,
    pub end: f64,
    pub sign: i8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchingProfile {
    pub channel: usize,
    pub direction: Direction,
    pub horizon: f64,
    pub zeros: Vec<Zero>,
    /// Sign of `g` as `t → 0⁺`.
    pub initial_sign: i8,
    pub pattern: Vec<Piece>,
}

impl SwitchingProfile {
    /// Odd-multiplicity zeros strictly inside `(0, horizon)`.
    pub fn switch_times(&self) -> Vec<f64> {
        self.zeros
            .iter()
            .filter(|z| z.multiplicity % 2 == 1 && z.t > 0.0 && z.t < self.horizon)
            .map(|z| z.t)
            .collect()
    }

    /// Sign of `g` at `t` read from the pattern; `0` on zeros.
    pub fn sign_at(&self, t: f64) -> i8 {
        if self.zeros.iter().any(|z| z.t == t) {
            return 0;
        }
        self.pattern
            .iter()
            .find(|p| p.start <= t && t <= p.end)
            .map(|p| p.sign)
            .unwrap_or(0)
    }
}

/// `⟨ζ, e^{±At} b_i⟩` through a direct matrix exponential.
pub fn switching_eval(
    sys: &LinearSystem,
    zeta: &DVector<f64>,
    i: usize,
    t: f64,
    dir: Direction,
) -> Result<f64> {
    sys.check_channel(i)?;
    check_costate(sys, zeta)?;
    let e = expm(sys.a(), dir.sign() * t)?;
    Ok(zeta.dot(&(e * sys.column(i))))
}

pub(crate) fn check_costate(sys: &LinearSystem, zeta: &DVector<f64>) -> Result<()> {
    if zeta.len() != sys.n() {
        return Err(Error::Dimension(format!("costate has length {}, N = {}", zeta.len(), sys.n())));
    }
    if zeta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("costate".into()));
    }
    if zeta.norm() == 0.0 {
        return Err(Error::ZeroCostate);
    }
    Ok(())
}

pub fn find_zeros(
    sys: &LinearSystem,
    zeta: &DVector<f64>,
    i: usize,
    tau: f64,
    dir: Direction,
) -> Result<SwitchingProfile> {
    sys.require_normal()?;
    sys.check_channel(i)?;
    check_costate(sys, zeta)?;
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::Invalid(format!("horizon must be finite and >= 0, got {tau}")));
    }
    let flow = sys.flow(dir);
    let zs = flow.costate_powers(zeta.as_slice(), sys.n() + 1);
    let sc = Scanner::new(flow, &zs, i, sys);
    Ok(sc.profile(tau, dir))
}

/// Per-channel sign patterns (the map `ζ ↦ sign g(·, ζ)`).
pub fn sign_pattern(
    sys: &LinearSystem,
    zeta: &DVector<f64>,
    tau: f64,
    dir: Direction,
) -> Result<Vec<SwitchingProfile>> {
    (0..sys.m()).map(|i| find_zeros(sys, zeta, i, tau, dir)).collect()
}

/// Validated window length `τ̄` (cached on the system).
pub fn zero_window_bound(sys: &LinearSystem) -> f64 {
    sys.tau_bar()
}

// ---------------------------------------------------------------------------
// scanning internals

const DEPTH: usize = MAXN + 2;
type D = [f64; DEPTH];

#[derive(Clone, Copy, Debug)]
pub(crate) struct Pt {
    pub t: f64,
    pub v: V,
    pub d: D,
}

/// Sign change of `g` located to working precision.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Crossing {
    pub t: f64,
    pub v: V,
    pub slope: f64,
}

pub(crate) struct Scanner<'a> {
    flow: &'a Flow,
    zs: &'a [V],
    zn: Vec<f64>,
    i: usize,
    n: usize,
    top: usize,
    gnorm: f64,
    a_norm: f64,
    b_norm: f64,
}

impl<'a> Scanner<'a> {
    pub fn new(flow: &'a Flow, zs: &'a [V], i: usize, sys: &LinearSystem) -> Self {
        let n = flow.n;
        let zn = zs.iter().map(|z| z[..n].iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
        Scanner {
            flow,
            zs,
            zn,
            i,
            n,
            top: n.min(zs.len() - 2),
            gnorm: sys.a_norm(),
            a_norm: sys.a_norm(),
            b_norm: sys.column(i).norm(),
        }
    }

    fn from_v(&self, t: f64, v: V) -> Pt {
        let mut d = [0.0; DEPTH];
        for m in 0..=(self.top + 1) {
            d[m] = dot(&self.zs[m], &v, self.n);
        }
        Pt { t, v, d }
    }

    pub fn point(&self, t: f64) -> Pt {
        let mut v = [0.0; MAXN];
        self.flow.eval(self.i, t, &mut v, None);
        self.from_v(t, v)
    }

    fn node(&self, j: usize, tau: f64) -> Pt {
        let t = j as f64 * self.flow.step;
        if t < tau && j < self.flow.node_count() {
            let mut v = [0.0; MAXN];
            v[..self.n].copy_from_slice(self.flow.node_v(self.i, j));
            self.from_v(t, v)
        } else {
            self.point(t.min(tau))
        }
    }

    /// True when `g^{(m)}` cannot vanish within distance `h` of `p`.
    fn excluded(&self, m: usize, p: &Pt, h: f64) -> bool {
        let vn = p.v[..self.n].iter().map(|x| x * x).sum::<f64>().sqrt();
        let bound = self.zn[m + 1] * vn * (self.gnorm * h).exp() * h;
        p.d[m].abs() > bound * (1.0 + 1e-9) + 1e-300
    }

    /// Sign changes of `g^{(m)}` strictly inside `(a.t, b.t)`.
    fn sign_roots(&self, m: usize, a: &Pt, b: &Pt, out: &mut Vec<Pt>) {
        let h = b.t - a.t;
        if h <= 0.0 || self.excluded(m, a, h) || self.excluded(m, b, h) {
            return;
        }
        let mut brk = Vec::new();
        if m < self.top {
            self.sign_roots(m + 1, a, b, &mut brk);
        }
        let mut prev = *a;
        for p in brk.into_iter().chain(std::iter::once(*b)) {
            if prev.d[m] * p.d[m] < 0.0 {
                out.push(self.refine(m, &prev, &p));
            }
            prev = p;
        }
    }

    /// Safeguarded Newton on `g^{(m)}` inside a sign-changing bracket.
    fn refine(&self, m: usize, a: &Pt, b: &Pt) -> Pt {
        let (mut lo, mut hi) = (a.t, b.t);
        let neg_at_lo = a.d[m] < 0.0;
        let mut x = if a.d[m + 1] != 0.0 {
            let nx = a.t - a.d[m] / a.d[m + 1];
            if nx > lo && nx < hi { nx } else { 0.5 * (lo + hi) }
        } else {
            0.5 * (lo + hi)
        };
        let mut best = self.point(x);
        for _ in 0..200 {
            let f = best.d[m];
            if f == 0.0 {
                break;
            }
            if (f < 0.0) == neg_at_lo {
                lo = x;
            } else {
                hi = x;
            }
            let df = best.d[m + 1];
            let mut nx = if df != 0.0 { x - f / df } else { f64::NAN };
            if !(nx > lo && nx < hi) || (nx - x).abs() > 0.5 * (hi - lo) {
                nx = 0.5 * (lo + hi);
            }
            if (hi - lo) <= 4.0 * f64::EPSILON * x.abs().max(1e-300) || nx == x {
                break;
            }
            x = nx;
            best = self.point(x);
            if (hi - lo) <= 2.0 * f64::EPSILON * x.abs() {
                break;
            }
        }
        best
    }

    /// Sign changes of `g` on `(0, tau)`, plus exact node zeros.
    pub fn crossings(&self, tau: f64) -> Vec<Crossing> {
        let mut out = Vec::new();
        if tau <= 0.0 {
            return out;
        }
        let step = self.flow.step;
        let cells = (tau / step).ceil().max(1.0) as usize;
        let mut a = self.node(0, tau);
        let mut roots = Vec::new();
        for j in 1..=cells {
            let b = self.node(j, tau);
            let h = b.t - a.t;
            if a.d[0] == 0.0 && a.t > 0.0 {
                out.push(Crossing { t: a.t, v: a.v, slope: a.d[1] });
            }
            if !(self.excluded(0, &a, h) || self.excluded(0, &b, h)) {
                roots.clear();
                self.sign_roots(0, &a, &b, &mut roots);
                for p in &roots {
                    out.push(Crossing { t: p.t, v: p.v, slope: p.d[1] });
                }
            }
            a = b;
        }
        out
    }

    fn newton_near(&self, m: usize, t0: f64, radius: f64) -> Option<f64> {
        let mut x = t0;
        let mut p = self.point(x);
        for _ in 0..60 {
            let f = p.d[m];
            let df = p.d[m + 1];
            if f == 0.0 || df == 0.0 {
                break;
            }
            let nx = x - f / df;
            if !nx.is_finite() || (nx - t0).abs() > radius {
                return None;
            }
            if (nx - x).abs() <= 2.0 * f64::EPSILON * nx.abs().max(1.0) {
                x = nx;
                break;
            }
            x = nx;
            p = self.point(x);
        }
        Some(x)
    }

    /// Smallest `m` with `|g^{(m)}| > ε_mult`, relocating to the root of
    /// `g^{(m-1)}` before each test.
    fn multiplicity(&self, t0: f64) -> (f64, usize) {
        let cap = (self.n - 1).max(1);
        let radius = 0.5 * self.flow.step;
        let mut t = t0;
        for m in 1..=cap {
            if let Some(nt) = self.newton_near(m - 1, t, radius) {
                t = nt;
            }
            let p = self.point(t);
            let eps = EPS_MULT * self.zn[0] * self.a_norm.powi(m as i32) * self.b_norm;
            if p.d[m].abs() > eps {
                return (t, m);
            }
        }
        (t, cap)
    }

    fn sign_of(&self, t: f64) -> i8 {
        let p = self.point(t);
        sgn(p.d[0])
    }

    pub fn profile(&self, tau: f64, dir: Direction) -> SwitchingProfile {
        let step = self.flow.step;
        let cells = if tau > 0.0 { (tau / step).ceil().max(1.0) as usize } else { 0 };
        let nodes: Vec<Pt> = (0..=cells).map(|j| self.node(j, tau)).collect();
        let gmax = nodes.iter().fold(0.0, |m: f64, p| m.max(p.d[0].abs()));
        let eps0 = EPS_ZERO * gmax;

        let mut cand: Vec<f64> = Vec::new();
        for p in &nodes {
            if p.d[0].abs() <= eps0 {
                cand.push(p.t);
            }
        }
        let mut crit = Vec::new();
        for w in nodes.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let h = b.t - a.t;
            if h <= 0.0 || self.excluded(0, a, h) || self.excluded(0, b, h) {
                continue;
            }
            crit.clear();
            if self.top >= 1 {
                self.sign_roots(1, a, b, &mut crit);
            }
            let mut prev = *a;
            for p in crit.iter().copied().chain(std::iter::once(*b)) {
                if prev.d[0] * p.d[0] < 0.0 {
                    cand.push(self.refine(0, &prev, &p).t);
                }
                prev = p;
            }
            for c in &crit {
                if c.d[0].abs() <= eps0 {
                    cand.push(c.t);
                }
            }
        }

        let mut zeros: Vec<Zero> = cand
            .into_iter()
            .map(|t| {
                let (t, m) = self.multiplicity(t);
                Zero { t, multiplicity: m }
            })
            .filter(|z| z.t >= -1e-12 && z.t <= tau + 1e-12)
            .map(|z| Zero { t: z.t.clamp(0.0, tau), ..z })
            .collect();
        zeros.sort_by(|a, b| a.t.total_cmp(&b.t));
        let mut merged: Vec<Zero> = Vec::with_capacity(zeros.len());
        for z in zeros {
            match merged.last_mut() {
                Some(last) if (z.t - last.t).abs() <= 1e-9 * (1.0 + z.t.abs()) => {
                    if z.multiplicity > last.multiplicity {
                        *last = z;
                    }
                }
                _ => merged.push(z),
            }
        }

        let cap = (self.n - 1).max(1);
        let (zeros, pattern) = self.consistent_pattern(merged, tau, cap);
        let initial_sign = match pattern.first() {
            Some(p) => p.sign,
            None => self.limit_sign_at_zero(),
        };
        SwitchingProfile { channel: self.i, direction: dir, horizon: tau, zeros, initial_sign, pattern }
    }

    /// Builds the sign pattern and makes interior multiplicities agree with
    /// the observed sign flips.
    fn consistent_pattern(&self, mut zeros: Vec<Zero>, tau: f64, cap: usize) -> (Vec<Zero>, Vec<Piece>) {
        loop {
            let mut cuts = vec![0.0];
            cuts.extend(zeros.iter().map(|z| z.t).filter(|&t| t > 0.0 && t < tau));
            cuts.push(tau);
            let mut pattern: Vec<Piece> = Vec::new();
            if tau > 0.0 {
                for w in cuts.windows(2) {
                    let mid = 0.5 * (w[0] + w[1]);
                    let mut s = self.sign_of(mid);
                    if s == 0 {
                        s = self.sign_of(w[0] + 0.25 * (w[1] - w[0]));
                    }
                    pattern.push(Piece { start: w[0], end: w[1], sign: s });
                }
            }
            let mut drop = None;
            let mut k = 0;
            for z in zeros.iter_mut() {
                if !(z.t > 0.0 && z.t < tau) {
                    continue;
                }
                let flips = pattern[k].sign != pattern[k + 1].sign;
                k += 1;
                let odd = z.multiplicity % 2 == 1;
                if flips != odd {
                    if z.multiplicity < cap {
                        z.multiplicity += 1;
                    } else if z.multiplicity > 1 {
                        z.multiplicity -= 1;
                    } else {
                        drop = Some(z.t);
                        break;
                    }
                }
            }
            match drop {
                Some(t) => zeros.retain(|z| z.t != t),
                None => return (zeros, pattern),
            }
        }
    }

    fn limit_sign_at_zero(&self) -> i8 {
        let p = self.point(0.0);
        for m in 0..=self.top {
            let eps = EPS_MULT * self.zn[0] * self.a_norm.powi(m as i32) * self.b_norm;
            if p.d[m].abs() > eps.max(1e-300) {
                return sgn(p.d[m]);
            }
        }
        sgn(p.d[0])
    }
}

#[inline]
pub(crate) fn sgn(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

// ---------------------------------------------------------------------------
// window bound

const WINDOW_SAMPLES: usize = 256;
const WINDOW_SEED: u64 = 0x7a0b_a5e1;

/// Candidate from the spectrum, halved until brute-force sampling finds no
/// window of that length holding `N` or more zeros.
pub(crate) fn estimate_zero_window(sys: &LinearSystem) -> f64 {
    let eig = sys.a().clone().complex_eigenvalues();
    let omega = eig.iter().fold(0.0, |m: f64, l| m.max(l.im.abs()));
    let scale = sys.a_norm().max(1.0);
    let mut cand: f64 = if omega <= 1e-12 * scale {
        1.0
    } else {
        (0.9 * std::f64::consts::PI / omega).min(1.0)
    };
    for _ in 0..30 {
        if window_ok(sys, cand) {
            return cand;
        }
        cand *= 0.5;
    }
    cand
}

/// Dense-sampling check of the zero-count bound on `[0, 4τ]`.
pub(crate) fn window_ok(sys: &LinearSystem, tau: f64) -> bool {
    let n = sys.n();
    let per = 200usize;
    let h = tau / per as f64;
    let total = 4 * per;
    let mut rng = ChaCha8Rng::seed_from_u64(WINDOW_SEED);
    for dir in [Direction::Forward, Direction::Reversed] {
        let e = match expm(sys.a(), dir.sign() * h) {
            Ok(e) => e,
            Err(_) => return false,
        };
        for _ in 0..WINDOW_SAMPLES {
            let zeta = random_unit(&mut rng, n);
            for b in sys.columns() {
                let mut v = b.clone();
                let mut g = Vec::with_capacity(total + 1);
                for _ in 0..=total {
                    g.push(zeta.dot(&v));
                    v = &e * v;
                }
                let events = sampled_zero_events(&g);
                for (k, &t0) in events.iter().enumerate() {
                    let count = events[k..].iter().take_while(|&&t| t - t0 <= per).count();
                    if count >= n {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Sample indices of zeros of a densely sampled function; touching minima
/// count twice.
pub(crate) fn sampled_zero_events(g: &[f64]) -> Vec<usize> {
    let gmax = g.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    let mut ev = Vec::new();
    for k in 1..g.len() {
        if g[k - 1] * g[k] < 0.0 || (g[k] == 0.0 && g[k - 1] != 0.0) {
            ev.push(k);
        }
        if k + 1 < g.len() {
            let (a, b, c) = (g[k - 1].abs(), g[k].abs(), g[k + 1].abs());
            if b < a && b < c && b < 1e-6 * gmax && g[k - 1] * g[k + 1] > 0.0 && g[k] * g[k - 1] > 0.0 {
                ev.push(k);
                ev.push(k);
            }
        }
    }
    ev
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use std::f64::consts::PI;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    #[test]
    fn eval_examples() {
        let di = catalog::linear("double-integrator").unwrap();
        for &t in &[0.0, 0.4, 2.5] {
            let g = switching_eval(&di, &v(&[1.0, 0.0]), 0, t, Direction::Reversed).unwrap();
            assert!((g + t).abs() < 1e-15);
        }
        assert_eq!(switching_eval(&di, &v(&[0.0, 1.0]), 0, 0.0, Direction::Forward).unwrap(), 1.0);
        let ho = catalog::linear("harmonic").unwrap();
        let g = switching_eval(&ho, &v(&[1.0, 0.0]), 0, 1.1, Direction::Reversed).unwrap();
        assert!((g + 1.1f64.sin()).abs() < 1e-14);
        assert!(matches!(
            switching_eval(&ho, &v(&[1.0, 0.0]), 3, 1.0, Direction::Reversed),
            Err(Error::Channel { .. })
        ));
    }

    #[test]
    fn harmonic_zeros_are_multiples_of_pi() {
        let ho = catalog::linear("harmonic").unwrap();
        let p = find_zeros(&ho, &v(&[1.0, 0.0]), 0, 10.0, Direction::Reversed).unwrap();
        let ts: Vec<f64> = p.zeros.iter().map(|z| z.t).collect();
        assert_eq!(ts.len(), 4);
        for (k, t) in ts.iter().enumerate() {
            assert!((t - k as f64 * PI).abs() < 1e-10, "{ts:?}");
        }
        assert!(p.zeros.iter().all(|z| z.multiplicity == 1));
        assert_eq!(p.initial_sign, -1);
    }

    #[test]
    fn linear_forward_zero_at_origin() {
        let di = catalog::linear("double-integrator").unwrap();
        let p = find_zeros(&di, &v(&[1.0, 0.0]), 0, 1.0, Direction::Forward).unwrap();
        assert_eq!(p.zeros, vec![Zero { t: 0.0, multiplicity: 1 }]);
        assert_eq!(p.initial_sign, 1);
        let q = find_zeros(&di, &v(&[-1.0, 0.0]), 0, 1.0, Direction::Forward).unwrap();
        assert_eq!(q.initial_sign, -1);
        assert!(q.switch_times().is_empty());
    }

    #[test]
    fn triple_integrator_quadratic() {
        let ti = catalog::linear("triple-integrator").unwrap();
        let z = v(&[1.0, -1.0, 0.0]) / 2f64.sqrt();
        let p = find_zeros(&ti, &z, 0, 3.0, Direction::Forward).unwrap();
        assert_eq!(p.zeros.len(), 2);
        assert!(p.zeros[0].t.abs() < 1e-12);
        assert!((p.zeros[1].t - 2.0).abs() < 1e-10);
        assert!(p.zeros.iter().all(|z| z.multiplicity == 1));
        assert_eq!(p.initial_sign, -1);
        assert_eq!(p.pattern.len(), 2);
        assert_eq!((p.pattern[0].sign, p.pattern[1].sign), (-1, 1));
    }

    #[test]
    fn double_zero_is_detected_without_sign_flip() {
        // g(t) = ⟨ζ, (t²/2, t, 1)⟩ = (t - 1)² / 2 for ζ = (1, -1, 1/2).
        let ti = catalog::linear("triple-integrator").unwrap();
        let z = v(&[1.0, -1.0, 0.5]);
        let p = find_zeros(&ti, &z, 0, 3.0, Direction::Forward).unwrap();
        assert_eq!(p.zeros.len(), 1, "{:?}", p.zeros);
        assert!((p.zeros[0].t - 1.0).abs() < 1e-7);
        assert_eq!(p.zeros[0].multiplicity, 2);
        assert!(p.switch_times().is_empty());
        assert!(p.pattern.iter().all(|q| q.sign == 1));
    }

    #[test]
    fn triple_zero_in_fourth_order_chain() {
        // 4-chain: g = ⟨ζ, (t³/6, t²/2, t, 1)⟩ = (t - 1)³ / 6 with ζ = (1, -1, 1/2, -1/6).
        use nalgebra::DMatrix;
        let mut a = DMatrix::zeros(4, 4);
        for r in 0..3 {
            a[(r, r + 1)] = 1.0;
        }
        let mut b = DMatrix::zeros(4, 1);
        b[(3, 0)] = 1.0;
        let sys = LinearSystem::new("chain4", a, b).unwrap();
        let z = v(&[1.0, -1.0, 0.5, -1.0 / 6.0]);
        let p = find_zeros(&sys, &z, 0, 2.0, Direction::Forward).unwrap();
        assert_eq!(p.zeros.len(), 1, "{:?}", p.zeros);
        assert_eq!(p.zeros[0].multiplicity, 3);
        assert!((p.zeros[0].t - 1.0).abs() < 1e-9);
        assert_eq!(p.switch_times().len(), 1);
    }

    #[test]
    fn window_bounds() {
        for name in catalog::LINEAR {
            let s = catalog::linear(name).unwrap();
            let tb = zero_window_bound(&s);
            assert!(tb > 0.0 && tb <= 1.0);
        }
        assert!(zero_window_bound(&catalog::linear("harmonic").unwrap()) <= PI);
    }

    #[test]
    fn non_normal_is_refused() {
        let s = LinearSystem::new(
            "id",
            nalgebra::DMatrix::identity(2, 2),
            nalgebra::DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
        )
        .unwrap();
        assert!(matches!(
            find_zeros(&s, &v(&[1.0, 0.0]), 0, 1.0, Direction::Forward),
            Err(Error::NotNormal(_))
        ));
    }
}
