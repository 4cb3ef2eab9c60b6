//! Planar control-affine systems `ẋ = F(x) + Σ G_i(x) u_i`, `|u_i| ≤ 1`.
//!
//! Extremals run the reversed dynamics from the origin,
//! `ẋ = -F - Σ G_i ũ_i` with `ũ_i = sign g⁺_i`, `g⁺_i = ⟨-G_i(x), λ⟩`, and the
//! adjoint `λ̇ = (DF + Σ ũ_i DG_i)ᵀ λ`. The Hamiltonian
//! `h = ⟨λ, F⟩ - Σ |⟨λ, G_i⟩|` is constant along them.

pub mod expr;

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::system::LinearSystem;
use expr::Expr;

pub type P = [f64; 2];
type M2 = [[f64; 2]; 2];

const F0_TOL: f64 = 1e-12;
const DG0_TOL: f64 = 1e-10;
const RANK_TOL: f64 = 1e-10;
/// Smallest accepted `|ġ⁺| / |λ|` at a zero of `g⁺`.
pub const GDOT_MIN: f64 = 1e-9;
const EVENT_TOL: f64 = 1e-10;
const MAX_EVENTS: usize = 100_000;
/// Knot stride of dense extremal paths, in integrator steps.
const KNOT_STRIDE: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanarDocument {
    #[serde(rename = "F")]
    pub f: Vec<Value>,
    #[serde(rename = "G")]
    pub g: Vec<Vec<Value>>,
    #[serde(rename = "box")]
    pub bounds: [[f64; 2]; 2],
}

#[derive(Clone, Debug)]
pub struct PlanarSystem {
    doc: PlanarDocument,
    f: [Expr; 2],
    /// `df[r][c] = ∂F_r/∂x_c`.
    df: [[Expr; 2]; 2],
    g: Vec<[Expr; 2]>,
    dg: Vec<[[Expr; 2]; 2]>,
    lipschitz: f64,
    step: f64,
    horizon: OnceLock<HorizonEstimate>,
}

fn pair(v: &[Value], what: &str) -> Result<[Expr; 2]> {
    if v.len() != 2 {
        return Err(Error::Expression(format!("{what} needs 2 components, got {}", v.len())));
    }
    Ok([Expr::parse(&v[0])?, Expr::parse(&v[1])?])
}

fn jac(e: &[Expr; 2]) -> [[Expr; 2]; 2] {
    [[e[0].diff(0), e[0].diff(1)], [e[1].diff(0), e[1].diff(1)]]
}

fn eval2(e: &[Expr; 2], x: &P) -> P {
    [e[0].eval(x), e[1].eval(x)]
}

fn eval22(e: &[[Expr; 2]; 2], x: &P) -> M2 {
    [[e[0][0].eval(x), e[0][1].eval(x)], [e[1][0].eval(x), e[1][1].eval(x)]]
}

fn dot(a: &P, b: &P) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn norm(a: &P) -> f64 {
    a[0].hypot(a[1])
}

fn mv(m: &M2, v: &P) -> P {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

fn mtv(m: &M2, v: &P) -> P {
    [m[0][0] * v[0] + m[1][0] * v[1], m[0][1] * v[0] + m[1][1] * v[1]]
}

fn frob(m: &M2) -> f64 {
    (m[0][0].powi(2) + m[0][1].powi(2) + m[1][0].powi(2) + m[1][1].powi(2)).sqrt()
}

fn cross(a: &P, b: &P) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

pub fn load_planar(doc: &PlanarDocument) -> Result<PlanarSystem> {
    let f = pair(&doc.f, "F")?;
    if doc.g.is_empty() || doc.g.len() > 2 {
        return Err(Error::Expression(format!("G needs 1 or 2 input fields, got {}", doc.g.len())));
    }
    let g = doc.g.iter().map(|gi| pair(gi, "G_i")).collect::<Result<Vec<_>>>()?;
    for (a, b) in doc.bounds.iter().enumerate() {
        if !(b[0].is_finite() && b[1].is_finite() && b[0] < 0.0 && 0.0 < b[1]) {
            return Err(Error::Invalid(format!("box axis {a} must contain the origin strictly, got {b:?}")));
        }
    }
    let df = jac(&f);
    let dg: Vec<_> = g.iter().map(jac).collect();
    let zero = [0.0, 0.0];
    let f0 = eval2(&f, &zero);
    if norm(&f0) > F0_TOL {
        return Err(Error::Assumption { number: 2, detail: format!("F(0) = {f0:?} is not zero") });
    }
    let df0 = eval22(&df, &zero);
    for (i, gi) in g.iter().enumerate() {
        let g0 = eval2(gi, &zero);
        let dfg = mv(&df0, &g0);
        let det = cross(&g0, &dfg);
        if !(det.abs() > RANK_TOL * (1.0 + norm(&g0) * norm(&dfg))) {
            return Err(Error::Assumption {
                number: 3,
                detail: format!("rank[G_{}(0), DF(0)G_{}(0)] < 2 (det = {det:e})", i + 1, i + 1),
            });
        }
    }
    for (i, dgi) in dg.iter().enumerate() {
        let d0 = eval22(dgi, &zero);
        if frob(&d0) > DG0_TOL {
            return Err(Error::Assumption { number: 4, detail: format!("DG_{}(0) = {d0:?} is not zero", i + 1) });
        }
    }
    let mut sys = PlanarSystem {
        doc: doc.clone(),
        f,
        df,
        g,
        dg,
        lipschitz: 0.0,
        step: 0.0,
        horizon: OnceLock::new(),
    };
    sys.lipschitz = sys.estimate_lipschitz();
    sys.step = 1e-4 / (1.0 + sys.lipschitz);
    Ok(sys)
}

impl PlanarSystem {
    pub fn document(&self) -> &PlanarDocument {
        &self.doc
    }

    pub fn inputs(&self) -> usize {
        self.g.len()
    }

    pub fn bounds(&self) -> [[f64; 2]; 2] {
        self.doc.bounds
    }

    pub fn in_box(&self, x: &P) -> bool {
        (0..2).all(|a| x[a] >= self.doc.bounds[a][0] && x[a] <= self.doc.bounds[a][1])
    }

    /// Sampled bound on the Lipschitz constant of `F + Σ G_i u_i` over the box.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Integrator step `1e-4 / (1 + L)`.
    pub fn step(&self) -> f64 {
        self.step
    }

    fn estimate_lipschitz(&self) -> f64 {
        const K: usize = 41;
        let b = self.doc.bounds;
        let mut l: f64 = 0.0;
        for i in 0..K {
            for j in 0..K {
                let x = [
                    b[0][0] + (b[0][1] - b[0][0]) * i as f64 / (K - 1) as f64,
                    b[1][0] + (b[1][1] - b[1][0]) * j as f64 / (K - 1) as f64,
                ];
                let mut v = frob(&self.df_at(&x));
                for c in 0..self.inputs() {
                    v += frob(&self.dg_at(c, &x));
                }
                l = l.max(v);
            }
        }
        l
    }

    pub fn f_at(&self, x: &P) -> P {
        eval2(&self.f, x)
    }

    pub fn g_at(&self, i: usize, x: &P) -> P {
        eval2(&self.g[i], x)
    }

    pub fn df_at(&self, x: &P) -> M2 {
        eval22(&self.df, x)
    }

    pub fn dg_at(&self, i: usize, x: &P) -> M2 {
        eval22(&self.dg[i], x)
    }

    pub fn hamiltonian(&self, x: &P, lambda: &P) -> f64 {
        let mut h = dot(lambda, &self.f_at(x));
        for i in 0..self.inputs() {
            h -= dot(lambda, &self.g_at(i, x)).abs();
        }
        h
    }

    /// `g⁺_i = ⟨-G_i(x), λ⟩`.
    pub fn switching(&self, i: usize, x: &P, lambda: &P) -> f64 {
        -dot(&self.g_at(i, x), lambda)
    }

    fn rhs(&self, x: &P, l: &P, u: &[f64]) -> (P, P) {
        let f = self.f_at(x);
        let mut dx = [-f[0], -f[1]];
        let mut a = self.df_at(x);
        for (i, &ui) in u.iter().enumerate() {
            let g = self.g_at(i, x);
            dx[0] -= ui * g[0];
            dx[1] -= ui * g[1];
            let d = self.dg_at(i, x);
            for r in 0..2 {
                for c in 0..2 {
                    a[r][c] += ui * d[r][c];
                }
            }
        }
        (dx, mtv(&a, l))
    }

    /// `d/dt g⁺_i` under control `u`.
    pub fn switching_rate(&self, i: usize, x: &P, lambda: &P, u: &[f64]) -> f64 {
        let (dx, dl) = self.rhs(x, lambda, u);
        -dot(&mv(&self.dg_at(i, x), &dx), lambda) - dot(&self.g_at(i, x), &dl)
    }

    fn rk4(&self, x: &P, l: &P, u: &[f64], h: f64) -> (P, P) {
        let add = |a: &P, b: &P, s: f64| [a[0] + s * b[0], a[1] + s * b[1]];
        let (k1x, k1l) = self.rhs(x, l, u);
        let (k2x, k2l) = self.rhs(&add(x, &k1x, h / 2.0), &add(l, &k1l, h / 2.0), u);
        let (k3x, k3l) = self.rhs(&add(x, &k2x, h / 2.0), &add(l, &k2l, h / 2.0), u);
        let (k4x, k4l) = self.rhs(&add(x, &k3x, h), &add(l, &k3l, h), u);
        let c = |a: &P, k1: &P, k2: &P, k3: &P, k4: &P| {
            [
                a[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
                a[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
            ]
        };
        (c(x, &k1x, &k2x, &k3x, &k4x), c(l, &k1l, &k2l, &k3l, &k4l))
    }

    /// Linearization `ẋ = DF(0) x + G(0) u`.
    pub fn linearization(&self) -> Result<LinearSystem> {
        let zero = [0.0, 0.0];
        let a = self.df_at(&zero);
        let m = self.inputs();
        let mut b = DMatrix::zeros(2, m);
        for i in 0..m {
            let g = self.g_at(i, &zero);
            b[(0, i)] = g[0];
            b[(1, i)] = g[1];
        }
        LinearSystem::new("linearization", DMatrix::from_row_slice(2, 2, &[a[0][0], a[0][1], a[1][0], a[1][1]]), b)
    }

    /// Validated small-time horizon, computed on first use.
    pub fn horizon(&self) -> &HorizonEstimate {
        self.horizon.get_or_init(|| estimate_horizon(self))
    }
}

// ---------------------------------------------------------------------------
// integration

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub t: f64,
    pub channel: usize,
    /// `ġ⁺` just before the zero (at `t = 0`, the rate that fixes the first sign).
    pub gdot: f64,
}

struct Step<'a> {
    t: f64,
    x: P,
    l: P,
    u: &'a [f64],
    event: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stop {
    Horizon,
    LeftBox,
}

fn initial_control(sys: &PlanarSystem, x: &P, l: &P) -> Result<(Vec<f64>, Vec<SwitchEvent>)> {
    let m = sys.inputs();
    let mut u = vec![0.0; m];
    let mut pending = Vec::new();
    for i in 0..m {
        let g = sys.switching(i, x, l);
        let scale = norm(l) * norm(&sys.g_at(i, x)).max(1.0);
        if g.abs() > 1e-13 * scale {
            u[i] = g.signum();
        } else {
            pending.push(i);
        }
    }
    let mut events = Vec::new();
    for &i in &pending {
        let gd = sys.switching_rate(i, x, l, &u);
        if !(gd.abs() > GDOT_MIN * norm(l)) {
            return Err(Error::Regime(format!(
                "g⁺_{} and its rate vanish at the start (rate {gd:e})",
                i + 1
            )));
        }
        u[i] = gd.signum();
        events.push(SwitchEvent { t: 0.0, channel: i, gdot: gd });
    }
    Ok((u, events))
}

/// Fixed-step RK4 on `(x, λ)` with bisection to `1e-10` at zeros of `g⁺`.
fn integrate<F>(sys: &PlanarSystem, x0: P, l0: P, tau: f64, stop_outside: bool, mut sink: F) -> Result<(Vec<SwitchEvent>, Stop)>
where
    F: FnMut(Step<'_>),
{
    let (mut u, mut events) = initial_control(sys, &x0, &l0)?;
    let (mut x, mut l, mut t) = (x0, l0, 0.0);
    sink(Step { t, x, l, u: &u, event: !events.is_empty() });
    let h = sys.step;
    let m = sys.inputs();
    let crossed = |x: &P, l: &P, u: &[f64]| (0..m).any(|i| sys.switching(i, x, l) * u[i] < 0.0);
    while t < tau {
        let dt = h.min(tau - t);
        let (x1, l1) = sys.rk4(&x, &l, &u, dt);
        if !crossed(&x1, &l1, &u) {
            x = x1;
            l = l1;
            t = if dt == tau - t { tau } else { t + dt };
            sink(Step { t, x, l, u: &u, event: false });
        } else {
            let (mut lo, mut hi) = (0.0, 1.0);
            while (hi - lo) * dt > EVENT_TOL {
                let mid = 0.5 * (lo + hi);
                let (xm, lm) = sys.rk4(&x, &l, &u, mid * dt);
                if crossed(&xm, &lm, &u) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let (xe, le) = sys.rk4(&x, &l, &u, hi * dt);
            let te = t + hi * dt;
            let flips: Vec<usize> = (0..m).filter(|&i| sys.switching(i, &xe, &le) * u[i] < 0.0).collect();
            for &i in &flips {
                let gd = sys.switching_rate(i, &xe, &le, &u);
                if !(gd.abs() > GDOT_MIN * norm(&le)) {
                    return Err(Error::Regime(format!(
                        "g⁺_{} has a degenerate zero at t = {te} (rate {gd:e})",
                        i + 1
                    )));
                }
                events.push(SwitchEvent { t: te, channel: i, gdot: gd });
            }
            if events.len() > MAX_EVENTS {
                return Err(Error::Regime("switching events accumulate".into()));
            }
            x = xe;
            l = le;
            t = te;
            sink(Step { t, x, l, u: &u, event: true });
            for &i in &flips {
                u[i] = -u[i];
            }
            sink(Step { t, x, l, u: &u, event: true });
        }
        if !(x[0].is_finite() && x[1].is_finite() && l[0].is_finite() && l[1].is_finite()) {
            return Err(Error::NonFinite(format!("extremal state at t = {t}")));
        }
        if stop_outside && !sys.in_box(&x) {
            return Ok((events, Stop::LeftBox));
        }
    }
    Ok((events, Stop::Horizon))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtremalArc {
    pub t: Vec<f64>,
    pub x: Vec<P>,
    pub lambda: Vec<P>,
    /// Control on the step leaving each sample.
    pub u: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    pub h: Vec<f64>,
    pub events: Vec<SwitchEvent>,
}

impl ExtremalArc {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn max_abs_h(&self) -> f64 {
        self.h.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_lambda_norm(&self) -> f64 {
        self.lambda.iter().map(norm).fold(f64::INFINITY, f64::min)
    }

    /// Smallest `|ġ⁺| / |λ|` over the zeros met, `∞` if none.
    pub fn min_relative_gdot(&self) -> f64 {
        self.events
            .iter()
            .map(|e| {
                let k = self.t.partition_point(|&t| t < e.t).min(self.len() - 1);
                e.gdot.abs() / norm(&self.lambda[k])
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Extremal from the origin (or any `x0`) with initial costate `λ0`.
pub fn extremal_arc(sys: &PlanarSystem, x0: P, lambda0: P, tau: f64) -> Result<ExtremalArc> {
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::Invalid(format!("tau must be finite and >= 0, got {tau}")));
    }
    if norm(&lambda0) == 0.0 {
        return Err(Error::ZeroCostate);
    }
    let mut arc = ExtremalArc { t: vec![], x: vec![], lambda: vec![], u: vec![], g: vec![], h: vec![], events: vec![] };
    let (events, _) = integrate(sys, x0, lambda0, tau, false, |s| {
        if s.event && arc.t.last() == Some(&s.t) {
            // control flip at an event: keep one sample with the new control
            let k = arc.t.len() - 1;
            arc.u[k] = s.u.to_vec();
            return;
        }
        arc.t.push(s.t);
        arc.x.push(s.x);
        arc.lambda.push(s.l);
        arc.u.push(s.u.to_vec());
        arc.g.push((0..sys.inputs()).map(|i| sys.switching(i, &s.x, &s.l)).collect());
        arc.h.push(sys.hamiltonian(&s.x, &s.l));
    })?;
    arc.events = events;
    Ok(arc)
}

/// The two unit costates orthogonal to every `G_i(0)`.
pub fn seed_costates(sys: &PlanarSystem) -> Result<[P; 2]> {
    let zero = [0.0, 0.0];
    let gs: Vec<P> = (0..sys.inputs()).map(|i| sys.g_at(i, &zero)).collect();
    if gs.len() == 2 {
        let det = cross(&gs[0], &gs[1]);
        if det.abs() > 1e-12 * norm(&gs[0]) * norm(&gs[1]) {
            return Err(Error::SingularSetEmpty);
        }
    }
    let g = gs.iter().copied().max_by(|a, b| norm(a).total_cmp(&norm(b))).expect("one input");
    let n = norm(&g);
    let z = [g[1] / n, -g[0] / n];
    Ok([z, [-z[0], -z[1]]])
}

/// One of the two singular extremals, limited to the validated horizon.
pub fn singular_trajectory(sys: &PlanarSystem, zeta0: P, tau: f64) -> Result<ExtremalArc> {
    let bound = sys.horizon().t_est;
    if tau > bound {
        return Err(Error::TauTooLarge { tau, bound });
    }
    singular_trajectory_raw(sys, zeta0, tau)
}

fn singular_trajectory_raw(sys: &PlanarSystem, zeta0: P, tau: f64) -> Result<ExtremalArc> {
    let nz = norm(&zeta0);
    if (nz - 1.0).abs() > 1e-12 {
        return Err(Error::Invalid(format!("seed costate must be a unit vector, |ζ0| = {nz}")));
    }
    for i in 0..sys.inputs() {
        let d = dot(&sys.g_at(i, &[0.0, 0.0]), &zeta0).abs();
        if d > 1e-10 {
            return Err(Error::NotInZ(d));
        }
    }
    extremal_arc(sys, [0.0, 0.0], zeta0, tau)
}

// ---------------------------------------------------------------------------
// fronts

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Front {
    pub r: f64,
    /// Ordered by the seed angle of the terminal costate.
    pub points: Vec<P>,
    pub convex: bool,
    pub warnings: Vec<String>,
}

impl Front {
    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for a in &self.points {
            for b in &self.points {
                d = d.max(norm(&[a[0] - b[0], a[1] - b[1]]));
            }
        }
        d
    }

    /// Winding test against the closed polyline.
    pub fn contains(&self, x: &P) -> bool {
        let n = self.points.len();
        let mut inside = false;
        for k in 0..n {
            let a = self.points[k];
            let b = self.points[(k + 1) % n];
            if (a[1] > x[1]) != (b[1] > x[1]) {
                let s = a[0] + (x[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if x[0] < s {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

/// Turning test: all corners turn the same way and the total turn is `2π`.
fn convexity(points: &[P]) -> (bool, String) {
    let pts: Vec<P> = dedup_cyclic(points);
    let n = pts.len();
    if n < 3 {
        return (false, format!("front degenerates to {n} distinct points"));
    }
    let area: f64 = (0..n).map(|k| cross(&pts[k], &pts[(k + 1) % n])).sum::<f64>() / 2.0;
    let orient = area.signum();
    let scale = pts.iter().map(norm).fold(0.0, f64::max);
    let mut turn = 0.0;
    for k in 0..n {
        let a = pts[k];
        let b = pts[(k + 1) % n];
        let c = pts[(k + 2) % n];
        let e1 = [b[0] - a[0], b[1] - a[1]];
        let e2 = [c[0] - b[0], c[1] - b[1]];
        let cr = cross(&e1, &e2) * orient;
        if cr < -1e-9 * norm(&e1) * norm(&e2) - 1e-14 * scale * scale {
            return (false, format!("reflex corner at vertex {}", (k + 1) % n));
        }
        turn += cr.atan2(dot(&e1, &e2));
    }
    if (turn - 2.0 * PI).abs() > 1e-6 {
        return (false, format!("total turning {turn} differs from 2π"));
    }
    (true, String::new())
}

fn dedup_cyclic(points: &[P]) -> Vec<P> {
    let scale = points.iter().map(norm).fold(0.0, f64::max);
    let mut out: Vec<P> = Vec::with_capacity(points.len());
    for p in points {
        if out.last().is_none_or(|q| norm(&[p[0] - q[0], p[1] - q[1]]) > 1e-13 * scale) {
            out.push(*p);
        }
    }
    while out.len() > 1 {
        let (a, b) = (out[0], out[out.len() - 1]);
        if norm(&[a[0] - b[0], a[1] - b[1]]) > 1e-13 * scale {
            break;
        }
        out.pop();
    }
    out
}

fn seed_angles(n: usize) -> Vec<f64> {
    (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect()
}

/// Endpoints at time `r` of `n` extremals with terminal costates evenly
/// spaced on the unit circle.
pub fn extremal_front(sys: &PlanarSystem, r: f64, n: usize) -> Result<Front> {
    if n < 16 {
        return Err(Error::Invalid(format!("a front needs at least 16 extremals, got {n}")));
    }
    let bound = sys.horizon().t_est;
    if r > bound {
        return Err(Error::TauTooLarge { tau: r, bound });
    }
    front_raw(sys, r, n)
}

fn front_raw(sys: &PlanarSystem, r: f64, n: usize) -> Result<Front> {
    let ends = seed_angles(n)
        .par_iter()
        .map(|&th| endpoint(sys, [th.cos(), th.sin()], r))
        .collect::<Result<Vec<P>>>()?;
    let mut warnings = Vec::new();
    let (convex, why) = if r > 0.0 { convexity(&ends) } else { (true, String::new()) };
    if !convex {
        warnings.push(format!("front at r = {r} is not convex: {why}"));
    }
    if ends.iter().any(|p| !sys.in_box(p)) {
        warnings.push(format!("front at r = {r} leaves the working box"));
    }
    Ok(Front { r, points: ends, convex, warnings })
}

fn endpoint(sys: &PlanarSystem, lambda0: P, r: f64) -> Result<P> {
    let mut last = [0.0, 0.0];
    integrate(sys, [0.0, 0.0], lambda0, r, false, |s| last = s.x)?;
    Ok(last)
}

// ---------------------------------------------------------------------------
// horizon estimate

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonTrial {
    pub tau: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonEstimate {
    /// Largest dyadic `τ` passing every check; 0 when none does.
    pub t_est: f64,
    pub trials: Vec<HorizonTrial>,
}

const HORIZON_START: i32 = 1;
const HORIZON_TRIALS: i32 = 12;
const HORIZON_FRONT: usize = 64;

fn horizon_trial(sys: &PlanarSystem, tau: f64) -> std::result::Result<(), String> {
    let seeds = seed_costates(sys).map_err(|e| e.to_string())?;
    for z in seeds {
        let arc = singular_trajectory_raw(sys, z, tau).map_err(|e| e.to_string())?;
        if arc.x.iter().any(|p| !sys.in_box(p)) {
            return Err("singular arc leaves the box".into());
        }
        if arc.max_abs_h() > 1e-6 {
            return Err(format!("|h| reaches {:e} on a singular arc", arc.max_abs_h()));
        }
        if arc.min_lambda_norm() < 1e-3 {
            return Err("adjoint nearly vanishes".into());
        }
    }
    let mut ends = Vec::with_capacity(HORIZON_FRONT);
    for th in seed_angles(HORIZON_FRONT) {
        let mut last = [0.0, 0.0];
        let (_, stop) = integrate(sys, [0.0, 0.0], [th.cos(), th.sin()], tau, true, |s| last = s.x)
            .map_err(|e| e.to_string())?;
        if stop == Stop::LeftBox {
            return Err("front leaves the box".into());
        }
        ends.push(last);
    }
    let (convex, why) = convexity(&ends);
    if !convex {
        return Err(why);
    }
    Ok(())
}

/// Tries `τ = 2^{1}, 2^{0}, 2^{-1}, ...` and keeps the first that passes the
/// singular-arc checks (non-degenerate zeros, `|h| ≤ 1e-6`, `|λ| ≥ 1e-3`)
/// and the front checks (convex, inside the box).
pub fn estimate_horizon(sys: &PlanarSystem) -> HorizonEstimate {
    let mut trials = Vec::new();
    for k in 0..HORIZON_TRIALS {
        let tau = 2f64.powi(HORIZON_START - k);
        let res = horizon_trial(sys, tau);
        let passed = res.is_ok();
        trials.push(HorizonTrial { tau, passed, detail: res.err().unwrap_or_default() });
        if passed {
            return HorizonEstimate { t_est: tau, trials };
        }
    }
    HorizonEstimate { t_est: 0.0, trials }
}

// ---------------------------------------------------------------------------
// dense extremal bundles and the minimum time

/// Extremal stored as cubic Hermite knots; the control is constant between
/// consecutive knots, so one-sided velocities are kept at switching knots.
#[derive(Clone, Debug)]
struct DensePath {
    t: Vec<f64>,
    x: Vec<P>,
    /// Velocity entering and leaving each knot.
    vin: Vec<P>,
    vout: Vec<P>,
    lam: Vec<P>,
}

impl DensePath {
    fn build(sys: &PlanarSystem, lambda0: P, r: f64) -> Result<DensePath> {
        let mut p = DensePath { t: vec![], x: vec![], vin: vec![], vout: vec![], lam: vec![] };
        let mut count = 0usize;
        let mut prev_u: Vec<f64> = Vec::new();
        integrate(sys, [0.0, 0.0], lambda0, r, false, |s| {
            let (v, _) = sys.rhs(&s.x, &s.l, s.u);
            if p.t.last() == Some(&s.t) {
                *p.vout.last_mut().expect("knot") = v;
                prev_u = s.u.to_vec();
                return;
            }
            count += 1;
            if s.event || count % KNOT_STRIDE == 1 || s.t >= r {
                let vin = if prev_u.is_empty() { v } else { sys.rhs(&s.x, &s.l, &prev_u).0 };
                p.t.push(s.t);
                p.x.push(s.x);
                p.vin.push(vin);
                p.vout.push(v);
                p.lam.push(s.l);
            }
            prev_u = s.u.to_vec();
        })?;
        Ok(p)
    }

    /// Costate at `t`, linear between knots.
    fn lambda_at(&self, t: f64) -> P {
        let n = self.t.len();
        if n == 1 || t <= self.t[0] {
            return self.lam[0];
        }
        if t >= self.t[n - 1] {
            return self.lam[n - 1];
        }
        let k = self.t.partition_point(|&s| s <= t).clamp(1, n - 1) - 1;
        let w = (t - self.t[k]) / (self.t[k + 1] - self.t[k]);
        let (a, b) = (self.lam[k], self.lam[k + 1]);
        [a[0] + w * (b[0] - a[0]), a[1] + w * (b[1] - a[1])]
    }

    /// Position and velocity at `t`.
    fn at(&self, t: f64) -> (P, P) {
        let n = self.t.len();
        if n == 1 || t <= self.t[0] {
            return (self.x[0], self.vout[0]);
        }
        if t >= self.t[n - 1] {
            return (self.x[n - 1], self.vin[n - 1]);
        }
        let k = self.t.partition_point(|&s| s <= t).clamp(1, n - 1) - 1;
        let (t0, t1) = (self.t[k], self.t[k + 1]);
        let hh = t1 - t0;
        let s = (t - t0) / hh;
        let (p0, p1, m0, m1) = (self.x[k], self.x[k + 1], self.vout[k], self.vin[k + 1]);
        let h00 = 2.0 * s * s * s - 3.0 * s * s + 1.0;
        let h10 = s * s * s - 2.0 * s * s + s;
        let h01 = -2.0 * s * s * s + 3.0 * s * s;
        let h11 = s * s * s - s * s;
        let d00 = (6.0 * s * s - 6.0 * s) / hh;
        let d10 = 3.0 * s * s - 4.0 * s + 1.0;
        let d01 = (-6.0 * s * s + 6.0 * s) / hh;
        let d11 = 3.0 * s * s - 2.0 * s;
        let mut x = [0.0; 2];
        let mut v = [0.0; 2];
        for a in 0..2 {
            x[a] = h00 * p0[a] + h10 * hh * m0[a] + h01 * p1[a] + h11 * hh * m1[a];
            v[a] = d00 * p0[a] + d10 * m0[a] + d01 * p1[a] + d11 * m1[a];
        }
        (x, v)
    }
}

/// Fronts of one radius, indexed for polar lookup.
#[derive(Clone, Debug)]
struct Level {
    r: f64,
    points: Vec<P>,
    /// Seed-order index of the vertex with the smallest polar angle.
    start: usize,
    /// Polar angles in seed order starting at `start`, unwrapped to `[0, 2π)`.
    angles: Vec<f64>,
    orient: f64,
}

impl Level {
    fn new(r: f64, points: Vec<P>) -> Level {
        let n = points.len();
        let area: f64 = (0..n).map(|k| cross(&points[k], &points[(k + 1) % n])).sum();
        let orient = if area >= 0.0 { 1.0 } else { -1.0 };
        let polar = |p: &P| (orient * p[1]).atan2(p[0]).rem_euclid(2.0 * PI);
        let start = (0..n).min_by(|&a, &b| polar(&points[a]).total_cmp(&polar(&points[b]))).unwrap_or(0);
        let a0 = polar(&points[start]);
        let mut angles: Vec<f64> = (0..n).map(|k| (polar(&points[(start + k) % n]) - a0).rem_euclid(2.0 * PI)).collect();
        // wrap-around noise at the end of the sweep
        for k in (1..n).rev() {
            if angles[k] < angles[k - 1] && angles[k] < PI && k > n / 2 {
                angles[k] = 2.0 * PI;
            }
        }
        for k in 1..n {
            angles[k] = angles[k].max(angles[k - 1]);
        }
        Level { r, points, start, angles, orient }
    }

    /// Seed-order edge `(k, k+1)` whose polar sector holds `x`.
    fn edge(&self, x: &P) -> usize {
        let n = self.points.len();
        let a = ((self.orient * x[1]).atan2(x[0]).rem_euclid(2.0 * PI)
            - (self.orient * self.points[self.start][1]).atan2(self.points[self.start][0]).rem_euclid(2.0 * PI))
        .rem_euclid(2.0 * PI);
        let j = self.angles.partition_point(|&v| v <= a).max(1) - 1;
        (self.start + j) % n
    }

    fn contains(&self, x: &P) -> bool {
        let n = self.points.len();
        let mut k = self.edge(x);
        // skip collapsed edges at corners
        for _ in 0..n {
            let (a, b) = (self.points[k], self.points[(k + 1) % n]);
            if a != b {
                let e = [b[0] - a[0], b[1] - a[1]];
                let w = [x[0] - a[0], x[1] - a[1]];
                return self.orient * cross(&e, &w) >= 0.0;
            }
            k = (k + 1) % n;
        }
        false
    }
}

/// Extremals to `r_max` with seed angles refined until neighbouring
/// endpoints are within `delta`, plus front levels for point location.
#[derive(Clone, Debug)]
pub struct FrontBundle {
    pub r_max: f64,
    pub seeds: Vec<f64>,
    paths: Vec<DensePath>,
    levels: Vec<Level>,
    orient: f64,
}

const BUNDLE_START: usize = 256;
const BUNDLE_DEPTH: u32 = 16;
const BUNDLE_LEVELS: usize = 256;

impl FrontBundle {
    pub fn build(sys: &PlanarSystem, r_max: f64, delta: f64) -> Result<FrontBundle> {
        if !(r_max > 0.0) || !r_max.is_finite() || !(delta > 0.0) {
            return Err(Error::Invalid(format!("need r_max > 0 and delta > 0, got {r_max}, {delta}")));
        }
        let mut seeds = seed_angles(BUNDLE_START);
        let mut paths = seeds
            .par_iter()
            .map(|&th| DensePath::build(sys, [th.cos(), th.sin()], r_max))
            .collect::<Result<Vec<_>>>()?;
        for _ in 0..BUNDLE_DEPTH {
            let n = seeds.len();
            let split: Vec<usize> = (0..n)
                .filter(|&k| {
                    let (a, b) = (paths[k].at(r_max).0, paths[(k + 1) % n].at(r_max).0);
                    norm(&[a[0] - b[0], a[1] - b[1]]) > delta
                })
                .collect();
            if split.is_empty() {
                break;
            }
            let mids: Vec<f64> = split
                .iter()
                .map(|&k| {
                    let hi = if k + 1 == n { 2.0 * PI } else { seeds[k + 1] };
                    0.5 * (seeds[k] + hi)
                })
                .collect();
            let new_paths = mids
                .par_iter()
                .map(|&th| DensePath::build(sys, [th.cos(), th.sin()], r_max))
                .collect::<Result<Vec<_>>>()?;
            let mut merged: Vec<(f64, DensePath)> = seeds.into_iter().zip(paths).collect();
            merged.extend(mids.into_iter().zip(new_paths));
            merged.sort_by(|a, b| a.0.total_cmp(&b.0));
            (seeds, paths) = merged.into_iter().unzip();
        }
        let levels: Vec<Level> = (1..=BUNDLE_LEVELS)
            .into_par_iter()
            .map(|j| {
                let r = r_max * j as f64 / BUNDLE_LEVELS as f64;
                Level::new(r, paths.iter().map(|p| p.at(r).0).collect())
            })
            .collect();
        let orient = levels.last().map_or(1.0, |l: &Level| l.orient);
        Ok(FrontBundle { r_max, seeds, paths, levels, orient })
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn front(&self, r: f64) -> Vec<P> {
        self.paths.iter().map(|p| p.at(r.min(self.r_max)).0).collect()
    }

    /// Minimum time by bisection on `r`; the bracket comes from the front
    /// levels, and each membership test locates the polar sector of `x` by
    /// a local walk from the previous sector.
    pub fn mintime(&self, x: &P, tol: f64) -> Result<f64> {
        if norm(x) == 0.0 {
            return Ok(0.0);
        }
        let last = self.levels.last().expect("levels");
        if !last.contains(x) {
            return Err(Error::Regime(format!("x = {x:?} lies outside the validated front r = {}", self.r_max)));
        }
        let j = self.levels.partition_point(|l| !l.contains(x));
        let mut k = self.levels[j].edge(x);
        let mut hi = self.levels[j].r;
        let mut lo = if j >= 2 { self.levels[j - 2].r } else { 0.0 };
        while lo > 0.0 && self.inside(x, lo, &mut k)? {
            hi = lo;
            lo = (lo - self.levels[0].r).max(0.0);
        }
        while hi - lo > tol * hi.max(1.0) {
            let mid = 0.5 * (lo + hi);
            if self.inside(x, mid, &mut k)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// `x ∈ R_r`, with `k` a hint for the edge whose polar sector holds `x`.
    fn inside(&self, x: &P, r: f64, k: &mut usize) -> Result<bool> {
        let n = self.paths.len();
        let o = self.orient;
        let mut last_step = 0i32;
        let mut found = false;
        for _ in 0..2 * n {
            let a = self.paths[*k].at(r).0;
            let b = self.paths[(*k + 1) % n].at(r).0;
            let step = if o * cross(&a, x) < 0.0 {
                -1
            } else if o * cross(x, &b) <= 0.0 {
                1
            } else {
                0
            };
            if step == 0 {
                found = true;
                break;
            }
            if last_step != 0 && step != last_step && a != b {
                // x is on the ray through a shared vertex
                return Ok(norm(x) <= norm(if step > 0 { &b } else { &a }));
            }
            last_step = step;
            *k = if step < 0 { (*k + n - 1) % n } else { (*k + 1) % n };
        }
        if !found {
            return Err(Error::NoConvergence(format!("polar sector of x = {x:?} at r = {r}")));
        }
        // ray through x meets the curved edge where cross(C(s), x) changes sign
        let (mut s0, mut s1) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (s0 + s1);
            if o * cross(&self.edge_curve(*k, mid, r), x) >= 0.0 {
                s0 = mid;
            } else {
                s1 = mid;
            }
        }
        let c = self.edge_curve(*k, 0.5 * (s0 + s1), r);
        Ok(norm(x) <= norm(&c))
    }

    /// Front arc between extremals `k` and `k+1` at time `r`: cubic Hermite
    /// with tangents orthogonal to the costates, which are the outer normals.
    fn edge_curve(&self, k: usize, s: f64, r: f64) -> P {
        let n = self.paths.len();
        let (pa, pb) = (&self.paths[k], &self.paths[(k + 1) % n]);
        let (a, b) = (pa.at(r).0, pb.at(r).0);
        let len = norm(&[b[0] - a[0], b[1] - a[1]]);
        let tangent = |l: P| {
            let m = norm(&l);
            [-self.orient * l[1] / m * len, self.orient * l[0] / m * len]
        };
        let (ma, mb) = (tangent(pa.lambda_at(r)), tangent(pb.lambda_at(r)));
        let h00 = 2.0 * s * s * s - 3.0 * s * s + 1.0;
        let h10 = s * s * s - 2.0 * s * s + s;
        let h01 = -2.0 * s * s * s + 3.0 * s * s;
        let h11 = s * s * s - s * s;
        [
            h00 * a[0] + h10 * ma[0] + h01 * b[0] + h11 * mb[0],
            h00 * a[1] + h10 * ma[1] + h01 * b[1] + h11 * mb[1],
        ]
    }
}

/// `T(x)` through a bundle built to the validated horizon.
pub fn planar_mintime(sys: &PlanarSystem, x: P, tol: f64, bundle: &FrontBundle) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::Invalid(format!("tolerance must be positive, got {tol}")));
    }
    if bundle.r_max > sys.horizon().t_est {
        return Err(Error::TauTooLarge { tau: bundle.r_max, bound: sys.horizon().t_est });
    }
    bundle.mintime(&x, tol)
}

/// Re-verification of a truncated singular arc at sample `k`: the costate
/// must stay a zero-Hamiltonian outer normal of `R_{t_k}` and `T = t_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationCheck {
    pub t: f64,
    pub h: f64,
    /// `max_p ⟨λ/|λ|, p - x⟩` over the front at `t`.
    pub support_excess: f64,
    pub mintime_error: f64,
}

pub fn verify_truncation(sys: &PlanarSystem, arc: &ExtremalArc, k: usize, bundle: &FrontBundle) -> Result<TruncationCheck> {
    if k >= arc.len() {
        return Err(Error::Invalid(format!("sample {k} beyond arc length {}", arc.len())));
    }
    let (t, x, l) = (arc.t[k], arc.x[k], arc.lambda[k]);
    let n = norm(&l);
    let nu = [l[0] / n, l[1] / n];
    let excess = bundle
        .front(t)
        .iter()
        .map(|p| dot(&nu, &[p[0] - x[0], p[1] - x[1]]))
        .fold(f64::NEG_INFINITY, f64::max);
    let tm = planar_mintime(sys, x, 1e-10, bundle)?;
    Ok(TruncationCheck { t, h: sys.hamiltonian(&x, &l).abs(), support_excess: excess, mintime_error: (tm - t).abs() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use serde_json::json;

    fn doc(f: Value, g: Value) -> PlanarDocument {
        serde_json::from_value(json!({"F": f, "G": g, "box": [[-1.0, 1.0], [-1.0, 1.0]]})).unwrap()
    }

    #[test]
    fn catalog_system_is_accepted() {
        let s = catalog::planar("planar-pendulum").unwrap();
        let z = [0.0, 0.0];
        assert_eq!(s.df_at(&z), [[0.0, 1.0], [-1.0, 0.0]]);
        assert_eq!(s.dg_at(0, &z), [[0.0, 0.0], [0.0, 0.0]]);
        assert!(s.lipschitz() > 0.0 && s.step() < 1e-4);
    }

    #[test]
    fn assumption_violations_are_named() {
        let e = load_planar(&doc(json!([["add", 1, ["var", 2]], 0]), json!([[0, 1]]))).unwrap_err();
        assert!(matches!(e, Error::Assumption { number: 2, .. }), "{e}");
        let e = load_planar(&doc(json!([["var", 2], ["mul", -1, ["sin", ["var", 1]]]]), json!([[0, ["add", 1, ["var", 1]]]])))
            .unwrap_err();
        assert!(matches!(e, Error::Assumption { number: 4, .. }), "{e}");
        let e = load_planar(&doc(json!([0, 0]), json!([[0, 1]]))).unwrap_err();
        assert!(matches!(e, Error::Assumption { number: 3, .. }), "{e}");
    }

    #[test]
    fn seeds() {
        let s = catalog::planar("planar-pendulum").unwrap();
        assert_eq!(seed_costates(&s).unwrap(), [[1.0, 0.0], [-1.0, 0.0]]);
        let two = load_planar(&doc(json!([["var", 2], ["var", 1]]), json!([[1, 0], [0, 1]]))).unwrap();
        assert!(matches!(seed_costates(&two), Err(Error::SingularSetEmpty)));
        let th: f64 = 0.4;
        let rot = load_planar(&doc(
            json!([["var", 2], ["mul", -1, ["var", 1]]]),
            json!([[-th.sin(), th.cos()]]),
        ))
        .unwrap();
        let z = seed_costates(&rot).unwrap()[0];
        assert!((z[0] - th.cos()).abs() < 1e-15 && (z[1] - th.sin()).abs() < 1e-15);
    }

    #[test]
    fn zero_horizon_arc() {
        let s = catalog::planar("planar-pendulum").unwrap();
        let a = singular_trajectory_raw(&s, [1.0, 0.0], 0.0).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a.x[0], [0.0, 0.0]);
    }

    #[test]
    fn linear_extremal_matches_closed_form() {
        // ẋ1 = x2, ẋ2 = u: the singular arc from ζ0 = (1, 0) is (-t²/2, t).
        let s = load_planar(&doc(json!([["var", 2], 0]), json!([[0, 1]]))).unwrap();
        let a = singular_trajectory_raw(&s, [1.0, 0.0], 0.5).unwrap();
        let k = a.len() - 1;
        let t = a.t[k];
        assert!((a.x[k][0] + t * t / 2.0).abs() < 1e-12 && (a.x[k][1] - t).abs() < 1e-12, "{:?}", a.x[k]);
        assert!(a.max_abs_h() < 1e-12);
    }

    #[test]
    fn switching_events_are_localized() {
        // harmonic oscillator: g⁺ = -⟨b, e^{Aᵀt}λ0⟩ vanishes at multiples of π
        let s = load_planar(&doc(json!([["var", 2], ["mul", -1, ["var", 1]]]), json!([[0, 1]]))).unwrap();
        let a = extremal_arc(&s, [0.0, 0.0], [0.0, 1.0], 3.5).unwrap();
        let ev: Vec<f64> = a.events.iter().map(|e| e.t).collect();
        assert_eq!(ev.len(), 1);
        assert!((ev[0] - PI / 2.0).abs() < 1e-9, "{ev:?}");
    }

    #[test]
    fn singular_arcs_are_reflections() {
        let s = catalog::planar("planar-pendulum").unwrap();
        let [z, w] = seed_costates(&s).unwrap();
        let a = singular_trajectory(&s, z, 0.5).unwrap();
        let b = singular_trajectory(&s, w, 0.5).unwrap();
        assert_eq!(a.len(), b.len());
        for k in 0..a.len() {
            assert_eq!(a.x[k], [-b.x[k][0], -b.x[k][1]]);
            assert_eq!(a.lambda[k], [-b.lambda[k][0], -b.lambda[k][1]]);
        }
        assert!(a.max_abs_h() <= 1e-6 && a.min_lambda_norm() >= 1e-3);
        assert!(a.min_relative_gdot() > 1e-3);
        assert!(matches!(singular_trajectory(&s, z, 2.0 * s.horizon().t_est), Err(Error::TauTooLarge { .. })));
    }

    #[test]
    fn fronts_shrink_and_nest() {
        let s = catalog::planar("planar-pendulum").unwrap();
        assert!(matches!(extremal_front(&s, 0.1, 8), Err(Error::Invalid(_))));
        let small = extremal_front(&s, 1e-3, 32).unwrap();
        assert!(small.diameter() < 3e-3);
        let f1 = extremal_front(&s, 0.1, 64).unwrap();
        let f2 = extremal_front(&s, 0.2, 64).unwrap();
        assert!(f1.convex && f2.convex, "{:?} {:?}", f1.warnings, f2.warnings);
        assert!(f1.points.iter().all(|p| f2.contains(p)));
    }

    #[test]
    fn small_fronts_match_the_linearization() {
        use crate::reach::mintime_bisection;
        use nalgebra::DVector;
        let s = catalog::planar("planar-pendulum").unwrap();
        let lin = s.linearization().unwrap();
        for r in [0.05, 0.1] {
            let f = extremal_front(&s, r, 32).unwrap();
            for p in &f.points {
                let t = mintime_bisection(&lin, &DVector::from_row_slice(p), 1e-10).unwrap().t;
                assert!((t - r).abs() <= r * r, "r {r}: linear T {t} at {p:?}");
            }
        }
    }

    #[test]
    fn mintime_on_singular_arc() {
        let s = catalog::planar("planar-pendulum").unwrap();
        let b = FrontBundle::build(&s, 0.2, 2e-3).unwrap();
        assert_eq!(planar_mintime(&s, [0.0, 0.0], 1e-10, &b).unwrap(), 0.0);
        let arc = singular_trajectory(&s, [1.0, 0.0], 0.15).unwrap();
        for q in 1..=5 {
            let k = q * (arc.len() - 1) / 6;
            let c = verify_truncation(&s, &arc, k, &b).unwrap();
            assert!(c.mintime_error <= 1e-5 && c.h <= 1e-5 && c.support_excess <= 1e-5, "{c:?}");
        }
        assert!(matches!(planar_mintime(&s, [0.5, 0.5], 1e-10, &b), Err(Error::Regime(_))));
    }
}
