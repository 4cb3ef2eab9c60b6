//! Support-function calculus for the reachable sets `R_t`, membership, and
//! the two minimum-time solvers.
//!
//! `σ_t(ζ) = Σ_i ∫_0^t |⟨ζ, e^{-As} b_i⟩| ds`. Its gradient in `ζ` is the
//! endpoint `E(t, ζ)` and its Hessian is `Σ 2 v vᵀ / |g'|` summed over the
//! crossings, which is what the sphere ascent and the shooting Jacobian use.
//!
//! Membership is decided through `f(t) = max_{|u|=1} ⟨u, x⟩ - σ_t(u)`, which
//! is positive exactly when `x ∉ R_t`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{Direction, MAXN, V};
use crate::sphere;
use crate::switching::{check_costate, Scanner};
use crate::system::LinearSystem;

/// Largest horizon tried while bracketing the minimum time.
pub const T_MAX: f64 = 1e3;
const SEEDS_PER_DIM: usize = 64;
const TOP_STARTS: usize = 4;
const HYPERPLANE_STEPS: usize = 40;

/// `σ_t(ζ)` with its gradient `E` and (optionally) Hessian.
#[derive(Clone, Debug)]
pub struct SupportData {
    pub sigma: f64,
    pub endpoint: DVector<f64>,
    pub hessian: Option<DMatrix<f64>>,
    /// Per channel sign of `g_i` just before `t`.
    pub final_signs: Vec<i8>,
}

pub(crate) fn support_data(sys: &LinearSystem, zeta: &[f64], t: f64, hessian: bool) -> SupportData {
    let n = sys.n();
    let flow = sys.flow(Direction::Reversed);
    let zs = flow.costate_powers(zeta, n + 1);
    let mut e = [0.0; MAXN];
    let mut h = if hessian { Some(DMatrix::zeros(n, n)) } else { None };
    let mut final_signs = Vec::with_capacity(sys.m());
    for i in 0..sys.m() {
        if t <= 0.0 {
            final_signs.push(0);
            continue;
        }
        let sc = Scanner::new(flow, &zs, i, sys);
        let cr = sc.crossings(t);
        let mut cuts: Vec<f64> = Vec::with_capacity(cr.len() + 2);
        cuts.push(0.0);
        cuts.extend(cr.iter().map(|c| c.t));
        cuts.push(t);
        let mut w_prev = [0.0; MAXN];
        let mut v = [0.0; MAXN];
        let mut w = [0.0; MAXN];
        let mut last = 0i8;
        for k in 0..cuts.len() - 1 {
            let (a, b) = (cuts[k], cuts[k + 1]);
            flow.eval(i, b, &mut v, Some(&mut w));
            if b > a {
                let s = piece_sign(&sc, a, b);
                for r in 0..n {
                    e[r] += s * (w[r] - w_prev[r]);
                }
                last = s as i8;
            }
            w_prev = w;
        }
        final_signs.push(last);
        if let Some(h) = h.as_mut() {
            for c in &cr {
                let s = c.slope.abs();
                if s > 0.0 {
                    let f = 2.0 / s;
                    for r in 0..n {
                        for q in 0..n {
                            h[(r, q)] += f * c.v[r] * c.v[q];
                        }
                    }
                }
            }
        }
    }
    let endpoint = DVector::from_column_slice(&e[..n]);
    let sigma = zeta.iter().zip(endpoint.iter()).map(|(a, b)| a * b).sum::<f64>();
    SupportData { sigma, endpoint, hessian: h, final_signs }
}

fn piece_sign(sc: &Scanner, a: f64, b: f64) -> f64 {
    let p = sc.point(0.5 * (a + b));
    if p.d[0] > 0.0 {
        1.0
    } else if p.d[0] < 0.0 {
        -1.0
    } else {
        let q = sc.point(a + 0.25 * (b - a));
        q.d[0].signum()
    }
}

/// `σ_{R_t}(ζ)`.
pub fn support(sys: &LinearSystem, zeta: &DVector<f64>, t: f64) -> Result<f64> {
    sys.require_normal()?;
    check_costate(sys, zeta)?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Invalid(format!("horizon must be finite and >= 0, got {t}")));
    }
    Ok(support_data(sys, zeta.as_slice(), t, false).sigma)
}

/// `σ_{R_t}(ζ)` together with the endpoint and Hessian.
pub fn support_full(sys: &LinearSystem, zeta: &DVector<f64>, t: f64) -> Result<SupportData> {
    sys.require_normal()?;
    check_costate(sys, zeta)?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Invalid(format!("horizon must be finite and >= 0, got {t}")));
    }
    Ok(support_data(sys, zeta.as_slice(), t, true))
}

// ---------------------------------------------------------------------------
// sphere maximisation of φ(u) = ⟨u, x⟩ - σ_t(u)

pub(crate) fn seeds(n: usize) -> &'static [DVector<f64>] {
    static CACHE: [OnceLock<Vec<DVector<f64>>>; MAXN + 1] = [const { OnceLock::new() }; MAXN + 1];
    CACHE[n].get_or_init(|| sphere::quasi_uniform(n, SEEDS_PER_DIM * n))
}

#[derive(Clone, Debug)]
pub(crate) struct Ascent {
    pub value: f64,
    pub u: DVector<f64>,
    pub data: SupportData,
}

pub(crate) struct GapProblem<'a> {
    pub sys: &'a LinearSystem,
    pub x: &'a DVector<f64>,
    pub t: f64,
}

impl<'a> GapProblem<'a> {
    pub fn eval(&self, u: &DVector<f64>, hess: bool) -> (f64, SupportData) {
        let d = support_data(self.sys, u.as_slice(), self.t, hess);
        (u.dot(self.x) - d.sigma, d)
    }

    /// Riemannian Newton ascent with backtracking; stops early above `stop`.
    pub fn ascend(&self, u0: &DVector<f64>, stop: Option<f64>, max_iter: usize) -> Ascent {
        let n = self.x.len();
        let xn = self.x.norm();
        let mut u = u0.normalize();
        let (mut phi, mut data) = self.eval(&u, true);
        for _ in 0..max_iter {
            if stop.is_some_and(|s| phi > s) {
                break;
            }
            let g = self.x - &data.endpoint;
            let pg = &g - &u * g.dot(&u);
            let gn = pg.norm();
            if gn <= 1e-14 * (1.0 + xn + data.endpoint.norm()) {
                break;
            }
            let mu = phi.abs().max(1e-9 * (1.0 + xn));
            let p = DMatrix::identity(n, n) - &u * u.transpose();
            let hm = data.hessian.clone().unwrap_or_else(|| DMatrix::zeros(n, n));
            let m = &p * hm * &p + &p * mu + &u * u.transpose();
            let mut d = m.lu().solve(&pg).unwrap_or_else(|| &pg / mu);
            d -= &u * d.dot(&u);
            let mut slope = pg.dot(&d);
            if !(slope > 0.0) || !d.iter().all(|v| v.is_finite()) {
                d = &pg / mu;
                slope = pg.dot(&d);
            }
            let dn = d.norm();
            if dn > 0.5 {
                d *= 0.5 / dn;
                slope *= 0.5 / dn;
            }
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha > 1e-12 {
                let un = (&u + &d * alpha).normalize();
                let (pn, dn_) = self.eval(&un, true);
                if pn >= phi + 1e-4 * alpha * slope {
                    let gain = pn - phi;
                    u = un;
                    phi = pn;
                    data = dn_;
                    accepted = true;
                    if gain <= 1e-16 * (1.0 + phi.abs()) {
                        alpha = 0.0;
                    }
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted || alpha == 0.0 {
                break;
            }
        }
        Ascent { value: phi, u, data }
    }

    /// Maximum of `φ` over the sphere. With `stop = Some(s)` the search ends as
    /// soon as a value above `s` is found, or once the seed values certify that
    /// none exists.
    pub fn maximize(&self, warm: Option<&DVector<f64>>, stop: Option<f64>) -> Ascent {
        let n = self.x.len();
        let mut best: Option<Ascent> = None;
        let consider = |a: Ascent, best: &mut Option<Ascent>| {
            if best.as_ref().is_none_or(|b| a.value > b.value) {
                *best = Some(a);
            }
        };
        if let Some(w) = warm {
            let a = self.ascend(w, stop, 60);
            if stop.is_some_and(|s| a.value > s) {
                return a;
            }
            consider(a, &mut best);
        }
        let seeds = seeds(n);
        let mut scored: Vec<(f64, usize)> = Vec::with_capacity(seeds.len());
        let mut radius = 0.0f64;
        for (k, s) in seeds.iter().enumerate() {
            let (phi, d) = self.eval(s, false);
            if stop.is_some_and(|st| phi > st) {
                return self.ascend(s, stop, 60);
            }
            radius = radius.max(d.endpoint.norm());
            scored.push((phi, k));
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        if let Some(st) = stop {
            let lip = radius + self.x.norm();
            let cover = 1.5 * sphere::spacing(n, seeds.len());
            let bound = scored[0].0 + lip * cover;
            if bound <= st && best.as_ref().is_none_or(|b| b.value <= st) {
                let (phi, k) = scored[0];
                let cand = Ascent { value: phi, u: seeds[k].clone(), data: self.eval(&seeds[k], false).1 };
                let mut out = best.unwrap_or(cand.clone());
                if cand.value > out.value {
                    out = cand;
                }
                return out;
            }
        }
        for &(_, k) in scored.iter().take(TOP_STARTS) {
            let a = self.ascend(&seeds[k], stop, 60);
            if stop.is_some_and(|s| a.value > s) {
                return a;
            }
            consider(a, &mut best);
        }
        best.expect("at least one start")
    }
}

// ---------------------------------------------------------------------------
// membership

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MembershipClass {
    Interior,
    Boundary,
    Outside,
}

#[derive(Clone, Debug)]
pub struct Membership {
    pub class: MembershipClass,
    /// `max_{|ζ|=1} ⟨ζ, x⟩ - σ_t(ζ)`.
    pub value: f64,
    pub witness: DVector<f64>,
}

pub fn membership(sys: &LinearSystem, x: &DVector<f64>, t: f64, tol: f64) -> Result<Membership> {
    sys.require_normal()?;
    check_point(sys, x)?;
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Invalid(format!("horizon must be finite and >= 0, got {t}")));
    }
    let best = GapProblem { sys, x, t }.maximize(None, None);
    let class = if best.value > tol {
        MembershipClass::Outside
    } else if best.value < -tol {
        MembershipClass::Interior
    } else {
        MembershipClass::Boundary
    };
    Ok(Membership { class, value: best.value, witness: best.u })
}

pub(crate) fn check_point(sys: &LinearSystem, x: &DVector<f64>) -> Result<()> {
    if x.len() != sys.n() {
        return Err(Error::Dimension(format!("point has length {}, N = {}", x.len(), sys.n())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("point".into()));
    }
    Ok(())
}

/// Default boundary tolerance `1e-8·(1 + ‖x‖)`.
pub fn default_tol(x: &DVector<f64>) -> f64 {
    1e-8 * (1.0 + x.norm())
}

// ---------------------------------------------------------------------------
// minimum time

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Bisection,
    Shooting,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MinTimeResult {
    #[serde(rename = "T")]
    pub t: f64,
    pub zeta_star: Vec<f64>,
    pub solver: Solver,
    pub residual: f64,
}

fn first_axis(n: usize) -> DVector<f64> {
    let mut z = DVector::zeros(n);
    z[0] = 1.0;
    z
}

/// Minimum time by bracketing on the sign of `f(t)`.
///
/// Every unit `ζ` gives the lower bound `t_ζ ≤ T(x)` at which the supporting
/// hyperplane reaches `x`; the witness of each outside test is refined and
/// its `t_ζ` moves the lower end. An inside test just above the lower end
/// closes the bracket. Plain bisection takes over if that stalls.
pub fn mintime_bisection(sys: &LinearSystem, x: &DVector<f64>, tol: f64) -> Result<MinTimeResult> {
    sys.require_normal()?;
    check_point(sys, x)?;
    if !(tol > 0.0) {
        return Err(Error::Invalid(format!("tolerance must be positive, got {tol}")));
    }
    let n = sys.n();
    if x.norm() == 0.0 {
        return Ok(MinTimeResult {
            t: 0.0,
            zeta_star: first_axis(n).as_slice().to_vec(),
            solver: Solver::Bisection,
            residual: 0.0,
        });
    }
    let thr = 1e-13 * (1.0 + x.norm());
    let mut z = x.normalize();
    let mut lo = 0.0;
    let mut hi = None;
    for _ in 0..HYPERPLANE_STEPS {
        if let Some(t) = neustadt_time(sys, &z, z.dot(x)) {
            lo = f64::max(lo, t);
        }
        let c = lo + 0.5 * tol * lo.max(1.0);
        let prob = GapProblem { sys, x, t: c };
        let a = prob.maximize(Some(&z), Some(thr));
        if a.value <= thr {
            hi = Some(c);
            break;
        }
        z = prob.ascend(&a.u, None, 60).u;
    }
    let hi = match hi {
        Some(h) => h,
        None => {
            let outside = |t: f64, warm: &mut DVector<f64>| -> bool {
                let a = GapProblem { sys, x, t }.maximize(Some(warm), Some(thr));
                let out = a.value > thr;
                if out {
                    *warm = a.u;
                }
                out
            };
            let mut hi = lo.max(tol);
            while outside(hi, &mut z) {
                lo = hi;
                hi *= 2.0;
                if hi > T_MAX {
                    return Err(Error::Unreachable(T_MAX));
                }
            }
            while hi - lo > tol * hi.max(1.0) {
                let mid = 0.5 * (lo + hi);
                if outside(mid, &mut z) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            hi
        }
    };
    let t = 0.5 * (lo + hi);
    let residual = GapProblem { sys, x, t }.eval(&z, false).0.abs();
    Ok(MinTimeResult { t, zeta_star: z.as_slice().to_vec(), solver: Solver::Bisection, residual })
}

/// Time at which the supporting hyperplane with normal `ζ` reaches `x`:
/// the root of `σ_t(ζ) = ⟨ζ, x⟩`.
pub(crate) fn neustadt_time(sys: &LinearSystem, zeta: &DVector<f64>, c: f64) -> Option<f64> {
    if !(c > 0.0) {
        return None;
    }
    let sig = |t: f64| support_data(sys, zeta.as_slice(), t, false).sigma;
    let rate = |t: f64| support_rate(sys, zeta, t);
    let mut lo = 0.0;
    let mut hi = 1.0;
    while sig(hi) < c {
        lo = hi;
        hi *= 2.0;
        if hi > T_MAX {
            return None;
        }
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..100 {
        let f = sig(t) - c;
        if f > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let r = rate(t);
        let mut nt = if r > 0.0 { t - f / r } else { f64::NAN };
        if !(nt > lo && nt < hi) {
            nt = 0.5 * (lo + hi);
        }
        if (nt - t).abs() <= 1e-15 * t.max(1.0) || hi - lo <= 1e-15 * hi.max(1.0) {
            return Some(nt);
        }
        t = nt;
    }
    Some(t)
}

fn tangent_basis(u: &DVector<f64>) -> DMatrix<f64> {
    let n = u.len();
    let p = DMatrix::identity(n, n) - u * u.transpose();
    let svd = p.svd(true, false);
    let uu = svd.u.expect("left vectors");
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    DMatrix::from_columns(&idx[..n - 1].iter().map(|&k| uu.column(k).into_owned()).collect::<Vec<_>>())
}

/// `∂σ_t(ζ)/∂t`.
fn support_rate(sys: &LinearSystem, zeta: &DVector<f64>, t: f64) -> f64 {
    let flow = sys.flow(Direction::Reversed);
    let mut v: V = [0.0; MAXN];
    let mut acc = 0.0;
    for i in 0..sys.m() {
        flow.eval(i, t, &mut v, None);
        acc += zeta.iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>().abs();
    }
    acc
}

/// Ascent of the hyperplane time `t(ζ)` on the sphere. Its maximum is
/// `T(x)`, attained where the endpoint `E(ζ, t(ζ))` equals `x`; the gradient
/// is the residual `x − E` over the support rate. `t` is quasi-concave, so
/// there are no spurious maxima, but near the singular set it is very flat
/// and badly scaled, hence BFGS rather than plain gradient steps.
fn neustadt_ascent(
    sys: &LinearSystem,
    x: &DVector<f64>,
    t0: f64,
    z0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> (f64, DVector<f64>) {
    let n = x.len();
    let grad = |z: &DVector<f64>, t: f64| -> (DVector<f64>, f64) {
        let res = x - support_data(sys, z.as_slice(), t, false).endpoint;
        let rn = res.norm();
        let g = (&res - z * res.dot(z)) / support_rate(sys, z, t).max(1e-300);
        (g, rn)
    };
    let mut z = z0.normalize();
    let mut t = t0;
    let (mut g, mut rn) = grad(&z, t);
    let mut hinv = DMatrix::<f64>::identity(n, n);
    for _ in 0..max_iter {
        if rn <= tol {
            break;
        }
        let p = DMatrix::identity(n, n) - &z * z.transpose();
        let mut d = &p * &hinv * &g;
        if !(d.dot(&g) > 0.0) {
            hinv = DMatrix::identity(n, n);
            d = g.clone();
        }
        let dn = d.norm();
        if dn > 0.5 {
            d *= 0.5 / dn;
        }
        let mut alpha = 1.0;
        let mut next = None;
        while alpha > 1e-12 {
            let nz = (&z + &d * alpha).normalize();
            if let Some(nt) = neustadt_time(sys, &nz, nz.dot(x)).filter(|nt| *nt > t) {
                next = Some((nz, nt));
                break;
            }
            alpha *= 0.5;
        }
        let Some((nz, nt)) = next else { break };
        let (ng, nrn) = grad(&nz, nt);
        // curvature pair for minimizing -t, transported by projection
        let pn = DMatrix::identity(n, n) - &nz * nz.transpose();
        let sv = &pn * (&nz - &z);
        let yv = &pn * (&g - &ng);
        let sy = sv.dot(&yv);
        if sy > 1e-16 * sv.norm() * yv.norm() {
            let rho = 1.0 / sy;
            let i = DMatrix::identity(n, n);
            let l = &i - &sv * yv.transpose() * rho;
            let r = &i - &yv * sv.transpose() * rho;
            hinv = &l * &hinv * &r + &sv * sv.transpose() * rho;
        }
        z = nz;
        t = nt;
        g = ng;
        rn = nrn;
    }
    (t, z)
}

fn lm_solve(sys: &LinearSystem, x: &DVector<f64>, r0: f64, z0: &DVector<f64>, tol: f64) -> (f64, DVector<f64>, f64) {
    let n = sys.n();
    let mut r = r0;
    let mut z = z0.normalize();
    let mut d = support_data(sys, z.as_slice(), r, true);
    let mut res = &d.endpoint - x;
    let mut rn = res.norm();
    let mut lambda = 1e-6;
    let flow = sys.flow(Direction::Reversed);
    for _ in 0..200 {
        if rn <= tol {
            break;
        }
        let mut jr = DVector::zeros(n);
        let mut v: V = [0.0; MAXN];
        for i in 0..sys.m() {
            flow.eval(i, r, &mut v, None);
            let s = d.final_signs[i] as f64;
            for k in 0..n {
                jr[k] += s * v[k];
            }
        }
        let q = tangent_basis(&z);
        let h = d.hessian.clone().unwrap_or_else(|| DMatrix::zeros(n, n));
        let jz = h * &q;
        let mut j = DMatrix::zeros(n, n);
        j.set_column(0, &jr);
        for c in 0..n - 1 {
            j.set_column(c + 1, &jz.column(c));
        }
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &res;
        let mut improved = false;
        for _ in 0..30 {
            let mut m = jtj.clone();
            for k in 0..n {
                m[(k, k)] += lambda * (jtj[(k, k)].max(1e-12));
            }
            let step = match m.lu().solve(&(-&g)) {
                Some(s) => s,
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let nr = (r + step[0]).max(0.5 * r);
            let dz = &q * step.rows(1, n - 1);
            let nz = (&z + dz).normalize();
            let nd = support_data(sys, nz.as_slice(), nr, true);
            let nres = &nd.endpoint - x;
            let nrn = nres.norm();
            if nrn < rn {
                r = nr;
                z = nz;
                d = nd;
                res = nres;
                rn = nrn;
                lambda = (lambda / 3.0).max(1e-15);
                improved = true;
                break;
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                break;
            }
        }
        if !improved {
            break;
        }
    }
    (r, z, rn)
}

/// Minimum time by damped least squares on `E(r, ζ) = x`.
pub fn mintime_shooting(sys: &LinearSystem, x: &DVector<f64>, tol: f64) -> Result<MinTimeResult> {
    sys.require_normal()?;
    check_point(sys, x)?;
    if !(tol > 0.0) {
        return Err(Error::Invalid(format!("tolerance must be positive, got {tol}")));
    }
    let n = sys.n();
    if x.norm() == 0.0 {
        return Ok(MinTimeResult {
            t: 0.0,
            zeta_star: first_axis(n).as_slice().to_vec(),
            solver: Solver::Shooting,
            residual: 0.0,
        });
    }
    let mut starts: Vec<(f64, DVector<f64>)> = seeds(n)
        .iter()
        .filter_map(|z| {
            let c = z.dot(x);
            neustadt_time(sys, z, c).map(|t| (t, z.clone()))
        })
        .collect();
    if starts.is_empty() {
        return Err(Error::Unreachable(T_MAX));
    }
    starts.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best: Option<(f64, DVector<f64>, f64)> = None;
    for (t0, z0) in starts.iter().take(TOP_STARTS) {
        // a coarse ascent usually lands in the basin of Newton; otherwise climb
        // the rest of the way before polishing again
        let (t1, z1) = neustadt_ascent(sys, x, *t0, z0, 1e-4 * (1.0 + x.norm()), 60);
        let (mut r, mut z, mut rn) = lm_solve(sys, x, t1, &z1, tol);
        if rn > tol {
            let (t2, z2) = neustadt_ascent(sys, x, t1, &z1, tol, 400);
            (r, z, rn) = lm_solve(sys, x, t2, &z2, tol);
        }
        if best.as_ref().is_none_or(|b| rn < b.2) {
            best = Some((r, z, rn));
        }
        if rn <= tol {
            break;
        }
    }
    let (r, z, rn) = best.expect("nonempty starts");
    if rn > tol {
        return Err(Error::NoConvergence(format!(
            "shooting residual {rn:e} above tolerance {tol:e} from all starts"
        )));
    }
    Ok(MinTimeResult { t: r, zeta_star: z.as_slice().to_vec(), solver: Solver::Shooting, residual: rn })
}

/// Newton polish of `(T, ζ*)` on `E(T, ζ) = x`, for callers that integrate
/// the synthesized control and need the normal to more digits than the time.
/// Returns the input unchanged unless the endpoint residual improves.
pub fn refine_costate(sys: &LinearSystem, x: &DVector<f64>, res: &MinTimeResult, tol: f64) -> MinTimeResult {
    if res.t == 0.0 {
        return res.clone();
    }
    let z0 = DVector::from_column_slice(&res.zeta_star);
    let before = (support_data(sys, z0.as_slice(), res.t, false).endpoint - x).norm();
    let (r, z, rn) = lm_solve(sys, x, res.t, &z0, tol);
    if rn < before && (r - res.t).abs() <= 1e-3 * res.t.max(1.0) {
        MinTimeResult { t: r, zeta_star: z.as_slice().to_vec(), solver: res.solver, residual: res.residual }
    } else {
        res.clone()
    }
}

// ---------------------------------------------------------------------------
// normal cone

/// Unit normals of `R_T` at a boundary point `x`. A smooth point yields one
/// vector; a corner yields the extreme rays of its cone in the plane, or the
/// distinct maximisers found in higher dimension.
pub fn normal_cone_at(sys: &LinearSystem, x: &DVector<f64>, t: f64, tol: f64) -> Result<Vec<DVector<f64>>> {
    sys.require_normal()?;
    check_point(sys, x)?;
    let prob = GapProblem { sys, x, t };
    let best = prob.maximize(None, None);
    if best.value.abs() > tol {
        return Ok(Vec::new());
    }
    let n = sys.n();
    let eps = 1e-12 * (1.0 + x.norm()) + 1e-3 * tol;
    let level = best.value - eps;
    if n == 2 {
        let th0 = best.u[1].atan2(best.u[0]);
        let at = |th: f64| DVector::from_vec(vec![th.cos(), th.sin()]);
        // The gap falls off quadratically past an edge while the maximiser
        // moves linearly, so the endpoint test sets the edge precision.
        let slack = 1e-7 * (1.0 + x.norm()) + 4.0 * (&best.data.endpoint - x).norm();
        let ok = |th: f64| {
            let (val, d) = prob.eval(&at(th), false);
            val >= level && (&d.endpoint - x).norm() <= slack
        };
        let edge = |dir: f64| -> f64 {
            // exponential search for the first failing angle, then bisection
            let mut good = 0.0;
            let mut bad = 1e-7;
            while ok(th0 + dir * bad) {
                good = bad;
                bad *= 2.0;
                if bad > std::f64::consts::PI {
                    bad = std::f64::consts::PI;
                    if ok(th0 + dir * bad) {
                        return dir * bad;
                    }
                    break;
                }
            }
            while bad - good > 1e-9 {
                let mid = 0.5 * (good + bad);
                if ok(th0 + dir * mid) {
                    good = mid;
                } else {
                    bad = mid;
                }
            }
            // The slack lets the search run past the true edge; past it the
            // maximiser leaves x linearly, so extrapolate its distance to zero.
            let dist = |a: f64| (&prob.eval(&at(th0 + dir * a), false).1.endpoint - x).norm();
            let (a1, a2) = (good + 1e-5, good + 2e-5);
            let (d1, d2) = (dist(a1), dist(a2));
            if d2 > d1 && d1 > 0.0 {
                let root = a1 - d1 * (a2 - a1) / (d2 - d1);
                if root < good && root > good - 1e-3 && ok(th0 + dir * root) {
                    good = root;
                }
            }
            dir * good
        };
        let lo = edge(-1.0);
        let hi = edge(1.0);
        if hi - lo < 1e-4 {
            return Ok(vec![at(th0 + 0.5 * (lo + hi))]);
        }
        return Ok(vec![at(th0 + lo), at(th0 + hi)]);
    }
    let mut found: Vec<DVector<f64>> = Vec::new();
    for s in seeds(n) {
        let a = prob.ascend(s, None, 60);
        if a.value >= level && !found.iter().any(|f| f.dot(&a.u) > 1.0 - 5e-13) {
            found.push(a.u);
        }
    }
    // Ascent stalls where the gap is flat to working precision, which can be
    // a little outside the cone. Pull each maximiser back along the segment
    // to the best one until its endpoint is x; the cone is convex, so the
    // segment leaves it once.
    let dist = |u: &DVector<f64>| (&prob.eval(u, false).1.endpoint - x).norm();
    let ds: Vec<f64> = found.iter().map(dist).collect();
    if let Some(k) = (0..found.len()).min_by(|&a, &b| ds[a].total_cmp(&ds[b])) {
        let c = found[k].clone();
        let thr = (1e-12 * (1.0 + x.norm())).max(2.0 * ds[k]);
        if ds[k] <= 1e-10 * (1.0 + x.norm()) {
            for u in found.iter_mut() {
                let at = |t: f64| (&c * (1.0 - t) + &*u * t).normalize();
                let f = |t: f64| dist(&at(t)) - thr;
                let (mut a, mut b) = (0.0, 1.0);
                let (mut fa, mut fb) = (f(a), f(b));
                if fb <= 0.0 {
                    continue;
                }
                // Illinois regula falsi: the distance is linear past the edge
                for _ in 0..60 {
                    let m = b - fb * (b - a) / (fb - fa);
                    let fm = f(m);
                    if fm > 0.0 {
                        b = m;
                        fb = fm;
                        fa *= 0.5;
                    } else {
                        a = m;
                        fa = fm;
                        fb *= 0.5;
                    }
                    if b - a <= 1e-14 {
                        break;
                    }
                }
                *u = at(a);
            }
        }
    }
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    #[test]
    fn support_examples() {
        let di = catalog::linear("double-integrator").unwrap();
        for &t in &[0.0, 0.3, 1.0, 2.7] {
            assert!((support(&di, &v(&[0.0, 1.0]), t).unwrap() - t).abs() < 1e-12);
            assert!((support(&di, &v(&[1.0, 0.0]), t).unwrap() - t * t / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn membership_examples() {
        let di = catalog::linear("double-integrator").unwrap();
        let x = v(&[-0.5, 1.0]);
        assert_eq!(membership(&di, &v(&[0.0, 0.0]), 0.5, 1e-9).unwrap().class, MembershipClass::Interior);
        assert_eq!(membership(&di, &x, 1.0, 1e-9).unwrap().class, MembershipClass::Boundary);
        assert_eq!(membership(&di, &x, 2.0, 1e-9).unwrap().class, MembershipClass::Interior);
        assert_eq!(membership(&di, &x, 0.5, 1e-9).unwrap().class, MembershipClass::Outside);
    }

    #[test]
    fn bisection_examples() {
        let di = catalog::linear("double-integrator").unwrap();
        let r = mintime_bisection(&di, &v(&[1.0, 0.0]), 1e-8).unwrap();
        assert!((r.t - 2.0).abs() < 1e-6, "{}", r.t);
        let r = mintime_bisection(&di, &v(&[-0.5, 1.0]), 1e-8).unwrap();
        assert!((r.t - 1.0).abs() < 1e-6);
        assert_eq!(mintime_bisection(&di, &v(&[0.0, 0.0]), 1e-8).unwrap().t, 0.0);
    }

    #[test]
    fn shooting_examples() {
        let di = catalog::linear("double-integrator").unwrap();
        let r = mintime_shooting(&di, &v(&[0.5, -1.0]), 1e-10).unwrap();
        assert!((r.t - 1.0).abs() < 1e-8, "{}", r.t);
        let z = v(&r.zeta_star);
        let gap = z.dot(&v(&[0.5, -1.0])) - support(&di, &z, 1.0).unwrap();
        assert!(gap.abs() < 1e-8);
        let r = mintime_shooting(&di, &v(&[1.0, 0.0]), 1e-10).unwrap();
        assert!((r.t - 2.0).abs() < 1e-6);
        assert_eq!(mintime_shooting(&di, &v(&[0.0, 0.0]), 1e-10).unwrap().t, 0.0);
    }

    #[test]
    fn corner_has_two_extreme_normals() {
        let di = catalog::linear("double-integrator").unwrap();
        let c = normal_cone_at(&di, &v(&[-0.5, 1.0]), 1.0, 1e-8).unwrap();
        assert_eq!(c.len(), 2);
        let s = 0.5f64.sqrt();
        assert!(c.iter().any(|z| (z - v(&[s, s])).norm() < 1e-6), "{c:?}");
        assert!(c.iter().any(|z| (z - v(&[-1.0, 0.0])).norm() < 1e-6), "{c:?}");
    }

    #[test]
    fn smooth_point_has_unique_normal() {
        let di = catalog::linear("double-integrator").unwrap();
        let c = normal_cone_at(&di, &v(&[1.0, 0.0]), 2.0, 1e-8).unwrap();
        assert_eq!(c.len(), 1);
        let h = crate::pmp::hamiltonian(&di, &v(&[1.0, 0.0]), &c[0]).value;
        assert!(h < 0.0);
        assert!(normal_cone_at(&di, &v(&[1.0, 0.0]), 3.0, 1e-8).unwrap().is_empty());
    }
}
