//! The set `𝒮` of non-Lipschitz points of `T` for normal linear systems.
//!
//! Points are parametrized by `(r, ζ)` with `ζ ∈ Z = {|ζ| = 1, ⟨ζ, b_i⟩ = 0}`:
//! `Φ(r, ζ) = Σ_i ∫_0^r e^{A(t-r)} b_i sign g⁺_i(t) dt` with the forward
//! switching function `g⁺_i(t) = ⟨ζ, e^{At} b_i⟩`.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::Direction;
use crate::linalg::{expint, expm, rank};
use crate::pmp::hamiltonian;
use crate::reach::{check_point, GapProblem};
use crate::sphere;
use crate::switching::{check_costate, find_zeros, SwitchingProfile};
use crate::system::LinearSystem;

/// Defect below which a costate is projected onto `Z`.
pub const Z_PROJECT_TOL: f64 = 1e-8;
/// Contract for every residual in [`SingularReport`].
pub const VERIFY_TOL: f64 = 1e-7;
pub const RANK_CHECK_TOL: f64 = 1e-9;
const GAP_CLASS_CAP: u64 = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularPoint {
    pub x: Vec<f64>,
    pub r: f64,
    pub zeta: Vec<f64>,
    /// `j[m-1]` counts zeros of multiplicity `m` of `g⁺` on `[0, r]`, all channels.
    pub j: Vec<usize>,
    pub d: u64,
    pub branch: i8,
}

impl SingularPoint {
    pub fn x_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x)
    }

    pub fn zeta_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.zeta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularReport {
    /// Normalized `e^{rAᵀ} ζ`.
    pub zeta_prime: Vec<f64>,
    pub residual_h: f64,
    pub residual_normal: Vec<f64>,
    pub residual_boundary: f64,
}

impl SingularReport {
    pub fn worst(&self) -> f64 {
        self.residual_normal
            .iter()
            .copied()
            .fold(self.residual_h.max(self.residual_boundary), f64::max)
    }

    pub fn passes(&self) -> bool {
        self.worst() <= VERIFY_TOL
    }
}

/// Orthonormal basis of `span{b_i}^⊥`, one column per direction, built by
/// Gram-Schmidt on the coordinate axes so axis-aligned cases stay exact.
pub fn z_basis(sys: &LinearSystem) -> Result<DMatrix<f64>> {
    let n = sys.n();
    if sys.k() == n {
        return Err(Error::SingularSetEmpty);
    }
    let mut span: Vec<DVector<f64>> = Vec::new();
    let push = |v: &DVector<f64>, span: &mut Vec<DVector<f64>>| -> Option<DVector<f64>> {
        let mut w = v.clone();
        for _ in 0..2 {
            for s in span.iter() {
                let c = s.dot(&w);
                if c != 0.0 {
                    w -= s * c;
                }
            }
        }
        let nw = w.norm();
        (nw > 1e-8 * v.norm().max(1e-300)).then(|| {
            let u = w / nw;
            span.push(u.clone());
            u
        })
    };
    for b in sys.columns() {
        push(b, &mut span);
    }
    let mut basis = Vec::with_capacity(n - sys.k());
    for e in 0..n {
        if basis.len() == n - sys.k() {
            break;
        }
        if let Some(u) = push(&DVector::from_fn(n, |r, _| if r == e { 1.0 } else { 0.0 }), &mut span) {
            basis.push(u);
        }
    }
    Ok(DMatrix::from_columns(&basis))
}

/// `n` quasi-uniform unit vectors of `Z`.
pub fn sample_z(sys: &LinearSystem, n: usize) -> Result<Vec<DVector<f64>>> {
    let q = z_basis(sys)?;
    Ok(sphere::quasi_uniform(q.ncols(), n).into_iter().map(|u| &q * u).collect())
}

/// Projects a near-`Z` costate onto `Z`, rejecting defects above
/// [`Z_PROJECT_TOL`].
pub fn project_to_z(sys: &LinearSystem, zeta: &DVector<f64>) -> Result<DVector<f64>> {
    check_costate(sys, zeta)?;
    let z = zeta.normalize();
    let defect = sys.columns().iter().map(|b| z.dot(b).abs()).fold(0.0, f64::max);
    if defect == 0.0 {
        return Ok(z);
    }
    if defect > Z_PROJECT_TOL {
        return Err(Error::NotInZ(defect));
    }
    let q = z_basis(sys)?;
    let p = &q * (q.transpose() * &z);
    let pn = p.norm();
    if pn == 0.0 {
        return Err(Error::NotInZ(defect));
    }
    Ok(p / pn)
}

fn multiplicity_vector(n: usize, profiles: &[SwitchingProfile]) -> Vec<usize> {
    let mut j = vec![0; n - 1];
    for p in profiles {
        for z in &p.zeros {
            let m = z.multiplicity.clamp(1, n - 1);
            j[m - 1] += 1;
        }
    }
    j
}

fn gap_class(profiles: &[SwitchingProfile]) -> u64 {
    let gap = profiles
        .iter()
        .flat_map(|p| p.zeros.windows(2).map(|w| w[1].t - w[0].t))
        .fold(f64::INFINITY, f64::min);
    if !gap.is_finite() {
        return 1;
    }
    if gap <= 0.0 {
        return GAP_CLASS_CAP;
    }
    ((1.0 / gap).ceil() as u64).clamp(1, GAP_CLASS_CAP)
}

/// `Φ(r, ζ)` assembled piecewise between the forward zeros.
pub fn singular_point(sys: &LinearSystem, zeta: &DVector<f64>, r: f64) -> Result<SingularPoint> {
    sys.require_normal()?;
    let z = project_to_z(sys, zeta)?;
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Invalid(format!("r must be finite and > 0, got {r}")));
    }
    let profiles = (0..sys.m())
        .map(|i| find_zeros(sys, &z, i, r, Direction::Forward))
        .collect::<Result<Vec<_>>>()?;
    let mut acc = DVector::zeros(sys.n());
    for (i, p) in profiles.iter().enumerate() {
        for piece in &p.pattern {
            if piece.sign != 0 && piece.end > piece.start {
                acc += expint(sys.a(), sys.column(i), piece.start, piece.end, 1.0)? * piece.sign as f64;
            }
        }
    }
    let x = expm(sys.a(), -r)? * acc;
    Ok(SingularPoint {
        x: x.as_slice().to_vec(),
        r,
        zeta: z.as_slice().to_vec(),
        j: multiplicity_vector(sys.n(), &profiles),
        d: gap_class(&profiles),
        branch: profiles[0].initial_sign,
    })
}

/// Residuals of the vanishing-Hamiltonian characterization at `p`.
pub fn verify_singular(sys: &LinearSystem, p: &SingularPoint) -> Result<SingularReport> {
    let x = p.x_vec();
    check_point(sys, &x)?;
    let zeta = p.zeta_vec();
    check_costate(sys, &zeta)?;
    let zp = (expm(&sys.a().transpose(), p.r)? * zeta).normalize();
    let residual_h = hamiltonian(sys, &x, &zp).value.abs();
    let e = expm(sys.a(), -p.r)?;
    let residual_normal = sys.columns().iter().map(|b| zp.dot(&(&e * b)).abs()).collect();
    let best = GapProblem { sys, x: &x, t: p.r }.maximize(Some(&zp), None);
    Ok(SingularReport {
        zeta_prime: zp.as_slice().to_vec(),
        residual_h,
        residual_normal,
        residual_boundary: best.value.abs(),
    })
}

/// Product sample over `n_zeta` points of `Z` and a geometric grid of `n_r`
/// radii on `[r_min, r_max]`, ordered by `ζ` then `r`.
pub fn sample_singular(
    sys: &LinearSystem,
    n_zeta: usize,
    r_min: f64,
    r_max: f64,
    n_r: usize,
) -> Result<Vec<SingularPoint>> {
    if !(r_min > 0.0 && r_max >= r_min && r_max.is_finite()) {
        return Err(Error::Invalid(format!("need 0 < r_min <= r_max, got [{r_min}, {r_max}]")));
    }
    let zs = sample_z(sys, n_zeta)?;
    let rs = geometric_grid(r_min, r_max, n_r);
    let pairs: Vec<(usize, usize)> = (0..zs.len()).flat_map(|a| (0..rs.len()).map(move |b| (a, b))).collect();
    pairs.par_iter().map(|&(a, b)| singular_point(sys, &zs[a], rs[b])).collect()
}

/// Costates of `Z` spaced so that neighbouring points `Φ(r_max, ·)` lie
/// within `h` of each other. On a circle `Z` the angles are bisected until
/// the images are `h`-dense; otherwise this falls back to [`sample_z`] with
/// `n_fallback` points.
pub fn dense_z(sys: &LinearSystem, r_max: f64, h: f64, n_fallback: usize) -> Result<Vec<DVector<f64>>> {
    let q = z_basis(sys)?;
    if q.ncols() != 2 {
        return sample_z(sys, n_fallback);
    }
    if !(h > 0.0) {
        return Err(Error::Invalid(format!("spacing must be positive, got {h}")));
    }
    const START: usize = 64;
    const MAX_DEPTH: u32 = 40;
    let at = |th: f64| &q * DVector::from_vec(vec![th.cos(), th.sin()]);
    let image = |th: f64| singular_point(sys, &at(th), r_max).map(|p| p.x_vec());
    let step = 2.0 * std::f64::consts::PI / START as f64;
    let mut out = Vec::new();
    for k in 0..START {
        let (a, b) = (k as f64 * step, (k + 1) as f64 * step);
        let mut stack = vec![(a, image(a)?, b, image(b)?, 0u32)];
        while let Some((a, xa, b, xb, depth)) = stack.pop() {
            if (&xa - &xb).norm() <= h || depth >= MAX_DEPTH {
                out.push(at(a));
                continue;
            }
            let m = 0.5 * (a + b);
            let xm = image(m)?;
            stack.push((m, xm.clone(), b, xb, depth + 1));
            stack.push((a, xa, m, xm, depth + 1));
        }
    }
    Ok(out)
}

/// [`sample_singular`] over [`dense_z`] costates.
pub fn sample_singular_dense(
    sys: &LinearSystem,
    r_min: f64,
    r_max: f64,
    n_r: usize,
    h: f64,
) -> Result<Vec<SingularPoint>> {
    if !(r_min > 0.0 && r_max >= r_min && r_max.is_finite()) {
        return Err(Error::Invalid(format!("need 0 < r_min <= r_max, got [{r_min}, {r_max}]")));
    }
    let zs = dense_z(sys, r_max, h, 4096)?;
    let rs = geometric_grid(r_min, r_max, n_r);
    let pairs: Vec<(usize, usize)> = (0..zs.len()).flat_map(|a| (0..rs.len()).map(move |b| (a, b))).collect();
    pairs.par_iter().map(|&(a, b)| singular_point(sys, &zs[a], rs[b])).collect()
}

/// Positions only of [`sample_singular_dense`], for large clouds.
pub fn singular_cloud(sys: &LinearSystem, r_min: f64, r_max: f64, n_r: usize, h: f64) -> Result<Vec<Vec<f64>>> {
    if !(r_min > 0.0 && r_max >= r_min && r_max.is_finite()) {
        return Err(Error::Invalid(format!("need 0 < r_min <= r_max, got [{r_min}, {r_max}]")));
    }
    let zs = dense_z(sys, r_max, h, 4096)?;
    let rs = geometric_grid(r_min, r_max, n_r);
    let pairs: Vec<(usize, usize)> = (0..zs.len()).flat_map(|a| (0..rs.len()).map(move |b| (a, b))).collect();
    pairs.par_iter().map(|&(a, b)| singular_point(sys, &zs[a], rs[b]).map(|p| p.x)).collect()
}

pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![hi],
        _ => {
            let q = (hi / lo).ln() / (n - 1) as f64;
            (0..n).map(|k| if k + 1 == n { hi } else { lo * (q * k as f64).exp() }).collect()
        }
    }
}

// ---------------------------------------------------------------------------
// small-time strata

/// Points of `S(τ)` with exactly `label` interior switchings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumSample {
    pub tau: f64,
    pub label: usize,
    pub points: Vec<SingularPoint>,
    /// Switch times `s = τ - t` of each point, measured along the optimal
    /// trajectory from `x`, per channel.
    pub switch_times: Vec<Vec<Vec<f64>>>,
    /// Rank of `{e^{-A s} b_i}` over each point's switch times.
    pub ranks: Vec<usize>,
    /// Number of connected families, one per initial sign.
    pub families: usize,
}

/// Strata of `S(τ)`, refusing horizons above the validated small-time bound.
pub fn stratify_slice(sys: &LinearSystem, tau: f64, n_zeta: usize) -> Result<Vec<StratumSample>> {
    let bound = sys.tau_small();
    if tau > bound {
        return Err(Error::TauTooLarge { tau, bound });
    }
    stratify_slice_raw(sys, tau, n_zeta)
}

/// As [`stratify_slice`] without the horizon check; above the bound the
/// ranks carry no contract.
pub fn stratify_slice_raw(sys: &LinearSystem, tau: f64, n_zeta: usize) -> Result<Vec<StratumSample>> {
    sys.require_normal()?;
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Invalid(format!("tau must be finite and > 0, got {tau}")));
    }
    let zs = sample_z(sys, n_zeta)?;
    let rows = zs
        .par_iter()
        .map(|z| -> Result<(SingularPoint, Vec<Vec<f64>>)> {
            let p = singular_point(sys, z, tau)?;
            let zv = p.zeta_vec();
            let times = (0..sys.m())
                .map(|i| {
                    let prof = find_zeros(sys, &zv, i, tau, Direction::Forward)?;
                    let mut s: Vec<f64> = prof.switch_times().into_iter().map(|t| tau - t).collect();
                    s.sort_by(f64::total_cmp);
                    Ok(s)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((p, times))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut strata: Vec<StratumSample> = Vec::new();
    for (p, times) in rows {
        let label: usize = times.iter().map(Vec::len).sum();
        let idx = match strata.iter().position(|s| s.label == label) {
            Some(i) => i,
            None => {
                strata.push(StratumSample {
                    tau,
                    label,
                    points: Vec::new(),
                    switch_times: Vec::new(),
                    ranks: Vec::new(),
                    families: 0,
                });
                strata.len() - 1
            }
        };
        let s = &mut strata[idx];
        // S_0 is a finite set; keep one representative per point.
        if label == 0 {
            let x = p.x_vec();
            if s.points.iter().any(|q| (q.x_vec() - &x).norm() <= 1e-12 * (1.0 + x.norm())) {
                continue;
            }
        }
        s.ranks.push(rank_check_channels(sys, &times));
        s.switch_times.push(times);
        s.points.push(p);
    }
    for s in &mut strata {
        let branches: HashSet<i8> = s.points.iter().map(|p| p.branch).collect();
        s.families = branches.len();
    }
    strata.sort_by_key(|s| s.label);
    Ok(strata)
}

/// Numerical rank of `[e^{-A s_1} b_i, ..., e^{-A s_j} b_i]`.
pub fn rank_check(sys: &LinearSystem, channel: usize, times: &[f64]) -> Result<usize> {
    sys.check_channel(channel)?;
    let mut per = vec![Vec::new(); sys.m()];
    per[channel] = times.to_vec();
    Ok(rank_check_channels(sys, &per))
}

/// Rank of `{e^{-A s} b_i : s ∈ times[i]}` across channels.
pub fn rank_check_channels(sys: &LinearSystem, times: &[Vec<f64>]) -> usize {
    let cols: Vec<DVector<f64>> = times
        .iter()
        .enumerate()
        .flat_map(|(i, ts)| {
            ts.iter().map(move |&s| expm(sys.a(), -s).map(|e| e * sys.column(i)))
        })
        .filter_map(|r| r.ok())
        .collect();
    if cols.is_empty() {
        return 0;
    }
    rank(&DMatrix::from_columns(&cols), RANK_CHECK_TOL)
}

/// Continues the reversed extremal through `p` with the same `ζ` up to
/// `r_max`, verifying every sample.
pub fn extend_by_invariance(
    sys: &LinearSystem,
    p: &SingularPoint,
    r_max: f64,
    samples: usize,
) -> Result<Vec<SingularPoint>> {
    if !(r_max >= p.r) {
        return Err(Error::Invalid(format!("r_max = {r_max} is below r = {}", p.r)));
    }
    let zeta = p.zeta_vec();
    let k = if r_max == p.r { 1 } else { samples.max(2) };
    let mut out = Vec::with_capacity(k);
    for s in 0..k {
        let r = if k == 1 { p.r } else { p.r + (r_max - p.r) * s as f64 / (k - 1) as f64 };
        let q = singular_point(sys, &zeta, r)?;
        let rep = verify_singular(sys, &q)?;
        if !rep.passes() {
            return Err(Error::VerificationFailed {
                r,
                detail: format!(
                    "|h| = {:e}, normal = {:?}, boundary = {:e}",
                    rep.residual_h, rep.residual_normal, rep.residual_boundary
                ),
            });
        }
        out.push(q);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// dimension

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DimensionFit {
    pub dimension: f64,
    pub r_squared: f64,
    pub scales: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Box-counting slope of `log N(ε)` against `log(1/ε)`.
pub fn box_dimension(points: &[Vec<f64>], scales: &[f64]) -> Result<DimensionFit> {
    if scales.len() < 2 || scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::Invalid("need at least two positive scales".into()));
    }
    let mut sorted = scales.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.dedup();
    if sorted.len() < 2 {
        return Err(Error::Invalid("scales must be distinct".into()));
    }
    if points.is_empty() {
        return Err(Error::Invalid("no points".into()));
    }
    let counts: Vec<usize> = sorted
        .iter()
        .map(|&e| {
            points
                .iter()
                .map(|p| p.iter().map(|c| (c / e).floor() as i64).collect::<Vec<_>>())
                .collect::<HashSet<_>>()
                .len()
        })
        .collect();
    let xs: Vec<f64> = sorted.iter().map(|e| (1.0 / e).ln()).collect();
    let ys: Vec<f64> = counts.iter().map(|&c| (c as f64).ln()).collect();
    let (slope, r2) = linear_fit(&xs, &ys);
    Ok(DimensionFit { dimension: slope, r_squared: r2, scales: sorted, counts })
}

/// Least-squares slope and `R²`; a constant response has `R² = 1`.
pub(crate) fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, r2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_vec(x.to_vec())
    }

    #[test]
    fn z_samples() {
        let di = catalog::linear("double-integrator").unwrap();
        let z = sample_z(&di, 5).unwrap();
        assert_eq!(z, vec![v(&[1.0, 0.0]), v(&[-1.0, 0.0])]);
        let ti = catalog::linear("triple-integrator").unwrap();
        for z in sample_z(&ti, 40).unwrap() {
            assert!(z[2].abs() < 1e-15 && (z.norm() - 1.0).abs() < 1e-14);
        }
        let two = catalog::linear("double-integrator-2input").unwrap();
        assert!(matches!(sample_z(&two, 4), Err(Error::SingularSetEmpty)));
    }

    #[test]
    fn projection_tolerance() {
        let di = catalog::linear("double-integrator").unwrap();
        let p = project_to_z(&di, &v(&[1.0, 1e-9])).unwrap();
        assert_eq!(p, v(&[1.0, 0.0]));
        assert!(matches!(project_to_z(&di, &v(&[1.0, 1e-3])), Err(Error::NotInZ(_))));
    }

    #[test]
    fn double_integrator_point() {
        let di = catalog::linear("double-integrator").unwrap();
        let p = singular_point(&di, &v(&[1.0, 0.0]), 1.0).unwrap();
        assert!((p.x_vec() - v(&[-0.5, 1.0])).norm() < 1e-14);
        assert_eq!(p.j, vec![1]);
        assert_eq!((p.d, p.branch), (1, 1));
        let rep = verify_singular(&di, &p).unwrap();
        assert!(rep.passes(), "{rep:?}");
        let s = 0.5f64.sqrt();
        assert!((v(&rep.zeta_prime) - v(&[s, s])).norm() < 1e-14);
    }

    #[test]
    fn triple_integrator_point() {
        let ti = catalog::linear("triple-integrator").unwrap();
        let r = 0.7;
        let p = singular_point(&ti, &v(&[0.0, 1.0, 0.0]), r).unwrap();
        let want = v(&[r * r * r / 6.0, -r * r / 2.0, r]);
        assert!((p.x_vec() - want).norm() < 1e-13, "{:?}", p.x);
        let small = singular_point(&ti, &v(&[0.0, 1.0, 0.0]), 1e-9).unwrap();
        assert!(small.x_vec().norm() < 1e-8);
    }

    #[test]
    fn central_symmetry() {
        let ti = catalog::linear("triple-integrator").unwrap();
        let z = v(&[0.8, -0.6, 0.0]);
        let a = singular_point(&ti, &z, 0.9).unwrap();
        let b = singular_point(&ti, &-z, 0.9).unwrap();
        assert_eq!(a.x_vec(), -b.x_vec());
    }

    #[test]
    fn rank_examples() {
        let ti = catalog::linear("triple-integrator").unwrap();
        assert_eq!(rank_check(&ti, 0, &[0.1, 0.3]).unwrap(), 2);
        assert_eq!(rank_check(&ti, 0, &[0.2]).unwrap(), 1);
        assert_eq!(rank_check(&ti, 0, &[0.2, 0.2]).unwrap(), 1);
    }

    #[test]
    fn double_integrator_slice() {
        let di = catalog::linear("double-integrator").unwrap();
        let tau = di.tau_small().min(1.0);
        let s = stratify_slice(&di, tau, 2).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].label, s[0].points.len()), (0, 2));
        assert!(stratify_slice(&di, tau, 0).unwrap().is_empty());
        assert!(matches!(stratify_slice(&di, 10.0 * tau + 10.0, 2), Err(Error::TauTooLarge { .. })));
    }

    #[test]
    fn extension_follows_switching_curve() {
        let di = catalog::linear("double-integrator").unwrap();
        let p = singular_point(&di, &v(&[1.0, 0.0]), 1.0).unwrap();
        let path = extend_by_invariance(&di, &p, 2.0, 6).unwrap();
        for q in &path {
            assert!((q.x_vec() - v(&[-q.r * q.r / 2.0, q.r])).norm() < 1e-12);
        }
        assert_eq!(extend_by_invariance(&di, &p, 1.0, 6).unwrap().len(), 1);
    }

    #[test]
    fn box_dimension_trivial() {
        let pts = vec![vec![0.3, 0.3]; 2000];
        let f = box_dimension(&pts, &[0.5, 0.25, 0.125, 0.0625]).unwrap();
        assert_eq!(f.dimension, 0.0);
        assert!(box_dimension(&pts, &[0.5]).is_err());
    }
}
