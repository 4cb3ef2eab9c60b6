//! Grid probes for non-Lipschitz behaviour of `T`.
//!
//! The classifier reads the largest difference quotient `|ΔT| / |Δx|` between
//! a node and the nodes in the annulus `ρ/2 < |y - x| ≤ ρ`, for radii of 8, 4
//! and 2 cells. Across a square-root singularity the quotient grows by about
//! `√2` per halving; at a Lipschitz point it settles.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reach::mintime_bisection;
use crate::singular::linear_fit;
use crate::system::LinearSystem;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub res: Vec<usize>,
    /// Row-major with the last axis fastest.
    pub values: Vec<f64>,
    pub status: Vec<NodeStatus>,
    pub solver: String,
    pub tol: f64,
}

impl GridField {
    pub fn dim(&self) -> usize {
        self.res.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spacing(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|a| if self.res[a] > 1 { (self.hi[a] - self.lo[a]) / (self.res[a] - 1) as f64 } else { 0.0 })
            .collect()
    }

    /// Smallest positive spacing: the unit for radii given in cells.
    pub fn cell(&self) -> f64 {
        self.spacing().into_iter().filter(|h| *h > 0.0).fold(f64::INFINITY, f64::min)
    }

    pub fn index_of(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.res).fold(0, |acc, (i, r)| acc * r + i)
    }

    pub fn multi_index(&self, mut k: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            out[a] = k % self.res[a];
            k /= self.res[a];
        }
        out
    }

    pub fn coords(&self, k: usize) -> Vec<f64> {
        let h = self.spacing();
        self.multi_index(k).iter().enumerate().map(|(a, &i)| self.lo[a] + h[a] * i as f64).collect()
    }

    /// Nearest node to `x`, if `x` lies in the box.
    pub fn nearest(&self, x: &[f64]) -> Option<usize> {
        let h = self.spacing();
        let mut multi = Vec::with_capacity(self.dim());
        for a in 0..self.dim() {
            if x[a] < self.lo[a] - 0.5 * h[a] || x[a] > self.hi[a] + 0.5 * h[a] {
                return None;
            }
            let i = if h[a] > 0.0 { ((x[a] - self.lo[a]) / h[a]).round() as usize } else { 0 };
            multi.push(i.min(self.res[a] - 1));
        }
        Some(self.index_of(&multi))
    }

    fn valid(&self, k: usize) -> bool {
        self.status[k] == NodeStatus::Ok && self.values[k].is_finite()
    }
}

fn check_grid(lo: &[f64], hi: &[f64], res: &[usize]) -> Result<()> {
    if lo.len() != hi.len() || lo.len() != res.len() || lo.is_empty() {
        return Err(Error::Dimension(format!(
            "box has {} lower and {} upper bounds for {} resolutions",
            lo.len(),
            hi.len(),
            res.len()
        )));
    }
    for a in 0..lo.len() {
        if !(lo[a].is_finite() && hi[a].is_finite() && lo[a] < hi[a]) {
            return Err(Error::Invalid(format!("axis {a}: need finite lo < hi, got [{}, {}]", lo[a], hi[a])));
        }
        if res[a] < 2 {
            return Err(Error::Invalid(format!("axis {a}: resolution must be at least 2")));
        }
    }
    Ok(())
}

/// Samples `f` at every node in parallel. Failures are recorded per node.
pub fn eval_grid_with<F>(lo: &[f64], hi: &[f64], res: &[usize], solver: &str, tol: f64, f: F) -> Result<GridField>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    check_grid(lo, hi, res)?;
    let mut field = GridField {
        lo: lo.to_vec(),
        hi: hi.to_vec(),
        res: res.to_vec(),
        values: Vec::new(),
        status: Vec::new(),
        solver: solver.to_string(),
        tol,
    };
    let count: usize = res.iter().product();
    let out: Vec<(f64, NodeStatus)> = (0..count)
        .into_par_iter()
        .map(|k| match f(&field.coords(k)) {
            Ok(v) if v.is_finite() => (v, NodeStatus::Ok),
            _ => (f64::NAN, NodeStatus::Failed),
        })
        .collect();
    (field.values, field.status) = out.into_iter().unzip();
    Ok(field)
}

/// `T` at every node via [`mintime_bisection`].
pub fn eval_grid(sys: &LinearSystem, lo: &[f64], hi: &[f64], res: &[usize], tol: f64) -> Result<GridField> {
    sys.require_normal()?;
    if lo.len() != sys.n() {
        return Err(Error::Dimension(format!("box has dimension {}, N = {}", lo.len(), sys.n())));
    }
    eval_grid_with(lo, hi, res, "bisection", tol, |x| {
        mintime_bisection(sys, &DVector::from_column_slice(x), tol).map(|r| r.t)
    })
}

// ---------------------------------------------------------------------------
// quotients

/// Index offsets with their lengths for the annulus `ρ/2 < |d| ≤ ρ`.
fn annulus(field: &GridField, rho: f64) -> Vec<(Vec<isize>, f64)> {
    let h = field.spacing();
    let reach: Vec<isize> = h.iter().map(|&ha| if ha > 0.0 { (rho / ha).floor() as isize } else { 0 }).collect();
    let mut out = Vec::new();
    let mut cur = reach.iter().map(|r| -r).collect::<Vec<_>>();
    loop {
        let d = cur.iter().zip(&h).map(|(&c, &ha)| (c as f64 * ha).powi(2)).sum::<f64>().sqrt();
        if d > 0.5 * rho && d <= rho * (1.0 + 1e-12) {
            out.push((cur.clone(), d));
        }
        let mut a = cur.len();
        loop {
            if a == 0 {
                return out;
            }
            a -= 1;
            if cur[a] < reach[a] {
                cur[a] += 1;
                break;
            }
            cur[a] = -reach[a];
        }
    }
}

fn scan_with(field: &GridField, node: usize, stencils: &[Vec<(Vec<isize>, f64)>]) -> Vec<Option<f64>> {
    let base = field.multi_index(node);
    let t0 = field.values[node];
    stencils
        .iter()
        .map(|st| {
            if !field.valid(node) || st.is_empty() {
                return None;
            }
            let mut q: f64 = 0.0;
            let mut idx = vec![0usize; base.len()];
            for (off, d) in st {
                for a in 0..base.len() {
                    let v = base[a] as isize + off[a];
                    if v < 0 || v >= field.res[a] as isize {
                        return None;
                    }
                    idx[a] = v as usize;
                }
                let k = field.index_of(&idx);
                if !field.valid(k) {
                    return None;
                }
                q = q.max((field.values[k] - t0).abs() / d);
            }
            Some(q)
        })
        .collect()
}

/// Largest difference quotient over each annulus around `node`; `None` where
/// the annulus leaves the grid or meets a failed node.
pub fn quotient_scan(field: &GridField, node: usize, radii: &[f64]) -> Vec<Option<f64>> {
    let stencils: Vec<_> = radii.iter().map(|&r| annulus(field, r)).collect();
    scan_with(field, node, &stencils)
}

// ---------------------------------------------------------------------------
// classification

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Label {
    Lipschitz,
    NonLipschitz,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// Growth per halving required at every scale for a non-Lipschitz label.
    pub gamma: f64,
    /// Growth per halving below which, at every scale, a node is Lipschitz.
    pub gamma_lip: f64,
    /// Radii in cells, decreasing by halves.
    pub radii_cells: Vec<f64>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { gamma: 1.15, gamma_lip: 1.05, radii_cells: vec![8.0, 4.0, 2.0] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub thresholds: Thresholds,
    pub radii: Vec<f64>,
    pub quotients: Vec<Vec<Option<f64>>>,
    pub labels: Vec<Label>,
    /// The probe tests finitely many directions; a Lipschitz label is
    /// evidence, not proof.
    pub note: String,
}

impl ProbeReport {
    pub fn nodes_with(&self, label: Label) -> Vec<usize> {
        (0..self.labels.len()).filter(|&k| self.labels[k] == label).collect()
    }
}

fn growth(big: f64, small: f64) -> f64 {
    if big > 0.0 {
        small / big
    } else if small > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

pub fn label_from(quotients: &[Option<f64>], th: &Thresholds) -> Label {
    let Some(q) = quotients.iter().copied().collect::<Option<Vec<f64>>>() else {
        return Label::Inconclusive;
    };
    if q.len() < 2 {
        return Label::Inconclusive;
    }
    let ratios: Vec<f64> = q.windows(2).map(|w| growth(w[0], w[1])).collect();
    if ratios.iter().all(|&r| r >= th.gamma) {
        Label::NonLipschitz
    } else if ratios.iter().all(|&r| r < th.gamma_lip) {
        Label::Lipschitz
    } else {
        Label::Inconclusive
    }
}

pub fn classify(field: &GridField, th: &Thresholds) -> Result<ProbeReport> {
    if th.radii_cells.len() < 2 || th.radii_cells.windows(2).any(|w| !(w[1] < w[0])) || th.radii_cells.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::Invalid("radii must be positive and strictly decreasing, at least two".into()));
    }
    let cell = field.cell();
    let radii: Vec<f64> = th.radii_cells.iter().map(|c| c * cell).collect();
    let stencils: Vec<_> = radii.iter().map(|&r| annulus(field, r)).collect();
    let quotients: Vec<Vec<Option<f64>>> =
        (0..field.len()).into_par_iter().map(|k| scan_with(field, k, &stencils)).collect();
    let labels = quotients.iter().map(|q| label_from(q, th)).collect();
    Ok(ProbeReport {
        thresholds: th.clone(),
        radii,
        quotients,
        labels,
        note: "difference quotients over finitely many grid directions".into(),
    })
}

// ---------------------------------------------------------------------------
// distances to a reference sample of the singular set

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub labeled: usize,
    /// Largest distance from a labeled node to the reference, in cells.
    pub max_label_to_reference: f64,
    /// Largest distance from a reference point inside the probed region to
    /// the nearest labeled node, in cells.
    pub max_reference_to_label: f64,
    pub mean_label_to_reference: f64,
}

fn nearest_distance(p: &[f64], set: &[Vec<f64>]) -> f64 {
    set.iter()
        .map(|q| p.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

/// Two-sided distances between the non-Lipschitz nodes and `reference`.
/// Reference points closer than `margin_cells` to the box edge are skipped
/// for the reverse direction.
pub fn distance_stats(field: &GridField, report: &ProbeReport, reference: &[Vec<f64>], margin_cells: f64) -> DistanceStats {
    let cell = field.cell();
    let labeled: Vec<Vec<f64>> = report.nodes_with(Label::NonLipschitz).into_iter().map(|k| field.coords(k)).collect();
    let d1: Vec<f64> = labeled.par_iter().map(|p| nearest_distance(p, reference) / cell).collect();
    let margin = margin_cells * cell;
    let inner: Vec<&Vec<f64>> = reference
        .iter()
        .filter(|q| (0..field.dim()).all(|a| q[a] >= field.lo[a] + margin && q[a] <= field.hi[a] - margin))
        .collect();
    let d2 = inner
        .par_iter()
        .map(|q| nearest_distance(q, &labeled) / cell)
        .reduce(|| 0.0, f64::max);
    DistanceStats {
        labeled: labeled.len(),
        max_label_to_reference: d1.iter().copied().fold(0.0, f64::max),
        max_reference_to_label: if inner.is_empty() { 0.0 } else { d2 },
        mean_label_to_reference: if d1.is_empty() { 0.0 } else { d1.iter().sum::<f64>() / d1.len() as f64 },
    }
}

// ---------------------------------------------------------------------------
// Hölder exponents

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderFit {
    pub alpha: f64,
    pub r_squared: f64,
    /// `|ΔT|` increases with the radius.
    pub monotone: bool,
    pub confident: bool,
    pub radii: Vec<f64>,
    pub increments: Vec<f64>,
}

/// Slope of `log |T(c + ρ d) - T(c)|` against `log ρ`.
pub fn holder_fit<F>(t: F, center: &[f64], direction: &[f64], radii: &[f64]) -> Result<HolderFit>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if center.len() != direction.len() {
        return Err(Error::Dimension("center and direction lengths differ".into()));
    }
    if radii.len() < 3 || radii.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::Invalid("need at least three positive radii".into()));
    }
    let dn = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if dn == 0.0 {
        return Err(Error::Invalid("direction must be nonzero".into()));
    }
    let t0 = t(center)?;
    let mut rs = radii.to_vec();
    rs.sort_by(f64::total_cmp);
    let incs = rs
        .iter()
        .map(|&r| {
            let y: Vec<f64> = center.iter().zip(direction).map(|(c, d)| c + r * d / dn).collect();
            Ok((t(&y)? - t0).abs())
        })
        .collect::<Result<Vec<f64>>>()?;
    if incs.iter().any(|&d| d <= 0.0) {
        return Err(Error::Invalid("zero increment; T is locally constant along the direction".into()));
    }
    let xs: Vec<f64> = rs.iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = incs.iter().map(|d| d.ln()).collect();
    let (alpha, r2) = linear_fit(&xs, &ys);
    let monotone = incs.windows(2).all(|w| w[1] > w[0]);
    Ok(HolderFit { alpha, r_squared: r2, monotone, confident: monotone && r2 >= 0.99, radii: rs, increments: incs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn closed_form(x: &[f64]) -> f64 {
        let (x1, x2) = (x[0], x[1]);
        let s = x1 + x2 * x2.abs() / 2.0;
        if s > 0.0 {
            x2 + 2.0 * (x1 + x2 * x2 / 2.0).sqrt()
        } else {
            -x2 + 2.0 * (-x1 + x2 * x2 / 2.0).max(0.0).sqrt()
        }
    }

    #[test]
    fn grid_indexing() {
        let f = eval_grid_with(&[-1.0, 0.0], &[1.0, 2.0], &[5, 3], "test", 0.0, |x| Ok(x[0] + 10.0 * x[1])).unwrap();
        assert_eq!(f.len(), 15);
        let k = f.index_of(&[3, 2]);
        assert_eq!(f.coords(k), vec![0.5, 2.0]);
        assert_eq!(f.values[k], 20.5);
        assert_eq!(f.nearest(&[0.49, 1.9]), Some(k));
        assert_eq!(f.nearest(&[5.0, 0.0]), None);
    }

    #[test]
    fn constant_and_linear_fields() {
        let c = eval_grid_with(&[-1.0, -1.0], &[1.0, 1.0], &[41, 41], "const", 0.0, |_| Ok(3.0)).unwrap();
        let mid = c.index_of(&[20, 20]);
        assert_eq!(quotient_scan(&c, mid, &[0.4, 0.2, 0.1]), vec![Some(0.0); 3]);
        let rep = classify(&c, &Thresholds::default()).unwrap();
        assert!(rep.nodes_with(Label::NonLipschitz).is_empty());
        let l = eval_grid_with(&[-1.0, -1.0], &[1.0, 1.0], &[41, 41], "lin", 0.0, |x| Ok(2.0 * x[0] - x[1])).unwrap();
        let rep = classify(&l, &Thresholds::default()).unwrap();
        assert!(rep.nodes_with(Label::NonLipschitz).is_empty());
        assert_eq!(rep.labels[mid], Label::Lipschitz);
    }

    #[test]
    fn edge_nodes_are_inconclusive() {
        let l = eval_grid_with(&[-1.0, -1.0], &[1.0, 1.0], &[41, 41], "lin", 0.0, |x| Ok(x[0])).unwrap();
        let rep = classify(&l, &Thresholds::default()).unwrap();
        assert_eq!(rep.labels[0], Label::Inconclusive);
        assert_eq!(quotient_scan(&l, 0, &[0.2])[0], None);
    }

    #[test]
    fn square_root_singularity_is_flagged() {
        let f = eval_grid_with(&[-2.0, -2.0], &[2.0, 2.0], &[101, 101], "closed", 0.0, |x| Ok(closed_form(x))).unwrap();
        let at = f.nearest(&[-0.72, 1.2]).unwrap();
        let q: Vec<f64> = quotient_scan(&f, at, &[0.32, 0.16, 0.08]).into_iter().map(Option::unwrap).collect();
        assert!(q[1] / q[0] > 1.2 && q[2] / q[1] > 1.2, "{q:?}");
        let rep = classify(&f, &Thresholds::default()).unwrap();
        assert_eq!(rep.labels[at], Label::NonLipschitz);
        let axis = f.nearest(&[1.0, 0.0]).unwrap();
        assert_ne!(rep.labels[axis], Label::NonLipschitz);
    }

    #[test]
    fn holder_on_closed_form() {
        let t = |x: &[f64]| Ok(closed_form(x));
        let radii: Vec<f64> = (4..10).map(|k| 2f64.powi(-k)).collect();
        let across = holder_fit(t, &[-0.5, 1.0], &[1.0, 0.0], &radii).unwrap();
        assert!((across.alpha - 0.5).abs() < 0.05, "{across:?}");
        let smooth = holder_fit(t, &[1.0, 0.0], &[1.0, 0.0], &radii).unwrap();
        assert!((smooth.alpha - 1.0).abs() < 0.05, "{smooth:?}");
    }
}
