//! Tabulated flows `s ↦ e^{Gs} b_i` and `s ↦ ∫_0^s e^{Gσ} b_i dσ` for `G = ±A`.
//!
//! Nodes are spaced by the system scan step. Off-node values come from a Taylor
//! expansion around the nearest node, which is exact up to rounding because the
//! step keeps `|ρ|·‖A‖ ≤ 1/4`. The propagated table is re-anchored with a fresh
//! exponential every `ANCHOR` nodes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{expint, expint_matrix, expm};
use crate::system::LinearSystem;

/// Which exponential a switching function uses: `e^{At}` or `e^{-At}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reversed,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Reversed => -1.0,
        }
    }
}

pub(crate) const MAXN: usize = 8;
pub(crate) type V = [f64; MAXN];

const TABLE_HORIZON: f64 = 64.0;
const MAX_NODES: usize = 200_000;
const ANCHOR: usize = 64;

#[derive(Clone, Debug)]
pub(crate) struct Flow {
    pub n: usize,
    /// Row-major generator `G`.
    g: V2,
    pub g_mat: DMatrix<f64>,
    pub step: f64,
    nodes: usize,
    /// Per channel: `v` then `w`, each `nodes * n` values.
    tables: Vec<(Vec<f64>, Vec<f64>)>,
    cols: Vec<DVector<f64>>,
}

type V2 = [[f64; MAXN]; MAXN];

impl Flow {
    pub fn build(sys: &LinearSystem, dir: Direction) -> Flow {
        let n = sys.n();
        let g_mat = sys.a() * dir.sign();
        let mut g = [[0.0; MAXN]; MAXN];
        for r in 0..n {
            for c in 0..n {
                g[r][c] = g_mat[(r, c)];
            }
        }
        let step = sys.scan_step();
        let want = (TABLE_HORIZON / step).ceil() as usize + 1;
        let mut nodes = want.min(MAX_NODES);
        let e_step = expm(&g_mat, step).expect("finite step exponential");
        let phi_step = expint_matrix(&g_mat, step).expect("finite step integral");
        let mut tables = Vec::with_capacity(sys.m());
        for b in sys.columns() {
            let mut vt = Vec::with_capacity(nodes * n);
            let mut wt = Vec::with_capacity(nodes * n);
            let mut v = b.clone();
            let mut w = DVector::zeros(n);
            for k in 0..nodes {
                if k > 0 {
                    if k % ANCHOR == 0 {
                        let s = k as f64 * step;
                        match (expm(&g_mat, s), expint(&g_mat, b, 0.0, s, 1.0)) {
                            (Ok(e), Ok(i)) => {
                                v = e * b;
                                w = i;
                            }
                            _ => {
                                nodes = k;
                                break;
                            }
                        }
                    } else {
                        w += &phi_step * &v;
                        v = &e_step * &v;
                    }
                }
                let big = v.amax().max(w.amax());
                if !big.is_finite() || big > 1e150 {
                    nodes = k;
                    break;
                }
                vt.extend(v.iter());
                wt.extend(w.iter());
            }
            vt.truncate(nodes * n);
            wt.truncate(nodes * n);
            tables.push((vt, wt));
        }
        let nodes = tables.iter().map(|t| t.0.len() / n).min().unwrap_or(0);
        Flow { n, g, g_mat, step, nodes, tables, cols: sys.columns().to_vec() }
    }

    pub fn horizon(&self) -> f64 {
        (self.nodes.saturating_sub(1)) as f64 * self.step
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    #[inline]
    pub fn node_v(&self, i: usize, k: usize) -> &[f64] {
        &self.tables[i].0[k * self.n..(k + 1) * self.n]
    }

    #[inline]
    pub fn matvec(&self, x: &V, out: &mut V) {
        let n = self.n;
        for r in 0..n {
            let mut acc = 0.0;
            for c in 0..n {
                acc += self.g[r][c] * x[c];
            }
            out[r] = acc;
        }
    }

    /// `(Gᵀ)^m ζ` for `m = 0..=top`.
    pub fn costate_powers(&self, zeta: &[f64], top: usize) -> Vec<V> {
        let n = self.n;
        let mut out = Vec::with_capacity(top + 1);
        let mut z = [0.0; MAXN];
        z[..n].copy_from_slice(&zeta[..n]);
        out.push(z);
        for _ in 0..top {
            let prev = *out.last().unwrap();
            let mut next = [0.0; MAXN];
            for c in 0..n {
                let mut acc = 0.0;
                for r in 0..n {
                    acc += self.g[r][c] * prev[r];
                }
                next[c] = acc;
            }
            out.push(next);
        }
        out
    }

    /// `e^{Gs} b_i` and optionally `∫_0^s e^{Gσ} b_i dσ`.
    pub fn eval(&self, i: usize, s: f64, v: &mut V, w: Option<&mut V>) {
        let n = self.n;
        if s > self.horizon() || s < 0.0 {
            self.eval_direct(i, s, v, w);
            return;
        }
        let k = ((s / self.step).round() as usize).min(self.nodes - 1);
        let rho = s - k as f64 * self.step;
        let (vt, wt) = &self.tables[i];
        let base = &vt[k * n..(k + 1) * n];
        let mut term = [0.0; MAXN];
        term[..n].copy_from_slice(base);
        let mut vacc = term;
        let mut wacc = [0.0; MAXN];
        let want_w = w.is_some();
        if want_w {
            for r in 0..n {
                wacc[r] = wt[k * n + r] + rho * term[r];
            }
        }
        if rho != 0.0 {
            let mut cv = 1.0;
            let mut cw = rho;
            let mut tmp = [0.0; MAXN];
            for j in 1..30 {
                self.matvec(&term, &mut tmp);
                term = tmp;
                cv *= rho / j as f64;
                cw *= rho / (j + 1) as f64;
                let mut mag = 0.0;
                for r in 0..n {
                    let d = cv * term[r];
                    vacc[r] += d;
                    mag = f64::max(mag, d.abs());
                    if want_w {
                        wacc[r] += cw * term[r];
                    }
                }
                if mag == 0.0 || mag < 1e-18 * linf(&vacc, n) {
                    break;
                }
            }
        }
        *v = vacc;
        if let Some(w) = w {
            *w = wacc;
        }
    }

    fn eval_direct(&self, i: usize, s: f64, v: &mut V, w: Option<&mut V>) {
        let n = self.n;
        let b = &self.cols[i];
        let e = expm(&self.g_mat, s).unwrap_or_else(|_| DMatrix::from_element(n, n, f64::NAN));
        let ev = e * b;
        v[..n].copy_from_slice(ev.as_slice());
        if let Some(w) = w {
            let (lo, hi, sg) = if s >= 0.0 { (0.0, s, 1.0) } else { (s, 0.0, -1.0) };
            let iv = expint(&self.g_mat, b, lo, hi, 1.0)
                .unwrap_or_else(|_| DVector::from_element(n, f64::NAN));
            for r in 0..n {
                w[r] = sg * iv[r];
            }
        }
    }
}

#[inline]
pub(crate) fn linf(x: &V, n: usize) -> f64 {
    x[..n].iter().fold(0.0, |m, v| f64::max(m, v.abs()))
}

#[inline]
pub(crate) fn dot(a: &V, b: &[f64], n: usize) -> f64 {
    let mut acc = 0.0;
    for r in 0..n {
        acc += a[r] * b[r];
    }
    acc
}
