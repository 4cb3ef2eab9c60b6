//! Linear control systems `ẏ = Ay + Bu`, `u ∈ [-1,1]^M`, and their documents.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{Direction, Flow};
use crate::linalg::{rank, spectral_norm, RANK_TOL};

/// Interchange form of a linear system. `A` is row-major N×N, `B` row-major N×M.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemDocument {
    pub name: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NormalityReport {
    /// Rank of `[b_i, Ab_i, ..., A^{N-1} b_i]` per column.
    pub ranks: Vec<usize>,
    pub normal: bool,
}

#[derive(Debug)]
pub struct LinearSystem {
    pub name: String,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    cols: Vec<DVector<f64>>,
    k: usize,
    ranks: Vec<usize>,
    normal: bool,
    a_norm: f64,
    pub warnings: Vec<String>,
    tau_bar: OnceLock<f64>,
    forward: OnceLock<Flow>,
    reversed: OnceLock<Flow>,
}

impl Clone for LinearSystem {
    fn clone(&self) -> Self {
        LinearSystem {
            name: self.name.clone(),
            a: self.a.clone(),
            b: self.b.clone(),
            cols: self.cols.clone(),
            k: self.k,
            ranks: self.ranks.clone(),
            normal: self.normal,
            a_norm: self.a_norm,
            warnings: self.warnings.clone(),
            tau_bar: self.tau_bar.clone(),
            forward: OnceLock::new(),
            reversed: OnceLock::new(),
        }
    }
}

impl LinearSystem {
    pub fn new(name: impl Into<String>, a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if !(2..=8).contains(&n) {
            return Err(Error::UnsupportedDimension(n));
        }
        if a.ncols() != n {
            return Err(Error::Dimension(format!("A is {}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n {
            return Err(Error::Dimension(format!("B has {} rows, expected {n}", b.nrows())));
        }
        let m = b.ncols();
        if m == 0 {
            return Err(Error::Dimension("B has no columns".into()));
        }
        if m > n {
            return Err(Error::TooManyInputs { m, n });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("A".into()));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("B".into()));
        }
        let cols: Vec<DVector<f64>> = b.column_iter().map(|c| c.into_owned()).collect();
        let k = rank(&b, RANK_TOL);
        let ranks = kalman_ranks(&a, &cols);
        let normal = ranks.iter().all(|&r| r == n);
        let mut warnings = Vec::new();
        if !normal {
            warnings.push(format!(
                "system is not normal (Kalman ranks {ranks:?}); singular-set and synthesis operations will refuse it"
            ));
        }
        let a_norm = spectral_norm(&a);
        Ok(LinearSystem {
            name: name.into(),
            a,
            b,
            cols,
            k,
            ranks,
            normal,
            a_norm,
            warnings,
            tau_bar: OnceLock::new(),
            forward: OnceLock::new(),
            reversed: OnceLock::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn column(&self, i: usize) -> &DVector<f64> {
        &self.cols[i]
    }
    pub fn columns(&self) -> &[DVector<f64>] {
        &self.cols
    }
    /// `rank B`.
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn is_normal(&self) -> bool {
        self.normal
    }
    /// Spectral norm of `A`.
    pub fn a_norm(&self) -> f64 {
        self.a_norm
    }

    pub fn require_normal(&self) -> Result<()> {
        if self.normal {
            Ok(())
        } else {
            Err(Error::NotNormal(self.ranks.clone()))
        }
    }

    pub fn check_channel(&self, i: usize) -> Result<()> {
        if i < self.m() {
            Ok(())
        } else {
            Err(Error::Channel { channel: i, m: self.m() })
        }
    }

    /// Validated window length `τ̄` on which every switching function has at
    /// most `N-1` zeros counted with multiplicity.
    pub fn tau_bar(&self) -> f64 {
        *self
            .tau_bar
            .get_or_init(|| crate::switching::estimate_zero_window(self))
    }

    /// Half of `τ̄`: the horizon below which small-time strata are computed.
    pub fn tau_small(&self) -> f64 {
        0.5 * self.tau_bar()
    }

    /// Uniform scan step used by root isolation.
    pub fn scan_step(&self) -> f64 {
        let n = self.n() as f64;
        let by_norm = if self.a_norm > 0.0 { 0.5 / self.a_norm } else { f64::INFINITY };
        (self.tau_bar() / (4.0 * n)).min(by_norm)
    }

    pub(crate) fn flow(&self, dir: Direction) -> &Flow {
        let cell = match dir {
            Direction::Forward => &self.forward,
            Direction::Reversed => &self.reversed,
        };
        cell.get_or_init(|| Flow::build(self, dir))
    }

    pub fn to_document(&self) -> SystemDocument {
        SystemDocument {
            name: self.name.clone(),
            n: self.n(),
            m: self.m(),
            a: self.a.row_iter().map(|r| r.iter().copied().collect()).collect(),
            b: self.b.row_iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }
}

fn kalman_ranks(a: &DMatrix<f64>, cols: &[DVector<f64>]) -> Vec<usize> {
    let n = a.nrows();
    cols.iter()
        .map(|b| {
            let mut k = DMatrix::zeros(n, n);
            let mut v = b.clone();
            for j in 0..n {
                k.set_column(j, &v);
                v = a * v;
            }
            rank(&k, RANK_TOL)
        })
        .collect()
}

pub fn load_system(doc: &SystemDocument) -> Result<LinearSystem> {
    let n = doc.n;
    if !(2..=8).contains(&n) {
        return Err(Error::UnsupportedDimension(n));
    }
    if doc.m > n {
        return Err(Error::TooManyInputs { m: doc.m, n });
    }
    if doc.a.len() != n || doc.a.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension(format!("A must be {n}x{n}")));
    }
    if doc.b.len() != n || doc.b.iter().any(|r| r.len() != doc.m) {
        return Err(Error::Dimension(format!("B must be {n}x{}", doc.m)));
    }
    let a = DMatrix::from_row_iterator(n, n, doc.a.iter().flatten().copied());
    let b = DMatrix::from_row_iterator(n, doc.m, doc.b.iter().flatten().copied());
    LinearSystem::new(doc.name.clone(), a, b)
}

pub fn parse_system(text: &str) -> Result<LinearSystem> {
    let doc: SystemDocument = serde_json::from_str(text)?;
    load_system(&doc)
}

pub fn check_normality(sys: &LinearSystem) -> NormalityReport {
    NormalityReport { ranks: sys.ranks.clone(), normal: sys.normal }
}

/// The singular set is empty exactly when `rank B = N`.
pub fn singular_set_is_empty(sys: &LinearSystem) -> bool {
    sys.k == sys.n()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(n: usize, m: usize, a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> SystemDocument {
        SystemDocument { name: "t".into(), n, m, a, b }
    }

    #[test]
    fn double_integrator_loads_normal() {
        let s = load_system(&doc(2, 1, vec![vec![0.0, 1.0], vec![0.0, 0.0]], vec![vec![0.0], vec![1.0]]))
            .unwrap();
        assert_eq!((s.n(), s.m(), s.k()), (2, 1, 1));
        assert!(s.is_normal());
        assert_eq!(check_normality(&s).ranks, vec![2]);
        assert!(!singular_set_is_empty(&s));
    }

    #[test]
    fn zero_column_loads_with_warning() {
        let s = load_system(&doc(2, 1, vec![vec![0.0, 1.0], vec![0.0, 0.0]], vec![vec![0.0], vec![0.0]]))
            .unwrap();
        assert!(!s.is_normal());
        assert_eq!(s.warnings.len(), 1);
        assert!(matches!(s.require_normal(), Err(Error::NotNormal(_))));
    }

    #[test]
    fn identity_drift_is_not_normal() {
        let s = load_system(&doc(2, 1, vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![1.0], vec![0.0]]))
            .unwrap();
        assert_eq!(check_normality(&s).ranks, vec![1]);
        assert!(!check_normality(&s).normal);
    }

    #[test]
    fn full_rank_input_empties_singular_set() {
        let s = load_system(&doc(
            2,
            2,
            vec![vec![0.0, 1.0], vec![0.0, 0.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        ))
        .unwrap();
        assert!(singular_set_is_empty(&s));
    }

    #[test]
    fn triple_integrator_kalman_is_anti_identity() {
        let a = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 0.0]];
        let s = load_system(&doc(3, 1, a, vec![vec![0.0], vec![0.0], vec![1.0]])).unwrap();
        assert!(s.is_normal());
        assert_eq!(s.k(), 1);
    }

    #[test]
    fn distinct_diagnostics() {
        let bad_dim = doc(2, 1, vec![vec![0.0, 1.0]], vec![vec![0.0], vec![1.0]]);
        assert!(matches!(load_system(&bad_dim), Err(Error::Dimension(_))));
        let nan = doc(2, 1, vec![vec![0.0, f64::NAN], vec![0.0, 0.0]], vec![vec![0.0], vec![1.0]]);
        assert!(matches!(load_system(&nan), Err(Error::NonFinite(_))));
        let wide = doc(
            2,
            3,
            vec![vec![0.0, 1.0], vec![0.0, 0.0]],
            vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0]],
        );
        assert!(matches!(load_system(&wide), Err(Error::TooManyInputs { .. })));
    }

    #[test]
    fn document_round_trip() {
        let d = doc(2, 1, vec![vec![0.0, 1.0], vec![-1.0, 0.0]], vec![vec![0.0], vec![1.0]]);
        let s = load_system(&d).unwrap();
        assert_eq!(s.to_document(), d);
        let text = serde_json::to_string(&d).unwrap();
        assert!(text.contains("\"N\":2"));
        assert_eq!(parse_system(&text).unwrap().to_document(), d);
    }
}
