//! Dense kernels: matrix exponential, exponential integrals, Krylov chains and rank.
//!
//! The exponential uses scaling and squaring with diagonal Padé approximants of
//! degree 3, 5, 7, 9 or 13, selected from the 1-norm of the scaled argument.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative rank tolerance used for `rank(B)` and the Kalman matrices.
pub const RANK_TOL: f64 = 1e-10;

const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068),
];
const THETA_13: f64 = 5.371920351148152;

const PADE_3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE_5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE_7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE_9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE_13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

pub fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Numerical rank: singular values below `rel_tol * sigma_max` count as zero.
pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let top = sv.iter().copied().fold(0.0, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * top).count()
}

/// `e^{M t}`.
pub fn expm(m: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "expm needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !t.is_finite() || m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Range("non-finite input".into()));
    }
    let a = m * t;
    let n = a.nrows();
    let nrm = norm1(&a);
    if nrm == 0.0 {
        return Ok(DMatrix::identity(n, n));
    }
    for &(deg, theta) in &THETA {
        if nrm <= theta {
            let coef: &[f64] = match deg {
                3 => &PADE_3,
                5 => &PADE_5,
                7 => &PADE_7,
                _ => &PADE_9,
            };
            return finite(pade_low(&a, coef)?);
        }
    }
    let s = (nrm / THETA_13).log2().ceil().max(0.0);
    if s > 1000.0 {
        return Err(Error::Range(format!("norm {nrm:e}")));
    }
    let s = s as i32;
    let scaled = &a * 2f64.powi(-s);
    let mut x = pade_13(&scaled)?;
    for _ in 0..s {
        x = &x * &x;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Range(format!("overflow while squaring, norm {nrm:e}")));
        }
    }
    finite(x)
}

fn finite(x: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::Range("non-finite result".into()))
    }
}

fn solve_pade(u: DMatrix<f64>, v: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = &v + &u;
    let q = v - u;
    q.lu()
        .solve(&p)
        .ok_or_else(|| Error::Range("singular Padé denominator".into()))
}

fn pade_low(a: &DMatrix<f64>, c: &[f64]) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let a2 = a * a;
    let mut even = DMatrix::identity(n, n) * c[0];
    let mut odd = DMatrix::identity(n, n) * c[1];
    let mut pw = DMatrix::identity(n, n);
    let mut k = 2;
    while k < c.len() {
        pw = &pw * &a2;
        even += &pw * c[k];
        if k + 1 < c.len() {
            odd += &pw * c[k + 1];
        }
        k += 2;
    }
    solve_pade(a * odd, even)
}

fn pade_13(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let b = &PADE_13;
    let n = a.nrows();
    let id = DMatrix::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = a * (inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let inner_v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + id * b[0];
    solve_pade(u, v)
}

/// `∫_{t0}^{t1} e^{sign·A s} b ds` via the augmented block exponential.
pub fn expint(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    t0: f64,
    t1: f64,
    sign: f64,
) -> Result<DVector<f64>> {
    let n = a.nrows();
    if b.len() != n {
        return Err(Error::Dimension(format!("b has length {}, A is {n}x{n}", b.len())));
    }
    if !(t0 <= t1) {
        return Err(Error::Invalid(format!("expint needs t0 <= t1, got [{t0}, {t1}]")));
    }
    if t0 == t1 {
        return Ok(DVector::zeros(n));
    }
    let mut aug = DMatrix::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * sign));
    aug.view_mut((0, n), (n, 1)).copy_from(b);
    let e = expm(&aug, t1 - t0)?;
    let tail: DVector<f64> = e.column(n).rows(0, n).into_owned();
    if t0 == 0.0 {
        Ok(tail)
    } else {
        Ok(expm(a, sign * t0)? * tail)
    }
}

/// `∫_0^h e^{G s} ds` as a matrix.
pub fn expint_matrix(g: &DMatrix<f64>, h: f64) -> Result<DMatrix<f64>> {
    let n = g.nrows();
    let mut aug = DMatrix::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(g);
    aug.view_mut((0, n), (n, n)).fill_with_identity();
    let e = expm(&aug, h)?;
    Ok(e.view((0, n), (n, n)).into_owned())
}

/// `[b, Ab, ..., A^k b]`.
pub fn krylov_chain(a: &DMatrix<f64>, b: &DVector<f64>, k: usize) -> Result<Vec<DVector<f64>>> {
    let n = a.nrows();
    if k + 1 > n {
        return Err(Error::Invalid(format!("krylov_chain needs k <= N-1 = {}, got {k}", n - 1)));
    }
    let mut out = Vec::with_capacity(k + 1);
    out.push(b.clone());
    for j in 0..k {
        let next = a * &out[j];
        out.push(next);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn m(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_row_iterator(rows.len(), rows[0].len(), rows.iter().flat_map(|r| r.iter().copied()))
    }

    #[test]
    fn nilpotent_series_terminates() {
        let a = m(&[&[0.0, 1.0], &[0.0, 0.0]]);
        let e = expm(&a, 3.0).unwrap();
        assert_relative_eq!(e, m(&[&[1.0, 3.0], &[0.0, 1.0]]), epsilon = 1e-14);
    }

    #[test]
    fn zero_matrix_gives_identity() {
        let e = expm(&DMatrix::zeros(3, 3), 7.5).unwrap();
        assert_eq!(e, DMatrix::identity(3, 3));
    }

    #[test]
    fn quarter_rotation() {
        let a = m(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        let e = expm(&a, PI / 2.0).unwrap();
        assert_relative_eq!(e, m(&[&[0.0, 1.0], &[-1.0, 0.0]]), epsilon = 1e-14);
    }

    #[test]
    fn rotation_matches_trig_at_large_angle() {
        let a = m(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        for &t in &[0.01, 0.3, 1.7, 12.0, -40.0] {
            let e = expm(&a, t).unwrap();
            let r = m(&[&[t.cos(), t.sin()], &[-t.sin(), t.cos()]]);
            assert_relative_eq!(e, r, epsilon = 1e-12 * (1.0 + t.abs()));
        }
    }

    #[test]
    fn diagonal_matches_scalar_exp() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-3.0, 0.5, 2.0]));
        let e = expm(&a, 4.0).unwrap();
        for (i, l) in [-3.0f64, 0.5, 2.0].iter().enumerate() {
            assert_relative_eq!(e[(i, i)], (l * 4.0).exp(), max_relative = 1e-13);
        }
    }

    #[test]
    fn overflow_is_a_range_error() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0]));
        assert!(matches!(expm(&a, 1e6), Err(Error::Range(_))));
        assert!(matches!(expm(&a, f64::NAN), Err(Error::Range(_))));
    }

    #[test]
    fn expint_double_integrator() {
        let a = m(&[&[0.0, 1.0], &[0.0, 0.0]]);
        let b = DVector::from_vec(vec![0.0, 1.0]);
        let v = expint(&a, &b, 0.0, 1.0, -1.0).unwrap();
        assert_relative_eq!(v, DVector::from_vec(vec![-0.5, 1.0]), epsilon = 1e-14);
        assert_eq!(expint(&a, &b, 0.4, 0.4, -1.0).unwrap(), DVector::zeros(2));
    }

    #[test]
    fn expint_harmonic_half_period() {
        let a = m(&[&[0.0, 1.0], &[-1.0, 0.0]]);
        let b = DVector::from_vec(vec![0.0, 1.0]);
        let v = expint(&a, &b, 0.0, PI, -1.0).unwrap();
        assert_relative_eq!(v, DVector::from_vec(vec![-2.0, 0.0]), epsilon = 1e-12);
        // offset window: ∫_1^2 (-sin s, cos s) ds
        let w = expint(&a, &b, 1.0, 2.0, -1.0).unwrap();
        let exact = DVector::from_vec(vec![2f64.cos() - 1f64.cos(), 2f64.sin() - 1f64.sin()]);
        assert_relative_eq!(w, exact, epsilon = 1e-12);
    }

    #[test]
    fn expint_matrix_matches_columns() {
        let a = m(&[&[0.2, 1.0, 0.0], &[-1.0, 0.1, 0.3], &[0.0, 0.5, -0.4]]);
        let mat = expint_matrix(&a, 0.7).unwrap();
        for j in 0..3 {
            let mut e = DVector::zeros(3);
            e[j] = 1.0;
            let col = expint(&a, &e, 0.0, 0.7, 1.0).unwrap();
            assert_relative_eq!(mat.column(j).into_owned(), col, epsilon = 1e-13);
        }
    }

    #[test]
    fn krylov_examples() {
        let a = m(&[&[0.0, 1.0], &[0.0, 0.0]]);
        let b = DVector::from_vec(vec![0.0, 1.0]);
        let c = krylov_chain(&a, &b, 1).unwrap();
        assert_eq!(c, vec![b.clone(), DVector::from_vec(vec![1.0, 0.0])]);
        assert_eq!(krylov_chain(&a, &b, 0).unwrap(), vec![b.clone()]);
        assert!(krylov_chain(&a, &b, 2).is_err());

        let s = m(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[0.0, 0.0, 0.0]]);
        let b3 = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let c3 = krylov_chain(&s, &b3, 2).unwrap();
        assert_eq!(c3[1], DVector::from_vec(vec![0.0, 1.0, 0.0]));
        assert_eq!(c3[2], DVector::from_vec(vec![1.0, 0.0, 0.0]));
    }

    #[test]
    fn rank_basics() {
        assert_eq!(rank(&DMatrix::identity(3, 3), RANK_TOL), 3);
        assert_eq!(rank(&DMatrix::zeros(2, 2), RANK_TOL), 0);
        let r1 = m(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert_eq!(rank(&r1, RANK_TOL), 1);
    }
}
