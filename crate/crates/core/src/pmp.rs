//! Pontryagin synthesis for normal linear systems.
//!
//! Conventions (all constructions below follow this table):
//!
//! | object | meaning |
//! |---|---|
//! | `w_i(s) = sign⟨ζ, e^{-As} b_i⟩` | pattern stored in [`BangBangControl`], `s` = time measured from `x` |
//! | `u(t) = -w(t)` | forward control steering `x = E(r, ζ)` to the origin by `ẋ = Ax + Bu` |
//! | `ũ(t) = -w(r - t)` | reversed control, `ẏ = -Ay - Bũ` from the origin reaches `E(r, ζ)` at `t = r` |
//! | `λ(t) = e^{-Aᵀt} ζ` | costate along the forward trajectory |
//! | `λ(t) = e^{(t-r)Aᵀ} ζ` | costate along the reversed trajectory |
//! | `h(x, ζ) = ⟨ζ, Ax⟩ - Σ|⟨ζ, b_i⟩|` | minimized Hamiltonian, constant along both |

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::Direction;
use crate::linalg::{expint, expm};
use crate::reach::{check_point, support_data};
use crate::switching::{check_costate, find_zeros};
use crate::system::LinearSystem;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianValue {
    pub value: f64,
    /// `⟨ζ, Ax⟩`.
    pub drift: f64,
    /// `-|⟨ζ, b_i⟩|` per channel.
    pub channels: Vec<f64>,
}

pub fn hamiltonian(sys: &LinearSystem, x: &DVector<f64>, zeta: &DVector<f64>) -> HamiltonianValue {
    let drift = zeta.dot(&(sys.a() * x));
    let channels: Vec<f64> = sys.columns().iter().map(|b| -zeta.dot(b).abs()).collect();
    let value = drift + channels.iter().sum::<f64>();
    HamiltonianValue { value, drift, channels }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelControl {
    pub initial_sign: i8,
    pub switches: Vec<f64>,
}

/// Sign patterns `w_i` on `[0, horizon]`; see the module conventions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BangBangControl {
    pub horizon: f64,
    pub channels: Vec<ChannelControl>,
}

impl BangBangControl {
    /// `w_i(s)` with the open-interval convention (value right of a switch).
    pub fn w(&self, i: usize, s: f64) -> f64 {
        let c = &self.channels[i];
        let flips = c.switches.iter().filter(|&&t| t <= s).count();
        let sign = if flips % 2 == 0 { c.initial_sign } else { -c.initial_sign };
        sign as f64
    }

    pub fn forward_control(&self, t: f64) -> Vec<f64> {
        (0..self.channels.len()).map(|i| -self.w(i, t)).collect()
    }

    pub fn reversed_control(&self, t: f64) -> Vec<f64> {
        (0..self.channels.len()).map(|i| -self.w(i, self.horizon - t)).collect()
    }

    fn breakpoints(&self, dir: Direction) -> Vec<f64> {
        let mut b: Vec<f64> = self
            .channels
            .iter()
            .flat_map(|c| c.switches.iter().copied())
            .map(|s| match dir {
                Direction::Forward => s,
                Direction::Reversed => self.horizon - s,
            })
            .collect();
        b.sort_by(f64::total_cmp);
        b
    }
}

pub fn bang_bang_from_costate(sys: &LinearSystem, zeta: &DVector<f64>, r: f64) -> Result<BangBangControl> {
    sys.require_normal()?;
    check_costate(sys, zeta)?;
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::Invalid(format!("horizon must be finite and >= 0, got {r}")));
    }
    let channels = (0..sys.m())
        .map(|i| {
            let p = find_zeros(sys, zeta, i, r, Direction::Reversed)?;
            Ok(ChannelControl { initial_sign: p.initial_sign, switches: p.switch_times() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BangBangControl { horizon: r, channels })
}

/// `E(r, ζ) = Σ_i ∫_0^r e^{-At} b_i sign⟨ζ, e^{-At} b_i⟩ dt`.
pub fn endpoint(sys: &LinearSystem, zeta: &DVector<f64>, r: f64) -> Result<DVector<f64>> {
    sys.require_normal()?;
    check_costate(sys, zeta)?;
    if !(r >= 0.0) || !r.is_finite() {
        return Err(Error::Invalid(format!("horizon must be finite and >= 0, got {r}")));
    }
    Ok(support_data(sys, zeta.as_slice(), r, false).endpoint)
}

/// `|h(E(r,ζ), ζ) + Σ_i |⟨ζ, e^{-Ar} b_i⟩||` for unit `ζ`.
pub fn verify_compham(sys: &LinearSystem, zeta: &DVector<f64>, r: f64) -> Result<f64> {
    check_costate(sys, zeta)?;
    let z = zeta.normalize();
    let x = endpoint(sys, &z, r)?;
    let h = hamiltonian(sys, &x, &z).value;
    let e = expm(sys.a(), -r)?;
    let rhs: f64 = sys.columns().iter().map(|b| z.dot(&(&e * b)).abs()).sum();
    Ok((h + rhs).abs())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub lambda: Vec<f64>,
    pub h: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub direction: Direction,
    pub samples: Vec<TrajectorySample>,
}

impl Trajectory {
    pub fn last(&self) -> &TrajectorySample {
        self.samples.last().expect("trajectories hold at least one sample")
    }
}

/// Exact piecewise flow under `control`. Forward runs `ẋ = Ax + Bu`,
/// `u(t) = -w(t)`; reversed runs `ẏ = -Ay - Bũ`, `ũ(t) = -w(r-t)`. With a
/// costate `ζ` (the normal at the forward start) the costate and Hamiltonian
/// columns are filled, otherwise they are NaN.
pub fn integrate_trajectory(
    sys: &LinearSystem,
    control: &BangBangControl,
    from: &DVector<f64>,
    dir: Direction,
    costate: Option<&DVector<f64>>,
    samples: usize,
) -> Result<Trajectory> {
    check_point(sys, from)?;
    if control.channels.len() != sys.m() {
        return Err(Error::Dimension(format!(
            "control has {} channels, system has {}",
            control.channels.len(),
            sys.m()
        )));
    }
    let n = sys.n();
    let r = control.horizon;
    let mut times: Vec<f64> = if r > 0.0 {
        let k = samples.max(2);
        (0..k).map(|j| r * j as f64 / (k - 1) as f64).collect()
    } else {
        vec![0.0]
    };
    times.extend(control.breakpoints(dir).into_iter().filter(|&t| t > 0.0 && t < r));
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * r.max(1.0));

    let sg = dir.sign();
    let ctrl = |t: f64| match dir {
        Direction::Forward => control.forward_control(t),
        Direction::Reversed => control.reversed_control(t),
    };
    let lam = |t: f64| -> Result<DVector<f64>> {
        let z = costate.expect("checked");
        let s = match dir {
            Direction::Forward => -t,
            Direction::Reversed => t - r,
        };
        Ok(expm(&sys.a().transpose(), s)? * z)
    };
    let sample = |t: f64, x: &DVector<f64>, u: Vec<f64>| -> Result<TrajectorySample> {
        let (lambda, h) = match costate {
            Some(_) => {
                let l = lam(t)?;
                let h = hamiltonian(sys, x, &l).value;
                (l.as_slice().to_vec(), h)
            }
            None => (vec![f64::NAN; n], f64::NAN),
        };
        Ok(TrajectorySample { t, x: x.as_slice().to_vec(), u, lambda, h })
    };

    let mut out = Vec::with_capacity(times.len());
    let mut x = from.clone();
    for k in 0..times.len() {
        let t = times[k];
        let u_here = if k + 1 < times.len() {
            ctrl(0.5 * (t + times[k + 1]))
        } else if k > 0 {
            ctrl(0.5 * (times[k - 1] + t))
        } else {
            ctrl(t)
        };
        out.push(sample(t, &x, u_here.clone())?);
        if k + 1 < times.len() {
            let dt = times[k + 1] - t;
            let bu = sys.b() * DVector::from_vec(u_here);
            let e = expm(sys.a(), sg * dt)?;
            let drive = expint(sys.a(), &bu, 0.0, dt, sg)?;
            x = e * x + drive * sg;
        }
    }
    Ok(Trajectory { direction: dir, samples: out })
}

/// Writes the trajectory CSV columns `t, x_1..x_N, u_1..u_M, lambda_1..lambda_N, h`.
pub fn trajectory_rows(traj: &Trajectory) -> (Vec<String>, Vec<Vec<f64>>) {
    let s0 = &traj.samples[0];
    let mut header = vec!["t".to_string()];
    header.extend((1..=s0.x.len()).map(|i| format!("x_{i}")));
    header.extend((1..=s0.u.len()).map(|i| format!("u_{i}")));
    header.extend((1..=s0.lambda.len()).map(|i| format!("lambda_{i}")));
    header.push("h".into());
    let rows = traj
        .samples
        .iter()
        .map(|s| {
            let mut r = vec![s.t];
            r.extend(&s.x);
            r.extend(&s.u);
            r.extend(&s.lambda);
            r.push(s.h);
            r
        })
        .collect();
    (header, rows)
}

/// Costate-matrix helper: `e^{sAᵀ}`.
pub fn costate_transport(sys: &LinearSystem, s: f64) -> Result<DMatrix<f64>> {
    expm(&sys.a().transpose(), s)
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
    fn hamiltonian_examples() {
        let di = catalog::linear("double-integrator").unwrap();
        let s = 0.5f64.sqrt();
        let h = hamiltonian(&di, &v(&[-0.5, 1.0]), &v(&[s, s]));
        assert!(h.value.abs() < 1e-15);
        assert!((h.drift - s).abs() < 1e-15 && (h.channels[0] + s).abs() < 1e-15);
        assert_eq!(hamiltonian(&di, &v(&[0.0, 0.0]), &v(&[1.0, 0.0])).value, 0.0);
        assert_eq!(hamiltonian(&di, &v(&[0.0, 0.0]), &v(&[0.0, 1.0])).value, -1.0);
    }

    #[test]
    fn controls_from_costates() {
        let di = catalog::linear("double-integrator").unwrap();
        let c = bang_bang_from_costate(&di, &v(&[1.0, 0.0]), 1.0).unwrap();
        assert_eq!(c.channels[0], ChannelControl { initial_sign: -1, switches: vec![] });
        let ho = catalog::linear("harmonic").unwrap();
        let c = bang_bang_from_costate(&ho, &v(&[1.0, 0.0]), 5.0).unwrap();
        assert_eq!(c.channels[0].initial_sign, -1);
        assert_eq!(c.channels[0].switches.len(), 1);
        assert!((c.channels[0].switches[0] - PI).abs() < 1e-10);
        let ti = catalog::linear("triple-integrator").unwrap();
        let c = bang_bang_from_costate(&ti, &v(&[0.0, 1.0, 0.0]), 1.0).unwrap();
        assert_eq!(c.channels[0], ChannelControl { initial_sign: -1, switches: vec![] });
        assert!(matches!(bang_bang_from_costate(&ti, &v(&[0.0; 3]), 1.0), Err(Error::ZeroCostate)));
    }

    #[test]
    fn endpoint_examples() {
        let di = catalog::linear("double-integrator").unwrap();
        let e = endpoint(&di, &v(&[1.0, 0.0]), 1.0).unwrap();
        assert!((e - v(&[0.5, -1.0])).norm() < 1e-14);
        assert_eq!(endpoint(&di, &v(&[1.0, 0.0]), 0.0).unwrap(), v(&[0.0, 0.0]));
        let e = endpoint(&di, &v(&[-1.0, 0.0]), 1.0).unwrap();
        assert!((e - v(&[-0.5, 1.0])).norm() < 1e-14);
    }

    #[test]
    fn compham_examples() {
        let di = catalog::linear("double-integrator").unwrap();
        assert!(verify_compham(&di, &v(&[1.0, 0.0]), 1.0).unwrap() < 1e-14);
        assert!(verify_compham(&di, &v(&[0.6, 0.8]), 0.0).unwrap() < 1e-15);
    }

    #[test]
    fn trajectories_connect_origin_and_endpoint() {
        let di = catalog::linear("double-integrator").unwrap();
        let z = v(&[-1.0, 0.0]);
        let c = bang_bang_from_costate(&di, &z, 1.0).unwrap();
        let rev = integrate_trajectory(&di, &c, &v(&[0.0, 0.0]), Direction::Reversed, Some(&z), 11).unwrap();
        assert!((DVector::from_vec(rev.last().x.clone()) - v(&[-0.5, 1.0])).norm() < 1e-12);
        let fwd = integrate_trajectory(&di, &c, &v(&[-0.5, 1.0]), Direction::Forward, Some(&z), 11).unwrap();
        assert!(DVector::from_vec(fwd.last().x.clone()).norm() < 1e-12);
        assert!(fwd.samples.iter().all(|s| s.u == vec![-1.0]));
        let zero = BangBangControl { horizon: 0.0, channels: c.channels.clone() };
        let t = integrate_trajectory(&di, &zero, &v(&[1.0, 2.0]), Direction::Forward, None, 5).unwrap();
        assert_eq!(t.samples.len(), 1);
    }

    #[test]
    fn hamiltonian_constant_along_switching_extremal() {
        let ho = catalog::linear("harmonic").unwrap();
        let z = v(&[0.3, -0.9]).normalize();
        let r = 5.0;
        let c = bang_bang_from_costate(&ho, &z, r).unwrap();
        let x = endpoint(&ho, &z, r).unwrap();
        let fwd = integrate_trajectory(&ho, &c, &x, Direction::Forward, Some(&z), 50).unwrap();
        let h0 = fwd.samples[0].h;
        for s in &fwd.samples {
            assert!((s.h - h0).abs() < 1e-10);
        }
        assert!(DVector::from_vec(fwd.last().x.clone()).norm() < 1e-10);
    }
}
