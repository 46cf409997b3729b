//! The Hamilton function
//!
//! ```text
//! H(x, p) = sum_l V(x, l) exp(-<l, p>) - U(x)
//!         = sum_{pairs} 2 V(x, l) (cosh<l, p> - 1) - dpp(x)
//! ```
//!
//! evaluated pairwise so that `H(x, -p) = H(x, p)` holds bit for bit and
//! `H(x, 0) = -dpp(x)` exactly. Momentum derivatives are closed-form; position
//! derivatives come from the jets of the model fields.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::jet::Jet;
use crate::model::ModelSpec;

/// `H` and all of its first and second phase-space derivatives.
#[derive(Debug, Clone)]
pub struct PhaseDerivs {
    pub h: f64,
    pub dhdx: DVector<f64>,
    pub dhdp: DVector<f64>,
    /// `d^2 H / dp_i dp_j`
    pub hpp: DMatrix<f64>,
    /// `d^2 H / dp_i dx_j`
    pub hpx: DMatrix<f64>,
    /// `d^2 H / dx_i dx_j`
    pub hxx: DMatrix<f64>,
}

/// `cosh(t) - 1` without cancellation near zero.
#[inline]
pub(crate) fn cosh_m1(t: f64) -> f64 {
    let s = (0.5 * t).sinh();
    2.0 * s * s
}

pub fn phase_derivs(m: &ModelSpec, x: &[f64], p: &[f64]) -> Result<PhaseDerivs> {
    let d = m.dim();
    let dpp: Jet = m.dpp().eval_jet(x)?;
    let mut h = -dpp.v;
    let mut dhdx = DVector::from_fn(d, |i, _| -dpp.g[i]);
    let mut hxx = DMatrix::from_fn(d, d, |i, j| -dpp.h[i][j]);
    let mut dhdp = DVector::zeros(d);
    let mut hpp = DMatrix::zeros(d, d);
    let mut hpx = DMatrix::zeros(d, d);

    for (idx, pair) in m.pairs().iter().enumerate() {
        let v = m.pair_v_jet(idx, x)?;
        let l = pair.offset_f64();
        let t: f64 = l.iter().zip(p).map(|(a, b)| a * b).sum();
        let (ch, sh, chm1) = (t.cosh(), t.sinh(), cosh_m1(t));
        h += 2.0 * v.v * chm1;
        for i in 0..d {
            dhdx[i] += 2.0 * v.g[i] * chm1;
            dhdp[i] += 2.0 * v.v * sh * l[i];
            for j in 0..d {
                hxx[(i, j)] += 2.0 * v.h[i][j] * chm1;
                hpp[(i, j)] += 2.0 * v.v * ch * l[i] * l[j];
                hpx[(i, j)] += 2.0 * sh * l[i] * v.g[j];
            }
        }
    }
    Ok(PhaseDerivs {
        h,
        dhdx,
        dhdp,
        hpp,
        hpx,
        hxx,
    })
}

pub fn hamiltonian(m: &ModelSpec, x: &[f64], p: &[f64]) -> Result<f64> {
    Ok(Fiber::at(m, x)?.h(p))
}

/// `H(x, .)` at a frozen base point: the field values are evaluated once and
/// the momentum dependence is closed-form.
#[derive(Debug, Clone)]
pub struct Fiber {
    offsets: Vec<Vec<f64>>,
    /// `2 V(x, l)` per pair
    weights: Vec<f64>,
    dpp: f64,
    dim: usize,
}

impl Fiber {
    pub fn at(m: &ModelSpec, x: &[f64]) -> Result<Self> {
        let mut offsets = Vec::new();
        let mut weights = Vec::new();
        for (i, pair) in m.pairs().iter().enumerate() {
            let v = m.pair_v_by_index(i, x)?;
            if v != 0.0 {
                offsets.push(pair.offset_f64());
                weights.push(2.0 * v);
            }
        }
        Ok(Fiber {
            offsets,
            weights,
            dpp: m.dpp().eval(x)?,
            dim: m.dim(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `U(x) = dpp(x) + sum_l V(x, l)`
    pub fn onsite_u(&self) -> f64 {
        self.dpp + self.weights.iter().sum::<f64>()
    }

    /// `T(x, p) = sum_l V(x, l) cosh<l, p>`
    pub fn kinetic(&self, p: &[f64]) -> f64 {
        self.offsets
            .iter()
            .zip(&self.weights)
            .map(|(l, w)| w * dot(l, p).cosh())
            .sum()
    }

    pub fn h(&self, p: &[f64]) -> f64 {
        let mut h = -self.dpp;
        for (l, w) in self.offsets.iter().zip(&self.weights) {
            h += w * cosh_m1(dot(l, p));
        }
        h
    }

    pub fn grad(&self, p: &[f64]) -> DVector<f64> {
        let d = p.len();
        let mut g = DVector::zeros(d);
        for (l, w) in self.offsets.iter().zip(&self.weights) {
            let s = w * dot(l, p).sinh();
            for i in 0..d {
                g[i] += s * l[i];
            }
        }
        g
    }

    pub fn hess(&self, p: &[f64]) -> DMatrix<f64> {
        let d = p.len();
        let mut m = DMatrix::zeros(d, d);
        for (l, w) in self.offsets.iter().zip(&self.weights) {
            let c = w * dot(l, p).cosh();
            for i in 0..d {
                for j in 0..d {
                    m[(i, j)] += c * l[i] * l[j];
                }
            }
        }
        m
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::examples::{model_a, model_b};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn model_a_at_zero_momentum() {
        let a = model_a();
        let pd = phase_derivs(&a, &[0.3, 0.2], &[0.0, 0.0]).unwrap();
        assert!((pd.h + 1.0).abs() < 1e-15);
        assert!((pd.hpp[(0, 0)] - 0.8).abs() < 1e-15);
        assert!((pd.hpp[(1, 1)] - 0.8).abs() < 1e-15);
        assert_eq!(pd.hpp[(0, 1)], 0.0);
        assert_eq!(pd.dhdx.norm(), 0.0);
        assert_eq!(pd.hpx.norm(), 0.0);
        assert_eq!(pd.hxx.norm(), 0.0);
    }

    #[test]
    fn model_a_on_the_figuratrix_axis() {
        let a = model_a();
        let r = 2.25f64.acosh();
        let pd = phase_derivs(&a, &[0.0, 0.0], &[r, 0.0]).unwrap();
        assert!(pd.h.abs() < 1e-14);
        let expected = 0.8 * (2.25f64 * 2.25 - 1.0).sqrt();
        assert!((pd.dhdp[0] - expected).abs() < 1e-14);
        assert!((pd.dhdp[0] - 1.612451).abs() < 1e-6);
        assert_eq!(pd.dhdp[1], 0.0);
    }

    #[test]
    fn even_in_momentum_and_h_at_zero() {
        let b = model_b();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let p: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let q: Vec<f64> = p.iter().map(|v| -v).collect();
            assert_eq!(hamiltonian(&b, &x, &p).unwrap(), hamiltonian(&b, &x, &q).unwrap());
            let h0 = hamiltonian(&b, &x, &[0.0, 0.0]).unwrap();
            let dpp = b.dpp().eval(&x).unwrap();
            assert!((h0 + dpp).abs() <= 1e-14);
        }
    }

    #[test]
    fn fiber_agrees_with_phase_derivs() {
        let b = model_b();
        let x = [0.4, -1.1];
        let p = [0.7, -0.3];
        let f = Fiber::at(&b, &x).unwrap();
        let pd = phase_derivs(&b, &x, &p).unwrap();
        assert!((f.h(&p) - pd.h).abs() < 1e-15);
        assert!((f.grad(&p) - &pd.dhdp).norm() < 1e-15);
        assert!((f.hess(&p) - &pd.hpp).norm() < 1e-15);
        assert!((f.kinetic(&p) - f.onsite_u() - pd.h).abs() < 1e-14);
    }

    #[test]
    fn hpp_positive_definite() {
        let b = model_b();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let p: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let m = phase_derivs(&b, &x, &p).unwrap().hpp;
            // explicit 2x2 eigenvalues
            let tr = m[(0, 0)] + m[(1, 1)];
            let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
            let lmin = 0.5 * (tr - (tr * tr - 4.0 * det).max(0.0).sqrt());
            assert!(lmin > 0.0);
        }
    }
}
