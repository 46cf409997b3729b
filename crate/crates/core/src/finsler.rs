//! Finsler structure induced by the Hamiltonian.
//!
//! For fixed `x` the polar body `B*_x = {p : H(x, p) <= 0}` is strictly convex
//! and symmetric; its boundary is the figuratrix. The support function
//! `F(x, v) = sup { <p, v> : p in B*_x }` is attained at the dual point
//! `p(x, v)`, the unique figuratrix point whose outward normal `grad_p H` is
//! parallel to `v`. The fundamental tensor is `G = F F'' + F' F'^T`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hamiltonian::Fiber;
use crate::model::ModelSpec;

const RADIUS_MAX_ITER: usize = 100;
const DUAL_MAX_ITER: usize = 50;

fn root_tol(fiber: &Fiber) -> f64 {
    1e-12 * fiber.onsite_u().max(1.0)
}

/// Radius `r > 0` with `H(x, r u) = 0` for a unit direction `u`.
pub fn figuratrix_radius(m: &ModelSpec, x: &[f64], u: &[f64]) -> Result<f64> {
    let fiber = Fiber::at(m, x)?;
    radius_on_fiber(&fiber, u)
}

pub(crate) fn radius_on_fiber(fiber: &Fiber, u: &[f64]) -> Result<f64> {
    let f0 = fiber.h(&vec![0.0; u.len()]);
    if f0 >= 0.0 {
        return Err(Error::Hypothesis(format!("H(x, 0) = {f0} is not negative")));
    }
    let at = |r: f64| -> Vec<f64> { u.iter().map(|c| c * r).collect() };
    // bracket from above; H is convex along the ray so Newton from the
    // positive side decreases monotonically onto the root
    let mut r = 1.0;
    let mut grow = 0;
    while fiber.h(&at(r)) <= 0.0 {
        r *= 2.0;
        grow += 1;
        if grow > 60 {
            return Err(Error::NonConvergence {
                what: "figuratrix bracketing",
                iterations: grow,
                residual: fiber.h(&at(r)),
            });
        }
    }
    let tol = root_tol(fiber);
    let mut lo: f64 = 0.0;
    let mut hi: f64 = r;
    for it in 0..RADIUS_MAX_ITER {
        let p = at(r);
        let f = fiber.h(&p);
        if f <= 0.0 {
            lo = lo.max(r);
        } else {
            hi = hi.min(r);
        }
        let df: f64 = fiber.grad(&p).iter().zip(u).map(|(g, c)| g * c).sum();
        let mut next = if df > 0.0 { r - f / df } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - r).abs();
        r = next;
        if step <= 4.0 * f64::EPSILON * r {
            let res = fiber.h(&at(r));
            if res.abs() <= tol {
                return Ok(r);
            }
            return Err(Error::NonConvergence {
                what: "figuratrix radius",
                iterations: it + 1,
                residual: res,
            });
        }
    }
    Err(Error::NonConvergence {
        what: "figuratrix radius",
        iterations: RADIUS_MAX_ITER,
        residual: fiber.h(&at(r)),
    })
}

/// Figuratrix point with outward normal along `v`.
#[derive(Debug, Clone)]
pub struct DualPoint {
    pub p: DVector<f64>,
    /// `grad_p H(x, p) = lambda * v`
    pub lambda: f64,
}

pub fn dual_point(m: &ModelSpec, x: &[f64], v: &[f64]) -> Result<DualPoint> {
    let fiber = Fiber::at(m, x)?;
    dual_on_fiber(&fiber, v)
}

fn unit(v: &[f64]) -> Result<(DVector<f64>, f64)> {
    let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::InvalidInput(format!("direction {v:?} must be nonzero")));
    }
    Ok((DVector::from_iterator(v.len(), v.iter().map(|a| a / n)), n))
}

pub(crate) fn dual_on_fiber(fiber: &Fiber, v: &[f64]) -> Result<DualPoint> {
    let (vhat, vnorm) = unit(v)?;
    let d = v.len();
    let tol = root_tol(fiber);

    let mut starts = vec![vhat.clone()];
    // restart directions: rotate toward the coordinate axes
    for k in 0..d {
        for s in [1.0, -1.0] {
            let mut w = vhat.clone();
            w[k] += 0.5 * s;
            if w.norm() > 1e-3 {
                starts.push(w.normalize());
            }
        }
    }

    let mut last_res = f64::NAN;
    for dir in &starts {
        let r = radius_on_fiber(fiber, dir.as_slice())?;
        let p0 = dir * r;
        match newton_dual(fiber, &vhat, p0, tol) {
            Ok((p, lam)) => {
                return Ok(DualPoint {
                    p,
                    lambda: lam / vnorm,
                })
            }
            Err(res) => last_res = res,
        }
    }
    Err(Error::NonConvergence {
        what: "dual point (ill-conditioned figuratrix)",
        iterations: DUAL_MAX_ITER,
        residual: last_res,
    })
}

/// Newton on `grad H(p) - lambda vhat = 0, H(p) = 0`. Returns the residual
/// norm on failure.
fn newton_dual(
    fiber: &Fiber,
    vhat: &DVector<f64>,
    mut p: DVector<f64>,
    tol: f64,
) -> std::result::Result<(DVector<f64>, f64), f64> {
    let d = vhat.len();
    let residual = |p: &DVector<f64>, lam: f64| -> DVector<f64> {
        let g = fiber.grad(p.as_slice());
        let mut r = DVector::zeros(d + 1);
        for i in 0..d {
            r[i] = g[i] - lam * vhat[i];
        }
        r[d] = fiber.h(p.as_slice());
        r
    };
    let mut lam = fiber.grad(p.as_slice()).dot(vhat);
    let mut res = residual(&p, lam);
    for _ in 0..DUAL_MAX_ITER {
        let g = fiber.grad(p.as_slice());
        let gnorm = g.norm();
        let align = res.rows(0, d).norm();
        if res[d].abs() <= tol && align <= 1e-13 * gnorm.max(1.0) && lam > 0.0 {
            return Ok((p, lam));
        }
        let mut jac = DMatrix::zeros(d + 1, d + 1);
        jac.view_mut((0, 0), (d, d)).copy_from(&fiber.hess(p.as_slice()));
        for i in 0..d {
            jac[(i, d)] = -vhat[i];
            jac[(d, i)] = g[i];
        }
        let Some(step) = jac.lu().solve(&(-&res)) else {
            return Err(res.norm());
        };
        let norm0 = res.norm();
        let mut t = 1.0;
        loop {
            let pn = &p + step.rows(0, d) * t;
            let ln = lam + step[d] * t;
            let rn = residual(&pn, ln);
            if rn.norm() < norm0 || t < 1e-6 {
                p = pn;
                lam = ln;
                res = rn;
                break;
            }
            t *= 0.5;
        }
        if !res.norm().is_finite() {
            return Err(f64::INFINITY);
        }
    }
    let g = fiber.grad(p.as_slice());
    if res[d].abs() <= tol && res.rows(0, d).norm() <= 1e-11 * g.norm().max(1.0) && lam > 0.0 {
        return Ok((p, lam));
    }
    Err(res.norm())
}

/// `F(x, v)`; zero for `v = 0`.
pub fn support_function(m: &ModelSpec, x: &[f64], v: &[f64]) -> Result<f64> {
    if v.iter().all(|&a| a == 0.0) {
        return Ok(0.0);
    }
    let dp = dual_point(m, x, v)?;
    Ok(dp.p.iter().zip(v).map(|(a, b)| a * b).sum())
}

/// `F` and its first two derivatives in `v`, and the fundamental tensor.
#[derive(Debug, Clone)]
pub struct FinslerTensor {
    pub f: f64,
    /// `F'_v`, which is the dual point
    pub fv: DVector<f64>,
    pub fvv: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub lambda: f64,
    pub grad_h: DVector<f64>,
    pub hpp: DMatrix<f64>,
}

pub fn finsler_tensor(m: &ModelSpec, x: &[f64], v: &[f64]) -> Result<FinslerTensor> {
    let fiber = Fiber::at(m, x)?;
    tensor_on_fiber(&fiber, v)
}

pub(crate) fn tensor_on_fiber(fiber: &Fiber, v: &[f64]) -> Result<FinslerTensor> {
    let d = v.len();
    let dp = dual_on_fiber(fiber, v)?;
    let vv = DVector::from_column_slice(v);
    let p = dp.p;
    let grad_h = fiber.grad(p.as_slice());
    let hpp = fiber.hess(p.as_slice());
    // differentiate grad H(p(v)) = lambda(v) v and H(p(v)) = 0 in v
    let mut jac = DMatrix::zeros(d + 1, d + 1);
    jac.view_mut((0, 0), (d, d)).copy_from(&hpp);
    for i in 0..d {
        jac[(i, d)] = -vv[i];
        jac[(d, i)] = grad_h[i];
    }
    let mut rhs = DMatrix::zeros(d + 1, d);
    for i in 0..d {
        rhs[(i, i)] = dp.lambda;
    }
    let sol = jac
        .lu()
        .solve(&rhs)
        .ok_or(Error::Singular("implicit differentiation of the dual point"))?;
    let raw = sol.rows(0, d).into_owned();
    let fvv = (&raw + raw.transpose()) * 0.5;
    let f = p.dot(&vv);
    let g = &fvv * f + &p * p.transpose();
    Ok(FinslerTensor {
        f,
        fv: p,
        fvv,
        g,
        lambda: dp.lambda,
        grad_h,
        hpp,
    })
}

/// Orthonormal basis (as columns) of the orthogonal complement of `n`.
pub fn complement_basis(n: &DVector<f64>) -> DMatrix<f64> {
    let d = n.len();
    let nhat = n.normalize();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(d - 1);
    let mut order: Vec<usize> = (0..d).collect();
    // start with the axes least aligned with n
    order.sort_by(|&a, &b| nhat[a].abs().total_cmp(&nhat[b].abs()));
    for k in order {
        if cols.len() == d - 1 {
            break;
        }
        let mut e = DVector::zeros(d);
        e[k] = 1.0;
        e -= &nhat * nhat[k];
        for c in &cols {
            let s = c.dot(&e);
            e -= c * s;
        }
        let norm = e.norm();
        if norm > 1e-8 {
            cols.push(e / norm);
        }
    }
    DMatrix::from_columns(&cols)
}

/// Residuals of the two determinant identities linking `H''_pp`, `F''_vv`
/// and `G` at a point.
#[derive(Debug, Clone)]
pub struct DeterminantIdentities {
    /// `1 / det H''_pp^perp`
    pub inv_det_hpp_perp: f64,
    /// `|v|^{d-1} / |grad H|^{d-1} * det F''_vv^perp`
    pub via_fvv_perp: f64,
    /// `-|v|^{d-3} / |grad H|^{d-1} * det [[0, v^T], [v, F''_vv]]`
    pub via_bordered: f64,
    /// `det [[0, v^T], [v, F''_vv]]`
    pub bordered: f64,
    /// `-det G |v|^4 / F^{d+1}`
    pub bordered_from_g: f64,
    /// max relative residual of the first identity (both equalities)
    pub first_residual: f64,
    /// relative residual of the second identity
    pub second_residual: f64,
}

pub fn verify_determinant_identities(m: &ModelSpec, x: &[f64], v: &[f64]) -> Result<DeterminantIdentities> {
    let d = v.len();
    let t = finsler_tensor(m, x, v)?;
    let vv = DVector::from_column_slice(v);
    let vn = vv.norm();
    let gn = t.grad_h.norm();
    let q = complement_basis(&t.grad_h);
    let hperp = q.transpose() * &t.hpp * &q;
    let qv = complement_basis(&vv);
    let fperp = qv.transpose() * &t.fvv * &qv;

    let mut border = DMatrix::zeros(d + 1, d + 1);
    border.view_mut((1, 1), (d, d)).copy_from(&t.fvv);
    for i in 0..d {
        border[(0, i + 1)] = v[i];
        border[(i + 1, 0)] = v[i];
    }
    let bordered = border.determinant();
    let dm1 = (d - 1) as i32;

    let inv_det_hpp_perp = 1.0 / hperp.determinant();
    let via_fvv_perp = vn.powi(dm1) / gn.powi(dm1) * fperp.determinant();
    let via_bordered = -vn.powi(d as i32 - 3) / gn.powi(dm1) * bordered;
    let bordered_from_g = -t.g.determinant() * vn.powi(4) / t.f.powi(d as i32 + 1);

    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs());
    Ok(DeterminantIdentities {
        inv_det_hpp_perp,
        via_fvv_perp,
        via_bordered,
        bordered,
        bordered_from_g,
        first_residual: rel(inv_det_hpp_perp, via_fvv_perp).max(rel(inv_det_hpp_perp, via_bordered)),
        second_residual: rel(bordered, bordered_from_g),
    })
}
