//! Linearized Hamiltonian flow along a geodesic and the exponential map.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::finsler::{dual_point, finsler_tensor, support_function};
use crate::geodesics::GeodesicSolution;
use crate::hamiltonian::{phase_derivs, Fiber};
use crate::model::ModelSpec;
use crate::ode::{integrate, OdeOptions};

/// `(X, P)` with `X(0) = 0`, `P(0) = I`, together with the base point.
#[derive(Debug, Clone)]
pub struct JacobiState {
    pub t: f64,
    pub x: DVector<f64>,
    pub p: DVector<f64>,
    pub xm: DMatrix<f64>,
    pub pm: DMatrix<f64>,
}

impl JacobiState {
    /// `|X^T P - P^T X|`
    pub fn symplectic_residual(&self) -> f64 {
        let w = self.xm.transpose() * &self.pm;
        (&w - w.transpose()).norm()
    }
}

/// Integrate the base flow jointly with
/// `d/dt (X; P) = [[H_px, H_pp], [-H_xx, -H_xp]] (X; P)`.
pub fn propagate_jacobi(m: &ModelSpec, y: &[f64], p_y: &[f64], tau: f64, opts: &OdeOptions) -> Result<Vec<JacobiState>> {
    let d = m.dim();
    let dd = d * d;
    let mut z0 = vec![0.0; 2 * d + 2 * dd];
    z0[..d].copy_from_slice(y);
    z0[d..2 * d].copy_from_slice(p_y);
    for i in 0..d {
        // P is stored column-major after X
        z0[2 * d + dd + i * d + i] = 1.0;
    }
    let sol = integrate(
        |_, z: &[f64], dz: &mut [f64]| {
            let pd = phase_derivs(m, &z[..d], &z[d..2 * d])?;
            for i in 0..d {
                dz[i] = pd.dhdp[i];
                dz[d + i] = -pd.dhdx[i];
            }
            let xm = DMatrix::from_column_slice(d, d, &z[2 * d..2 * d + dd]);
            let pm = DMatrix::from_column_slice(d, d, &z[2 * d + dd..]);
            let dx = &pd.hpx * &xm + &pd.hpp * &pm;
            let dp = -(&pd.hxx * &xm) - pd.hpx.transpose() * &pm;
            dz[2 * d..2 * d + dd].copy_from_slice(dx.as_slice());
            dz[2 * d + dd..].copy_from_slice(dp.as_slice());
            Ok(())
        },
        0.0,
        &z0,
        tau,
        opts,
        true,
    )?;
    Ok(sol
        .t
        .iter()
        .zip(&sol.y)
        .map(|(&t, z)| JacobiState {
            t,
            x: DVector::from_column_slice(&z[..d]),
            p: DVector::from_column_slice(&z[d..2 * d]),
            xm: DMatrix::from_column_slice(d, d, &z[2 * d..2 * d + dd]),
            pm: DMatrix::from_column_slice(d, d, &z[2 * d + dd..]),
        })
        .collect())
}

/// `det [[0, -v_y^T], [v_x, X]]`
pub fn bordered_det(v_y: &DVector<f64>, v_x: &DVector<f64>, xm: &DMatrix<f64>) -> f64 {
    let d = v_y.len();
    let mut b = DMatrix::zeros(d + 1, d + 1);
    for i in 0..d {
        b[(0, i + 1)] = -v_y[i];
        b[(i + 1, 0)] = v_x[i];
    }
    b.view_mut((1, 1), (d, d)).copy_from(xm);
    b.determinant()
}

/// Bordered determinant of a solved geodesic at its final time.
pub fn geodesic_bordered_det(m: &ModelSpec, sol: &GeodesicSolution, opts: &OdeOptions) -> Result<f64> {
    let states = propagate_jacobi(m, sol.y.as_slice(), sol.p_y.as_slice(), sol.tau, opts)?;
    let last = states.last().expect("jacobi propagation has a final state");
    Ok(bordered_det(&sol.v_y, &sol.v_x, &last.xm))
}

/// `exp_y(w)`: the end of the unit-speed geodesic leaving `y` in direction
/// `w` after Finsler length `F(y, w)`.
pub fn expmap(m: &ModelSpec, y: &[f64], w: &[f64], opts: &OdeOptions) -> Result<DVector<f64>> {
    let d = m.dim();
    let len = support_function(m, y, w)?;
    if len == 0.0 {
        return Ok(DVector::from_column_slice(y));
    }
    let p0 = dual_point(m, y, w)?.p;
    let mut z0 = y.to_vec();
    z0.extend_from_slice(p0.as_slice());
    let sol = integrate(
        |_, z: &[f64], dz: &mut [f64]| {
            let pd = phase_derivs(m, &z[..d], &z[d..])?;
            let speed: f64 = (0..d).map(|i| z[d + i] * pd.dhdp[i]).sum();
            for i in 0..d {
                dz[i] = pd.dhdp[i] / speed;
                dz[d + i] = -pd.dhdx[i] / speed;
            }
            Ok(())
        },
        0.0,
        &z0,
        len,
        opts,
        false,
    )?;
    Ok(DVector::from_column_slice(&sol.last()[..d]))
}

/// Frame `b_1..b_d` (columns) orthonormal for `G(y, v_y)` with
/// `b_d = v_y / F(y, v_y)`.
pub fn g_orthonormal_frame(g: &DMatrix<f64>, v: &DVector<f64>) -> Result<DMatrix<f64>> {
    let d = v.len();
    let ip = |a: &DVector<f64>, b: &DVector<f64>| (g * b).dot(a);
    let first = v / ip(v, v).sqrt();
    let mut frame = vec![first];
    for k in 0..d {
        if frame.len() == d {
            break;
        }
        let mut e = DVector::zeros(d);
        e[k] = 1.0;
        let scale = ip(&e, &e).sqrt();
        for b in &frame {
            let c = ip(b, &e);
            e -= b * c;
        }
        let n = ip(&e, &e).max(0.0).sqrt();
        if n <= 1e-6 * scale {
            continue;
        }
        frame.push(e / n);
    }
    if frame.len() != d {
        return Err(Error::Singular("G-orthonormal frame"));
    }
    frame.rotate_left(1);
    Ok(DMatrix::from_columns(&frame))
}

/// Finite-difference data of `exp_y` at `r b_d`.
#[derive(Debug, Clone)]
pub struct ExpMapJacobian {
    pub r: f64,
    /// `b_1..b_d` as columns
    pub frame: DMatrix<f64>,
    /// `J_i(r) = r (exp_y)'(r b_d) b_i`, `i < d`, as columns
    pub jacobi_fields: DMatrix<f64>,
    /// `G(x, v_x)(J_i, J_j)`
    pub gram: DMatrix<f64>,
    pub gram_det: f64,
    /// `det(gram)^{1/4} / r^{(d-1)/2}`
    pub delta: f64,
}

pub fn expmap_jacobian_fd(m: &ModelSpec, sol: &GeodesicSolution, opts: &OdeOptions) -> Result<ExpMapJacobian> {
    let d = m.dim();
    let y = sol.y.as_slice();
    let ty = finsler_tensor(m, y, sol.v_y.as_slice())?;
    let frame = g_orthonormal_frame(&ty.g, &sol.v_y)?;
    let r = sol.d_f;
    let base = frame.column(d - 1) * r;
    let eps = 1e-4 * r.max(1e-3);
    let mut cols = Vec::with_capacity(d - 1);
    for i in 0..d - 1 {
        let bi = frame.column(i);
        let wp = &base + bi * eps;
        let wm = &base - bi * eps;
        let xp = expmap(m, y, wp.as_slice(), opts)?;
        let xm = expmap(m, y, wm.as_slice(), opts)?;
        cols.push((xp - xm) * (r / (2.0 * eps)));
    }
    let jf = DMatrix::from_columns(&cols);
    let tx = finsler_tensor(m, sol.x.as_slice(), sol.v_x.as_slice())?;
    let gram = jf.transpose() * &tx.g * &jf;
    let gram_det = gram.determinant();
    let delta = gram_det.powf(0.25) / r.powf(0.5 * (d - 1) as f64);
    Ok(ExpMapJacobian {
        r,
        frame,
        jacobi_fields: jf,
        gram,
        gram_det,
        delta,
    })
}

/// Central finite differences of the time-`tau` endpoint in the initial
/// momentum, column `j` for `p_y + eps e_j`.
pub fn flow_derivative_fd(m: &ModelSpec, y: &[f64], p_y: &[f64], tau: f64, eps: f64, opts: &OdeOptions) -> Result<DMatrix<f64>> {
    let d = m.dim();
    let end = |p: &[f64]| -> Result<DVector<f64>> {
        let mut z0 = y.to_vec();
        z0.extend_from_slice(p);
        let sol = integrate(
            |_, z: &[f64], dz: &mut [f64]| {
                let pd = phase_derivs(m, &z[..d], &z[d..])?;
                for i in 0..d {
                    dz[i] = pd.dhdp[i];
                    dz[d + i] = -pd.dhdx[i];
                }
                Ok(())
            },
            0.0,
            &z0,
            tau,
            opts,
            false,
        )?;
        Ok(DVector::from_column_slice(&sol.last()[..d]))
    };
    let mut jac = DMatrix::zeros(d, d);
    for j in 0..d {
        let mut pp = p_y.to_vec();
        let mut pm = p_y.to_vec();
        pp[j] += eps;
        pm[j] -= eps;
        jac.set_column(j, &((end(&pp)? - end(&pm)?) / (2.0 * eps)));
    }
    Ok(jac)
}

/// `1 / (sqrt(<p_x, v_x> <p_y, v_y>) det(gram)^{1/4}) det(G_x G_y)^{1/4}`
/// together with `bordered^{-1/2}`; the two agree on a conjugate-free
/// geodesic.
pub fn gram_bordered_sides(m: &ModelSpec, sol: &GeodesicSolution, opts: &OdeOptions) -> Result<(f64, f64)> {
    let jac = expmap_jacobian_fd(m, sol, opts)?;
    let gx = finsler_tensor(m, sol.x.as_slice(), sol.v_x.as_slice())?.g.determinant();
    let gy = finsler_tensor(m, sol.y.as_slice(), sol.v_y.as_slice())?.g.determinant();
    let lhs = (gx * gy).powf(0.25) / ((sol.p_x.dot(&sol.v_x) * sol.p_y.dot(&sol.v_y)).sqrt() * jac.gram_det.powf(0.25));
    let b = geodesic_bordered_det(m, sol, opts)?;
    Ok((lhs, b.powf(-0.5)))
}

/// `H_pp` at the start of a solved geodesic.
pub fn initial_hpp(m: &ModelSpec, sol: &GeodesicSolution) -> Result<DMatrix<f64>> {
    Ok(Fiber::at(m, sol.y.as_slice())?.hess(sol.p_y.as_slice()))
}
