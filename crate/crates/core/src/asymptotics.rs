//! Leading-order off-diagonal asymptotics of `(E''(0)^{-1})_{xy}`.
//!
//! ```text
//! G(x, y) ~ C(x, y) e^{-d_F / h} / (2 pi d_F / h)^{(d-1)/2}
//! C(x, y) = det(G(x, v_x) G(y, v_y))^{1/4} / (Delta sqrt(<p_x, v_x> <p_y, v_y>))
//! ```
//!
//! The geometry does not depend on `h`, so it is computed once and reused
//! across a sweep.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::finsler::{complement_basis, dual_point, finsler_tensor};
use crate::geodesics::{shoot_with, GeodesicSolution, ShootOptions};
use crate::hamiltonian::Fiber;
use crate::jacobi::{expmap_jacobian_fd, geodesic_bordered_det, gram_bordered_sides};
use crate::lattice::{lattice_green, LatticeOptions};
use crate::model::{LatticeSite, ModelSpec};
use crate::spectral::{check_translation_invariant, green_spectral};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    GJacobi,
    Bordered,
}

/// Power of the bordered determinant in the bordered route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BorderedExponent {
    /// `bordered^{-1/2}`
    #[default]
    Reciprocal,
    /// `bordered^{+1/2}`
    Direct,
}

impl BorderedExponent {
    fn sign(self) -> f64 {
        match self {
            BorderedExponent::Reciprocal => -1.0,
            BorderedExponent::Direct => 1.0,
        }
    }
}

/// Everything in the estimate that does not depend on `h`.
#[derive(Debug, Clone)]
pub struct LeadingGeometry {
    pub dim: usize,
    pub solution: GeodesicSolution,
    pub d_f: f64,
    pub det_g_x: f64,
    pub det_g_y: f64,
    pub pv_x: f64,
    pub pv_y: f64,
    pub delta: f64,
    pub gram_det: f64,
    pub bordered: f64,
    pub prefactor: f64,
}

impl LeadingGeometry {
    /// Geometry of the minimizing geodesic from `y` to `x`.
    pub fn compute(m: &ModelSpec, x: &[f64], y: &[f64]) -> Result<Self> {
        Self::compute_with(m, x, y, &ShootOptions::default())
    }

    pub fn compute_with(m: &ModelSpec, x: &[f64], y: &[f64], opts: &ShootOptions) -> Result<Self> {
        if x == y {
            return Err(Error::InvalidInput(
                "x = y: the leading-order formula is singular at zero distance".into(),
            ));
        }
        let opts = ShootOptions {
            check_conjugate: true,
            ..*opts
        };
        let sol = shoot_with(m, y, x, &opts)?;
        let ode = opts.flow.ode;
        let bordered = geodesic_bordered_det(m, &sol, &ode)?;
        if !sol.conjugate_free || bordered <= 0.0 {
            return Err(Error::Conjugate(bordered));
        }
        let det_g_x = finsler_tensor(m, x, sol.v_x.as_slice())?.g.determinant();
        let det_g_y = finsler_tensor(m, y, sol.v_y.as_slice())?.g.determinant();
        let pv_x = sol.p_x.dot(&sol.v_x);
        let pv_y = sol.p_y.dot(&sol.v_y);
        let jac = expmap_jacobian_fd(m, &sol, &ode)?;
        let prefactor = (det_g_x * det_g_y).powf(0.25) / (jac.delta * (pv_x * pv_y).sqrt());
        Ok(LeadingGeometry {
            dim: m.dim(),
            d_f: sol.d_f,
            solution: sol,
            det_g_x,
            det_g_y,
            pv_x,
            pv_y,
            delta: jac.delta,
            gram_det: jac.gram_det,
            bordered,
            prefactor,
        })
    }

    fn warnings(&self, h: f64) -> Vec<String> {
        let mut w = Vec::new();
        if self.d_f < 10.0 * h {
            w.push(format!(
                "d_F = {} is below 10 h = {}; the asymptotic regime d_F / h >> 1 is not reached",
                self.d_f,
                10.0 * h
            ));
        }
        w
    }

    pub fn estimate(&self, h: f64) -> AsymptoticEstimate {
        let k = (self.dim - 1) as f64 / 2.0;
        let value = self.prefactor * (-self.d_f / h).exp() / (std::f64::consts::TAU * self.d_f / h).powf(k);
        self.record(h, value, Route::GJacobi)
    }

    pub fn estimate_bordered(&self, h: f64, exponent: BorderedExponent) -> Result<AsymptoticEstimate> {
        if self.bordered <= 0.0 {
            return Err(Error::Conjugate(self.bordered));
        }
        let k = (self.dim - 1) as f64 / 2.0;
        let value = (-self.d_f / h).exp() * (h / std::f64::consts::TAU).powf(k) * self.bordered.powf(0.5 * exponent.sign());
        Ok(self.record(h, value, Route::Bordered))
    }

    fn record(&self, h: f64, value: f64, route: Route) -> AsymptoticEstimate {
        AsymptoticEstimate {
            value,
            h,
            d_f: self.d_f,
            prefactor: self.prefactor,
            delta: self.delta,
            bordered: self.bordered,
            route,
            tau: self.solution.tau,
            pv_x: self.pv_x,
            pv_y: self.pv_y,
            det_g_x: self.det_g_x,
            det_g_y: self.det_g_y,
            warnings: self.warnings(h),
        }
    }

    /// `|bordered^{-1/2} / (det(G_x G_y)^{1/4} / (sqrt(<p_x,v_x><p_y,v_y>) gram^{1/4})) - 1|`
    pub fn gram_identity_residual(&self) -> f64 {
        let lhs = self.bordered.powf(-0.5);
        let rhs = (self.det_g_x * self.det_g_y).powf(0.25) / ((self.pv_x * self.pv_y).sqrt() * self.gram_det.powf(0.25));
        (lhs / rhs - 1.0).abs()
    }
}

#[derive(Debug, Clone)]
pub struct AsymptoticEstimate {
    pub value: f64,
    pub h: f64,
    pub d_f: f64,
    pub prefactor: f64,
    pub delta: f64,
    pub bordered: f64,
    pub route: Route,
    pub tau: f64,
    pub pv_x: f64,
    pub pv_y: f64,
    pub det_g_x: f64,
    pub det_g_y: f64,
    pub warnings: Vec<String>,
}

fn on_grid(x: &[f64], y: &[f64], h: f64) -> Result<(LatticeSite, LatticeSite)> {
    Ok((LatticeSite::from_point(x, h)?, LatticeSite::from_point(y, h)?))
}

/// Leading estimate through the Jacobi Gram determinant.
pub fn green_leading(m: &ModelSpec, x: &[f64], y: &[f64], h: f64) -> Result<AsymptoticEstimate> {
    on_grid(x, y, h)?;
    Ok(LeadingGeometry::compute(m, x, y)?.estimate(h))
}

/// Leading estimate through the bordered determinant.
pub fn green_leading_bordered(m: &ModelSpec, x: &[f64], y: &[f64], h: f64, exponent: BorderedExponent) -> Result<AsymptoticEstimate> {
    on_grid(x, y, h)?;
    LeadingGeometry::compute(m, x, y)?.estimate_bordered(h, exponent)
}

/// Both residual sides of the Gram/bordered identity, computed separately.
pub fn gram_identity_sides(m: &ModelSpec, sol: &GeodesicSolution) -> Result<(f64, f64)> {
    gram_bordered_sides(m, sol, &ShootOptions::default().flow.ode)
}

/// The two classical translation-invariant decay formulas.
#[derive(Debug, Clone)]
pub struct OzValues {
    pub ti1: f64,
    pub ti2: f64,
    /// `|grad H|^{(d-3)/2} / sqrt(det H''_pp^perp)`
    pub prefactor_ti1: f64,
    /// `sqrt(det G) / <p, grad H>`
    pub prefactor_ti2: f64,
    pub f: f64,
}

pub fn green_oz(m: &ModelSpec, z: &[f64], h: f64) -> Result<OzValues> {
    check_translation_invariant(m)?;
    let d = m.dim();
    if z.iter().all(|&a| a == 0.0) {
        return Err(Error::InvalidInput("z = 0".into()));
    }
    let origin = vec![0.0; d];
    let dp = dual_point(m, &origin, z)?;
    let fiber = Fiber::at(m, &origin)?;
    let grad = fiber.grad(dp.p.as_slice());
    let hpp = fiber.hess(dp.p.as_slice());
    let q = complement_basis(&grad);
    let hperp = q.transpose() * hpp * &q;
    let gn = grad.norm();
    let prefactor_ti1 = gn.powf((d as f64 - 3.0) / 2.0) / hperp.determinant().sqrt();
    let t = finsler_tensor(m, &origin, z)?;
    let prefactor_ti2 = t.g.determinant().sqrt() / dp.p.dot(&grad);
    let zn = z.iter().map(|a| a * a).sum::<f64>().sqrt();
    let k = (d as f64 - 1.0) / 2.0;
    let decay = (-t.f / h).exp();
    Ok(OzValues {
        ti1: prefactor_ti1 * (std::f64::consts::TAU * zn / h).powf(-k) * decay,
        ti2: prefactor_ti2 * (std::f64::consts::TAU * t.f / h).powf(-k) * decay,
        prefactor_ti1,
        prefactor_ti2,
        f: t.f,
    })
}

#[derive(Debug, Clone)]
pub enum Oracle {
    Spectral,
    Lattice(LatticeOptions),
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub n: u32,
    pub h: f64,
    pub d_f: f64,
    pub oracle: f64,
    pub asymptotic: f64,
    /// `oracle / asymptotic`
    pub ratio: f64,
    pub delta: f64,
    pub bordered: f64,
}

impl SweepRow {
    pub const CSV_HEADER: &'static str = "n,h,dF,oracle,asymptotic,ratio,delta,bordered";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.n, self.h, self.d_f, self.oracle, self.asymptotic, self.ratio, self.delta, self.bordered
        )
    }
}

/// Oracle value at one spacing.
pub fn oracle_value(m: &ModelSpec, x: &[f64], y: &[f64], h: f64, oracle: &Oracle) -> Result<f64> {
    let (xs, ys) = on_grid(x, y, h)?;
    match oracle {
        Oracle::Spectral => {
            let k: Vec<i64> = xs.k.iter().zip(&ys.k).map(|(a, b)| a - b).collect();
            Ok(green_spectral(m, &k)?.value)
        }
        Oracle::Lattice(opts) => Ok(lattice_green(m, &xs, &ys, opts)?.value),
    }
}

/// Oracle against leading estimate for `h_n = 2^{-n}`.
pub fn convergence_sweep(m: &ModelSpec, x: &[f64], y: &[f64], ns: &[u32], oracle: &Oracle) -> Result<Vec<SweepRow>> {
    if ns.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("sweep exponents must increase".into()));
    }
    if let Some(&n0) = ns.first() {
        on_grid(x, y, 0.5f64.powi(n0 as i32))?;
    }
    let geom = LeadingGeometry::compute(m, x, y)?;
    sweep_with_geometry(m, x, y, ns, oracle, &geom)
}

pub fn sweep_with_geometry(m: &ModelSpec, x: &[f64], y: &[f64], ns: &[u32], oracle: &Oracle, geom: &LeadingGeometry) -> Result<Vec<SweepRow>> {
    ns.par_iter()
        .map(|&n| {
            let h = 0.5f64.powi(n as i32);
            let o = oracle_value(m, x, y, h, oracle)?;
            let a = geom.estimate(h).value;
            Ok(SweepRow {
                n,
                h,
                d_f: geom.d_f,
                oracle: o,
                asymptotic: a,
                ratio: o / a,
                delta: geom.delta,
                bordered: geom.bordered,
            })
        })
        .collect()
}

/// `|r_n - 1| / |r_{n+1} - 1|` for consecutive rows.
pub fn successive_error_ratios(rows: &[SweepRow]) -> Vec<f64> {
    rows.windows(2)
        .map(|w| (w[0].ratio - 1.0).abs() / (w[1].ratio - 1.0).abs())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::examples::{model_a, model_b};

    #[test]
    fn model_a_prefactor_and_routes() {
        let a = model_a();
        let g = LeadingGeometry::compute(&a, &[1.0, 0.0], &[0.0, 0.0]).unwrap();
        let r = 2.25f64.acosh();
        let gh = 0.8 * (2.25f64 * 2.25 - 1.0).sqrt();
        let c = (r * r * r * gh / 0.8).sqrt() / (r * gh);
        assert!((g.prefactor - c).abs() < 1e-6);
        assert!((g.prefactor - 1.0604292).abs() < 1e-6);
        assert!((g.delta - 1.0).abs() < 1e-6);
        let h = 0.125;
        let e = g.estimate(h);
        let expect = c * (-r / h).exp() / (std::f64::consts::TAU * r / h).sqrt();
        assert!((e.value / expect - 1.0).abs() < 1e-6);
        let b = g.estimate_bordered(h, BorderedExponent::Reciprocal).unwrap();
        assert!((b.value / e.value - 1.0).abs() < 1e-6);
        let oz = green_oz(&a, &[1.0, 0.0], h).unwrap();
        assert!((oz.prefactor_ti1 - gh.powf(-0.5) / 0.8f64.sqrt()).abs() < 1e-12);
        assert!((oz.ti1 / oz.ti2 - 1.0).abs() < 1e-8);
        assert!((oz.ti2 / e.value - 1.0).abs() < 1e-6);
        assert!((g.bordered.powf(-0.5) - oz.prefactor_ti1).abs() < 1e-8);
        let direct = g.estimate_bordered(h, BorderedExponent::Direct).unwrap();
        assert!((direct.value / b.value - g.bordered).abs() < 1e-9);
        assert!(g.gram_identity_residual() < 1e-5);
    }

    #[test]
    fn model_b_routes_and_symmetry() {
        let b = model_b();
        let g = LeadingGeometry::compute(&b, &[1.0, 0.0], &[0.0, 0.0]).unwrap();
        let h = 1.0 / 16.0;
        let e = g.estimate(h);
        let eb = g.estimate_bordered(h, BorderedExponent::Reciprocal).unwrap();
        assert!((eb.value / e.value - 1.0).abs() <= 1e-6);
        assert!(g.gram_identity_residual() <= 1e-5);
        let rev = LeadingGeometry::compute(&b, &[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!((rev.estimate(h).value / e.value - 1.0).abs() <= 1e-8);
        assert!(green_oz(&b, &[1.0, 0.0], h).is_err());
    }

    #[test]
    fn model_b_against_lattice_at_sixteenth() {
        let b = model_b();
        let h = 1.0 / 16.0;
        let e = green_leading(&b, &[1.0, 0.0], &[0.0, 0.0], h).unwrap();
        let o = oracle_value(&b, &[1.0, 0.0], &[0.0, 0.0], h, &Oracle::Lattice(LatticeOptions::default())).unwrap();
        assert!((o / e.value - 1.0).abs() <= 0.1, "{} {}", o, e.value);
    }

    #[test]
    fn refusals_and_warnings() {
        let a = model_a();
        assert!(green_leading(&a, &[1.0, 0.0], &[1.0, 0.0], 0.5).is_err());
        assert!(green_leading(&a, &[1.0 / 3.0, 0.0], &[0.0, 0.0], 0.125).is_err());
        let e = green_leading(&a, &[0.25, 0.0], &[0.0, 0.0], 0.125).unwrap();
        assert_eq!(e.warnings.len(), 1);
        let bump = crate::model::examples::model_bump();
        assert!(matches!(
            green_leading(&bump, &[4.0, 0.0], &[0.0, 0.0], 0.25),
            Err(Error::UniquenessViolated { .. })
        ));
    }
}
