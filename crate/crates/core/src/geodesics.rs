//! Hamiltonian flow on the zero level set and the two-point problem.
//!
//! Trajectories of `x' = H_p, p' = -H_x` inside `{H = 0}` project to
//! Finsler geodesics, and along them `<p, x'> = F(x, x')`. The distance
//! between `y` and `x` is found by shooting from the figuratrix at `y`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::finsler::{complement_basis, dual_on_fiber, radius_on_fiber, support_function};
use crate::hamiltonian::{phase_derivs, Fiber};
use crate::jacobi::{bordered_det, propagate_jacobi};
use crate::model::ModelSpec;
use crate::ode::{integrate, integrate_projected, OdeOptions, StepStats};

#[derive(Debug, Clone, Copy)]
pub struct FlowOptions {
    pub ode: OdeOptions,
    /// rescale the momentum radially back onto the figuratrix after each step
    pub project: bool,
}

impl Default for FlowOptions {
    fn default() -> Self {
        FlowOptions {
            ode: OdeOptions::default(),
            project: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub p: Vec<DVector<f64>>,
    /// `H(x_k, p_k)`
    pub h: Vec<f64>,
    /// `int <p, x'> dt`
    pub action: f64,
    pub stats: StepStats,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn max_h_residual(&self) -> f64 {
        self.h.iter().fold(0.0, |a, b| a.max(b.abs()))
    }

    pub fn end_x(&self) -> &DVector<f64> {
        self.x.last().expect("non-empty trajectory")
    }

    pub fn end_p(&self) -> &DVector<f64> {
        self.p.last().expect("non-empty trajectory")
    }
}

fn h_scale(m: &ModelSpec, x: &[f64]) -> Result<f64> {
    Ok(m.onsite_u(x)?.abs().max(1.0))
}

/// Right-hand side on `[x, p, action]`.
fn hamilton_rhs(m: &ModelSpec, z: &[f64], dz: &mut [f64]) -> Result<()> {
    let d = m.dim();
    let pd = phase_derivs(m, &z[..d], &z[d..2 * d])?;
    let mut a = 0.0;
    for i in 0..d {
        dz[i] = pd.dhdp[i];
        dz[d + i] = -pd.dhdx[i];
        a += z[d + i] * pd.dhdp[i];
    }
    dz[2 * d] = a;
    Ok(())
}

fn project_state(m: &ModelSpec, z: &mut [f64]) -> bool {
    let d = m.dim();
    let p = DVector::from_column_slice(&z[d..2 * d]);
    let n = p.norm();
    if n == 0.0 {
        return false;
    }
    let Ok(fiber) = Fiber::at(m, &z[..d]) else {
        return false;
    };
    let u = &p / n;
    match radius_on_fiber(&fiber, u.as_slice()) {
        Ok(r) => {
            for i in 0..d {
                z[d + i] = r * u[i];
            }
            true
        }
        Err(_) => false,
    }
}

fn run_flow(m: &ModelSpec, y: &[f64], p0: &[f64], tau: f64, opts: &FlowOptions, record: bool) -> Result<(Vec<f64>, Vec<Vec<f64>>, StepStats)> {
    let d = m.dim();
    if y.len() != d || p0.len() != d {
        return Err(Error::InvalidInput("state dimension mismatch".into()));
    }
    let mut z0 = Vec::with_capacity(2 * d + 1);
    z0.extend_from_slice(y);
    z0.extend_from_slice(p0);
    z0.push(0.0);
    let rhs = |_: f64, z: &[f64], dz: &mut [f64]| hamilton_rhs(m, z, dz);
    let sol = if opts.project {
        integrate_projected(rhs, |z: &mut [f64]| project_state(m, z), 0.0, &z0, tau, &opts.ode, record)?
    } else {
        integrate(rhs, 0.0, &z0, tau, &opts.ode, record)?
    };
    Ok((sol.t, sol.y, sol.stats))
}

/// Integrate Hamilton's equations from `(y, p0)` for time `tau`.
pub fn flow(m: &ModelSpec, y: &[f64], p0: &[f64], tau: f64) -> Result<Trajectory> {
    flow_with(m, y, p0, tau, &FlowOptions::default())
}

pub fn flow_with(m: &ModelSpec, y: &[f64], p0: &[f64], tau: f64, opts: &FlowOptions) -> Result<Trajectory> {
    let d = m.dim();
    let h0 = Fiber::at(m, y)?.h(p0);
    if h0.abs() > 1e-9 * h_scale(m, y)? {
        return Err(Error::InvalidInput(format!(
            "initial momentum is off the figuratrix (H = {h0:e})"
        )));
    }
    let (t, zs, stats) = run_flow(m, y, p0, tau, opts, true)?;
    let mut xs = Vec::with_capacity(zs.len());
    let mut ps = Vec::with_capacity(zs.len());
    let mut hs = Vec::with_capacity(zs.len());
    for z in &zs {
        let x = DVector::from_column_slice(&z[..d]);
        let p = DVector::from_column_slice(&z[d..2 * d]);
        hs.push(Fiber::at(m, x.as_slice())?.h(p.as_slice()));
        xs.push(x);
        ps.push(p);
    }
    let action = zs.last().map(|z| z[2 * d]).unwrap_or(0.0);
    Ok(Trajectory {
        t,
        x: xs,
        p: ps,
        h: hs,
        action,
        stats,
    })
}

/// Endpoint `(x, p, action)` of the flow, without recording.
pub fn endpoint(m: &ModelSpec, y: &[f64], p0: &[f64], tau: f64, opts: &FlowOptions) -> Result<(DVector<f64>, DVector<f64>, f64)> {
    let d = m.dim();
    let (_, zs, _) = run_flow(m, y, p0, tau, opts, false)?;
    let z = zs.last().expect("flow has a final state");
    Ok((
        DVector::from_column_slice(&z[..d]),
        DVector::from_column_slice(&z[d..2 * d]),
        z[2 * d],
    ))
}

#[derive(Debug, Clone, Copy)]
pub struct ShootOptions {
    pub flow: FlowOptions,
    /// extra seed directions scanned on the figuratrix
    pub n_seeds: usize,
    pub max_newton: usize,
    /// endpoint residual tolerance, scaled by `1 + |x - y|`
    pub residual_tol: f64,
    /// finite-difference step in chart coordinates
    pub fd_step: f64,
    /// clustering radius for `(p_y, tau)`
    pub cluster_tol: f64,
    /// minimal distances closer than this count as a tie
    pub tie_tol: f64,
    pub check_conjugate: bool,
}

impl Default for ShootOptions {
    fn default() -> Self {
        ShootOptions {
            flow: FlowOptions::default(),
            n_seeds: 16,
            max_newton: 40,
            residual_tol: 1e-10,
            fd_step: 1e-6,
            cluster_tol: 1e-6,
            tie_tol: 1e-8,
            check_conjugate: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeodesicSolution {
    pub y: DVector<f64>,
    pub x: DVector<f64>,
    pub tau: f64,
    pub p_y: DVector<f64>,
    pub v_y: DVector<f64>,
    pub p_x: DVector<f64>,
    pub v_x: DVector<f64>,
    /// `int <p, x'> dt`
    pub d_f: f64,
    /// `int F(q, q') dt`, with `F` from the support function
    pub d_f_lagrangian: f64,
    pub endpoint_residual: f64,
    pub trajectory: Trajectory,
    pub unique: bool,
    pub conjugate_free: bool,
    pub first_conjugate: Option<f64>,
    /// number of distinct geodesics found by the scan
    pub clusters: usize,
}

#[derive(Debug, Clone)]
struct Candidate {
    p_y: DVector<f64>,
    tau: f64,
    action: f64,
}

fn chart_momentum(fiber: &Fiber, c: &DVector<f64>, basis: &DMatrix<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
    let dir = (c + basis * theta).normalize();
    let r = radius_on_fiber(fiber, dir.as_slice())?;
    Ok(dir * r)
}

/// Newton on `(theta, tau)` with a gnomonic chart re-centred after every step.
fn newton_shoot(
    m: &ModelSpec,
    fiber: &Fiber,
    y: &DVector<f64>,
    x: &DVector<f64>,
    seed_dir: DVector<f64>,
    tau0: f64,
    opts: &ShootOptions,
) -> Option<Candidate> {
    let d = m.dim();
    let tol = opts.residual_tol * (1.0 + (x - y).norm());
    let mut c = seed_dir.normalize();
    let mut tau = tau0;
    let eval = |p: &DVector<f64>, tau: f64| endpoint(m, y.as_slice(), p.as_slice(), tau, &opts.flow).ok();

    let mut p = chart_momentum(fiber, &c, &complement_basis(&c), &DVector::zeros(d - 1)).ok()?;
    let (mut xe, mut pe, mut action) = eval(&p, tau)?;
    let mut res = &xe - x;
    for _ in 0..opts.max_newton {
        if res.norm() <= tol {
            return Some(Candidate {
                p_y: p,
                tau,
                action,
            });
        }
        let basis = complement_basis(&c);
        let mut jac = DMatrix::zeros(d, d);
        for i in 0..d - 1 {
            let mut th = DVector::zeros(d - 1);
            th[i] = opts.fd_step;
            let pp = chart_momentum(fiber, &c, &basis, &th).ok()?;
            th[i] = -opts.fd_step;
            let pm = chart_momentum(fiber, &c, &basis, &th).ok()?;
            let (xp, _, _) = eval(&pp, tau)?;
            let (xm, _, _) = eval(&pm, tau)?;
            jac.set_column(i, &((xp - xm) / (2.0 * opts.fd_step)));
        }
        // d(endpoint)/d(tau) is the velocity at the endpoint
        let ve = Fiber::at(m, xe.as_slice()).ok()?.grad(pe.as_slice());
        jac.set_column(d - 1, &ve);
        let step = jac.lu().solve(&(-&res))?;
        let mut dtheta = step.rows(0, d - 1).into_owned();
        let mut dtau = step[d - 1];
        let big = dtheta.norm();
        if big > 0.5 {
            dtheta *= 0.5 / big;
            dtau *= 0.5 / big;
        }
        let norm0 = res.norm();
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..12 {
            let tn = tau + t * dtau;
            if tn > 0.0 {
                let th = &dtheta * t;
                if let Ok(pn) = chart_momentum(fiber, &c, &basis, &th) {
                    if let Some((xn, pen, an)) = eval(&pn, tn) {
                        let rn = &xn - x;
                        if rn.norm() < norm0 {
                            c = (&c + &basis * th).normalize();
                            tau = tn;
                            p = pn;
                            xe = xn;
                            pe = pen;
                            action = an;
                            res = rn;
                            accepted = true;
                            break;
                        }
                    }
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return None;
        }
    }
    if res.norm() <= tol {
        return Some(Candidate {
            p_y: p,
            tau,
            action,
        });
    }
    None
}

fn seed_directions(d: usize, n: usize) -> Vec<DVector<f64>> {
    if d == 2 {
        return (0..n)
            .map(|k| {
                let a = std::f64::consts::TAU * (k as f64 + 0.5) / n as f64;
                DVector::from_vec(vec![a.cos(), a.sin()])
            })
            .collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    (0..n)
        .map(|_| loop {
            let v = DVector::from_fn(d, |_, _| {
                // Box-Muller
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen();
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            });
            if v.norm() > 1e-3 {
                break v.normalize();
            }
        })
        .collect()
}

fn solve_candidates(m: &ModelSpec, y: &DVector<f64>, x: &DVector<f64>, opts: &ShootOptions, include_primary: bool) -> Result<Vec<Candidate>> {
    let fiber = Fiber::at(m, y.as_slice())?;
    let disp = x - y;
    let mut seeds = Vec::new();
    if include_primary {
        seeds.push(dual_on_fiber(&fiber, disp.as_slice())?.p.normalize());
    }
    seeds.extend(seed_directions(m.dim(), opts.n_seeds));
    let found: Vec<Option<Candidate>> = seeds
        .into_par_iter()
        .map(|dir| {
            let r = radius_on_fiber(&fiber, dir.as_slice()).ok()?;
            let v = fiber.grad((&dir * r).as_slice());
            let tau0 = disp.norm() / v.norm();
            newton_shoot(m, &fiber, y, x, dir, tau0, opts)
        })
        .collect();
    Ok(cluster(found.into_iter().flatten().collect(), opts.cluster_tol))
}

fn cluster(mut cands: Vec<Candidate>, tol: f64) -> Vec<Candidate> {
    cands.sort_by(|a, b| a.action.total_cmp(&b.action));
    let mut out: Vec<Candidate> = Vec::new();
    for c in cands {
        let dup = out.iter().any(|o| {
            (&o.p_y - &c.p_y).norm() <= tol * (1.0 + o.p_y.norm()) && (o.tau - c.tau).abs() <= tol * (1.0 + o.tau)
        });
        if !dup {
            out.push(c);
        }
    }
    out
}

fn finalize(m: &ModelSpec, y: &DVector<f64>, x: &DVector<f64>, c: &Candidate, opts: &ShootOptions, clusters: usize, unique: bool) -> Result<GeodesicSolution> {
    let d = m.dim();
    let trajectory = flow_with(m, y.as_slice(), c.p_y.as_slice(), c.tau, &opts.flow)?;
    let v_y = Fiber::at(m, y.as_slice())?.grad(c.p_y.as_slice());
    let p_x = trajectory.end_p().clone();
    let x_end = trajectory.end_x().clone();
    let v_x = Fiber::at(m, x_end.as_slice())?.grad(p_x.as_slice());

    // independent distance: integrate F(q, q') with F from the support function
    let mut z0 = y.as_slice().to_vec();
    z0.extend_from_slice(c.p_y.as_slice());
    z0.push(0.0);
    let lag = integrate(
        |_, z: &[f64], dz: &mut [f64]| {
            let pd = phase_derivs(m, &z[..d], &z[d..2 * d])?;
            for i in 0..d {
                dz[i] = pd.dhdp[i];
                dz[d + i] = -pd.dhdx[i];
            }
            dz[2 * d] = support_function(m, &z[..d], pd.dhdp.as_slice())?;
            Ok(())
        },
        0.0,
        &z0,
        c.tau,
        &opts.flow.ode,
        false,
    )?;
    let d_f_lagrangian = lag.last()[2 * d];

    let mut sol = GeodesicSolution {
        y: y.clone(),
        x: x.clone(),
        tau: c.tau,
        p_y: c.p_y.clone(),
        v_y,
        p_x,
        v_x,
        d_f: trajectory.action,
        d_f_lagrangian,
        endpoint_residual: (&x_end - x).norm(),
        trajectory,
        unique,
        conjugate_free: true,
        first_conjugate: None,
        clusters,
    };
    if opts.check_conjugate {
        let report = conjugate_check_with(m, &sol, opts)?;
        sol.conjugate_free = report.conjugate_free;
        sol.first_conjugate = report.first_zero;
    }
    Ok(sol)
}

/// Minimizing geodesic from `y` to `x`.
pub fn shoot(m: &ModelSpec, y: &[f64], x: &[f64]) -> Result<GeodesicSolution> {
    shoot_with(m, y, x, &ShootOptions::default())
}

pub fn shoot_with(m: &ModelSpec, y: &[f64], x: &[f64], opts: &ShootOptions) -> Result<GeodesicSolution> {
    let d = m.dim();
    if y.len() != d || x.len() != d {
        return Err(Error::InvalidInput("point dimension mismatch".into()));
    }
    let yv = DVector::from_column_slice(y);
    let xv = DVector::from_column_slice(x);
    if xv == yv {
        return Err(Error::InvalidInput("x = y: the distance is zero and there is no geodesic to shoot".into()));
    }
    let cands = solve_candidates(m, &yv, &xv, opts, true)?;
    if cands.is_empty() {
        return Err(Error::NoGeodesic {
            y: y.to_vec(),
            x: x.to_vec(),
        });
    }
    let best = cands[0].action;
    let ties = cands
        .iter()
        .filter(|c| (c.action - best).abs() <= opts.tie_tol * best.max(1.0))
        .count();
    if ties > 1 {
        return Err(Error::UniquenessViolated {
            count: ties,
            distance: best,
        });
    }
    finalize(m, &yv, &xv, &cands[0], opts, cands.len(), true)
}

/// Every distinct geodesic found from `n_seeds` figuratrix directions,
/// sorted by length.
pub fn uniqueness_scan(m: &ModelSpec, y: &[f64], x: &[f64], n_seeds: usize) -> Result<Vec<GeodesicSolution>> {
    let opts = ShootOptions {
        n_seeds,
        check_conjugate: false,
        ..ShootOptions::default()
    };
    let yv = DVector::from_column_slice(y);
    let xv = DVector::from_column_slice(x);
    if xv == yv {
        return Ok(Vec::new());
    }
    let cands = solve_candidates(m, &yv, &xv, &opts, false)?;
    let best = cands.first().map(|c| c.action).unwrap_or(0.0);
    let ties = cands
        .iter()
        .filter(|c| (c.action - best).abs() <= opts.tie_tol * best.max(1.0))
        .count();
    cands
        .iter()
        .map(|c| finalize(m, &yv, &xv, c, &opts, cands.len(), ties <= 1))
        .collect()
}

/// Finsler distance; zero when `x = y`.
pub fn distance(m: &ModelSpec, y: &[f64], x: &[f64]) -> Result<f64> {
    if x == y {
        return Ok(0.0);
    }
    Ok(shoot(m, y, x)?.d_f)
}

#[derive(Debug, Clone)]
pub struct ConjugateReport {
    pub conjugate_free: bool,
    /// first sample time where the bordered determinant is no longer positive
    pub first_zero: Option<f64>,
    pub bordered: Vec<(f64, f64)>,
    /// `lim_{t -> 0} B(t) / t`, estimated at the first sample
    pub initial_slope: f64,
    /// smallest singular value of the finite-difference endpoint Jacobian
    /// in `(theta, tau)` at the final time
    pub fd_min_singular: f64,
}

pub fn conjugate_check(m: &ModelSpec, sol: &GeodesicSolution) -> Result<ConjugateReport> {
    conjugate_check_with(m, sol, &ShootOptions::default())
}

fn conjugate_check_with(m: &ModelSpec, sol: &GeodesicSolution, opts: &ShootOptions) -> Result<ConjugateReport> {
    let d = m.dim();
    let states = propagate_jacobi(m, sol.y.as_slice(), sol.p_y.as_slice(), sol.tau, &opts.flow.ode)?;
    let mut bordered = Vec::with_capacity(states.len());
    let mut first_zero = None;
    for s in states.iter().skip(1) {
        let v = Fiber::at(m, s.x.as_slice())?.grad(s.p.as_slice());
        let b = bordered_det(&sol.v_y, &v, &s.xm);
        if b <= 0.0 && first_zero.is_none() {
            first_zero = Some(s.t);
        }
        bordered.push((s.t, b));
    }
    let initial_slope = bordered.first().map(|(t, b)| b / t).unwrap_or(f64::NAN);

    let fiber = Fiber::at(m, sol.y.as_slice())?;
    let c = sol.p_y.normalize();
    let basis = complement_basis(&c);
    let mut jac = DMatrix::zeros(d, d);
    for i in 0..d - 1 {
        let mut th = DVector::zeros(d - 1);
        th[i] = 1e-5;
        let pp = chart_momentum(&fiber, &c, &basis, &th)?;
        th[i] = -1e-5;
        let pm = chart_momentum(&fiber, &c, &basis, &th)?;
        let (xp, _, _) = endpoint(m, sol.y.as_slice(), pp.as_slice(), sol.tau, &opts.flow)?;
        let (xm, _, _) = endpoint(m, sol.y.as_slice(), pm.as_slice(), sol.tau, &opts.flow)?;
        jac.set_column(i, &((xp - xm) / 2e-5));
    }
    jac.set_column(d - 1, &sol.v_x);
    let sv = jac.singular_values();
    let fd_min_singular = sv.iter().cloned().fold(f64::INFINITY, f64::min);

    Ok(ConjugateReport {
        conjugate_free: first_zero.is_none(),
        first_zero,
        bordered,
        initial_slope,
        fd_min_singular,
    })
}
