//! Adaptive Dormand-Prince 5(4) integrator.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// initial step; chosen automatically when `None`
    pub first_step: Option<f64>,
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-12,
            atol: 1e-14,
            first_step: None,
            max_step: f64::INFINITY,
            max_steps: 200_000,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone)]
pub struct OdeSolution {
    /// accepted times, starting with `t0` and ending with `t1`
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub stats: StepStats,
}

impl OdeSolution {
    pub fn last(&self) -> &[f64] {
        self.y.last().expect("solution has at least the initial state")
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// fifth-order weights minus fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrate `y' = f(t, y)` from `t0` to `t1`.
///
/// When `record` is false only the initial and final states are kept.
pub fn integrate<F>(f: F, t0: f64, y0: &[f64], t1: f64, opts: &OdeOptions, record: bool) -> Result<OdeSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    integrate_projected(f, |_: &mut [f64]| false, t0, y0, t1, opts, record)
}

/// As [`integrate`], with `project` applied to every accepted state. The
/// projection returns `true` when it modified the state.
pub fn integrate_projected<F, P>(
    mut f: F,
    mut project: P,
    t0: f64,
    y0: &[f64],
    t1: f64,
    opts: &OdeOptions,
    record: bool,
) -> Result<OdeSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    P: FnMut(&mut [f64]) -> bool,
{
    let n = y0.len();
    let span = t1 - t0;
    let dir = if span >= 0.0 { 1.0 } else { -1.0 };
    let mut stats = StepStats::default();
    let mut ts = vec![t0];
    let mut ys = vec![y0.to_vec()];
    if span == 0.0 {
        return Ok(OdeSolution { t: ts, y: ys, stats });
    }

    let mut k = vec![vec![0.0; n]; 7];
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut tmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];
    f(t, &y, &mut k[0])?;
    stats.evaluations += 1;

    let mut step = match opts.first_step {
        Some(s) => s.abs().min(span.abs()),
        None => initial_step(&mut f, t, &y, &k[0], span.abs(), opts, &mut stats)?,
    };
    step = step.min(opts.max_step);
    let mut last_rejected = false;

    loop {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::NonConvergence {
                what: "ode integration (step budget)",
                iterations: opts.max_steps,
                residual: (t1 - t).abs(),
            });
        }
        let remaining = (t1 - t) * dir;
        let finishing = step >= remaining * (1.0 - 1e-12);
        let hs = if finishing { remaining } else { step };
        if hs <= 16.0 * f64::EPSILON * t.abs().max(span.abs()) {
            return Err(Error::StepCollapse { t, step: hs });
        }
        let hd = hs * dir;

        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += A[s][j] * kj[i];
                }
                tmp[i] = y[i] + hd * acc;
            }
            f(t + C[s] * hd, &tmp, &mut k[s])?;
            stats.evaluations += 1;
        }
        // stage 7 is evaluated at the fifth-order solution
        ynew.copy_from_slice(&tmp);

        let mut err = 0.0;
        for i in 0..n {
            let mut e = 0.0;
            for (j, kj) in k.iter().enumerate() {
                e += E[j] * kj[i];
            }
            let sc = opts.atol + opts.rtol * y[i].abs().max(ynew[i].abs());
            let r = hd * e / sc;
            err += r * r;
        }
        err = (err / n as f64).sqrt();
        if !err.is_finite() {
            stats.rejected += 1;
            step *= 0.25;
            last_rejected = true;
            continue;
        }

        if err <= 1.0 {
            stats.accepted += 1;
            t = if finishing { t1 } else { t + hd };
            std::mem::swap(&mut y, &mut ynew);
            let projected = project(&mut y);
            if projected {
                f(t, &y, &mut k[0])?;
                stats.evaluations += 1;
            } else {
                k.swap(0, 6);
            }
            if record || finishing {
                ts.push(t);
                ys.push(y.clone());
            }
            if finishing {
                break;
            }
            let mut fac = if err == 0.0 { 5.0 } else { 0.9 * err.powf(-0.2) };
            fac = fac.clamp(0.2, 5.0);
            if last_rejected {
                fac = fac.min(1.0);
            }
            step = (hs * fac).min(opts.max_step);
            last_rejected = false;
        } else {
            stats.rejected += 1;
            step = hs * (0.9 * err.powf(-0.2)).max(0.2);
            last_rejected = true;
        }
    }
    if !record && ts.len() > 2 {
        ts.drain(1..ts.len() - 1);
        ys.drain(1..ys.len() - 1);
    }
    Ok(OdeSolution { t: ts, y: ys, stats })
}

fn initial_step<F>(
    f: &mut F,
    t: f64,
    y: &[f64],
    f0: &[f64],
    span: f64,
    opts: &OdeOptions,
    stats: &mut StepStats,
) -> Result<f64>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
{
    let n = y.len();
    let sc: Vec<f64> = y.iter().map(|v| opts.atol + opts.rtol * v.abs()).collect();
    let rms = |v: &[f64]| -> f64 {
        (v.iter().zip(&sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n as f64).sqrt()
    };
    let d0 = rms(y);
    let d1 = rms(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; n];
    f(t + h0, &y1, &mut f1)?;
    stats.evaluations += 1;
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok((100.0 * h0).min(h1).min(span))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let sol = integrate(
            |_, y, dy| {
                dy[0] = -y[0];
                Ok(())
            },
            0.0,
            &[1.0],
            3.0,
            &OdeOptions::default(),
            true,
        )
        .unwrap();
        assert!((sol.last()[0] - (-3.0f64).exp()).abs() < 1e-12);
        assert_eq!(*sol.t.last().unwrap(), 3.0);
        assert!(sol.t.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn harmonic_oscillator_backwards_and_energy() {
        let opts = OdeOptions::default();
        let rhs = |_: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[1];
            dy[1] = -y[0];
            Ok(())
        };
        let fwd = integrate(rhs, 0.0, &[1.0, 0.0], 10.0, &opts, false).unwrap();
        assert_eq!(fwd.t.len(), 2);
        let y = fwd.last();
        assert!((y[0] - 10f64.cos()).abs() < 1e-10);
        assert!((y[1] + 10f64.sin()).abs() < 1e-10);
        let back = integrate(rhs, 10.0, y, 0.0, &opts, false).unwrap();
        assert!((back.last()[0] - 1.0).abs() < 1e-10);
        assert!(back.last()[1].abs() < 1e-10);
    }

    #[test]
    fn fifth_order_convergence_with_fixed_steps() {
        let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = y[0] * t.cos();
            Ok(())
        };
        let exact = 2f64.sin().exp();
        let err = |h: f64| {
            let o = OdeOptions {
                rtol: 1e3,
                atol: 1e3,
                first_step: Some(h),
                max_step: h,
                max_steps: 100_000,
            };
            let s = integrate(rhs, 0.0, &[1.0], 2.0, &o, true).unwrap();
            assert_eq!(s.t.len(), (2.0 / h).round() as usize + 1);
            (s.last()[0] - exact).abs()
        };
        let order = (err(0.1) / err(0.05)).log2();
        assert!(order > 4.5, "observed order {order}");
    }

    #[test]
    fn projection_hook_is_applied() {
        let opts = OdeOptions::default();
        let sol = integrate_projected(
            |_, y, dy| {
                dy[0] = y[1];
                dy[1] = -y[0];
                Ok(())
            },
            |y: &mut [f64]| {
                let r = (y[0] * y[0] + y[1] * y[1]).sqrt();
                y[0] /= r;
                y[1] /= r;
                true
            },
            0.0,
            &[1.0, 0.0],
            50.0,
            &opts,
            true,
        )
        .unwrap();
        for y in &sol.y {
            assert!(((y[0] * y[0] + y[1] * y[1]) - 1.0).abs() < 1e-15);
        }
    }
}
