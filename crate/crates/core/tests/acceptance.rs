//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::time::{Duration, Instant};

use lattice_green::asymptotics::{
    convergence_sweep, green_oz, successive_error_ratios, BorderedExponent, LeadingGeometry, Oracle, SweepRow,
};
use lattice_green::finsler::{dual_point, support_function, verify_determinant_identities};
use lattice_green::geodesics::{flow, shoot};
use lattice_green::hamiltonian::Fiber;
use lattice_green::jacobi::{flow_derivative_fd, initial_hpp, propagate_jacobi};
use lattice_green::lattice::{assemble, green_column, lattice_green, lattice_green_on, BoxSpec, LatticeOptions, Solver, Tilt};
use lattice_green::model::examples::{model_a, model_b};
use lattice_green::model::{LatticeSite, ModelSpec};
use lattice_green::ode::OdeOptions;
use lattice_green::spectral::green_spectral;
use lattice_green::symbol::verify_matrix_symbol_identity;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Check {
    ok: bool,
    notes: Vec<String>,
}

impl Check {
    fn new() -> Self {
        Check { ok: true, notes: Vec::new() }
    }

    fn expect(&mut self, cond: bool, what: impl Into<String>) {
        let what = what.into();
        if !cond {
            self.ok = false;
            self.notes.push(format!("violated: {what}"));
        } else {
            self.notes.push(what);
        }
    }

    fn runtime(&mut self, start: Instant, limit: Duration) {
        let el = start.elapsed();
        self.expect(el < limit, format!("runtime {:.2?} < {:?}", el, limit));
    }

    fn finish(self) -> Outcome {
        let s = self.notes.join("; ");
        if self.ok {
            Ok(s)
        } else {
            Err(s)
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn run<E: std::fmt::Display>(f: impl FnOnce() -> Result<Outcome, E>) -> Outcome {
    match f() {
        Ok(o) => o,
        Err(e) => Err(format!("error: {e}")),
    }
}

fn c1_closed_form_figuratrix() -> Outcome {
    run(|| {
        let start = Instant::now();
        let a = model_a();
        let mut c = Check::new();
        let axis = shoot(&a, &[0.0, 0.0], &[1.0, 0.0])?;
        let e = (axis.d_f - 2.25f64.acosh()).abs();
        c.expect(e <= 1e-10, format!("|F(e1) - arccosh 2.25| = {e:.2e}"));
        let diag = shoot(&a, &[0.0, 0.0], &[1.0, 1.0])?;
        let e = (diag.d_f - 2.0 * 1.625f64.acosh()).abs();
        c.expect(e <= 1e-9, format!("|F(1,1) - 2 arccosh 1.625| = {e:.2e}"));
        c.runtime(start, Duration::from_secs(1));
        Ok::<_, lattice_green::Error>(c.finish())
    })
}

fn c2_oracle_cross_agreement() -> Outcome {
    run(|| {
        let start = Instant::now();
        let a = model_a();
        let h = 0.125;
        let mut c = Check::new();
        let mut worst: f64 = 0.0;
        for k in [[1i64, 0], [0, 3], [5, -3], [8, 0], [8, 8], [0, -12], [16, 0]] {
            let s = green_spectral(&a, &k)?.value;
            let l = lattice_green(&a, &LatticeSite::new(k.to_vec(), h), &LatticeSite::new(vec![0, 0], h), &LatticeOptions::default())?.value;
            worst = worst.max(rel(l, s));
        }
        c.expect(worst <= 1e-6, format!("max relative difference {worst:.2e} over 7 offsets"));
        c.runtime(start, Duration::from_secs(30));
        Ok::<_, lattice_green::Error>(c.finish())
    })
}

fn c3_oz_consistency() -> Outcome {
    run(|| {
        let start = Instant::now();
        let a = model_a();
        let mut c = Check::new();
        let mut worst: f64 = 0.0;
        for z in [[1.0, 0.0], [1.0, 1.0], [0.3, -1.7], [2.0, 0.5]] {
            let oz = green_oz(&a, &z, 0.125)?;
            worst = worst.max(rel(oz.ti1, oz.ti2));
        }
        c.expect(worst <= 1e-8, format!("max |ti1/ti2 - 1| = {worst:.2e}"));
        let b = model_b();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let (mut r1, mut r2): (f64, f64) = (0.0, 0.0);
        for _ in 0..50 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let v: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let id = verify_determinant_identities(&b, &x, &v)?;
            r1 = r1.max(id.first_residual);
            r2 = r2.max(id.second_residual);
        }
        c.expect(r1 <= 1e-7 && r2 <= 1e-7, format!("determinant identity residuals {r1:.2e}, {r2:.2e} on 50 samples"));
        c.runtime(start, Duration::from_secs(5));
        Ok::<_, lattice_green::Error>(c.finish())
    })
}

fn c4_bordered_calibration() -> Outcome {
    run(|| {
        let a = model_a();
        let mut c = Check::new();
        let h = 0.125;
        for x in [[1.0, 0.0], [1.0, 1.0]] {
            let g = LeadingGeometry::compute(&a, &x, &[0.0, 0.0])?;
            let recip = g.estimate_bordered(h, BorderedExponent::Reciprocal)?;
            let oz = green_oz(&a, &x, h)?;
            let e = rel(recip.value, oz.ti1);
            c.expect(e <= 1e-6, format!("x={x:?}: bordered^(-1/2) route vs ti1 {e:.2e}"));
            let direct = g.estimate_bordered(h, BorderedExponent::Direct)?;
            let mismatch = direct.value / oz.ti1;
            let e = rel(mismatch, g.bordered);
            c.expect(
                e <= 1e-6 && (g.bordered - 1.0).abs() > 1e-3,
                format!("x={x:?}: bordered^(+1/2) mismatch {mismatch:.6} = bordered {:.6}", g.bordered),
            );
        }
        Ok::<_, lattice_green::Error>(c.finish())
    })
}

fn sweep_summary(rows: &[SweepRow]) -> String {
    rows.iter()
        .map(|r| format!("n={} |r-1|={:.3e}", r.n, (r.ratio - 1.0).abs()))
        .collect::<Vec<_>>()
        .join(", ")
}

fn c5_convergence_ti() -> Outcome {
    run(|| {
        let start = Instant::now();
        let a = model_a();
        let mut c = Check::new();
        let rows = convergence_sweep(&a, &[1.0, 0.0], &[0.0, 0.0], &[2, 3, 4, 5], &Oracle::Spectral)?;
        c.notes.push(sweep_summary(&rows));
        let ratios = successive_error_ratios(&rows);
        c.expect(ratios.iter().all(|&q| q > 1.0), "|r_n - 1| decreasing");
        let shown: Vec<String> = ratios.iter().map(|q| format!("{q:.3}")).collect();
        c.expect(
            ratios.iter().all(|&q| (1.5..=2.6).contains(&q)),
            format!("successive error ratios [{}] in [1.5, 2.6]", shown.join(", ")),
        );
        c.runtime(start, Duration::from_secs(60));
        Ok::<_, lattice_green::Error>(c.finish())
    })
}

fn c6_convergence_non_ti() -> Outcome {
    run(|| {
        let start = Instant::now();
        let b = model_b();
        let mut c = Check::new();
        let rows = convergence_sweep(&b, &[1.0, 0.0], &[0.0, 0.0], &[2, 3, 4, 5], &Oracle::Lattice(LatticeOptions::default()))?;
        c.notes.push(sweep_summary(&rows));
        let ratios = successive_error_ratios(&rows);
        c.expect(ratios.iter().all(|&q| q > 1.0), "|r_n - 1| monotone decreasing");
        let last = (rows.last().unwrap().ratio - 1.0).abs();
        c.expect(last <= 0.1, format!("|r_5 - 1| = {last:.3e} <= 0.1"));
        c.runtime(start, Duration::from_secs(300));
        Ok::<_, lattice_green::Error>(c.finish())
    })
}

fn c7_delta() -> Outcome {
    run(|| {
        let mut c = Check::new();
        let a = model_a();
        for x in [[1.0, 0.0], [1.0, 1.0], [0.5, -2.0]] {
            let g = LeadingGeometry::compute(&a, &x, &[0.0, 0.0])?;
            c.expect((g.delta - 1.0).abs() <= 1e-6, format!("Model A x={x:?}: |Delta - 1| = {:.2e}", (g.delta - 1.0).abs()));
        }
        let b = model_b();
        let dev = |l: f64| -> lattice_green::Result<(f64, f64)> {
            let g = LeadingGeometry::compute(&b, &[l, 0.0], &[0.0, 0.0])?;
            Ok((g.d_f, (g.delta - 1.0).abs()))
        };
        for (l0, l1) in [(1.0, 0.25), (0.5, 0.125)] {
            let (f0, e0) = dev(l0)?;
            let (f1, e1) = dev(l1)?;
            let q = e0 / e1;
            c.expect(
                (1.8..=2.3).contains(&q),
                format!("Model B dF {f0:.4} -> {f1:.4} (x{:.3}): |Delta-1| {e0:.3e} -> {e1:.3e}, ratio {q:.3} in [1.8, 2.3]", f0 / f1),
            );
        }
        Ok::<_, lattice_green::Error>(c.finish())
    })
}

fn c8_jacobi_integrity() -> Outcome {
    run(|| {
        let mut c = Check::new();
        let opts = OdeOptions::default();
        let mut symp: f64 = 0.0;
        let mut fd_err: f64 = 0.0;
        let cases: [(ModelSpec, [f64; 2], [f64; 2]); 5] = [
            (model_a(), [0.0, 0.0], [1.0, 0.0]),
            (model_a(), [0.0, 0.0], [1.0, 1.0]),
            (model_b(), [0.0, 0.0], [1.0, 0.0]),
            (model_b(), [0.0, 0.0], [1.0, 0.5]),
            (model_b(), [-0.5, 1.0], [0.75, -0.25]),
        ];
        for (m, y, x) in &cases {
            let s = shoot(m, y, x)?;
            let states = propagate_jacobi(m, y, s.p_y.as_slice(), s.tau, &opts)?;
            symp = states.iter().fold(symp, |w, st| w.max(st.symplectic_residual()));
            let xm = &states.last().unwrap().xm;
            let fd = flow_derivative_fd(m, y, s.p_y.as_slice(), s.tau, 1e-5, &opts)?;
            fd_err = fd_err.max((xm - &fd).norm() / xm.norm());
        }
        c.expect(symp <= 1e-9, format!("max |X^T P - P^T X| = {symp:.2e}"));
        c.expect(fd_err <= 1e-4, format!("max relative |X(tau) - FD| = {fd_err:.2e}"));
        let a = model_a();
        let mut ti: f64 = 0.0;
        for x in [[1.0, 0.0], [1.0, 1.0], [-0.4, 1.3]] {
            let s = shoot(&a, &[0.0, 0.0], &x)?;
            let hpp: DMatrix<f64> = initial_hpp(&a, &s)?;
            for st in propagate_jacobi(&a, &[0.0, 0.0], s.p_y.as_slice(), s.tau, &opts)? {
                ti = ti.max((&st.xm - &hpp * st.t).norm());
            }
        }
        c.expect(ti <= 1e-8, format!("TI |X(t) - t H''_pp| = {ti:.2e}"));
        Ok::<_, lattice_green::Error>(c.finish())
    })
}

fn c9_symbol_identity() -> Outcome {
    run(|| {
        let mut c = Check::new();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for (name, m) in [("A", model_a()), ("B", model_b())] {
            let mut worst: f64 = 0.0;
            for &h in &[0.5, 0.25, 0.125] {
                for _ in 0..10 {
                    let cx: Vec<i64> = (0..2).map(|_| rng.gen_range(-30..30)).collect();
                    let x = LatticeSite::new(cx.clone(), h);
                    let mut f = Vec::new();
                    for i in -3..=3 {
                        for j in -3..=3 {
                            f.push((LatticeSite::new(vec![cx[0] + i, cx[1] + j], h), rng.gen_range(-1.0..1.0)));
                        }
                    }
                    worst = worst.max(verify_matrix_symbol_identity(&m, h, &x, &f, 8)?);
                }
            }
            c.expect(worst <= 1e-12, format!("Model {name}: max residual {worst:.2e}"));
        }
        Ok::<_, lattice_green::Error>(c.finish())
    })
}

fn c10_invariants() -> Outcome {
    run(|| {
        let mut c = Check::new();
        let b = model_b();
        let mut rng = ChaCha8Rng::seed_from_u64(7);

        let mut hmax: f64 = 0.0;
        for _ in 0..20 {
            let y: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let v: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p = dual_point(&b, &y, &v)?.p;
            let t = flow(&b, &y, p.as_slice(), rng.gen_range(0.5..2.0))?;
            hmax = hmax.max(t.max_h_residual());
        }
        c.expect(hmax <= 1e-10, format!("max |H| along 20 flights {hmax:.2e}"));

        let (mut hom, mut tri, mut align): (f64, f64, f64) = (0.0, f64::INFINITY, 0.0);
        for _ in 0..200 {
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let v: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let w: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let lam = rng.gen_range(0.1..10.0);
            let fv = support_function(&b, &x, &v)?;
            let fl = support_function(&b, &x, &[lam * v[0], lam * v[1]])?;
            hom = hom.max(rel(fl, lam * fv));
            let fw = support_function(&b, &x, &w)?;
            let fs = support_function(&b, &x, &[v[0] + w[0], v[1] + w[1]])?;
            tri = tri.min(fv + fw - fs);
            let dp = dual_point(&b, &x, &v)?;
            let g = Fiber::at(&b, &x)?.grad(dp.p.as_slice());
            let cross = (g[0] * v[1] - g[1] * v[0]).abs() / (g.norm() * (v[0] * v[0] + v[1] * v[1]).sqrt());
            align = align.max(cross.max(if g[0] * v[0] + g[1] * v[1] > 0.0 { 0.0 } else { 1.0 }));
        }
        c.expect(hom <= 1e-12, format!("F homogeneity {hom:.2e}"));
        c.expect(tri >= -1e-10, format!("triangle slack min {tri:.2e}"));
        c.expect(align <= 1e-10, format!("dual-point alignment {align:.2e}"));

        let h = 0.125;
        let spec = BoxSpec::new(vec![-12, -12], vec![12, 12])?;
        let op = assemble(&b, &spec, h, None, 1 << 20)?;
        let col = green_column(&op, &[2, -1], Solver::BandedLu)?;
        let minv = col.values.iter().cloned().fold(f64::INFINITY, f64::min);
        c.expect(minv > 0.0, format!("column positivity, min entry {minv:.3e}"));
        let opts = LatticeOptions {
            tilt: Tilt::None,
            ..LatticeOptions::default()
        };
        let mut sym: f64 = 0.0;
        for _ in 0..10 {
            let xk: Vec<i64> = (0..2).map(|_| rng.gen_range(-6..6)).collect();
            let yk: Vec<i64> = (0..2).map(|_| rng.gen_range(-6..6)).collect();
            let (xs, ys) = (LatticeSite::new(xk, h), LatticeSite::new(yk, h));
            let g1 = lattice_green_on(&b, &xs, &ys, &spec, &opts)?.value;
            let g2 = lattice_green_on(&b, &ys, &xs, &spec, &opts)?.value;
            sym = sym.max(rel(g1, g2));
        }
        c.expect(sym <= 1e-10, format!("G(x,y) = G(y,x) relative {sym:.2e}"));
        Ok::<_, lattice_green::Error>(c.finish())
    })
}

fn main() {
    // the suite is timed single-threaded
    rayon::ThreadPoolBuilder::new().num_threads(1).build_global().ok();
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("closed-form figuratrix", c1_closed_form_figuratrix),
        ("spectral and lattice oracles agree", c2_oracle_cross_agreement),
        ("OZ prefactor consistency", c3_oz_consistency),
        ("bordered-determinant calibration", c4_bordered_calibration),
        ("convergence, translation invariant", c5_convergence_ti),
        ("convergence, variable coefficients", c6_convergence_non_ti),
        ("dispersal factor behaviour", c7_delta),
        ("Jacobi integrity", c8_jacobi_integrity),
        ("matrix/symbol identity", c9_symbol_identity),
        ("invariant suites", c10_invariants),
    ];
    let total = Instant::now();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let out = f();
        let el = t.elapsed();
        match out {
            Ok(s) => println!("PASS criterion {:>2} ({name}) [{el:.2?}]: {s}", i + 1),
            Err(s) => {
                failed += 1;
                println!("FAIL criterion {:>2} ({name}) [{el:.2?}]: {s}", i + 1)
            }
        }
    }
    let el = total.elapsed();
    let ok = el < Duration::from_secs(600);
    println!(
        "{} suite runtime {el:.2?} single-threaded (limit 10 min)",
        if ok { "PASS" } else { "FAIL" }
    );
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 || !ok {
        std::process::exit(1);
    }
}
