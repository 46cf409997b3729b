//! `latgreen`: leading-order lattice Green asymptotics and their oracles.

mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lattice_green::asymptotics::{
    convergence_sweep, green_oz, successive_error_ratios, BorderedExponent, LeadingGeometry, Oracle, SweepRow,
};
use lattice_green::finsler::{dual_point, finsler_tensor};
use lattice_green::geodesics::{shoot, uniqueness_scan};
use lattice_green::lattice::{assemble, default_tilt, green_column, lattice_green, Tilt};
use lattice_green::model::{LatticeSite, SampleBox};
use lattice_green::spectral::green_spectral;
use lattice_green::Error;
use thiserror::Error as ThisError;

use config::{ConfigError, OracleKind, RunConfig};
use report::{cols, num, nums, Csv, Record};

#[derive(Parser)]
#[command(name = "latgreen", version, about = "Small-spacing asymptotics of lattice Green kernels")]
struct Cli {
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// directory for artifacts; overrides output.dir
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// worker threads for oracles and sweeps
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// seed for sampled checks; overrides the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Sampled hypothesis report
    Check,
    /// F, p and G over a direction grid at y and x
    Finsler,
    /// Minimizing geodesic from y to x as a trajectory table
    Geodesic,
    /// Leading-order estimate at h = 2^-N
    Evaluate,
    /// Brute-force Green value at h = 2^-N
    Oracle {
        /// also write the whole lattice column
        #[arg(long)]
        column: bool,
    },
    /// Spectral value beside the two translation-invariant decay formulas
    Oz,
    /// Oracle against the leading estimate over the configured sweep
    Compare,
}

#[derive(Debug, ThisError)]
enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("hypotheses: {0}")]
    Hypothesis(String),
    #[error("geometry: {0}")]
    Geometry(String),
    #[error("numerical: {0}")]
    Numerical(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Hypothesis(_) => 3,
            CliError::Geometry(_) => 4,
            CliError::Numerical(_) => 5,
            CliError::Io(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Hypothesis(_) => CliError::Hypothesis(e.to_string()),
            _ if e.is_geometric() => CliError::Geometry(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
}

impl Ctx {
    fn csv(&self, columns: &[String]) -> Csv {
        Csv::new(&self.cfg.hash, self.cfg.seed, columns)
    }

    fn record(&self) -> Record {
        Record::new(&self.cfg.hash, self.cfg.seed)
    }

    fn emit(&self, name: &str, text: &str) -> Result<(), CliError> {
        let path = report::write(&self.out, name, text)?;
        println!("wrote {}", path.display());
        Ok(())
    }

    fn require_hypotheses(&self) -> Result<(), CliError> {
        let c = &self.cfg;
        let rep = c.model.check_hypotheses(&c.sample_box, c.samples, c.seed);
        if rep.all_passed() {
            return Ok(());
        }
        let v: Vec<String> = rep.violations().iter().map(|c| format!("{} ({})", c.name, c.detail)).collect();
        Err(CliError::Hypothesis(v.join("; ")))
    }

    /// Geometry errors, with every minimizer listed when uniqueness fails.
    fn geometry(&self, e: Error) -> CliError {
        if let Error::UniquenessViolated { .. } = e {
            let (x, y) = (self.cfg.x_point(), self.cfg.y_point());
            if let Ok(sols) = uniqueness_scan(&self.cfg.model, &y, &x, 32) {
                let best = sols.first().map(|s| s.d_f).unwrap_or(0.0);
                let mut lines = vec![e.to_string()];
                for (i, s) in sols.iter().enumerate() {
                    if (s.d_f - best).abs() > 1e-8 * best.max(1.0) {
                        continue;
                    }
                    let mid = &s.trajectory.x[s.trajectory.x.len() / 2];
                    lines.push(format!(
                        "  minimizer {}: d_F = {}, p_y = {:?}, v_y = {:?}, midpoint = {:?}",
                        i + 1,
                        num(s.d_f),
                        s.p_y.as_slice(),
                        s.v_y.as_slice(),
                        mid.as_slice()
                    ));
                }
                return CliError::Geometry(lines.join("\n"));
            }
        }
        CliError::from(e)
    }
}

fn check(ctx: &Ctx) -> Result<(), CliError> {
    let c = &ctx.cfg;
    let rep = c.model.check_hypotheses(&c.sample_box, c.samples, c.seed);
    let mut r = ctx.record();
    r.put("samples", rep.samples);
    r.num("inf_dpp", rep.inf_dpp);
    r.num("sup_dpp", rep.sup_dpp);
    r.num("min_wpp", rep.min_wpp);
    r.num("min_wpp_unit", rep.min_wpp_unit);
    r.num("max_h_at_zero", rep.max_h_at_zero);
    r.num("inf_support", rep.inf_support);
    for ch in &rep.checks {
        r.put(&format!("check[{}]", ch.name), format!("{} ({})", if ch.passed { "pass" } else { "FAIL" }, ch.detail));
    }
    r.put("all_passed", rep.all_passed());
    ctx.emit("check.txt", &r.finish())?;
    if rep.all_passed() {
        println!("all hypotheses hold on {} samples", rep.samples);
        Ok(())
    } else {
        ctx.require_hypotheses()
    }
}

fn directions(d: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    if d == 2 {
        return (0..n)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / n as f64;
                vec![a.cos(), a.sin()]
            })
            .collect();
    }
    SampleBox::cube(d, 1.0)
        .quasi_random(4 * n, seed)
        .into_iter()
        .filter_map(|v| {
            let r = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            (r > 1e-3 && r <= 1.0).then(|| v.iter().map(|a| a / r).collect())
        })
        .take(n)
        .collect()
}

fn finsler(ctx: &Ctx) -> Result<(), CliError> {
    ctx.require_hypotheses()?;
    let c = &ctx.cfg;
    let d = c.model.dim();
    let mut columns = vec!["point".to_string()];
    columns.extend(cols("x", d));
    columns.extend(cols("v", d));
    columns.push("F".into());
    columns.extend(cols("p", d));
    for i in 1..=d {
        for j in 1..=d {
            columns.push(format!("G{i}{j}"));
        }
    }
    let mut csv = ctx.csv(&columns);
    for (name, point) in [("y", c.y_point()), ("x", c.x_point())] {
        for v in directions(d, c.directions, c.seed) {
            let t = finsler_tensor(&c.model, &point, &v)?;
            let p = dual_point(&c.model, &point, &v)?.p;
            let mut row = vec![name.to_string()];
            row.extend(nums(&point));
            row.extend(nums(&v));
            row.push(num(t.f));
            row.extend(nums(p.as_slice()));
            for i in 0..d {
                for j in 0..d {
                    row.push(num(t.g[(i, j)]));
                }
            }
            csv.row(&row);
        }
    }
    ctx.emit("finsler.csv", &csv.finish())
}

fn geodesic(ctx: &Ctx) -> Result<(), CliError> {
    ctx.require_hypotheses()?;
    let c = &ctx.cfg;
    let d = c.model.dim();
    let sol = shoot(&c.model, &c.y_point(), &c.x_point()).map_err(|e| ctx.geometry(e))?;
    let mut columns = vec!["t".to_string()];
    columns.extend(cols("x", d));
    columns.extend(cols("p", d));
    columns.push("H_residual".into());
    let mut csv = ctx.csv(&columns);
    let tr = &sol.trajectory;
    for i in 0..tr.t.len() {
        let mut row = vec![num(tr.t[i])];
        row.extend(nums(tr.x[i].as_slice()));
        row.extend(nums(tr.p[i].as_slice()));
        row.push(num(tr.h[i]));
        csv.row(&row);
    }
    ctx.emit("geodesic.csv", &csv.finish())?;
    println!(
        "d_F = {}  tau = {}  endpoint residual = {:e}  conjugate free = {}",
        num(sol.d_f),
        num(sol.tau),
        sol.endpoint_residual,
        sol.conjugate_free
    );
    Ok(())
}

fn geometry_of(ctx: &Ctx) -> Result<LeadingGeometry, CliError> {
    let c = &ctx.cfg;
    let (x, y) = (c.x_point(), c.y_point());
    if x == y {
        return Err(CliError::Config("x = y: the leading-order formula needs distinct points".into()));
    }
    LeadingGeometry::compute(&c.model, &x, &y).map_err(|e| ctx.geometry(e))
}

fn evaluate(ctx: &Ctx) -> Result<(), CliError> {
    ctx.require_hypotheses()?;
    let c = &ctx.cfg;
    let g = geometry_of(ctx)?;
    let h = c.h();
    let e = g.estimate(h);
    let b = g.estimate_bordered(h, BorderedExponent::Reciprocal)?;
    let mut r = ctx.record();
    r.vec("x", &c.x_point());
    r.vec("y", &c.y_point());
    r.put("exponent", c.exponent);
    r.num("h", h);
    r.num("value", e.value);
    r.num("value_bordered", b.value);
    r.num("d_f", e.d_f);
    r.num("prefactor", e.prefactor);
    r.num("delta", e.delta);
    r.num("bordered", e.bordered);
    r.num("tau", e.tau);
    r.num("pv_x", e.pv_x);
    r.num("pv_y", e.pv_y);
    r.num("det_g_x", e.det_g_x);
    r.num("det_g_y", e.det_g_y);
    r.num("gram_identity_residual", g.gram_identity_residual());
    r.put("warnings", e.warnings.len());
    for (i, w) in e.warnings.iter().enumerate() {
        r.put(&format!("warning{}", i + 1), w);
        eprintln!("warning: {w}");
    }
    ctx.emit("evaluate.txt", &r.finish())?;
    println!("G(x, y) ~ {}", num(e.value));
    Ok(())
}

fn offset(x: &LatticeSite, y: &LatticeSite) -> Vec<i64> {
    x.k.iter().zip(&y.k).map(|(a, b)| a - b).collect()
}

fn oracle(ctx: &Ctx, column: bool) -> Result<(), CliError> {
    let c = &ctx.cfg;
    if column && c.oracle == OracleKind::Spectral {
        return Err(CliError::Config("--column needs oracle.kind = \"lattice\"".into()));
    }
    ctx.require_hypotheses()?;
    let mut r = ctx.record();
    r.vec("x", &c.x_point());
    r.vec("y", &c.y_point());
    r.num("h", c.h());
    match c.oracle {
        OracleKind::Spectral => {
            let v = green_spectral(&c.model, &offset(&c.x, &c.y))?;
            r.put("oracle", "spectral");
            r.num("value", v.value);
            r.num("imag_residual", v.imag_residual);
            r.put("nodes", v.nodes);
            r.vec("shift", &v.shift);
            r.num("margin", v.margin);
            println!("G(x, y) = {}", num(v.value));
        }
        OracleKind::Lattice => {
            let v = lattice_green(&c.model, &c.x, &c.y, &c.lattice)?;
            r.put("oracle", "lattice");
            r.num("value", v.value);
            r.put("box_lo", format!("{:?}", v.spec.lo));
            r.put("box_hi", format!("{:?}", v.spec.hi));
            r.put("sites", v.sites);
            r.num("residual", v.residual);
            if let Some(t) = &v.tilt {
                r.vec("tilt", t);
            }
            println!("G(x, y) = {}", num(v.value));
            if column {
                let d = c.model.dim();
                let tilt = match &c.lattice.tilt {
                    Tilt::None => None,
                    Tilt::Default => Some(default_tilt(&c.model, &c.x, &c.y, &v.spec)?),
                    Tilt::Fixed(p) => Some(p.clone()),
                };
                let op = assemble(&c.model, &v.spec, c.h(), tilt.as_deref(), c.lattice.site_cap)?;
                let col = green_column(&op, &c.y.k, c.lattice.solver)?;
                let mut columns = cols("k", d);
                columns.push("value".into());
                let mut csv = ctx.csv(&columns);
                for (i, val) in col.values.iter().enumerate() {
                    let mut row: Vec<String> = op.site_of(i).iter().map(|k| k.to_string()).collect();
                    row.push(num(*val));
                    csv.row(&row);
                }
                ctx.emit("oracle_column.csv", &csv.finish())?;
            }
        }
    }
    ctx.emit("oracle.txt", &r.finish())
}

fn oz(ctx: &Ctx) -> Result<(), CliError> {
    ctx.require_hypotheses()?;
    let c = &ctx.cfg;
    let k = offset(&c.x, &c.y);
    if k.iter().all(|&a| a == 0) {
        return Err(CliError::Config("x = y: the decay formulas need distinct points".into()));
    }
    let z: Vec<f64> = k.iter().map(|&a| a as f64 * c.h()).collect();
    let o = green_oz(&c.model, &z, c.h())?;
    let s = green_spectral(&c.model, &k)?;
    let mut r = ctx.record();
    r.vec("z", &z);
    r.num("h", c.h());
    r.num("F", o.f);
    r.num("spectral", s.value);
    r.num("ti1", o.ti1);
    r.num("ti2", o.ti2);
    r.num("prefactor_ti1", o.prefactor_ti1);
    r.num("prefactor_ti2", o.prefactor_ti2);
    r.num("ratio_spectral_ti1", s.value / o.ti1);
    r.num("ratio_ti1_ti2", o.ti1 / o.ti2);
    ctx.emit("oz.txt", &r.finish())?;
    println!("spectral = {}  ti1 = {}  ti2 = {}", num(s.value), num(o.ti1), num(o.ti2));
    Ok(())
}

fn compare(ctx: &Ctx) -> Result<(), CliError> {
    ctx.require_hypotheses()?;
    let c = &ctx.cfg;
    if c.sweep.is_empty() {
        return Err(CliError::Config("compare needs a [sweep] section".into()));
    }
    // surfaces geometry failures with the minimizers listed
    geometry_of(ctx)?;
    let oracle = match c.oracle {
        OracleKind::Spectral => Oracle::Spectral,
        OracleKind::Lattice => Oracle::Lattice(c.lattice.clone()),
    };
    let rows = convergence_sweep(&c.model, &c.x_point(), &c.y_point(), &c.sweep, &oracle).map_err(|e| ctx.geometry(e))?;
    let columns: Vec<String> = SweepRow::CSV_HEADER.split(',').map(String::from).collect();
    let mut csv = ctx.csv(&columns);
    for row in &rows {
        csv.raw_line(&row.csv_line());
    }
    ctx.emit("compare.csv", &csv.finish())?;

    let ratios = successive_error_ratios(&rows);
    let decreasing = ratios.iter().all(|&q| q > 1.0);
    let [lo, hi] = c.rate_window;
    let in_window = ratios.iter().all(|&q| q >= lo && q <= hi);
    let mut r = ctx.record();
    r.put("oracle", if c.oracle == OracleKind::Spectral { "spectral" } else { "lattice" });
    for row in &rows {
        r.num(&format!("abs_error[n={}]", row.n), (row.ratio - 1.0).abs());
    }
    for (w, q) in rows.windows(2).zip(&ratios) {
        r.num(&format!("error_ratio[{}/{}]", w[0].n, w[1].n), *q);
    }
    r.num("rate_window_lo", lo);
    r.num("rate_window_hi", hi);
    r.put("decreasing", decreasing);
    r.put("in_rate_window", in_window);
    r.put("verdict", if decreasing && in_window { "PASS" } else { "FAIL" });
    ctx.emit("compare.txt", &r.finish())?;
    for row in &rows {
        println!("n = {}  ratio = {}", row.n, num(row.ratio));
    }
    println!("rate window [{lo}, {hi}]: {}", if decreasing && in_window { "PASS" } else { "FAIL" });
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let path = cli.config.ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = config::load(&path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli.out_dir.or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    let ctx = Ctx { cfg, out };
    match cli.command {
        Command::Check => check(&ctx),
        Command::Finsler => finsler(&ctx),
        Command::Geodesic => geodesic(&ctx),
        Command::Evaluate => evaluate(&ctx),
        Command::Oracle { column } => oracle(&ctx, column),
        Command::Oz => oz(&ctx),
        Command::Compare => compare(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("latgreen: {e}");
            ExitCode::from(e.code())
        }
    }
}
