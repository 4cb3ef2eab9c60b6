//! Command-line front end. Every subcommand prints a JSON summary on stdout
//! and, with `--out`, writes its tables plus a manifest into a directory
//! named by the manifest hash.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::catalog;
use crate::error::{Error, Result};
use crate::io::{self, RunManifest, Table};
use crate::planar::{self, load_planar, FrontBundle, PlanarDocument, PlanarSystem};
use crate::pmp::{bang_bang_from_costate, integrate_trajectory, verify_compham};
use crate::probe::{classify, eval_grid, eval_grid_with, GridField, Label, Thresholds};
use crate::reach::{mintime_bisection, mintime_shooting, refine_costate};
use crate::singular::{
    box_dimension, extend_by_invariance, sample_singular, singular_cloud, stratify_slice, verify_singular,
};
use crate::sphere::random_unit;
use crate::system::{check_normality, parse_system, LinearSystem};
use crate::Direction;

#[derive(Debug, Parser)]
#[command(name = "mintime", version, about = "Minimum time functions and their non-Lipschitz sets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// A system file, or `catalog:<name>`.
    #[arg(long, default_value = "catalog:double-integrator")]
    pub system: String,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Base directory for run outputs.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverArg {
    Bisection,
    Shooting,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Minimum time of one point.
    Mintime {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        point: Vec<f64>,
        #[arg(long, value_enum, default_value = "bisection")]
        solver: SolverArg,
    },
    /// Minimum time on a grid.
    Grid {
        #[command(flatten)]
        common: Common,
        #[arg(long = "box", value_delimiter = ',', allow_hyphen_values = true, required = true)]
        bounds: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        res: Vec<usize>,
        /// Front radius for planar systems.
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Optimal trajectory from a point to the origin.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        point: Vec<f64>,
        #[arg(long, default_value_t = 101)]
        samples: usize,
    },
    /// Sampled singular points with verification residuals.
    Singular {
        #[command(flatten)]
        common: Common,
        /// Costates sampled on Z.
        #[arg(long, default_value_t = 16)]
        samples: usize,
        /// Largest r.
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long, default_value_t = 16)]
        r_count: usize,
    },
    /// Strata of the slice at `tau`.
    Strata {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true)]
        tau: f64,
        #[arg(long, default_value_t = 256)]
        samples: usize,
        /// Extend every slice point along its trajectory up to this r.
        #[arg(long)]
        extend: Option<f64>,
    },
    /// Hamiltonian identity on random costates and horizons.
    CheckHam {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 3.0)]
        r_max: f64,
    },
    /// Lipschitz probe on a grid.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long = "box", value_delimiter = ',', allow_hyphen_values = true, required = true)]
        bounds: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        res: Vec<usize>,
        #[arg(long, default_value_t = 1.15)]
        gamma: f64,
        #[arg(long)]
        tau: Option<f64>,
    },
    /// Box dimension of a sampled singular set.
    Dimension {
        #[command(flatten)]
        common: Common,
        /// Number of r values.
        #[arg(long, default_value_t = 500)]
        samples: usize,
        /// Largest r.
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long, default_value_t = 0.5)]
        r_min: f64,
        /// Spacing of neighbouring sampled points at r = tau.
        #[arg(long, default_value_t = 2e-3)]
        spacing: f64,
        /// Largest box side; the others halve.
        #[arg(long, default_value_t = 0.0625)]
        scale: f64,
        #[arg(long, default_value_t = 5)]
        scales: usize,
    },
    /// The two singular arcs of a planar system.
    PlanarArc {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
    },
    /// Extremal front of a planar system.
    PlanarFront {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true)]
        tau: f64,
        #[arg(long, default_value_t = 64)]
        samples: usize,
    },
    /// List built-in systems, or print one as a document.
    Catalog { name: Option<String> },
    /// Repeat the run recorded in a manifest.
    Rerun {
        manifest: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Exit status: 2 for usage and input errors, 1 for numerical failures.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Invalid(_)
        | Error::UnknownCatalog { .. }
        | Error::Json(_)
        | Error::Io(_)
        | Error::Expression(_)
        | Error::Dimension(_)
        | Error::TooManyInputs { .. }
        | Error::UnsupportedDimension(_)
        | Error::Channel { .. } => 2,
        _ => 1,
    }
}

/// Parses `args` (program name first), runs, and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    if let Some(n) = std::env::var("MINTIME_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match dispatch(cli.command) {
        Ok(summary) => {
            let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
            // a closed pipe downstream is not an error of ours
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

enum Loaded {
    Linear(LinearSystem),
    Planar(PlanarSystem),
}

fn load(spec: &str) -> Result<Loaded> {
    if let Some(name) = spec.strip_prefix("catalog:") {
        return Ok(match catalog::lookup(name)? {
            catalog::Entry::Linear(s) => Loaded::Linear(s),
            catalog::Entry::Planar(s) => Loaded::Planar(s),
        });
    }
    let text = std::fs::read_to_string(spec)?;
    let v: Value = serde_json::from_str(&text)?;
    if v.get("F").is_some() {
        let doc: PlanarDocument = serde_json::from_value(v)?;
        Ok(Loaded::Planar(load_planar(&doc)?))
    } else {
        Ok(Loaded::Linear(parse_system(&text)?))
    }
}

fn linear(spec: &str) -> Result<LinearSystem> {
    match load(spec)? {
        Loaded::Linear(s) => Ok(s),
        Loaded::Planar(_) => Err(Error::Invalid(format!("'{spec}' is a planar system; this command needs a linear one"))),
    }
}

fn planar_sys(spec: &str) -> Result<PlanarSystem> {
    match load(spec)? {
        Loaded::Planar(s) => Ok(s),
        Loaded::Linear(_) => Err(Error::Invalid(format!("'{spec}' is a linear system; this command needs a planar one"))),
    }
}

struct Run {
    manifest: RunManifest,
    files: Vec<(String, String)>,
    started: Instant,
    out: Option<PathBuf>,
}

impl Run {
    fn new(command: &str, c: &Common) -> Run {
        let mut manifest = RunManifest::new(command, &c.system, c.seed);
        manifest.tolerance("tol", c.tol);
        Run { manifest, files: vec![], started: Instant::now(), out: c.out.clone() }
    }

    fn table(&mut self, name: &str, t: &Table) -> Result<()> {
        self.files.push((name.into(), t.render()?));
        Ok(())
    }

    fn finish(mut self, mut summary: Value) -> Result<Value> {
        self.files.push(("summary.json".into(), serde_json::to_string_pretty(&summary)? + "\n"));
        self.manifest.wall_time_s = self.started.elapsed().as_secs_f64();
        if let Some(base) = &self.out {
            let dir = io::write_run(base, &mut self.manifest, &self.files)?;
            summary["run_dir"] = json!(dir.display().to_string());
        }
        Ok(summary)
    }
}

fn check_point(sys: &LinearSystem, p: &[f64]) -> Result<DVector<f64>> {
    if p.len() != sys.n() {
        return Err(Error::Invalid(format!("--point has {} coordinates, the system has N = {}", p.len(), sys.n())));
    }
    Ok(DVector::from_column_slice(p))
}

fn split_box(bounds: &[f64], res: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
    if !bounds.len().is_multiple_of(2) || bounds.len() / 2 != res.len() {
        return Err(Error::Invalid("--box needs lo,hi per axis and --res one count per axis".into()));
    }
    Ok((bounds.iter().step_by(2).copied().collect(), bounds.iter().skip(1).step_by(2).copied().collect()))
}

/// Planar fronts need a radius that covers the box; default to the
/// validated horizon.
fn planar_grid(sys: &PlanarSystem, lo: &[f64], hi: &[f64], res: &[usize], tol: f64, tau: Option<f64>) -> Result<(GridField, f64)> {
    if lo.len() != 2 {
        return Err(Error::Invalid("planar grids are two-dimensional".into()));
    }
    let r_max = tau.unwrap_or(sys.horizon().t_est);
    let bundle = FrontBundle::build(sys, r_max, 3e-3)?;
    let field = eval_grid_with(lo, hi, res, "front", tol, |x| planar::planar_mintime(sys, [x[0], x[1]], tol, &bundle))?;
    Ok((field, r_max))
}

/// Command line that reproduces `m`.
pub fn manifest_args(m: &RunManifest) -> Result<Vec<String>> {
    let mut args = vec!["mintime".to_string(), m.command.clone(), format!("--system={}", m.system), format!("--seed={}", m.seed)];
    if let Some(tol) = m.tolerances.get("tol") {
        args.push(format!("--tol={tol:e}"));
    }
    for (key, v) in &m.parameters {
        let flag = key.replace('_', "-");
        let text = match v {
            Value::Null => continue,
            Value::Array(items) => items.iter().map(scalar).collect::<Result<Vec<_>>>()?.join(","),
            other => scalar(other)?,
        };
        args.push(format!("--{flag}={text}"));
    }
    Ok(args)
}

fn scalar(v: &Value) -> Result<String> {
    match v {
        Value::Number(n) => Ok(n.to_string()),
        Value::String(s) => Ok(s.clone()),
        other => Err(Error::Invalid(format!("manifest parameter {other} is not a scalar"))),
    }
}

fn dispatch(cmd: Command) -> Result<Value> {
    match cmd {
        Command::Rerun { manifest, out } => {
            let m: RunManifest = serde_json::from_str(&std::fs::read_to_string(&manifest)?)?;
            let mut args = manifest_args(&m)?;
            if let Some(o) = out {
                args.push(format!("--out={}", o.display()));
            }
            let cli = Cli::try_parse_from(&args).map_err(|e| Error::Invalid(format!("manifest does not form a valid command: {e}")))?;
            if matches!(cli.command, Command::Rerun { .. } | Command::Catalog { .. }) {
                return Err(Error::Invalid(format!("manifest command '{}' cannot be rerun", m.command)));
            }
            dispatch(cli.command)
        }
        Command::Mintime { common, point, solver } => {
            let sys = linear(&common.system)?;
            let x = check_point(&sys, &point)?;
            let mut run = Run::new("mintime", &common);
            run.manifest.param("point", &point).param("solver", format!("{solver:?}").to_lowercase());
            let res = match solver {
                SolverArg::Bisection => mintime_bisection(&sys, &x, common.tol)?,
                SolverArg::Shooting => mintime_shooting(&sys, &x, common.tol)?,
            };
            run.finish(serde_json::to_value(&res)?)
        }
        Command::Grid { common, bounds, res, tau } => {
            let (lo, hi) = split_box(&bounds, &res)?;
            let mut run = Run::new("grid", &common);
            run.manifest.param("box", &bounds).param("res", &res).param("tau", tau);
            let field = match load(&common.system)? {
                Loaded::Linear(sys) => eval_grid(&sys, &lo, &hi, &res, common.tol)?,
                Loaded::Planar(sys) => planar_grid(&sys, &lo, &hi, &res, common.tol, tau)?.0,
            };
            run.table("grid.csv", &io::grid_table(&field))?;
            let failed = field.status.iter().filter(|s| **s != crate::probe::NodeStatus::Ok).count();
            run.finish(json!({"nodes": field.len(), "failed": failed, "solver": field.solver}))
        }
        Command::Synth { common, point, samples } => {
            let sys = linear(&common.system)?;
            let x = check_point(&sys, &point)?;
            let mut run = Run::new("synth", &common);
            run.manifest.param("point", &point).param("samples", samples);
            let t = refine_costate(&sys, &x, &mintime_bisection(&sys, &x, common.tol)?, common.tol);
            let zeta = DVector::from_vec(t.zeta_star.clone());
            let control = bang_bang_from_costate(&sys, &zeta, t.t)?;
            let traj = integrate_trajectory(&sys, &control, &x, Direction::Forward, Some(&zeta), samples)?;
            run.table("trajectory.csv", &io::trajectory_table(&traj))?;
            let end = traj.last().x.clone();
            let switches: Vec<Vec<f64>> = control.channels.iter().map(|c| c.switches.clone()).collect();
            run.finish(json!({"T": t.t, "zeta_star": t.zeta_star, "switch_times": switches, "end": end}))
        }
        Command::Singular { common, samples, tau, r_count } => {
            let sys = linear(&common.system)?;
            let mut run = Run::new("singular", &common);
            run.manifest.param("samples", samples).param("tau", tau).param("r_count", r_count);
            let pts = sample_singular(&sys, samples, tau / r_count.max(1) as f64, tau, r_count)?;
            let reports = pts.par_iter().map(|p| verify_singular(&sys, p)).collect::<Result<Vec<_>>>()?;
            run.table("singular.csv", &io::singular_table(&pts, &reports))?;
            let worst = reports.iter().map(|r| r.worst()).fold(0.0, f64::max);
            let passed = reports.iter().all(|r| r.passes());
            run.finish(json!({"points": pts.len(), "worst_residual": worst, "all_pass": passed}))
        }
        Command::Strata { common, tau, samples, extend } => {
            let sys = linear(&common.system)?;
            let mut run = Run::new("strata", &common);
            run.manifest.param("tau", tau).param("samples", samples).param("extend", extend);
            let strata = stratify_slice(&sys, tau, samples)?;
            run.table("strata.csv", &io::strata_table(&strata))?;
            let groups: Vec<Value> = strata
                .iter()
                .map(|s| {
                    json!({
                        "label": s.label,
                        "points": s.points.len(),
                        "families": s.families,
                        "full_rank": s.ranks.iter().zip(&s.switch_times).all(|(r, t)| *r == t.iter().map(Vec::len).sum::<usize>()),
                    })
                })
                .collect();
            let mut summary = json!({"tau": tau, "tau_small": sys.tau_small(), "strata": groups});
            if let Some(r_max) = extend {
                let pts: Vec<_> = strata.iter().flat_map(|s| s.points.iter()).collect();
                let paths = pts.par_iter().map(|p| extend_by_invariance(&sys, p, r_max, 8)).collect::<Result<Vec<_>>>()?;
                let flat: Vec<_> = paths.into_iter().flatten().collect();
                let reps = flat.par_iter().map(|p| verify_singular(&sys, p)).collect::<Result<Vec<_>>>()?;
                run.table("extended.csv", &io::singular_table(&flat, &reps))?;
                summary["extended_points"] = json!(flat.len());
            }
            run.finish(summary)
        }
        Command::CheckHam { common, samples, r_max } => {
            let sys = linear(&common.system)?;
            let mut run = Run::new("check-ham", &common);
            run.manifest.param("samples", samples).param("r_max", r_max);
            let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
            let draws: Vec<(DVector<f64>, f64)> =
                (0..samples).map(|_| (random_unit(&mut rng, sys.n()), r_max * (1.0 - rng.random::<f64>()))).collect();
            let res = draws.par_iter().map(|(z, r)| verify_compham(&sys, z, *r)).collect::<Result<Vec<f64>>>()?;
            let mut t = Table::new((1..=sys.n()).map(|i| format!("zeta_{i}")).chain(["r".into(), "residual".into()]));
            t.rows = draws
                .iter()
                .zip(&res)
                .map(|((z, r), v)| z.iter().chain([r, v]).map(|x| io::num(*x)).collect())
                .collect();
            run.table("compham.csv", &t)?;
            let worst = res.iter().copied().fold(0.0, f64::max);
            if !(worst <= 1e-8) {
                return Err(Error::VerificationFailed { r: r_max, detail: format!("largest residual {worst:e} exceeds 1e-8") });
            }
            run.finish(json!({"samples": samples, "max_residual": worst}))
        }
        Command::Probe { common, bounds, res, gamma, tau } => {
            let (lo, hi) = split_box(&bounds, &res)?;
            let mut run = Run::new("probe", &common);
            run.manifest.param("box", &bounds).param("res", &res).param("gamma", gamma).param("tau", tau);
            let field = match load(&common.system)? {
                Loaded::Linear(sys) => eval_grid(&sys, &lo, &hi, &res, common.tol)?,
                Loaded::Planar(sys) => planar_grid(&sys, &lo, &hi, &res, common.tol, tau)?.0,
            };
            let th = Thresholds { gamma, ..Thresholds::default() };
            let report = classify(&field, &th)?;
            run.table("grid.csv", &io::grid_table(&field))?;
            run.table("probe.csv", &io::probe_table(&field, &report))?;
            run.finish(json!({
                "nodes": field.len(),
                "non_lipschitz": report.nodes_with(Label::NonLipschitz).len(),
                "lipschitz": report.nodes_with(Label::Lipschitz).len(),
                "inconclusive": report.nodes_with(Label::Inconclusive).len(),
                "note": report.note,
            }))
        }
        Command::Dimension { common, samples, tau, r_min, spacing, scale, scales } => {
            let sys = linear(&common.system)?;
            let mut run = Run::new("dimension", &common);
            run.manifest
                .param("samples", samples)
                .param("tau", tau)
                .param("r_min", r_min)
                .param("spacing", spacing)
                .param("scale", scale)
                .param("scales", scales);
            let cloud = singular_cloud(&sys, r_min, tau, samples, spacing)?;
            let eps: Vec<f64> = (0..scales).map(|k| scale / 2f64.powi(k as i32)).collect();
            let fit = box_dimension(&cloud, &eps)?;
            let mut t = Table::new(["scale", "boxes"]);
            t.rows = fit.scales.iter().zip(&fit.counts).map(|(s, c)| vec![io::num(*s), c.to_string()]).collect();
            run.table("dimension.csv", &t)?;
            run.finish(json!({"points": cloud.len(), "dimension": fit.dimension, "r_squared": fit.r_squared}))
        }
        Command::PlanarArc { common, tau } => {
            let sys = planar_sys(&common.system)?;
            let mut run = Run::new("planar-arc", &common);
            run.manifest.param("tau", tau);
            let horizon = sys.horizon().clone();
            let mut arcs = Vec::new();
            for (z, name) in planar::seed_costates(&sys)?.into_iter().zip(["arc_plus.csv", "arc_minus.csv"]) {
                let arc = planar::singular_trajectory(&sys, z, tau)?;
                run.table(name, &io::arc_table(&arc))?;
                arcs.push(json!({
                    "seed": z,
                    "samples": arc.len(),
                    "max_abs_h": arc.max_abs_h(),
                    "min_lambda_norm": arc.min_lambda_norm(),
                    "min_relative_gdot": arc.min_relative_gdot(),
                    "events": arc.events,
                }));
            }
            run.finish(json!({"t_est": horizon.t_est, "horizon_trials": horizon.trials, "step": sys.step(), "lipschitz": sys.lipschitz(), "arcs": arcs}))
        }
        Command::PlanarFront { common, tau, samples } => {
            let sys = planar_sys(&common.system)?;
            let mut run = Run::new("planar-front", &common);
            run.manifest.param("tau", tau).param("samples", samples);
            let front = planar::extremal_front(&sys, tau, samples)?;
            run.table("front.csv", &io::front_table(&front))?;
            run.finish(json!({"t_est": sys.horizon().t_est, "convex": front.convex, "warnings": front.warnings}))
        }
        Command::Catalog { name } => match name {
            None => Ok(json!({"linear": catalog::LINEAR, "planar": catalog::PLANAR})),
            Some(n) => match catalog::lookup(&n)? {
                catalog::Entry::Linear(s) => {
                    let report = check_normality(&s);
                    let mut v = serde_json::to_value(s.to_document())?;
                    v["k"] = json!(s.k());
                    v["kalman_ranks"] = json!(report.ranks);
                    v["normal"] = json!(report.normal);
                    Ok(v)
                }
                catalog::Entry::Planar(_) => Ok(serde_json::to_value(catalog::planar_document(&n)?)?),
            },
        },
    }
}

/// Reads a grid written by the `grid` command.
pub fn read_grid(path: &Path) -> Result<GridField> {
    io::parse_grid(&std::fs::read_to_string(path)?)
}
