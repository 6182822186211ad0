#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::error::Error;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use conic_climb::acceptance::{run_acceptance, AcceptanceConfig, Status};
use conic_climb::conical::{locate_intersection, Intersection};
use conic_climb::experiment::{log_space, sweep, Method, SweepSpec};
use conic_climb::model::{build_galerkin, resolve, OperatorTriple};
use conic_climb::planner::{plan, vertexless_variants, ConnectorConfig, ControlPath, PlanConfig, PlanRequest, SpreadTarget, VariantMode};
use conic_climb::propagate::{eigenstate, propagate_adiabatic, propagate_full};
use conic_climb::spectral::{certify_band, eigensystem, Region};
use conic_climb::{ControlPoint, Tolerances};

type DomainResult = Result<(), Box<dyn Error>>;

/// Synthesis and verification of adiabatic control through conical eigenvalue intersections.
#[derive(Debug, Parser)]
#[command(name = "conic-climb", version)]
struct Cli {
    /// `builtin:NAME` or a model JSON file [default: builtin:pauli2; accept: every builtin].
    #[arg(long, global = true)]
    model: Option<String>,
    /// Output file; stdout when absent (sweep: CSV path, report next to it).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON object overriding numerical tolerances, e.g. '{"c_step": 0.05}'.
    #[arg(long, global = true, value_parser = parse_tolerances)]
    tol_overrides: Option<Tolerances>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build, inspect or discretize models.
    #[command(subcommand)]
    Model(ModelCommand),
    /// Eigenvalues and gaps on a grid, as CSV.
    Scan {
        #[arg(long, value_parser = parse_region, default_value = "disc:0,0,1")]
        region: Region,
        /// Nodes per axis.
        #[arg(long, default_value_t = 41)]
        nodes: usize,
    },
    /// Locate and certify conical intersections of one level pair.
    Find {
        /// Lower level of the pair.
        #[arg(long, default_value_t = 0)]
        lower: usize,
        #[arg(long, value_parser = parse_region, default_value = "disc:0,0,1")]
        region: Region,
        #[arg(long, default_value_t = 81)]
        nodes: usize,
    },
    /// Synthesize a control path reaching a spread target.
    Plan {
        /// Overlap moduli on levels source, source+1, ...
        #[arg(long, value_delimiter = ',', required = true, allow_hyphen_values = true)]
        target: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        source: usize,
        #[arg(long, value_parser = parse_point)]
        start: ControlPoint,
        #[arg(long, value_parser = parse_point)]
        end: Option<ControlPoint>,
        #[arg(long, value_parser = parse_region)]
        region: Region,
        /// Seed points of the crossings, in climbing order (default: the model's known crossings).
        #[arg(long = "crossing", value_parser = parse_point)]
        crossings: Vec<ControlPoint>,
        #[arg(long, default_value_t = 0.5)]
        entry_radius: f64,
        #[arg(long, default_value_t = 0.5)]
        exit_length: f64,
        /// Fixed approach angle at every crossing, radians.
        #[arg(long, allow_hyphen_values = true)]
        approach: Option<f64>,
        /// Replace the non-mixing pieces by a vertexless variant.
        #[arg(long, value_enum)]
        variant: Option<Variant>,
        #[arg(long, default_value_t = 4.0)]
        grid_density: f64,
    },
    /// Propagate one path at one epsilon.
    Simulate {
        #[arg(long)]
        path: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, value_enum, default_value = "full")]
        method: MethodArg,
        /// Include the final state in the output.
        #[arg(long)]
        dump_state: bool,
    },
    /// Error-versus-epsilon sweep with a log-log slope fit.
    Sweep {
        #[arg(long)]
        path: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        eps_min: f64,
        #[arg(long, default_value_t = 1e-1)]
        eps_max: f64,
        #[arg(long, default_value_t = 7)]
        points: usize,
        #[arg(long, value_enum, default_value = "full")]
        method: MethodArg,
        /// Expected exponent; the report then carries a verdict.
        #[arg(long)]
        expected: Option<f64>,
        #[arg(long, default_value_t = 0.15)]
        slope_tolerance: f64,
        /// Permit epsilon below 1e-3 (step count grows like 1/eps^2).
        #[arg(long)]
        allow_small: bool,
        /// Fill the wall-clock column.
        #[arg(long)]
        timings: bool,
    },
    /// Run the acceptance suite.
    Accept {
        /// Flip the sign rule of the non-mixing field (negative control).
        #[arg(long)]
        sabotage: bool,
        #[arg(long)]
        timings: bool,
        /// Restrict to these criteria.
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<u32>>,
    },
}

#[derive(Debug, Subcommand)]
enum ModelCommand {
    /// Write the selected model as a model file.
    Build,
    /// Summarize the selected model.
    Inspect {
        /// Control point at which the spectrum is reported.
        #[arg(long, value_parser = parse_point, default_value = "0,0")]
        at: ControlPoint,
    },
    /// Sine-basis discretization of sampled potentials on [0, pi].
    Galerkin {
        /// JSON file with arrays `v0`, `v1`, `v2` sampled on a uniform grid.
        #[arg(long)]
        potentials: PathBuf,
        #[arg(long)]
        modes: usize,
        #[arg(long, default_value_t = 512)]
        quad_points: usize,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Variant {
    GenericC2,
    JetMatched,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Full,
    Adiabatic,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Full => Method::Full,
            MethodArg::Adiabatic => Method::Adiabatic,
        }
    }
}

fn parse_tolerances(s: &str) -> Result<Tolerances, String> {
    Tolerances::default().with_overrides(s).map_err(|e| e.to_string())
}

fn parse_numbers(s: &str, n: usize) -> Result<Vec<f64>, String> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"))).collect::<Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated numbers, got {}", v.len()));
    }
    Ok(v)
}

fn parse_point(s: &str) -> Result<ControlPoint, String> {
    let v = parse_numbers(s, 2)?;
    Ok(ControlPoint::new(v[0], v[1]))
}

/// `rect:u1lo,u1hi,u2lo,u2hi` or `disc:c1,c2,radius`.
fn parse_region(s: &str) -> Result<Region, String> {
    let (kind, rest) = s.split_once(':').ok_or("expected rect:a,b,c,d or disc:x,y,r")?;
    match kind {
        "rect" => {
            let v = parse_numbers(rest, 4)?;
            Ok(Region::rect([v[0], v[1]], [v[2], v[3]]))
        }
        "disc" => {
            let v = parse_numbers(rest, 3)?;
            Ok(Region::disc(ControlPoint::new(v[0], v[1]), v[2]))
        }
        _ => Err(format!("unknown region kind {kind:?}")),
    }
}

fn write_output(out: Option<&Path>, text: &str) -> DomainResult {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            let written = stdout.write_all(text.as_bytes()).and_then(|_| if text.ends_with('\n') { Ok(()) } else { stdout.write_all(b"\n") });
            match written {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
                _ => {}
            }
        }
    }
    Ok(())
}

fn grid(region: &Region, nodes: usize) -> impl Iterator<Item = (usize, usize, ControlPoint)> {
    let [a, b, c, d] = region.bounding_box();
    let n = nodes.max(2);
    let step = move |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (n - 1) as f64;
    (0..n).flat_map(move |j| (0..n).map(move |i| (i, j, ControlPoint::new(step(a, b, i), step(c, d, j)))))
}

fn scan(model: &OperatorTriple, region: Region, nodes: usize, out: Option<&Path>) -> DomainResult {
    let n = model.dim();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["u1".to_string(), "u2".to_string()];
    header.extend((0..n).map(|k| format!("lambda_{k}")));
    header.extend((0..n - 1).map(|k| format!("gap_{k}")));
    w.write_record(&header)?;
    for (_, _, u) in grid(&region, nodes).filter(|(_, _, u)| region.contains(*u)) {
        let es = eigensystem(model, u)?;
        let mut rec = vec![format!("{:e}", u.u1), format!("{:e}", u.u2)];
        rec.extend(es.values.iter().map(|v| format!("{v:e}")));
        rec.extend((0..n - 1).map(|k| format!("{:e}", es.gap(k))));
        w.write_record(&rec)?;
    }
    write_output(out, &String::from_utf8(w.into_inner()?)?)
}

fn find(model: &OperatorTriple, lower: usize, region: Region, nodes: usize, tol: &Tolerances, out: Option<&Path>) -> DomainResult {
    if lower + 1 >= model.dim() {
        return Err(format!("level pair ({lower}, {}) does not exist in dimension {}", lower + 1, model.dim()).into());
    }
    let n = nodes.max(3);
    let mut gaps = vec![f64::INFINITY; n * n];
    let mut points = vec![ControlPoint::ORIGIN; n * n];
    for (i, j, u) in grid(&region, n) {
        points[j * n + i] = u;
        if region.contains(u) {
            gaps[j * n + i] = eigensystem(model, u)?.gap(lower);
        }
    }
    let [a, b, ..] = region.bounding_box();
    let spacing = (b - a) / (n - 1) as f64;
    let threshold = 2.0 * model.lipschitz() * spacing;
    let mut found: Vec<Intersection> = Vec::new();
    let mut rejected = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let g = gaps[j * n + i];
            if !(g <= threshold) {
                continue;
            }
            let is_min = (j.saturating_sub(1)..=(j + 1).min(n - 1))
                .flat_map(|jj| (i.saturating_sub(1)..=(i + 1).min(n - 1)).map(move |ii| (ii, jj)))
                .all(|(ii, jj)| gaps[jj * n + ii] >= g);
            if !is_min {
                continue;
            }
            let seed = points[j * n + i];
            match locate_intersection(model, lower, seed, region, tol) {
                Ok(x) if found.iter().all(|f| f.point.dist(x.point) > 1e-6) => found.push(x),
                Ok(_) => {}
                Err(e) => rejected.push(json!({ "seed": seed.as_array(), "reason": e.to_string() })),
            }
        }
    }
    let report = json!({ "lower": lower, "region": region, "intersections": found, "rejected": rejected });
    write_output(out, &serde_json::to_string_pretty(&report)?)
}

#[allow(clippy::too_many_arguments)]
fn plan_cmd(
    cli: &Cli,
    model: &OperatorTriple,
    tol: &Tolerances,
    target: &[f64],
    source: usize,
    start: ControlPoint,
    end: Option<ControlPoint>,
    region: Region,
    crossings: &[ControlPoint],
    config: PlanConfig,
    variant: Option<Variant>,
    grid_density: f64,
) -> DomainResult {
    let target = SpreadTarget::new(target.to_vec())?;
    let hi = source + target.p.len() - 1;
    if hi >= model.dim() {
        return Err(format!("target spans levels {source}..={hi} but the model has {} levels", model.dim()).into());
    }
    let band = certify_band(model, source, hi, region, grid_density)?;
    let seeds: Vec<(usize, ControlPoint)> = if crossings.is_empty() {
        let mut known: Vec<_> = model.metadata.known_intersections.iter().filter(|k| k.lower >= source && k.lower < hi).collect();
        known.sort_by_key(|k| k.lower);
        known.into_iter().map(|k| (k.lower, ControlPoint::new(k.point[0], k.point[1]))).collect()
    } else {
        crossings.iter().enumerate().map(|(i, p)| (source + i, *p)).collect()
    };
    let intersections: Vec<Intersection> = seeds.iter().map(|&(lower, p)| locate_intersection(model, lower, p, region, tol)).collect::<Result<_, _>>()?;
    let req = PlanRequest { model, band: &band, intersections: &intersections, start, end, target: &target, config, tol: *tol };
    let mut path = plan(&req)?;
    if let Some(v) = variant {
        let mode = match v {
            Variant::GenericC2 => VariantMode::GenericC2,
            Variant::JetMatched => VariantMode::JetMatched,
        };
        path = vertexless_variants(&path, mode, tol.samples_per_segment.min(4000))?;
    }
    write_output(cli.out.as_deref(), &path.to_json())
}

impl Cli {
    fn model(&self) -> Result<OperatorTriple, conic_climb::model::ModelError> {
        resolve(self.model.as_deref().unwrap_or("builtin:pauli2"))
    }
}

fn run(cli: &Cli) -> DomainResult {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let tol = cli.tol_overrides.unwrap_or_default();
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Accept { sabotage, timings, only } => {
            let cfg = AcceptanceConfig { seed: cli.seed, model: cli.model.clone(), sabotage: *sabotage, timings: *timings, tol, only: only.clone() };
            let report = run_acceptance(&cfg);
            for c in &report.criteria {
                eprintln!("{}", c.line());
            }
            write_output(out, &serde_json::to_string_pretty(&report)?)?;
            let any_failed = report.criteria.iter().any(|c| c.status == Status::Fail);
            let any_passed = report.criteria.iter().any(|c| c.status == Status::Pass);
            if any_failed || !any_passed {
                return Err("acceptance not met".into());
            }
            Ok(())
        }
        Command::Model(ModelCommand::Galerkin { potentials, modes, quad_points }) => {
            #[derive(Deserialize)]
            struct Potentials {
                v0: Vec<f64>,
                v1: Vec<f64>,
                v2: Vec<f64>,
            }
            let p: Potentials = serde_json::from_reader(File::open(potentials)?)?;
            let model = build_galerkin(*modes, &p.v0, &p.v1, &p.v2, *quad_points)?;
            write_output(out, &model.to_json())
        }
        Command::Model(ModelCommand::Build) => write_output(out, &cli.model()?.to_json()),
        Command::Model(ModelCommand::Inspect { at }) => {
            let model = cli.model()?;
            let es = eigensystem(&model, *at)?;
            let summary = json!({
                "name": model.name(),
                "dim": model.dim(),
                "control_norms": model.control_norms(),
                "known_intersections": model.metadata.known_intersections,
                "at": at.as_array(),
                "eigenvalues": es.values.as_slice(),
                "gaps": (0..model.dim() - 1).map(|k| es.gap(k)).collect::<Vec<_>>(),
            });
            write_output(out, &serde_json::to_string_pretty(&summary)?)
        }
        Command::Scan { region, nodes } => scan(&cli.model()?, *region, *nodes, out),
        Command::Find { lower, region, nodes } => find(&cli.model()?, *lower, *region, *nodes, &tol, out),
        Command::Plan { target, source, start, end, region, crossings, entry_radius, exit_length, approach, variant, grid_density } => {
            SpreadTarget::new(target.clone())?;
            let model = cli.model()?;
            let config = PlanConfig {
                entry_radius: *entry_radius,
                exit_length: *exit_length,
                approach: *approach,
                connector: ConnectorConfig { seed: cli.seed, ..Default::default() },
            };
            plan_cmd(cli, &model, &tol, target, *source, *start, *end, *region, crossings, config, *variant, *grid_density)
        }
        Command::Simulate { path, epsilon, method, dump_state } => {
            let model = cli.model()?;
            let path = ControlPath::load(path)?;
            let psi0 = eigenstate(&model, path.start(), path.band.lo())?;
            let mut r = match method {
                MethodArg::Full => propagate_full(&model, &path, *epsilon, &psi0, &tol)?,
                MethodArg::Adiabatic => propagate_adiabatic(&model, &path, *epsilon, &psi0, &tol)?,
            };
            if !dump_state {
                r.final_state = None;
            }
            write_output(out, &serde_json::to_string_pretty(&r)?)
        }
        Command::Sweep { path, eps_min, eps_max, points, method, expected, slope_tolerance, allow_small, timings } => {
            let model = cli.model()?;
            let path = ControlPath::load(path)?;
            let spec = SweepSpec {
                epsilons: log_space(*eps_min, *eps_max, *points),
                method: (*method).into(),
                expected: expected.map(|q| (q, *slope_tolerance)),
                allow_small: *allow_small,
            };
            let report = sweep(&model, &path, &spec, &tol)?;
            let report = if *timings { report } else { report.without_timings() };
            let json = serde_json::to_string_pretty(&report)?;
            match out {
                Some(csv_path) => {
                    report.write_csv(File::create(csv_path)?, *timings)?;
                    std::fs::write(csv_path.with_extension("json"), json)?;
                }
                None => {
                    report.write_csv(std::io::stdout().lock(), *timings)?;
                    eprintln!("{json}");
                }
            }
            if report.pass == Some(false) {
                return Err("fitted exponent outside the expected band".into());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            let mut cmd = Cli::command();
            let sub = std::env::args().skip(1).find(|a| cmd.find_subcommand(a).is_some());
            if let Some(sub) = sub.and_then(|s| cmd.find_subcommand_mut(&s).map(|c| c.render_help())) {
                eprintln!("\n{sub}");
            }
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
