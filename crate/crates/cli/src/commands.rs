use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mfld_core::complexity::{
    complexity_of, gw_monte_carlo_subsampled, ising_complexity_bound, subgraph_complexity_bound, GradientSet,
    GwEstimate,
};
use mfld_core::cube::{CubeFunction, CubeMeasure, CubeTable, TableKind};
use mfld_core::gaussian::{
    gaussian_follmer_simulate, gaussian_tilt_search, reverse_lsi_check, FollmerConfig, GaussianMixture,
};
use mfld_core::graphs::{ergm_decompose, SubgraphModel, SubgraphModelSpec};
use mfld_core::ising::{IsingModel, IsingSpec};
use mfld_core::ld::{exact_tail, ld_report, phi_relaxed_lower};
use mfld_core::localization::{conservative_gw, decompose, simulate_path, SdeConfig, StopRule, TiltMixture};
use mfld_core::meanfield::{
    phi_sweep, rate_function_phi, solve_gibbs, MeanFieldOptions, MeanFieldProblem, Objective, SolveResult,
};
use mfld_core::transport::w1_exact;
use mfld_core::verify::{verify, Module};
use serde::Serialize;

use crate::args::*;
use crate::CliError;

/// Primary output of a run plus any side files it asked for.
pub struct Output {
    pub body: String,
    pub side_files: Vec<(PathBuf, String)>,
    /// Computation finished but reported a failed check.
    pub failed: bool,
}

impl Output {
    fn json<T: Serialize>(value: &T) -> Self {
        let mut body = serde_json::to_string_pretty(value).expect("output serializes");
        body.push('\n');
        Output { body, side_files: Vec::new(), failed: false }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn parse<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read(path)?).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn require_file(m: &ModelArgs) -> Result<&Path, CliError> {
    m.file.as_deref().ok_or_else(|| CliError::Usage("--file is required for this model".into()))
}

fn load_objective(m: &ModelArgs) -> Result<Objective, CliError> {
    Ok(match m.model {
        ModelKind::Table => Objective::Table(CubeFunction::from_table(parse::<CubeTable>(require_file(m)?)?)?),
        ModelKind::Ising => Objective::Ising(IsingModel::from_spec(parse::<IsingSpec>(require_file(m)?)?)?),
        ModelKind::Subgraph => {
            Objective::Subgraph(SubgraphModel::from_spec(&parse::<SubgraphModelSpec>(require_file(m)?)?)?)
        }
        ModelKind::Triangle => {
            let n = m.n_vertices.ok_or_else(|| CliError::Usage("--model triangle needs --N".into()))?;
            Objective::Subgraph(SubgraphModel::triangle(n)?)
        }
    })
}

fn load_measure(path: &Path) -> Result<CubeMeasure, CliError> {
    let t: CubeTable = parse(path)?;
    Ok(match t.kind {
        TableKind::LogDensity => CubeMeasure::from_table(t)?,
        TableKind::Function => CubeMeasure::from_function(&CubeFunction::from_table(t)?),
    })
}

/// Inclusive grid "a:s:b", built as a + k·s and rounded to 12 decimals so
/// printed values stay short.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Usage(format!("--t-grid expects start:step:stop, got '{spec}'"));
    let parts: Vec<f64> = spec.split(':').map(|s| s.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
    let [a, s, b] = parts[..] else { return Err(bad()) };
    if !(a.is_finite() && b.is_finite() && s.is_finite() && s > 0.0 && b >= a) {
        return Err(bad());
    }
    let count = ((b - a) / s + 1e-9).floor() as usize + 1;
    if count > 100_000 {
        return Err(CliError::Usage("--t-grid has more than 100000 points".into()));
    }
    Ok((0..count).map(|k| ((a + k as f64 * s) * 1e12).round() / 1e12).collect())
}

#[derive(Serialize)]
struct ComplexityOutput {
    #[serde(flatten)]
    estimate: GwEstimate,
    #[serde(skip_serializing_if = "Option::is_none")]
    analytic_bound: Option<f64>,
}

fn complexity(a: &ComplexityArgs) -> Result<Output, CliError> {
    let obj = load_objective(&a.model)?;
    let (f, analytic_bound) = match &obj {
        Objective::Table(f) => (f.clone(), None),
        Objective::Ising(m) => (m.to_cube_function()?, Some(ising_complexity_bound(m.a(), m.b())?)),
        Objective::Subgraph(m) => {
            let mut bound = 0.0;
            for (h, beta) in m.terms() {
                bound += beta.abs() * subgraph_complexity_bound(h, m.n_vertices())?;
            }
            (m.to_cube_function()?, Some(bound))
        }
    };
    let estimate = match a.subsample {
        Some(k) => gw_monte_carlo_subsampled(&GradientSet::from_cube_function(&f), a.samples, a.seed, k)?,
        None => complexity_of(&f, a.samples, a.seed)?,
    };
    Ok(Output::json(&ComplexityOutput { estimate, analytic_bound }))
}

fn problem(model: &ModelArgs, s: &SolverArgs) -> Result<MeanFieldProblem, CliError> {
    let options = MeanFieldOptions { step: 1.0, max_iter: s.max_iter, restarts: s.restarts, tol: s.tol, seed: s.seed };
    Ok(MeanFieldProblem::new(load_objective(model)?, s.p, options)?)
}

#[derive(Serialize)]
struct SolveOutput {
    n: usize,
    p: f64,
    #[serde(flatten)]
    result: SolveResult,
    /// log Z − objective when log Z is available.
    gap: Option<f64>,
}

fn meanfield(c: &MeanfieldCommand) -> Result<Output, CliError> {
    match c {
        MeanfieldCommand::Solve { model, solver } => {
            let prob = problem(model, solver)?;
            let result = solve_gibbs(&prob)?;
            let gap = result.log_partition.map(|z| z - result.objective);
            Ok(Output::json(&SolveOutput { n: prob.n(), p: prob.p, result, gap }))
        }
        MeanfieldCommand::Phi { model, solver, t, t_grid } => {
            let prob = problem(model, solver)?;
            if let Some(t) = t {
                return Ok(Output::json(&rate_function_phi(&prob, *t)?));
            }
            let grid = parse_grid(t_grid.as_deref().expect("clap requires t or t-grid"))?;
            let rows = phi_sweep(&prob, &grid)?;
            let mut body = String::from("t,phi,feasible\n");
            for r in rows {
                writeln!(body, "{},{},{}", r.t, r.phi, r.feasible).unwrap();
            }
            Ok(Output { body, side_files: Vec::new(), failed: false })
        }
    }
}

#[derive(Serialize)]
struct W1Output {
    n: usize,
    w1: f64,
    dual_value: f64,
    pruned_mass: f64,
    flows: usize,
}

fn transport(c: &TransportCommand) -> Result<Output, CliError> {
    let TransportCommand::W1 { a, b, plan } = c;
    let (ma, mb) = (load_measure(a)?, load_measure(b)?);
    let (w1, p) = w1_exact(&ma, &mb)?;
    let mut out =
        Output::json(&W1Output { n: p.n, w1, dual_value: p.dual_value, pruned_mass: p.pruned_mass, flows: p.flows.len() });
    if let Some(path) = plan {
        out.side_files.push((path.clone(), p.to_csv()));
    }
    Ok(out)
}

#[derive(Serialize)]
struct TailOutput {
    n: usize,
    p: f64,
    t: f64,
    log_tail: f64,
    /// Certified lower bound on φ_p(t) from the relaxation.
    phi_lower: f64,
}

fn ld(c: &LdCommand) -> Result<Output, CliError> {
    match *c {
        LdCommand::Bound { phi, phi_t, lip, complexity, n, p, t, delta } => {
            Ok(Output::json(&ld_report(phi, phi_t, lip, complexity, n, p, t, delta)?))
        }
        LdCommand::Tail { ref file, p, t } => {
            let f = CubeFunction::from_table(parse::<CubeTable>(file)?)?;
            let log_tail = exact_tail(&f, p, t)?;
            let phi_lower = phi_relaxed_lower(&f, p, t)?;
            Ok(Output::json(&TailOutput { n: f.n(), p, t, log_tail, phi_lower }))
        }
    }
}

#[derive(Serialize)]
struct LocalizeOutput {
    #[serde(flatten)]
    mixture: TiltMixture,
    gw: Option<f64>,
    reconstruction_tv: f64,
    entropy_gap: f64,
}

fn localize(a: &LocalizeArgs) -> Result<Output, CliError> {
    let nu = load_measure(&a.measure)?;
    let stop = match a.stop {
        StopArg::TEps => StopRule::TEps,
        StopArg::Tau => StopRule::Tau,
    };
    let gw = match stop {
        StopRule::Tau => Some(conservative_gw(&nu, a.gw_samples, a.seed)?),
        _ => None,
    };
    let cfg = SdeConfig {
        dt: a.dt,
        t_max: a.t_max,
        seed: a.seed,
        eps: a.eps,
        alpha: a.alpha,
        check_every: a.check_every,
        stop,
        gw,
    };
    let mixture = decompose(&nu, &cfg, a.paths)?;
    let reconstruction_tv = mixture.reconstruction_tv(&nu)?;
    let entropy_gap = mixture.entropy_gap(&nu)?;
    let mut out = Output::json(&LocalizeOutput { mixture, gw, reconstruction_tv, entropy_gap });
    if let Some(path) = &a.traces {
        let mut csv = String::from("path,t,trace_h,trace_a,trace_gamma,hull_excess");
        for i in 0..nu.n() {
            write!(csv, ",x{i}").unwrap();
        }
        csv.push('\n');
        for k in 0..a.trace_paths.min(a.paths) {
            let path_k = simulate_path(&nu, &cfg, k as u64)?;
            for r in &path_k.records {
                write!(csv, "{k},{},{},{},{},{}", r.t, r.trace_h, r.trace_a, r.trace_gamma, r.hull_excess).unwrap();
                for x in &r.x {
                    write!(csv, ",{x}").unwrap();
                }
                csv.push('\n');
            }
        }
        out.side_files.push((path.clone(), csv));
    }
    Ok(out)
}

fn gaussian(c: &GaussianCommand) -> Result<Output, CliError> {
    let load = |p: &Path| -> Result<GaussianMixture, CliError> {
        GaussianMixture::from_json(&read(p)?).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
    };
    match c {
        GaussianCommand::Lsi { mixture, nodes, gw_samples, seed } => {
            let rep = reverse_lsi_check(&load(mixture)?, *nodes, *gw_samples, *seed)?;
            let failed = !rep.satisfied;
            Ok(Output { failed, ..Output::json(&rep) })
        }
        GaussianCommand::Tilt { mixture, r, grid } => Ok(Output::json(&gaussian_tilt_search(&load(mixture)?, *r, *grid)?)),
        GaussianCommand::Follmer { mixture, dt, paths, check_times, nodes, gw_samples, seed } => {
            let cfg = FollmerConfig {
                dt: *dt,
                paths: *paths,
                seed: *seed,
                check_times: check_times.clone(),
                nodes: *nodes,
                gw_samples: *gw_samples,
            };
            Ok(Output::json(&gaussian_follmer_simulate(&load(mixture)?, &cfg)?))
        }
    }
}

fn ergm(c: &ErgmCommand) -> Result<Output, CliError> {
    let ErgmCommand::Decompose { model, eps, paths, seed } = c;
    let m = SubgraphModel::from_spec(&parse::<SubgraphModelSpec>(model)?)?;
    Ok(Output::json(&ergm_decompose(&m, *eps, *paths, *seed)?))
}

fn run_verify(a: &VerifyArgs) -> Result<Output, CliError> {
    let modules = if a.target == "all" {
        Module::ALL.to_vec()
    } else {
        vec![a.target.parse::<Module>().map_err(|e| CliError::Usage(e.to_string()))?]
    };
    let report = verify(&modules, a.seed)?;
    let failed = !report.passed;
    Ok(Output { failed, ..Output::json(&report) })
}

pub fn dispatch(cmd: &Command) -> Result<Output, CliError> {
    match cmd {
        Command::Complexity(a) => complexity(a),
        Command::Meanfield(c) => meanfield(c),
        Command::Transport(c) => transport(c),
        Command::Ld(c) => ld(c),
        Command::Localize(a) => localize(a),
        Command::Gaussian(c) => gaussian(c),
        Command::Ergm(c) => ergm(c),
        Command::Verify(a) => run_verify(a),
    }
}
