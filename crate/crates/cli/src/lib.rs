//! Command-line front end. [`run`] parses arguments, dispatches to the
//! library and returns the process exit code.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use glmm_mispredict::diagnostics::{density_curve, qq_data, shapiro_wilk};
use glmm_mispredict::fit::fit_ml;
use glmm_mispredict::intervals::{coverage_eval, prediction_interval, CoverageDraw, DEFAULT_BINS};
use glmm_mispredict::io::{
    ingest_csv, load_model, model_to_json, read_msep_records, read_predictions, save_model, write_csv,
    write_msep_records, write_predictions, CsvSchema,
};
use glmm_mispredict::msep::{bootstrap_msep, mean_u1, simulated_cmsep, simulated_umsep, MsepKind};
use glmm_mispredict::predict::ebp_all;
use glmm_mispredict::quadrature::DEFAULT_ORDER;
use glmm_mispredict::rng::stream;
use glmm_mispredict::simlab::{builtin_scenarios, draw_random_effect, find_scenario, generate};
use glmm_mispredict::{Error, FamilyKind, FitConfig, Scenario};
use serde::Serialize;
use serde_json::json;

const SEED_HELP: &str = "\
Randomness: every stochastic step draws from its own stream, derived from
--seed, a stream name and an index, so output does not depend on --threads.
Streams: fit (fit start points), data/<rep> (simulated data sets),
fit<k>/<rep> (starts for the k-th fit configuration), bootstrap/<b>
(bootstrap samples), fixed-u (conditioning effects in conditional
simulations), u1/<cluster> (Monte-Carlo U1 terms), generate (generate).";

#[derive(Parser, Debug)]
#[command(name = "glmm-mispredict", version, about = "Mixture random-effects GLMMs: fitting, prediction and MSEP", after_help = SEED_HELP)]
struct Cli {
    /// Worker threads for replicate-level parallelism.
    #[arg(long, global = true, env = "GLMM_MISPREDICT_THREADS", default_value_t = 1)]
    threads: usize,
    /// Master seed.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model by maximum likelihood.
    Fit(FitArgs),
    /// Empirical best predictions of the random effects.
    Predict(PredictArgs),
    /// Parametric bootstrap MSEP of the predictions.
    Msep(MsepArgs),
    /// Monte-Carlo MSEP study for a scenario.
    Simulate(SimulateArgs),
    /// Prediction intervals from predictions and MSEP estimates.
    Intervals(IntervalArgs),
    /// Normality diagnostics for the predictions.
    Diagnose(DiagnoseArgs),
    /// List the built-in scenarios.
    Scenarios {
        /// Print full scenario definitions as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Draw one data set from a scenario.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FamilyArg {
    Gaussian,
    Bernoulli,
    Poisson,
}

impl From<FamilyArg> for FamilyKind {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Gaussian => FamilyKind::Gaussian,
            FamilyArg::Bernoulli => FamilyKind::Bernoulli,
            FamilyArg::Poisson => FamilyKind::Poisson,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Unconditional,
    Conditional,
}

impl From<ModeArg> for MsepKind {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Unconditional => MsepKind::Unconditional,
            ModeArg::Conditional => MsepKind::Conditional,
        }
    }
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Long-format CSV: cluster,y,x:<name>...,z:<name>...
    #[arg(long)]
    data: PathBuf,
    /// Prepend an intercept column to both X and Z.
    #[arg(long)]
    intercept: bool,
}

impl DataArgs {
    fn schema(&self) -> CsvSchema {
        CsvSchema { intercept: self.intercept }
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    family: FamilyArg,
    /// Mixture components of the random-effects law (1 = normal).
    #[arg(long, default_value_t = 1)]
    components: usize,
    #[arg(long, default_value_t = DEFAULT_ORDER)]
    gh_order: usize,
    #[arg(long, default_value_t = 3)]
    starts: usize,
    /// Output model JSON (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MsepArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "unconditional")]
    mode: ModeArg,
    /// Bootstrap samples (at least 50).
    #[arg(long, default_value_t = 200)]
    bootstrap: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Catalog name or path to a scenario JSON file.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    /// Comma-separated component counts to fit in each replicate.
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    fit_components: Vec<usize>,
    #[arg(long, value_enum, default_value = "unconditional")]
    mode: ModeArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct IntervalArgs {
    /// CSV written by `predict`.
    #[arg(long)]
    predictions: PathBuf,
    /// CSV written by `msep`.
    #[arg(long)]
    msep: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// CSV with columns cluster,u of true effects; adds a coverage report.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Coverage report JSON (stderr when omitted).
    #[arg(long)]
    coverage_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DiagnoseArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Directory for qq.csv, density.csv and shapiro.json.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    scenario: String,
    /// Long-format CSV of the simulated data.
    #[arg(long)]
    out: PathBuf,
    /// CSV of the true random effects.
    #[arg(long)]
    truth: Option<PathBuf>,
}

/// Parse `args` (including the program name) and run. Returns 0 on success,
/// 2 on usage errors and 1 when the computation fails.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return 2;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cli: &Cli) -> glmm_mispredict::Result<()> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a, cli.seed),
        Command::Predict(a) => cmd_predict(a),
        Command::Msep(a) => cmd_msep(a, cli.seed),
        Command::Simulate(a) => cmd_simulate(a, cli.seed),
        Command::Intervals(a) => cmd_intervals(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Scenarios { json } => cmd_scenarios(*json),
        Command::Generate(a) => cmd_generate(a, cli.seed),
    }
}

fn output(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn load_scenario(spec: &str) -> glmm_mispredict::Result<Scenario> {
    if spec.ends_with(".json") || Path::new(spec).is_file() {
        let s: Scenario = serde_json::from_str(&std::fs::read_to_string(spec)?)?;
        s.validate()?;
        Ok(s)
    } else {
        find_scenario(spec)
    }
}

fn cmd_fit(a: &FitArgs, seed: u64) -> glmm_mispredict::Result<()> {
    let ds = ingest_csv(&a.data.data, a.data.schema())?;
    if ds.m() == 0 {
        return Err(Error::InvalidParameter(format!("{} contains no observations", a.data.data.display())));
    }
    let cfg = FitConfig { gh_order: a.gh_order, n_starts: a.starts, ..FitConfig::with_components(a.components) };
    let fitted = fit_ml(&ds, a.family.into(), &cfg, &mut stream(seed, "fit", 0))?;
    eprintln!(
        "m = {}, loglik = {:.6}, converged = {}, evaluations = {}",
        ds.m(),
        fitted.loglik,
        fitted.converged,
        fitted.n_evals
    );
    match &a.out {
        Some(p) => save_model(&fitted, p),
        None => {
            println!("{}", model_to_json(&fitted)?);
            Ok(())
        }
    }
}

fn cmd_predict(a: &PredictArgs) -> glmm_mispredict::Result<()> {
    let model = load_model(&a.model)?;
    let ds = ingest_csv(&a.data.data, a.data.schema())?;
    let preds = ebp_all(&model, &ds)?;
    let mut w = output(a.out.as_deref())?;
    write_predictions(&preds, &mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_msep(a: &MsepArgs, seed: u64) -> glmm_mispredict::Result<()> {
    let mut model = load_model(&a.model)?;
    let ds = ingest_csv(&a.data.data, a.data.schema())?;
    if model.per_cluster.len() != ds.m() {
        model.per_cluster = ebp_all(&model, &ds)?;
    }
    let cfg = FitConfig::with_components(model.theta_hat.components());
    let res = bootstrap_msep(&model, &ds, &cfg, a.bootstrap, a.mode.into(), seed)?;
    eprintln!(
        "mean MSEP = {:.6} (se {:.6}), failed refits = {} of {}",
        res.grand_mean, res.grand_se, res.failures, res.attempted
    );
    if model.theta_hat.family.kind == FamilyKind::Gaussian {
        eprintln!("mean U1 = {:.6}", mean_u1(&model.theta_hat, &ds, 2000, seed)?);
    }
    if let Some(c) = &res.caveat {
        eprintln!("note: {c}");
    }
    let mut w = output(a.out.as_deref())?;
    write_msep_records(&res.per_target, &mut w)?;
    w.flush()?;
    Ok(())
}

fn write_ndjson<T: Serialize>(w: &mut dyn Write, row: &T) -> glmm_mispredict::Result<()> {
    serde_json::to_writer(&mut *w, row)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs, seed: u64) -> glmm_mispredict::Result<()> {
    let scenario = load_scenario(&a.scenario)?;
    if a.fit_components.is_empty() {
        return Err(Error::InvalidParameter("--fit-components is empty".into()));
    }
    let cfgs: Vec<FitConfig> = a.fit_components.iter().map(|&c| FitConfig::with_components(c)).collect();
    let mut w = output(a.out.as_deref())?;
    match a.mode {
        ModeArg::Unconditional => {
            let run = simulated_umsep(&scenario, &cfgs, a.reps, seed)?;
            for r in &run.replicates {
                for (k, v) in r.umsep.iter().enumerate() {
                    write_ndjson(&mut w, &json!({"config": k, "components": cfgs[k].re_components, "rep": r.rep, "umsep": v}))?;
                }
            }
            for s in &run.summaries {
                write_ndjson(
                    &mut w,
                    &json!({"summary": true, "scenario": scenario.name, "config": s.config,
                        "components": s.components, "mean": s.mean, "mc_se": s.mc_se,
                        "n_reps": s.n_reps, "failures": s.failures}),
                )?;
            }
        }
        ModeArg::Conditional => {
            let truth = scenario.truth_theta()?;
            let mut rng = stream(seed, "fixed-u", 0);
            let u: Vec<f64> = (0..scenario.m).map(|_| draw_random_effect(&truth, &mut rng)[0]).collect();
            let runs = simulated_cmsep(&scenario, &u, &cfgs, a.reps, seed)?;
            for (k, run) in runs.iter().enumerate() {
                for rec in &run.result.per_target {
                    write_ndjson(&mut w, &json!({"config": k, "components": cfgs[k].re_components, "cmsep": rec}))?;
                }
                let r = &run.result;
                write_ndjson(
                    &mut w,
                    &json!({"summary": true, "scenario": scenario.name, "config": k,
                        "components": cfgs[k].re_components, "mean": r.grand_mean, "mc_se": r.grand_se,
                        "failures": r.failures, "attempted": r.attempted}),
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_truth(path: &Path) -> glmm_mispredict::Result<Vec<(String, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "cluster,u" => {}
        _ => return Err(Error::Parse { line: 1, msg: "truth file header must be 'cluster,u'".into() }),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let (id, u) = l
                .split_once(',')
                .ok_or_else(|| Error::Parse { line: i + 1, msg: "expected 'cluster,u'".into() })?;
            let u = u
                .trim()
                .parse()
                .map_err(|_| Error::Parse { line: i + 1, msg: format!("non-numeric value '{u}'") })?;
            Ok((id.trim().to_string(), u))
        })
        .collect()
}

fn cmd_intervals(a: &IntervalArgs) -> glmm_mispredict::Result<()> {
    let preds = read_predictions(File::open(&a.predictions)?)?;
    let recs = read_msep_records(File::open(&a.msep)?)?;
    let msep: std::collections::HashMap<&str, f64> = recs.iter().map(|r| (r.target.as_str(), r.msep)).collect();
    let mut w = output(a.out.as_deref())?;
    writeln!(w, "cluster,w,msep,lo,hi")?;
    let mut rows = Vec::with_capacity(preds.len());
    for p in &preds {
        let m = *msep
            .get(p.cluster_id.as_str())
            .ok_or_else(|| Error::InvalidParameter(format!("no MSEP for cluster '{}'", p.cluster_id)))?;
        let (lo, hi) = prediction_interval(p.w, m, a.alpha)?;
        writeln!(w, "{},{},{},{},{}", p.cluster_id, p.w, m, lo, hi)?;
        rows.push((p.cluster_id.as_str(), p.w, m));
    }
    w.flush()?;
    if let Some(t) = &a.truth {
        let truth: std::collections::HashMap<String, f64> = read_truth(t)?.into_iter().collect();
        let draws = rows
            .iter()
            .map(|&(id, w, msep)| {
                let u = *truth
                    .get(id)
                    .ok_or_else(|| Error::InvalidParameter(format!("no true effect for cluster '{id}'")))?;
                Ok(CoverageDraw { u_true: u, w, msep })
            })
            .collect::<glmm_mispredict::Result<Vec<_>>>()?;
        let report = coverage_eval(&draws, a.alpha, a.bins)?;
        let summary = json!({
            "alpha": report.alpha,
            "coverage_marginal": report.coverage_marginal,
            "coverage_by_bin": report.coverage_by_bin,
        });
        match &a.coverage_out {
            Some(p) => std::fs::write(p, serde_json::to_string_pretty(&summary)? + "\n")?,
            None => eprintln!("{}", serde_json::to_string_pretty(&summary)?),
        }
    }
    Ok(())
}

fn cmd_diagnose(a: &DiagnoseArgs) -> glmm_mispredict::Result<()> {
    let model = load_model(&a.model)?;
    let ds = ingest_csv(&a.data.data, a.data.schema())?;
    let preds = ebp_all(&model, &ds)?;
    let w: Vec<f64> = preds.iter().map(|p| p.w).collect();
    std::fs::create_dir_all(&a.out_dir)?;

    let mut qq = BufWriter::new(File::create(a.out_dir.join("qq.csv"))?);
    writeln!(qq, "theoretical,sample")?;
    for (t, s) in qq_data(&w)? {
        writeln!(qq, "{t},{s}")?;
    }
    qq.flush()?;

    let (_, cov) = glmm_mispredict::model::mixture_moments(&model.theta_hat.re_mixture, &model.theta_hat.re_scale);
    let half = 5.0 * cov[(0, 0)].sqrt();
    let grid: Vec<f64> = (0..=400).map(|i| -half + 2.0 * half * i as f64 / 400.0).collect();
    let dens = density_curve(&model.theta_hat, &grid)?;
    let mut dc = BufWriter::new(File::create(a.out_dir.join("density.csv"))?);
    writeln!(dc, "u,density")?;
    for (u, d) in grid.iter().zip(&dens) {
        writeln!(dc, "{u},{d}")?;
    }
    dc.flush()?;

    let report = match shapiro_wilk(&w) {
        Ok((stat, p)) => json!({"n": w.len(), "W": stat, "p": p, "reject_5pct": p < 0.05}),
        Err(e) => json!({"n": w.len(), "error": e.to_string()}),
    };
    let text = serde_json::to_string_pretty(&report)?;
    std::fs::write(a.out_dir.join("shapiro.json"), text.clone() + "\n")?;
    println!("{text}");
    Ok(())
}

fn cmd_scenarios(as_json: bool) -> glmm_mispredict::Result<()> {
    let all = builtin_scenarios();
    let mut out = io::stdout().lock();
    if as_json {
        writeln!(out, "{}", serde_json::to_string_pretty(&all)?)?;
    } else {
        for s in &all {
            writeln!(out, "{}", s.name)?;
        }
    }
    Ok(())
}

fn cmd_generate(a: &GenerateArgs, seed: u64) -> glmm_mispredict::Result<()> {
    let scenario = load_scenario(&a.scenario)?;
    let data = generate(&scenario, &mut stream(seed, "generate", 0))?;
    let mut w = BufWriter::new(File::create(&a.out)?);
    write_csv(&data.dataset, None, &mut w)?;
    w.flush()?;
    if let Some(t) = &a.truth {
        let mut w = BufWriter::new(File::create(t)?);
        writeln!(w, "cluster,u")?;
        for (c, u) in data.dataset.clusters.iter().zip(&data.u_true) {
            writeln!(w, "{},{}", c.id, u)?;
        }
        w.flush()?;
    }
    Ok(())
}
