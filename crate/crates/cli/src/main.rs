//! `absgrad` command-line driver.

mod output;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use absgrad::absnormal::{
    extract, AbsNormalPoint, SignatureVector, DEFAULT_ENUM_CAP, DEFAULT_KINK_TOL,
};
use absgrad::gradients::{
    check_likq, check_rank_stability, grad_xi, limiting_gradients_with, AdPreset, XiChoice,
    DEFAULT_RANK_TOL,
};
use absgrad::oracle::{sample_bouligand_with_dump, samples_to_csv, SamplingPlan};
use absgrad::problems::phi_mu;
use absgrad::relunet::{
    sgd_train, Dataset, Head, Loss, NetworkDoc, ReluNetSpec, StepSchedule, TrainConfig,
};
use absgrad::tape::{parse_tape, Tape};
use absgrad::verify::{batch_suite, combination_suite};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use output::{fmt_list, to_json, CliError};

#[derive(Parser)]
#[command(
    name = "absgrad",
    version,
    about = "Generalized gradients of abs-smooth functions"
)]
struct Cli {
    /// Write the main result here instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate phi, z and sigma at a point.
    Eval(EvalArgs),
    /// Backward-mode gradient with a fixed value for the derivative of abs at 0.
    Grad(GradArgs),
    /// Check LIKQ and rank stability at a point.
    Likq(LikqArgs),
    /// Enumerate the piece gradients of every definite successor signature.
    Limiting(LimitingArgs),
    /// Approximate the limiting gradients by sampling nearby differentiable points.
    Sample(SampleArgs),
    /// Run the randomized identity suites.
    Verify(VerifyArgs),
    /// Train a ReLU network with stochastic generalized gradient descent.
    Train(TrainArgs),
    /// Emit plotting data for the phi^mu example.
    Figure(FigureArgs),
}

#[derive(Args, Clone)]
struct ProblemArgs {
    /// Tape JSON file or `builtin:phimu`.
    #[arg(long)]
    problem: String,
    /// Value for constants tagged `mu`.
    #[arg(long, allow_hyphen_values = true)]
    mu: Option<f64>,
    /// Base point, comma separated.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_list)]
    x: Option<List>,
    #[arg(long, default_value_t = DEFAULT_KINK_TOL)]
    kink_tol: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
#[group(id = "policy", required = true, multiple = false, args = ["xi", "preset", "kink_value"])]
struct GradArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Full xi vector; must match sign(z) at inactive switches.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_list)]
    xi: Option<List>,
    /// AD tool whose convention to mimic.
    #[arg(long, value_parser = parse_preset)]
    preset: Option<AdPreset>,
    /// Same value at every active kink.
    #[arg(long, allow_hyphen_values = true)]
    kink_value: Option<f64>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct LikqArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
    rank_tol: f64,
    #[arg(long, default_value_t = DEFAULT_ENUM_CAP)]
    cap: usize,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Args)]
struct LimitingArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[arg(long, default_value_t = DEFAULT_RANK_TOL)]
    rank_tol: f64,
    #[arg(long, default_value_t = DEFAULT_ENUM_CAP)]
    cap: usize,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args, Clone)]
struct PlanArgs {
    #[arg(long, default_value_t = 1e-3)]
    radius: f64,
    #[arg(long, default_value_t = 4096)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Merge radius; defaults to 1e-3 * (1 + largest gradient norm).
    #[arg(long)]
    cluster_tol: Option<f64>,
    /// Use the piece gradient at the base point for each sampled signature.
    #[arg(long)]
    at_anchor: bool,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    #[command(flatten)]
    plan: PlanArgs,
    /// Per-sample CSV (x, sigma, gradient).
    #[arg(long)]
    dump: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Combination,
    Batch,
    All,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = Suite::All)]
    suite: Suite,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Instances per suite; defaults to 200 (combination) and 20 (batch).
    #[arg(long)]
    instances: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Network JSON; weights and biases are optional.
    #[arg(long)]
    network: Option<PathBuf>,
    /// Dataset JSON or `builtin:relu1d`.
    #[arg(long, default_value = "builtin:relu1d")]
    data: String,
    #[arg(long, default_value_t = 200)]
    iterations: usize,
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    /// Step k uses step / (1 + decay * k).
    #[arg(long, default_value_t = 0.0)]
    decay: f64,
    /// Defaults to the full dataset.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Value used at every kink, or a comma-separated vector.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_list, default_value = "0")]
    zeta: List,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Trajectory CSV (iteration, loss, grad_norm).
    #[arg(long)]
    trajectory: Option<PathBuf>,
    /// Trained network JSON.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct FigureArgs {
    #[command(flatten)]
    problem: ProblemArgs,
    /// Emit a grid of phi values instead of gradients.
    #[arg(long)]
    levels: bool,
    /// Grid points per axis.
    #[arg(long, default_value_t = 101)]
    grid: usize,
    /// Half-width of the grid around the base point.
    #[arg(long, default_value_t = 1.0)]
    extent: f64,
    #[command(flatten)]
    plan: PlanArgs,
}

/// Comma-separated numbers.
#[derive(Clone, Debug)]
struct List(Vec<f64>);

fn parse_list(s: &str) -> Result<List, String> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .map_err(|_| format!("`{t}` is not a number"))
                .and_then(|v| {
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(format!("`{t}` is not finite"))
                    }
                })
        })
        .collect::<Result<Vec<_>, _>>()
        .map(List)
}

fn parse_preset(s: &str) -> Result<AdPreset, String> {
    AdPreset::from_name(s).ok_or_else(|| {
        let names: Vec<&str> = AdPreset::ALL.iter().map(|p| p.name()).collect();
        format!("unknown preset `{s}`; expected one of {}", names.join(", "))
    })
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

impl ProblemArgs {
    fn tape(&self) -> Result<Tape, CliError> {
        let mut tape = match self.problem.strip_prefix("builtin:") {
            Some("phimu") => phi_mu(self.mu.unwrap_or(1.0)),
            Some(other) => {
                return Err(CliError::Usage(format!(
                    "unknown builtin problem `{other}`"
                )))
            }
            None => parse_tape(&read(Path::new(&self.problem))?)?,
        };
        if let Some(mu) = self.mu {
            if !mu.is_finite() {
                return Err(CliError::Usage("--mu must be finite".into()));
            }
            if tape.set_param("mu", mu) == 0 {
                return Err(CliError::Usage(
                    "--mu given but the problem has no constant tagged `mu`".into(),
                ));
            }
        }
        Ok(tape)
    }

    fn point(&self, tape: &Tape) -> Vec<f64> {
        self.x
            .clone()
            .map(|l| l.0)
            .unwrap_or_else(|| vec![0.0; tape.n_inputs()])
    }

    fn load(&self) -> Result<(Tape, AbsNormalPoint), CliError> {
        let tape = self.tape()?;
        let x = self.point(&tape);
        let p = extract(&tape, &x, self.kink_tol)?;
        Ok((tape, p))
    }
}

impl PlanArgs {
    fn plan(&self, kink_tol: f64) -> SamplingPlan {
        SamplingPlan {
            radius: self.radius,
            count: self.count,
            seed: self.seed,
            kink_tol,
            cluster_tol: self.cluster_tol,
            at_anchor: self.at_anchor,
        }
    }
}

fn eval(a: &EvalArgs) -> Result<String, CliError> {
    let tape = a.problem.tape()?;
    let x = a.problem.point(&tape);
    let trace = tape.forward_eval(&x, None)?;
    let sigma = SignatureVector::from_values(&trace.z, a.problem.kink_tol);
    Ok(match a.format {
        Format::Json => to_json(&json!({"x": x, "phi": trace.phi, "z": trace.z, "sigma": sigma})),
        _ => format!(
            "phi = {}\nz = {}\nsigma = {}\n",
            output::num(trace.phi),
            fmt_list(&trace.z),
            sigma
        ),
    })
}

fn grad(a: &GradArgs) -> Result<String, CliError> {
    let (_, p) = a.problem.load()?;
    let choice = match (&a.xi, a.preset, a.kink_value) {
        (Some(xi), _, _) => XiChoice::new(&p.sigma, xi.0.clone())?,
        (_, Some(preset), _) => XiChoice::at_kinks(&p.sigma, preset.kink_value())?,
        (_, _, Some(v)) => XiChoice::at_kinks(&p.sigma, v)?,
        _ => unreachable!("clap requires one policy"),
    };
    let g = grad_xi(&p, &choice)?;
    Ok(match a.format {
        Format::Json => {
            to_json(&json!({"x": p.x, "sigma": p.sigma, "xi": choice.as_slice(), "gradient": g}))
        }
        _ => format!("{}\n", fmt_list(&g)),
    })
}

fn likq(a: &LikqArgs) -> Result<String, CliError> {
    let (_, p) = a.problem.load()?;
    let report = check_likq(&p, a.rank_tol);
    let stability = check_rank_stability(&p, a.rank_tol, a.cap)?;
    Ok(match a.format {
        Format::Json => to_json(&json!({"likq": report, "rank_stability": stability})),
        _ => {
            let mut s = format!("{}\n", report.summary());
            s.push_str(&format!("active: {:?}\n", report.active));
            s.push_str(&format!(
                "singular values: {}\n",
                fmt_list(&report.singular_values)
            ));
            let full = stability
                .entries
                .iter()
                .filter(|e| e.rank == stability.required)
                .count();
            s.push_str(&format!(
                "rank stability: {full} of {} signatures have full rank {}\n",
                stability.entries.len(),
                stability.required
            ));
            s
        }
    })
}

fn limiting(a: &LimitingArgs) -> Result<String, CliError> {
    let (_, p) = a.problem.load()?;
    let set = limiting_gradients_with(&p, a.cap, a.rank_tol)?;
    Ok(match a.format {
        Format::Csv => set.to_csv()?,
        _ => to_json(&set),
    })
}

fn sample(a: &SampleArgs) -> Result<String, CliError> {
    let tape = a.problem.tape()?;
    let x = a.problem.point(&tape);
    let (set, dump) = sample_bouligand_with_dump(&tape, &x, &a.plan.plan(a.problem.kink_tol))?;
    if let Some(path) = &a.dump {
        output::write(path, &samples_to_csv(&dump)?)?;
    }
    Ok(match a.format {
        Format::Csv => set.to_csv()?,
        _ => to_json(&set),
    })
}

fn verify(a: &VerifyArgs) -> Result<String, CliError> {
    let mut report = serde_json::Map::new();
    let mut passed = true;
    if matches!(a.suite, Suite::Combination | Suite::All) {
        let r = combination_suite(a.seed, a.instances.unwrap_or(200))?;
        passed &= r.passed;
        report.insert(
            "combination".into(),
            serde_json::to_value(r).expect("report serializes"),
        );
    }
    if matches!(a.suite, Suite::Batch | Suite::All) {
        let r = batch_suite(a.seed, a.instances.unwrap_or(20))?;
        passed &= r.passed;
        report.insert(
            "batch".into(),
            serde_json::to_value(r).expect("report serializes"),
        );
    }
    let text = to_json(&report);
    if passed {
        Ok(text)
    } else {
        Err(CliError::Failed(text))
    }
}

fn train(a: &TrainArgs) -> Result<String, CliError> {
    let (spec, init) = match &a.network {
        Some(path) => NetworkDoc::parse(&read(path)?)?,
        None => (
            ReluNetSpec::new(vec![1, 1, 1], Head::Identity, Loss::Squared)?,
            None,
        ),
    };
    let data = match a.data.strip_prefix("builtin:") {
        Some("relu1d") => Dataset::bundled_1d(),
        Some(other) => {
            return Err(CliError::Usage(format!(
                "unknown builtin dataset `{other}`"
            )))
        }
        None => Dataset::parse(&read(Path::new(&a.data))?)?,
    };
    let zeta = match a.zeta.0.as_slice() {
        [v] => vec![*v; spec.s()],
        z => z.to_vec(),
    };
    let schedule = if a.decay == 0.0 {
        StepSchedule::Constant { step: a.step }
    } else {
        StepSchedule::InverseTime {
            initial: a.step,
            decay: a.decay,
        }
    };
    let config = TrainConfig {
        iterations: a.iterations,
        schedule,
        batch_size: a.batch_size,
        zeta,
        seed: a.seed,
    };
    let tr = sgd_train(&spec, &data, &config, init)?;
    if let Some(path) = &a.trajectory {
        output::write(path, &tr.to_csv()?)?;
    }
    if let Some(path) = &a.checkpoint {
        output::write(path, &(NetworkDoc::checkpoint(&spec, &tr.params)? + "\n"))?;
    }
    Ok(to_json(&json!({
        "iterations": a.iterations,
        "initial_loss": tr.initial_loss,
        "final_loss": tr.final_loss,
        "reduction": tr.reduction(),
        "params": tr.params,
    })))
}

fn figure(a: &FigureArgs) -> Result<String, CliError> {
    let tape = a.problem.tape()?;
    let x = a.problem.point(&tape);
    if a.levels {
        if a.grid < 2 || !(a.extent > 0.0) {
            return Err(CliError::Usage(
                "--grid must be at least 2 and --extent positive".into(),
            ));
        }
        if x.len() != 2 {
            return Err(CliError::Usage(
                "level grids need a two-dimensional problem".into(),
            ));
        }
        let mut rows = Vec::with_capacity(a.grid * a.grid);
        for i in 0..a.grid {
            for j in 0..a.grid {
                let t = |k: usize| -a.extent + 2.0 * a.extent * k as f64 / (a.grid - 1) as f64;
                let pt = [x[0] + t(i), x[1] + t(j)];
                let phi = tape.forward_eval(&pt, None)?.phi;
                rows.push(vec![pt[0], pt[1], phi]);
            }
        }
        return Ok(output::csv(&["x_1", "x_2", "phi"], &rows)?);
    }
    let p = extract(&tape, &x, a.problem.kink_tol)?;
    let set = limiting_gradients_with(&p, DEFAULT_ENUM_CAP, DEFAULT_RANK_TOL)?;
    let mut plan = a.plan.plan(a.problem.kink_tol);
    plan.at_anchor = true;
    let (_, dump) = sample_bouligand_with_dump(&tape, &x, &plan)?;
    let seen: BTreeSet<&SignatureVector> = dump.iter().map(|r| &r.sigma).collect();
    let s = p.s();
    let n = p.n();
    let mut header: Vec<String> = (1..=s).map(|i| format!("sigma_{i}")).collect();
    header.extend((1..=n).map(|k| format!("g_{k}")));
    header.push("sampled".into());
    let rows: Vec<Vec<String>> = set
        .gradients
        .iter()
        .map(|e| {
            let mut row: Vec<String> = e
                .signature
                .as_slice()
                .iter()
                .map(|v| v.to_string())
                .collect();
            row.extend(e.gradient.iter().map(|&g| output::num(g)));
            row.push(
                if seen.contains(&e.signature) {
                    "1"
                } else {
                    "0"
                }
                .into(),
            );
            row
        })
        .collect();
    Ok(output::csv_strings(&header, &rows)?)
}

fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Eval(a) => eval(a),
        Command::Grad(a) => grad(a),
        Command::Likq(a) => likq(a),
        Command::Limiting(a) => limiting(a),
        Command::Sample(a) => sample(a),
        Command::Verify(a) => verify(a),
        Command::Train(a) => train(a),
        Command::Figure(a) => figure(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let first = e
                .to_string()
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ")
                .to_string();
            return output::fail(&CliError::Usage(first));
        }
    };
    match run(&cli).and_then(|text| output::emit(cli.output.as_deref(), &text)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => output::fail(&e),
    }
}
