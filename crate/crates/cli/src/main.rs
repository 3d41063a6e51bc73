use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mvpb::bias::{Estimator, Scope};
use mvpb::sim::{
    power_sweep, replicate_table1, run_cell, write_cells_csv, write_power_csv, Budget, RunOptions, Selection,
    SimScenario, TAU2_GRID,
};
use mvpb::{run_variant, TestVariant};
use mvpb_cli::report::{format_table, hint, write_results_csv, Row};
use mvpb_cli::{exit, ingest, select_variants, ColumnMap, Combine, EffectScale, IngestError, IngestSpec, MethodArgs, MethodChoice};

#[derive(Parser)]
#[command(name = "mvpb", version, about = "Publication-bias tests for bivariate meta-analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run bias tests on a dataset
    Test(TestArgs),
    /// Simulate one scenario cell and report rejection rates
    Simulate(SimulateArgs),
    /// Run the Type I error grid or the power sweep
    Replicate(ReplicateArgs),
    /// Rewrite a dataset in the canonical CSV layout
    Canonicalize(CanonicalizeArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Input CSV with a header row
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "study")]
    id_col: String,
    #[arg(long, default_value = "y1")]
    y1_col: String,
    #[arg(long, default_value = "se1")]
    se1_col: String,
    #[arg(long, default_value = "y2")]
    y2_col: String,
    #[arg(long, default_value = "se2")]
    se2_col: String,
    #[arg(long, default_value = "rho_w")]
    rho_col: String,
    /// Token marking absent values (empty fields are always absent)
    #[arg(long, default_value = "")]
    missing: String,
    /// Effect scale of the outcomes: logit, log-odds-ratio or raw
    #[arg(long)]
    scale: Option<EffectScale>,
    /// Within-study correlation imputed for complete rows that lack one
    #[arg(long, allow_hyphen_values = true)]
    default_rho_w: Option<f64>,
    /// Names of the two outcomes, comma separated
    #[arg(long, value_delimiter = ',', num_args = 2)]
    outcome_names: Option<Vec<String>>,
}

impl InputArgs {
    fn spec(&self) -> IngestSpec {
        let mut spec = IngestSpec::new(&self.input);
        spec.columns = ColumnMap {
            id: self.id_col.clone(),
            y: [self.y1_col.clone(), self.y2_col.clone()],
            se: [self.se1_col.clone(), self.se2_col.clone()],
            rho_w: self.rho_col.clone(),
        };
        spec.missing = self.missing.clone();
        spec.scale = self.scale;
        spec.default_rho_w = self.default_rho_w;
        if let Some(names) = &self.outcome_names {
            spec.outcome_names = [names[0].clone(), names[1].clone()];
        }
        spec
    }
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "all")]
    method: Vec<MethodChoice>,
    /// Combined-measure variants of the univariate tests
    #[arg(long, value_enum, value_delimiter = ',', default_value = "none")]
    combine: Vec<Combine>,
    #[arg(long, default_value_t = 0.10)]
    alpha: f64,
    /// Also write the results as CSV
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    methods: MethodArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML scenario file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    tau2: Option<f64>,
    /// Published studies per meta-analysis
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    rho_w: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    rho_b: Option<f64>,
    /// none, complete or partial
    #[arg(long)]
    selection: Option<Selection>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0.10)]
    alpha: f64,
    /// Output CSV (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    methods: MethodArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Experiment {
    /// Null rejection rates over the tau2 x n grid
    Table1,
    /// Raw and size-adjusted power against tau2
    Power,
}

#[derive(Args)]
struct ReplicateArgs {
    #[arg(value_enum)]
    experiment: Experiment,
    /// desk (reduced grid) or full
    #[arg(long, default_value = "desk")]
    budget: Budget,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, allow_hyphen_values = true)]
    rho_w: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    rho_b: Option<f64>,
    /// Selection for the power sweep
    #[arg(long, default_value = "complete")]
    selection: Selection,
    /// Studies per meta-analysis for the power sweep
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 0.10)]
    alpha: f64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    methods: MethodArgs,
}

#[derive(Args)]
struct CanonicalizeArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// An error tagged with its exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait Tag<T> {
    fn tag(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Tag<T> for Result<T, E> {
    fn tag(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

fn check_alpha(alpha: f64) -> Result<(), Failure> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(anyhow!("--alpha must lie in (0, 1), got {alpha}")).tag(exit::CONFIG)
    }
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load(input: &InputArgs) -> Result<mvpb_cli::Ingested, Failure> {
    let spec = input.spec();
    let got = match ingest(&spec) {
        Ok(got) => got,
        Err(IngestError::Empty(diags)) => {
            for d in &diags {
                eprintln!("rejected {d}");
            }
            return Err(IngestError::Empty(diags))
                .with_context(|| format!("ingesting {}", spec.path.display()))
                .tag(exit::INGEST);
        }
        Err(e) => {
            let code = match e {
                IngestError::AmbiguousMissingToken(_) | IngestError::InvalidDefault(_) => exit::CONFIG,
                _ => exit::INGEST,
            };
            return Err(e).with_context(|| format!("ingesting {}", spec.path.display())).tag(code);
        }
    };
    for d in &got.diagnostics {
        eprintln!("warning: skipped {d}");
    }
    if got.imputed_rho > 0 {
        eprintln!(
            "note: imputed rho_w = {} for {} complete stud{}",
            input.default_rho_w.unwrap_or_default(),
            got.imputed_rho,
            if got.imputed_rho == 1 { "y" } else { "ies" }
        );
    }
    Ok(got)
}

fn cmd_test(args: &TestArgs) -> Result<(), Failure> {
    check_alpha(args.alpha)?;
    let got = load(&args.input)?;
    let data = &got.dataset;
    let variants = select_variants(&args.method, &args.combine);
    if variants.iter().any(|v| v.scope == Scope::Combined) && args.input.scale != Some(EffectScale::Logit) {
        eprintln!("warning: the log DOR combination assumes logit sensitivity and specificity; declare --scale logit");
    }
    let suite = args.methods.suite(Estimator::L0);
    let rows: Vec<Row> = variants.iter().map(|&v| (v, run_variant(data, v, &suite))).collect();

    println!(
        "{} studies ({} complete, {} partial); outcomes: {}, {}",
        data.len(),
        data.m_complete(),
        data.m_partial(),
        data.outcome_names()[0],
        data.outcome_names()[1]
    );
    print!("{}", format_table(&rows, args.alpha));
    let failed: Vec<&TestVariant> = rows.iter().filter(|(_, r)| r.is_err()).map(|(v, _)| v).collect();
    for (v, r) in &rows {
        if let Err(e) = r {
            eprintln!("error: {v}: {e}");
            if let Some(h) = hint(e) {
                eprintln!("  hint: {h}");
            }
        }
    }
    if let Some(path) = &args.out {
        let mut w = output(Some(path)).tag(exit::CONFIG)?;
        write_results_csv(&mut w, &rows, args.alpha)
            .and_then(|_| w.flush())
            .with_context(|| format!("writing {}", path.display()))
            .tag(exit::CONFIG)?;
    }
    if !failed.is_empty() {
        return Err(anyhow!("{} of {} tests could not be computed", failed.len(), rows.len())).tag(exit::COMPUTE);
    }
    Ok(())
}

fn scenario_from(args: &SimulateArgs) -> anyhow::Result<SimScenario> {
    let mut s = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SimScenario::default(),
    };
    if let Some(v) = args.tau2 {
        s.tau2 = v;
    }
    if let Some(v) = args.n {
        s.n_published = v;
    }
    if let Some(v) = args.reps {
        s.replicates = v;
    }
    if let Some(v) = args.rho_w {
        s.rho_w = v;
    }
    if let Some(v) = args.rho_b {
        s.rho_b = v;
    }
    if let Some(v) = args.selection {
        s.selection = v;
    }
    if let Some(v) = args.seed {
        s.seed = v;
    }
    s.validate()?;
    Ok(s)
}

fn run_options(alpha: f64, methods: &MethodArgs) -> RunOptions {
    RunOptions {
        alpha,
        suite: methods.suite(Estimator::R0),
        ..Default::default()
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    check_alpha(args.alpha)?;
    let scenario = scenario_from(args).tag(exit::CONFIG)?;
    for note in scenario.extensions() {
        eprintln!("note: {note}");
    }
    let cell = run_cell(&scenario, &run_options(args.alpha, &args.methods)).tag(exit::COMPUTE)?;
    let mut w = output(args.out.as_deref()).tag(exit::CONFIG)?;
    write_cells_csv(&mut w, std::slice::from_ref(&cell))
        .and_then(|_| w.flush())
        .context("writing results")
        .tag(exit::CONFIG)
}

fn cmd_replicate(args: &ReplicateArgs) -> Result<(), Failure> {
    check_alpha(args.alpha)?;
    let mut base = SimScenario {
        seed: args.seed,
        ..Default::default()
    };
    if let Some(v) = args.rho_w {
        base.rho_w = v;
    }
    if let Some(v) = args.rho_b {
        base.rho_b = v;
    }
    let opts = run_options(args.alpha, &args.methods);
    let mut w = output(args.out.as_deref()).tag(exit::CONFIG)?;
    let written = match args.experiment {
        Experiment::Table1 => {
            base.validate().tag(exit::CONFIG)?;
            let cells = replicate_table1(args.budget, &base, &opts).tag(exit::COMPUTE)?;
            write_cells_csv(&mut w, &cells)
        }
        Experiment::Power => {
            if args.selection == Selection::None {
                return Err(anyhow!("the power sweep needs --selection complete or partial")).tag(exit::CONFIG);
            }
            let (tau2s, reps): (Vec<f64>, usize) = match args.budget {
                Budget::Desk => (vec![0.5, 1.9], 1000),
                Budget::Full => (TAU2_GRID.to_vec(), 5000),
            };
            base.n_published = args.n;
            base.replicates = reps;
            base.validate().tag(exit::CONFIG)?;
            let sweep = power_sweep(args.selection, &tau2s, &base, &opts).tag(exit::COMPUTE)?;
            let points: Vec<_> = sweep.into_iter().flat_map(|(_, _, p)| p).collect();
            write_power_csv(&mut w, &points, args.alpha)
        }
    };
    written.and_then(|_| w.flush()).context("writing results").tag(exit::CONFIG)
}

fn cmd_canonicalize(args: &CanonicalizeArgs) -> Result<(), Failure> {
    let got = load(&args.input)?;
    let mut w = output(args.out.as_deref()).tag(exit::CONFIG)?;
    mvpb_cli::write_dataset(&mut w, &got.dataset)
        .and_then(|_| w.flush())
        .context("writing dataset")
        .tag(exit::CONFIG)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Replicate(a) => cmd_replicate(a),
        Command::Canonicalize(a) => cmd_canonicalize(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
