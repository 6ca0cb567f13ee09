mod config;

use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use qch_ipl::data::{synthesize_traces, window_traces, DatasetShape, LabDataset, WeekWindow};
use qch_ipl::hierarchy::{poisson_levels, GridSpec, LevelDistribution, DEFAULT_MAX_LEVEL};
use qch_ipl::ipl::{AgentTrace, IplConfig};
use qch_ipl::pne::{indifference_residual, solve_pne, DEFAULT_TOL};
use qch_ipl::report::{average_daily_counts, evaluate, fit_model, render_table, FitOptions, ModelKind};
use qch_ipl::{load_lab_dataset, GameSpec64};

/// Fits equilibrium and cognitive-hierarchy models to LUPI game choices.
#[derive(Parser, Debug)]
#[command(name = "qch-ipl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the Poisson-Nash equilibrium and write it as `action,probability`.
    #[command(args_override_self = true)]
    Pne(PneArgs),
    /// Fit a model per week and emit one JSON report per line.
    #[command(args_override_self = true)]
    Fit(FitArgs),
    /// Write average daily frequencies with model overlays.
    #[command(args_override_self = true)]
    Hist(HistArgs),
    /// Generate a synthetic choice dataset.
    #[command(args_override_self = true)]
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct GameArgs {
    /// Highest number a player may choose.
    #[arg(long, default_value_t = 99)]
    k: usize,
    /// Expected number of players.
    #[arg(long, default_value_t = 26.9)]
    n: f64,
    #[arg(long, default_value_t = 1.0)]
    prize: f64,
}

impl GameArgs {
    fn spec(&self) -> Result<GameSpec64> {
        Ok(GameSpec64::new(self.k, self.n, self.prize)?)
    }
}

#[derive(Args, Debug)]
struct PneArgs {
    #[command(flatten)]
    game: GameArgs,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Which rounds a fit covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum WeekSelector {
    One(u32),
    /// Every week separately.
    All,
    /// All rounds as a single window.
    Full,
}

impl FromStr for WeekSelector {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "all" => Ok(WeekSelector::All),
            "full" => Ok(WeekSelector::Full),
            w => w
                .parse()
                .map(WeekSelector::One)
                .map_err(|_| format!("expected a week number, `all` or `full`, got `{w}`")),
        }
    }
}

impl fmt::Display for WeekSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeekSelector::One(w) => write!(f, "{w}"),
            WeekSelector::All => f.write_str("all"),
            WeekSelector::Full => f.write_str("full"),
        }
    }
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Choice table with header `participant,round,choice`.
    #[arg(long)]
    data: PathBuf,
    /// Week number, `all` (each week) or `full` (every round at once).
    #[arg(long, default_value_t = WeekSelector::All)]
    week: WeekSelector,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Poisson mean of the level distribution (qch).
    #[arg(long)]
    tau: Option<f64>,
    /// Precision grid `lo:hi:count`.
    #[arg(long, default_value_t = GridSpec::default())]
    lambda_grid: GridSpec,
    /// Highest reasoning level.
    #[arg(long, default_value_t = DEFAULT_MAX_LEVEL)]
    levels: usize,
    /// Convergence threshold of the population update (qch-ipl).
    #[arg(long, default_value_t = IplConfig::default().epsilon)]
    epsilon: f64,
    #[arg(long, default_value_t = IplConfig::default().max_iter)]
    max_iter: usize,
    /// Random initializations per grid point (qch-ipl).
    #[arg(long, default_value_t = FitOptions::default().restarts)]
    restarts: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ModelArgs {
    fn options(&self, spec: GameSpec64) -> FitOptions {
        FitOptions {
            spec,
            tau: self.tau,
            grid: self.lambda_grid.clone(),
            ipl: IplConfig {
                max_level: self.levels,
                epsilon: self.epsilon,
                max_iter: self.max_iter,
            },
            restarts: self.restarts,
            seed: self.seed,
            ..FitOptions::default()
        }
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    game: GameArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model_args: ModelArgs,
    /// pne, qch or qch-ipl.
    #[arg(long, default_value_t = ModelKind::QchIpl)]
    model: ModelKind,
    /// Render a comparison table instead of JSON lines.
    #[arg(long)]
    pretty: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct HistArgs {
    #[command(flatten)]
    game: GameArgs,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model_args: ModelArgs,
    /// Model to overlay; repeat for several.
    #[arg(long)]
    model: Vec<ModelKind>,
    /// Highest action listed.
    #[arg(long, default_value_t = 20)]
    cutoff: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[command(flatten)]
    game: GameArgs,
    /// One agent per line: comma-separated level weights `w_0,...,w_m`.
    #[arg(long, conflicts_with = "preset")]
    betas: Option<PathBuf>,
    /// Level distribution shared by every agent: `uniform`, `poisson:TAU` or `point:L`.
    #[arg(long, default_value = "uniform")]
    preset: String,
    /// Highest reasoning level (presets only).
    #[arg(long, default_value_t = DEFAULT_MAX_LEVEL)]
    levels: usize,
    #[arg(long)]
    lambda: f64,
    #[arg(long, default_value_t = 49)]
    rounds: usize,
    /// Number of agents (presets only).
    #[arg(long, default_value_t = 38)]
    agents: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Raised for invalid flag combinations detected after parsing.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

fn is_usage(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.is::<UsageError>() || matches!(e.downcast_ref::<qch_ipl::Error>(), Some(qch_ipl::Error::InvalidArgument(_)))
    })
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn cmd_pne(args: &PneArgs) -> Result<()> {
    let spec = args.game.spec()?;
    let p = solve_pne(&spec, DEFAULT_TOL, None)?;
    let residual = indifference_residual(&p, &spec)?;
    let mut out = output(args.out.as_deref())?;
    writeln!(out, "action,probability")?;
    for (i, x) in p.probs().iter().enumerate() {
        writeln!(out, "{},{x:e}", i + 1)?;
    }
    out.flush()?;
    eprintln!("indifference residual: {residual:e}");
    Ok(())
}

/// A window of rounds to fit, labelled by week when it is one.
struct Window {
    week: Option<u32>,
    first: u32,
    last: u32,
}

fn windows(ds: &LabDataset, selector: WeekSelector) -> Result<Vec<Window>> {
    let total = ds.max_round();
    let week = |w: u32| -> Result<Window> {
        let ww = match WeekWindow::new(w, total) {
            Ok(ww) => ww,
            Err(e) => return usage(e.to_string()),
        };
        Ok(Window {
            week: Some(w),
            first: *ww.rounds().start(),
            last: *ww.rounds().end(),
        })
    };
    match selector {
        WeekSelector::One(w) => Ok(vec![week(w)?]),
        WeekSelector::All => {
            if ds.week_count() == 0 {
                return usage(format!("dataset has {total} rounds, fewer than one week"));
            }
            (1..=ds.week_count()).map(week).collect()
        }
        WeekSelector::Full => Ok(vec![Window {
            week: None,
            first: 1,
            last: total,
        }]),
    }
}

fn load(args: &DataArgs, spec: &GameSpec64) -> Result<LabDataset> {
    let k = u32::try_from(spec.k()).context("k does not fit in 32 bits")?;
    load_lab_dataset(&args.data, DatasetShape::open(k)).with_context(|| format!("loading {}", args.data.display()))
}

fn traces(ds: &LabDataset, w: &Window) -> Result<Vec<AgentTrace<f64>>> {
    Ok(window_traces(ds, w.first..=w.last)?)
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let spec = args.game.spec()?;
    let opts = args.model_args.options(spec);
    if args.model == ModelKind::Qch && opts.tau.is_none() {
        return usage("--model qch needs --tau");
    }
    let ds = load(&args.data, &spec)?;
    let mut reports = Vec::new();
    for w in windows(&ds, args.data.week)? {
        let traces = traces(&ds, &w)?;
        let fit = fit_model(args.model, &traces, &opts)?;
        if fit.converged == Some(false) {
            eprintln!("warning: population update did not converge for {}", label(&w));
        }
        reports.push(evaluate(&fit, &traces, w.week, (w.first, w.last), &opts)?);
    }
    let mut out = output(args.out.as_deref())?;
    if args.pretty {
        write!(out, "{}", render_table(&reports))?;
    } else {
        for r in &reports {
            writeln!(out, "{}", r.to_json())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn label(w: &Window) -> String {
    match w.week {
        Some(week) => format!("week {week}"),
        None => format!("rounds {}..={}", w.first, w.last),
    }
}

fn cmd_hist(args: &HistArgs) -> Result<()> {
    let spec = args.game.spec()?;
    let opts = args.model_args.options(spec);
    if args.cutoff == 0 || args.cutoff > spec.k() {
        return usage(format!("--cutoff must lie in 1..={}", spec.k()));
    }
    if args.model.contains(&ModelKind::Qch) && opts.tau.is_none() {
        return usage("--model qch needs --tau");
    }
    let ds = load(&args.data, &spec)?;
    let ws = windows(&ds, args.data.week)?;
    let [w] = ws.as_slice() else {
        return usage("hist needs a single week number or `full`");
    };
    let traces = traces(&ds, w)?;
    let daily = average_daily_counts(&traces)?;
    let scale = traces.len() as f64;
    let overlays = args
        .model
        .iter()
        .map(|&m| Ok(fit_model(m, &traces, &opts)?.prediction.into_vec()))
        .collect::<Result<Vec<_>>>()?;

    let mut out = output(args.out.as_deref())?;
    write!(out, "action,empirical")?;
    for m in &args.model {
        write!(out, ",{m}")?;
    }
    writeln!(out)?;
    for a in 0..args.cutoff {
        write!(out, "{},{}", a + 1, daily[a])?;
        for o in &overlays {
            write!(out, ",{}", o[a] * scale)?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn preset_betas(preset: &str, levels: usize) -> Result<LevelDistribution<f64>> {
    let parse = |v: &str| -> Result<f64> {
        match v.parse() {
            Ok(x) => Ok(x),
            Err(_) => usage(format!("bad preset parameter `{v}`")),
        }
    };
    Ok(match preset.split_once(':') {
        None if preset == "uniform" => LevelDistribution::uniform(levels),
        Some(("poisson", tau)) => poisson_levels(parse(tau)?, levels)?,
        Some(("point", l)) => {
            let l = parse(l)?;
            if l.fract() != 0.0 || l < 0.0 {
                return usage(format!("point level must be a non-negative integer, got {l}"));
            }
            LevelDistribution::point_mass(levels, l as usize)?
        }
        _ => return usage(format!("unknown preset `{preset}` (expected uniform, poisson:TAU or point:L)")),
    })
}

fn read_betas(path: &Path) -> Result<Vec<LevelDistribution<f64>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, line)| {
            let weights = line
                .split(',')
                .map(|w| w.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .with_context(|| format!("{}:{}: bad weight", path.display(), i + 1))?;
            LevelDistribution::new(weights).with_context(|| format!("{}:{}", path.display(), i + 1))
        })
        .collect()
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let spec = args.game.spec()?;
    let betas = match &args.betas {
        Some(path) => read_betas(path)?,
        None => {
            if args.agents == 0 {
                return usage("--agents must be at least 1");
            }
            vec![preset_betas(&args.preset, args.levels)?; args.agents]
        }
    };
    if betas.is_empty() {
        bail!("no agents in the betas file");
    }
    let traces = synthesize_traces(&betas, args.lambda, &spec, args.rounds, args.seed)?;
    let ds = LabDataset::from_traces(&traces)?;
    let file = File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    ds.write(BufWriter::new(file))?;
    eprintln!(
        "wrote {} choices ({} agents x {} rounds) to {}",
        ds.record_count(),
        betas.len(),
        args.rounds,
        args.out.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Pne(a) => cmd_pne(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Hist(a) => cmd_hist(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn main() -> ExitCode {
    let args = match config::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_usage(&e) { 2 } else { 1 })
        }
    }
}
