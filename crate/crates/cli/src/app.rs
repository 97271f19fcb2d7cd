use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use storage_arb::config::Config;
use storage_arb::par;

use crate::error::{CliError, Kind, Result};
use crate::manifest::RunManifest;
use crate::stages::{self, Ctx};

#[derive(Debug, Parser)]
#[command(
    name = "storage-arb",
    version,
    about = "Battery arbitrage assessment pipeline"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Run configuration (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads, 0 for the runtime default.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Hourly price and daily gap statistics.
    Stats {
        /// Single price file instead of every configured country.
        #[arg(long, requires = "zone")]
        input: Option<PathBuf>,
        #[arg(long)]
        zone: Option<String>,
        #[arg(long)]
        gap_policy: Option<String>,
        #[arg(long)]
        day_boundary: Option<String>,
    },
    /// Schedules one reference configuration and runs it to retirement.
    Optimize {
        #[arg(long, requires = "zone")]
        prices: Option<PathBuf>,
        #[arg(long)]
        zone: Option<String>,
        /// `monolithic` or `rolling:<window>:<overlap>`.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        mip_gap: Option<f64>,
        #[arg(long)]
        converter_mw: Option<f64>,
    },
    /// Capital costs and valuation of optimized runs.
    Finance {
        #[arg(long)]
        countries: Option<PathBuf>,
        /// Yearly results (JSON) valued for every country.
        #[arg(long)]
        ledger: Option<PathBuf>,
        #[arg(long)]
        rate_variant: Option<String>,
    },
    /// Converter size by battery cost grid for every country.
    Sweep {
        #[arg(long)]
        prices_dir: Option<PathBuf>,
        #[arg(long)]
        countries: Option<PathBuf>,
    },
    /// Mixed-model regressions of NPV and IRR.
    Regress {
        /// Regression table; defaults to the sweep output.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated responses (`npv`, `irr`).
        #[arg(long)]
        response: Option<String>,
        /// Comma-separated model levels (`I`, `II`, `III`).
        #[arg(long)]
        model: Option<String>,
    },
    /// Summary tables built from earlier outputs.
    Report,
    /// Every stage in order.
    Pipeline {
        /// Skip stages whose recorded outputs are unchanged.
        #[arg(long)]
        resume: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Stats { .. } => "stats",
            Command::Optimize { .. } => "optimize",
            Command::Finance { .. } => "finance",
            Command::Sweep { .. } => "sweep",
            Command::Regress { .. } => "regress",
            Command::Report => "report",
            Command::Pipeline { .. } => "pipeline",
        }
    }
}

fn absolute(p: &Path) -> String {
    std::path::absolute(p)
        .unwrap_or_else(|_| p.to_path_buf())
        .display()
        .to_string()
}

fn set(cfg: Config, key: &str, value: Option<String>) -> Result<Config> {
    match value {
        Some(v) => cfg.with(key, &v).map_err(|e| CliError::config("config", e)),
        None => Ok(cfg),
    }
}

/// Configuration with file values, then command-line overrides.
fn configure(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.global.config {
        Some(p) => Config::load(p).map_err(|e| CliError::config("config", e))?,
        None => "".parse().map_err(|e| CliError::config("config", e))?,
    };
    let path = |p: &Option<PathBuf>| p.as_deref().map(absolute);
    cfg = set(cfg, "output.dir", path(&cli.global.out))?;
    cfg = set(
        cfg,
        "run.threads",
        cli.global.threads.map(|v| v.to_string()),
    )?;
    cfg = set(cfg, "run.seed", cli.global.seed.map(|v| v.to_string()))?;
    match &cli.command {
        Command::Stats {
            gap_policy,
            day_boundary,
            ..
        } => {
            cfg = set(cfg, "prices.gap_policy", gap_policy.clone())?;
            cfg = set(cfg, "prices.day_boundary", day_boundary.clone())?;
        }
        Command::Optimize {
            strategy,
            mip_gap,
            converter_mw,
            ..
        } => {
            cfg = set(cfg, "optimizer.strategy", strategy.clone())?;
            cfg = set(cfg, "optimizer.mip_gap", mip_gap.map(|v| v.to_string()))?;
            cfg = set(
                cfg,
                "converter.power_mw",
                converter_mw.map(|v| v.to_string()),
            )?;
        }
        Command::Finance {
            countries,
            rate_variant,
            ..
        } => {
            cfg = set(cfg, "finance.countries", path(countries))?;
            cfg = set(cfg, "finance.rate_variant", rate_variant.clone())?;
        }
        Command::Sweep {
            prices_dir,
            countries,
        } => {
            cfg = set(cfg, "prices.dir", path(prices_dir))?;
            cfg = set(cfg, "finance.countries", path(countries))?;
        }
        Command::Regress {
            response, model, ..
        } => {
            cfg = set(cfg, "regress.responses", response.clone())?;
            cfg = set(cfg, "regress.models", model.clone())?;
        }
        Command::Report | Command::Pipeline { .. } => {}
    }
    Ok(cfg)
}

/// Stage order of the full pipeline.
pub const STAGES: [&str; 6] = ["stats", "optimize", "finance", "sweep", "regress", "report"];

fn countries(ctx: &Ctx) -> Vec<String> {
    ctx.cfg
        .countries_file()
        .ok()
        .and_then(|p| stages::load_countries(&p, "config").ok())
        .map(|v| v.into_iter().map(|c| c.country).collect())
        .unwrap_or_default()
}

/// Files a pipeline stage produces.
pub fn stage_outputs(ctx: &Ctx, stage: &str) -> Vec<PathBuf> {
    let names: Vec<String> = match stage {
        "stats" => vec![stages::STATS.into()],
        "optimize" => countries(ctx)
            .iter()
            .flat_map(|c| [format!("schedules/{c}.csv"), format!("yearly/{c}.json")])
            .collect(),
        "finance" => {
            let mut v = vec![stages::CAPITAL.to_string(), stages::FINANCE.to_string()];
            v.extend(
                countries(ctx)
                    .iter()
                    .map(|c| format!("ledgers/{c}__{c}.csv")),
            );
            v
        }
        "sweep" => vec![stages::GRID.into(), stages::REGRESSION.into()],
        "regress" => {
            let mut v: Vec<String> = ctx
                .cfg
                .responses()
                .unwrap_or_default()
                .into_iter()
                .flat_map(|r| {
                    [
                        stages::coefficient_file(r),
                        stages::lr_file(r),
                        stages::prediction_file(r),
                    ]
                })
                .collect();
            v.push(stages::SELFCHECK.into());
            v
        }
        "report" => stages::REPORT_FILES.iter().map(|s| s.to_string()).collect(),
        _ => Vec::new(),
    };
    names.into_iter().map(|n| ctx.out.join(n)).collect()
}

fn run_stage(ctx: &Ctx, stage: &str) -> Result<()> {
    match stage {
        "stats" => stages::stats(ctx),
        "optimize" => stages::optimize(ctx),
        "finance" => stages::finance(ctx),
        "sweep" => stages::sweep(ctx),
        "regress" => stages::regress(ctx),
        "report" => stages::report(ctx),
        _ => unreachable!("unknown stage {stage}"),
    }
}

fn input_files(ctx: &Ctx, cli: &Cli) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = cli.global.config.iter().cloned().collect();
    if let Ok(p) = ctx.cfg.countries_file() {
        v.push(p);
    }
    if let Ok(dir) = ctx.cfg.prices_dir() {
        v.extend(countries(ctx).iter().map(|c| stages::price_file(&dir, c)));
    }
    match &cli.command {
        Command::Stats { input: Some(p), .. }
        | Command::Optimize {
            prices: Some(p), ..
        } => v.push(p.clone()),
        Command::Finance {
            ledger: Some(p), ..
        }
        | Command::Regress { data: Some(p), .. } => v.push(p.clone()),
        _ => {}
    }
    v.retain(|p| p.exists());
    v
}

fn single(ctx: &Ctx, command: &Command) -> Result<Vec<PathBuf>> {
    let outputs = match command {
        Command::Stats {
            input: Some(input),
            zone,
            ..
        } => {
            const S: &str = "stats";
            let zone = zone.as_deref().expect("clap requires zone");
            let policy = ctx.cfg.gap_policy().map_err(|e| CliError::config(S, e))?;
            let days = ctx.cfg.day_boundary().map_err(|e| CliError::config(S, e))?;
            let series = stages::load_series(input, zone, policy, S)?;
            let row = stages::stats_row(&series, days, S)?;
            stages::write_stats(stages::create(&ctx.path(stages::STATS), S)?, &[row], S)?;
            vec![ctx.path(stages::STATS)]
        }
        Command::Optimize {
            prices: Some(prices),
            zone,
            ..
        } => {
            const S: &str = "optimize";
            let zone = zone.as_deref().expect("clap requires zone");
            let policy = ctx.cfg.gap_policy().map_err(|e| CliError::config(S, e))?;
            let series = stages::load_series(prices, zone, policy, S)?;
            stages::optimize_series(ctx, &series, &ctx.out, S)?;
            vec![
                ctx.out.join(format!("schedules/{zone}.csv")),
                ctx.out.join(format!("yearly/{zone}.json")),
            ]
        }
        Command::Finance {
            ledger: Some(ledger),
            ..
        } => {
            const S: &str = "finance";
            let file = ctx
                .cfg
                .countries_file()
                .map_err(|e| CliError::config(S, e))?;
            let countries = stages::load_countries(&file, S)?;
            stages::capital(ctx, &countries, S)?;
            let name = ledger
                .file_stem()
                .map_or("ledger".into(), |s| s.to_string_lossy().into_owned());
            let results = stages::read_yearly(ledger, S)?;
            stages::value_ledgers(ctx, &[(String::new(), name, results)], &countries, S)?;
            vec![ctx.path(stages::CAPITAL), ctx.path(stages::FINANCE)]
        }
        Command::Regress {
            data: Some(data), ..
        } => {
            const S: &str = "regress";
            let table = stages::read_dataset(data, S)?;
            let responses = ctx.cfg.responses().map_err(|e| CliError::config(S, e))?;
            let models = ctx.cfg.models().map_err(|e| CliError::config(S, e))?;
            stages::regress_data(ctx, &table, &responses, &models, S)?;
            stage_outputs(ctx, "regress")
        }
        other => {
            let name = other.name();
            run_stage(ctx, name)?;
            stage_outputs(ctx, name)
        }
    };
    Ok(outputs)
}

fn execute(cli: &Cli, manifest: &mut Option<(RunManifest, PathBuf)>) -> Result<()> {
    let cfg = configure(cli)?;
    let out = cfg
        .output_dir()
        .map_err(|e| CliError::config("config", e))?;
    let seed = cfg.seed().map_err(|e| CliError::config("config", e))?;
    let threads = cfg.threads().map_err(|e| CliError::config("config", e))?;
    if threads > 0 {
        par::init_threads(threads);
    }
    let ctx = Ctx {
        cfg,
        out: out.clone(),
    };
    let previous = RunManifest::read(&out);
    let mut m = RunManifest::new(cli.command.name(), ctx.cfg.snapshot(), seed, threads);
    m.record_inputs(&input_files(&ctx, cli));
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::data("config", format!("{}: {e}", out.display())))?;
    m.write(&out).map_err(|e| CliError::data("config", e))?;
    let (m, _) = manifest.insert((m, out.clone()));

    match &cli.command {
        Command::Pipeline { resume } => {
            let reusable = previous.filter(|p| *resume && p.config == m.config);
            for stage in STAGES {
                let started = Instant::now();
                let outputs = stage_outputs(&ctx, stage);
                if reusable
                    .as_ref()
                    .is_some_and(|p| p.stage_intact(stage, &outputs, &out))
                {
                    m.record_stage(stage, "resumed", started, &outputs, &out);
                    continue;
                }
                let r = run_stage(&ctx, stage);
                m.record_stage(
                    stage,
                    if r.is_ok() { "ran" } else { "failed" },
                    started,
                    &outputs,
                    &out,
                );
                r?;
                m.write(&out).map_err(|e| CliError::data(stage, e))?;
            }
        }
        command => {
            let started = Instant::now();
            let r = single(&ctx, command);
            let outputs = r
                .as_ref()
                .cloned()
                .unwrap_or_else(|_| stage_outputs(&ctx, command.name()));
            m.record_stage(
                command.name(),
                if r.is_ok() { "ran" } else { "failed" },
                started,
                &outputs,
                &out,
            );
            r?;
        }
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut manifest = None;
    let result = execute(&cli, &mut manifest);
    if let Some((m, dir)) = manifest.as_mut() {
        match &result {
            Ok(()) => m.status = "ok".into(),
            Err(e) => {
                m.status = "failed".into();
                m.error = Some(e.to_string());
            }
        }
        if let Err(e) = m.write(dir) {
            eprintln!("could not write manifest: {e}");
        }
    }
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.kind == Kind::Config {
                eprintln!(
                    "hint: see `storage-arb --help` and the configuration keys in the README"
                );
            }
            e.code() as i32
        }
    }
}
