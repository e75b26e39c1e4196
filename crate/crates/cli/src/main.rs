use std::fs::File;
use std::io::BufWriter;
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use copol::figures::{write_figure, FigureId};
use copol::panel::{write_panel, ColumnMap};
use copol::runner::{read_results_csv, replication_csv, write_results_csv, Manifest};
use copol::{load_panel, run_grid, synth_panel, Error, PanelContext, RunConfig, SynthConfig};

/// Monte Carlo study of co-occurring state policies.
#[derive(Parser)]
#[command(name = "copol", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario grid described by a TOML or JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Replications per scenario.
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "COPOL_WORKERS")]
        workers: Option<usize>,
        /// Output directory.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also write per-replication estimates.
        #[arg(long)]
        keep_reps: bool,
    },
    /// Reshape a results CSV into per-metric figure tables.
    Figures {
        #[arg(long)]
        results: PathBuf,
        /// 1, 2, 3, A1, A2 or `all`.
        #[arg(long, default_value = "all")]
        figure: String,
        #[arg(long, default_value = "figures")]
        output: PathBuf,
    },
    /// Check that a panel CSV is complete and well formed.
    Validate {
        csv: PathBuf,
        #[arg(long, default_value = "unit")]
        unit_col: String,
        #[arg(long, default_value = "year")]
        year_col: String,
        #[arg(long, default_value = "outcome_rate")]
        outcome_col: String,
        #[arg(long, default_value = "covariate")]
        covariate_col: String,
        #[arg(long, default_value = "population")]
        population_col: String,
    },
    /// Write a synthetic null-condition panel CSV.
    Synth {
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        units: Option<usize>,
        #[arg(long)]
        years: Option<usize>,
    },
    /// Serve the local JSON API.
    Serve {
        #[arg(long, default_value_t = 8787)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[arg(long, env = "COPOL_WORKERS")]
        workers: Option<usize>,
    },
}

/// Bad input (config, CSV syntax, figure id) exits 2; everything else exits 1.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::InvalidConfig(_) | Error::Parse(_) | Error::UnknownFigure(_)) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            reps,
            seed,
            workers,
            output,
            keep_reps,
        } => cmd_run(&config, reps, seed, workers, output, keep_reps),
        Command::Figures { results, figure, output } => cmd_figures(&results, &figure, &output),
        Command::Validate {
            csv,
            unit_col,
            year_col,
            outcome_col,
            covariate_col,
            population_col,
        } => {
            let columns = ColumnMap {
                unit: unit_col,
                year: year_col,
                outcome_rate: outcome_col,
                covariate: covariate_col,
                population: population_col,
            };
            cmd_validate(&csv, &columns)
        }
        Command::Synth {
            output,
            seed,
            units,
            years,
        } => cmd_synth(&output, seed, units, years),
        Command::Serve {
            port,
            host,
            cache_dir,
            workers,
        } => cmd_serve(copol_service::ServiceConfig {
            host,
            port,
            workers: workers.unwrap_or(1),
            cache_dir,
        }),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if let Some(Error::UnbalancedPanel { missing }) = e.downcast_ref::<Error>() {
                for (unit, year) in missing {
                    eprintln!("  missing: unit={unit} year={year}");
                }
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

fn cmd_run(
    path: &Path,
    reps: Option<usize>,
    seed: Option<u64>,
    workers: Option<usize>,
    output: Option<PathBuf>,
    keep_reps: bool,
) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(r) = reps {
        cfg.reps = r;
    }
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    if workers.is_some() {
        cfg.workers = workers;
    }
    if let Some(o) = output {
        cfg.output.dir = o;
    }
    cfg.output.keep_reps |= keep_reps;
    cfg.check(None).map_err(Error::from)?;

    let ctx = PanelContext::from_source(&cfg.panel_source())?;
    cfg.check(Some(&ctx.panel)).map_err(Error::from)?;

    let grid = cfg.grid_spec();
    let settings = cfg.run_settings(1);
    let results = run_grid(&ctx, &grid, cfg.reps, cfg.master_seed, &settings, None)?;

    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let results_path = dir.join("results.csv");
    write_results_csv(&results, BufWriter::new(create(&results_path)?))?;
    let replications_file = if cfg.output.keep_reps {
        let p = dir.join("replications.csv");
        replication_csv(&results, BufWriter::new(create(&p)?))?;
        Some("replications.csv".to_string())
    } else {
        None
    };
    Manifest {
        artifact: "copol results".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        master_seed: cfg.master_seed,
        panel_digest: ctx.digest.clone(),
        n_cells: grid.cells().len(),
        n_scenarios: results.len(),
        results_file: "results.csv".into(),
        replications_file,
        std_bias_scale: ctx.summary.outcome_sd,
        config: cfg.to_json(),
    }
    .write(&dir.join("manifest.json"))?;

    let failed: usize = results.iter().map(|r| r.n_failed).sum();
    println!(
        "{} scenarios x {} reps ({} failed fits) -> {}",
        results.len(),
        cfg.reps,
        failed,
        results_path.display()
    );
    Ok(())
}

fn create(path: &Path) -> anyhow::Result<File> {
    File::create(path).with_context(|| format!("creating {}", path.display()))
}

fn cmd_figures(results: &Path, figure: &str, output: &Path) -> anyhow::Result<()> {
    let ids: Vec<FigureId> = if figure.eq_ignore_ascii_case("all") {
        FigureId::ALL.to_vec()
    } else {
        vec![figure.parse()?]
    };
    let file = File::open(results).with_context(|| format!("opening {}", results.display()))?;
    let rows = read_results_csv(file)?;
    std::fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
    for id in ids {
        for path in write_figure(&rows, id, output)? {
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn cmd_validate(csv: &Path, columns: &ColumnMap) -> anyhow::Result<()> {
    let panel = load_panel(csv, columns)?;
    println!("balanced: {} units × {} years", panel.n_units(), panel.n_years());
    println!("years: {}-{}", panel.first_year(), panel.last_year());
    println!("digest: {}", panel.digest());
    Ok(())
}

fn cmd_synth(output: &Path, seed: Option<u64>, units: Option<usize>, years: Option<usize>) -> anyhow::Result<()> {
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        seed: seed.unwrap_or(d.seed),
        n_units: units.unwrap_or(d.n_units),
        n_years: years.unwrap_or(d.n_years),
        ..d
    };
    let panel = synth_panel(&cfg)?;
    write_panel(&panel, output)?;
    println!("{} rows -> {}", panel.rows().len(), output.display());
    Ok(())
}

fn cmd_serve(config: copol_service::ServiceConfig) -> anyhow::Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(copol_service::serve(config))?;
    Ok(())
}
