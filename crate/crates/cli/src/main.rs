//! `cflsim` — command-line front end for the clustered federated learning
//! simulator.
//!
//! Subcommands:
//! - `partition` — materialize one scenario's client shards into a cache
//!   file and print a per-client summary.
//! - `run` — execute the configured scenario × algorithm × seed grid into
//!   a results store (idempotent; `--force` re-executes).
//! - `report` — emit CSV report families from a results store.
//! - `verify` — run the oracle verification battery (no dataset needed).
//!
//! Configuration comes from a TOML file (`--config`); CLI flags override
//! file values. The data directory defaults to `$CFLSIM_DATA_DIR`, then
//! `data/`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 partial
//! failure (some sweep cells or verification suites failed).

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use cflsim_core::data::{partition, save_shards, QSKind, QSSpec};
use cflsim_core::experiment::{
    expand_grid, load_dataset, report, run_all, Config, HetName, ReportKind, ResultsStore,
};
use cflsim_core::oracle::verify_suite;
use cflsim_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "cflsim",
    version,
    about = "Clustered federated learning simulator and benchmark harness",
    after_help = "Exit codes: 0 success, 2 config error, 3 data error, 4 partial failure."
)]
struct Cli {
    /// TOML sweep config; built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Value added to every grid seed (disjoint rerun without editing the
    /// config).
    #[arg(long, global = true, value_name = "N")]
    seed_offset: Option<u64>,

    /// Worker threads for cell-level parallelism (0 = one per CPU).
    /// Overrides the config.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    /// Re-execute completed cells and overwrite a store whose manifest no
    /// longer matches the config.
    #[arg(long, global = true)]
    force: bool,

    /// Results directory. Overrides the config.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one scenario's client shards to a cache file and print a
    /// per-client summary.
    Partition {
        /// Dataset name (a subdirectory of the data directory).
        #[arg(long)]
        dataset: Option<String>,
        /// Heterogeneity kind: rotations, label_swaps, morphology, medical.
        #[arg(long)]
        het: Option<String>,
        /// Quantity-skew regime: nonqs, qs1, qs2.
        #[arg(long)]
        qs: Option<String>,
        /// Partition seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cache file to write (default
        /// `<out-dir>/partitions/<scenario>.bin`).
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Execute the configured grid into the results store.
    Run,
    /// Emit report CSVs from the results store.
    Report {
        /// Report kinds (default: all of tables, delta_heatmap, winrate,
        /// rank, sensitivity).
        kinds: Vec<String>,
    },
    /// Run the oracle verification battery (fast, no dataset required).
    Verify {
        /// Battery seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Load the config (or defaults) and fold in the CLI overrides.
fn effective_config(cli: &Cli) -> Result<Config> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(offset) = cli.seed_offset {
        config.offset_seeds(offset);
    }
    if let Some(workers) = cli.workers {
        config.output.workers = workers;
    }
    if let Some(out_dir) = &cli.out_dir {
        config.output.out_dir = out_dir.clone();
    }
    Ok(config)
}

fn dispatch(cli: Cli) -> Result<u8> {
    let config = effective_config(&cli)?;
    match &cli.command {
        Command::Partition {
            dataset,
            het,
            qs,
            seed,
            out,
        } => cmd_partition(&config, dataset, het, qs, *seed, out),
        Command::Run => cmd_run(&config, cli.force),
        Command::Report { kinds } => cmd_report(&config, kinds),
        Command::Verify { seed } => cmd_verify(*seed),
    }
}

fn cmd_partition(
    config: &Config,
    dataset: &Option<String>,
    het: &Option<String>,
    qs: &Option<String>,
    seed: u64,
    out: &Option<PathBuf>,
) -> Result<u8> {
    let dataset = match dataset {
        Some(d) => d.clone(),
        None => config
            .data
            .datasets
            .first()
            .cloned()
            .ok_or_else(|| Error::Config("no datasets configured".into()))?,
    };
    let het = match het {
        Some(h) => HetName::from_str(h)?,
        None => *config
            .grid
            .heterogeneity
            .first()
            .ok_or_else(|| Error::Config("grid.heterogeneity is empty".into()))?,
    };
    let qs = match qs {
        Some(q) => QSKind::from_str(q)?,
        None => *config
            .grid
            .qs
            .first()
            .ok_or_else(|| Error::Config("grid.qs is empty".into()))?,
    };

    let (train, test) = load_dataset(&config.data.resolve_dir(), &dataset)?;
    let het_spec = het.to_spec(train.num_classes)?;
    let qs_spec = QSSpec::new(
        qs,
        config.scenario.samples_per_label,
        config.scenario.qs_group_sizes.clone(),
    );
    let shards = partition(
        &train,
        &test,
        &het_spec,
        &qs_spec,
        config.scenario.num_clients,
        seed,
    )?;

    let path = match out {
        Some(p) => p.clone(),
        None => {
            let dir = config.output.out_dir.join("partitions");
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            dir.join(format!(
                "{dataset}_{}_{}_s{seed}_n{}.bin",
                het.id(),
                qs.id(),
                config.scenario.num_clients
            ))
        }
    };
    save_shards(&path, &shards, train.side, train.num_classes)?;

    println!(
        "partitioned {dataset} ({} het, {} regime, seed {seed}) into {} clients → {}",
        het.id(),
        qs.id(),
        shards.len(),
        path.display()
    );
    println!("client  het_class  samples_per_label  train_samples");
    for s in &shards {
        println!(
            "{:>6}  {:>9}  {:>17}  {:>13}",
            s.client_id,
            s.het_class,
            s.samples_per_label,
            s.num_train()
        );
    }
    Ok(0)
}

fn cmd_run(config: &Config, force: bool) -> Result<u8> {
    let cells = expand_grid(config);
    eprintln!(
        "sweep: {} cells → {}",
        cells.len(),
        config.output.out_dir.display()
    );
    let (store, summary) = run_all(config, force, true)?;
    println!(
        "executed {}, skipped {}, failed {} (store: {})",
        summary.executed,
        summary.skipped,
        summary.failed,
        store.root.display()
    );
    if summary.failed > 0 {
        for failure in store.load_failures()? {
            eprintln!("failed cell {}: {}", failure.cell.file_stem(), failure.error);
        }
    }
    Ok(summary.exit_code() as u8)
}

fn cmd_report(config: &Config, kinds: &[String]) -> Result<u8> {
    let kinds: Vec<ReportKind> = if kinds.is_empty() {
        ReportKind::ALL.to_vec()
    } else {
        kinds
            .iter()
            .map(|k| ReportKind::from_str(k))
            .collect::<Result<_>>()?
    };
    let store = ResultsStore::open(&config.output.out_dir);
    for kind in kinds {
        for path in report(&store, kind)? {
            println!("wrote {}", path.display());
        }
    }
    Ok(0)
}

fn cmd_verify(seed: u64) -> Result<u8> {
    let outcomes = verify_suite(seed);
    let mut failed = 0;
    for o in &outcomes {
        println!(
            "{} {:<22} ({:>6.2}s)  {}",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.seconds,
            o.detail
        );
        if !o.passed {
            failed += 1;
        }
    }
    println!(
        "{} of {} verification suites passed",
        outcomes.len() - failed,
        outcomes.len()
    );
    Ok(if failed > 0 { 4 } else { 0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_flags_override_config_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.toml");
        std::fs::write(
            &path,
            "[grid]\nseeds = [10, 11]\n[output]\nout_dir = \"from_file\"\nworkers = 2\n",
        )
        .unwrap();

        let cli = Cli::parse_from([
            "cflsim",
            "--config",
            path.to_str().unwrap(),
            "--seed-offset",
            "100",
            "--workers",
            "7",
            "--out-dir",
            "from_flag",
            "run",
        ]);
        let config = effective_config(&cli).unwrap();
        assert_eq!(config.grid.seeds, vec![110, 111]);
        assert_eq!(config.output.workers, 7);
        assert_eq!(config.output.out_dir, PathBuf::from("from_flag"));

        // Without flags the file values stand.
        let cli = Cli::parse_from(["cflsim", "--config", path.to_str().unwrap(), "run"]);
        let config = effective_config(&cli).unwrap();
        assert_eq!(config.grid.seeds, vec![10, 11]);
        assert_eq!(config.output.workers, 2);
        assert_eq!(config.output.out_dir, PathBuf::from("from_file"));
    }

    #[test]
    fn report_kind_names_parse() {
        for name in ["tables", "delta_heatmap", "winrate", "rank", "sensitivity"] {
            assert!(ReportKind::from_str(name).is_ok());
        }
        assert!(ReportKind::from_str("histogram").is_err());
    }
}
