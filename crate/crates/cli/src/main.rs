//! `margpost`: sample, estimate and reproduce evidence tables.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use margpost::chain::io::{load_chain, save_chain};
use margpost::harness::pipeline::{build_model, sample_chain};
use margpost::harness::{
    diagnose_variance, emit_table, emit_variance_table, estimate_from_chain, run_experiment, ConfigFile,
    ExperimentConfig, Preset, PresetKind, TableFormat,
};
use margpost::estimators::EvidenceReport;
use margpost::Error;

const PRESETS: [(&str, &str); 5] = [
    ("table1", include_str!("../../../presets/table1.json")),
    ("table2", include_str!("../../../presets/table2.json")),
    ("table3", include_str!("../../../presets/table3.json")),
    ("table4", include_str!("../../../presets/table4.json")),
    ("table5", include_str!("../../../presets/table5.json")),
];

#[derive(Parser)]
#[command(name = "margpost", version, about = "Marginal likelihood estimation from MCMC output")]
struct Cli {
    /// Worker threads for the parallel stages; all cores when absent.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory holding wind.csv, galaxy.csv and epilepsy.csv.
    #[arg(long, global = true, env = "MARGPOST_DATA")]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment's sampler and save the chain.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Chain file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the evidence for every variant of an experiment or preset.
    Estimate {
        #[arg(long)]
        config: PathBuf,
        /// Reuse a saved chain instead of sampling.
        #[arg(long)]
        chain: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "text")]
        format: TableFormat,
    },
    /// Regenerate one of the bundled tables (table1 ... table5).
    Reproduce {
        table: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for the JSON report and rendered table.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "text")]
        format: TableFormat,
    },
    /// Compare MC errors at N and 2N draws.
    DiagnoseVariance {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "text")]
        format: TableFormat,
    },
}

/// Exit codes: 1 config, 2 data, 3 numerical.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>().map(Error::root) {
        Some(Error::Config { .. }) | None => 1,
        Some(Error::Data(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_)) => 2,
        Some(_) => 3,
    }
}

fn data_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| {
        let local = PathBuf::from("data");
        if local.is_dir() {
            local
        } else {
            Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
        }
    })
}

fn with_seed(mut preset: Preset, seed: Option<u64>) -> Preset {
    if let Some(s) = seed {
        for e in &mut preset.experiments {
            e.sampler.seed = s;
        }
    }
    preset
}

fn write_file(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(Error::from)?;
    }
    std::fs::write(path, text).map_err(Error::from)?;
    Ok(())
}

fn run_all(preset: &Preset, data: &Path) -> anyhow::Result<Vec<EvidenceReport>> {
    let per_experiment: Vec<Vec<EvidenceReport>> = preset
        .experiments
        .par_iter()
        .map(|e| run_experiment(e, data).map_err(|err| anyhow::Error::new(err).context(format!("experiment `{}`", e.name))))
        .collect::<anyhow::Result<_>>()?;
    Ok(per_experiment.into_iter().flatten().collect())
}

fn write_outputs(e: &ExperimentConfig, reports: &[EvidenceReport], table: &str) -> anyhow::Result<()> {
    if let Some(p) = &e.output.report {
        write_file(p, &serde_json::to_string_pretty(reports)?)?;
    }
    if let Some(p) = &e.output.table {
        write_file(p, table)?;
    }
    Ok(())
}

fn evidence_or_variance(preset: &Preset, data: &Path, format: TableFormat) -> anyhow::Result<(String, String)> {
    match preset.kind {
        PresetKind::Evidence => {
            let reports = run_all(preset, data)?;
            let table = emit_table(&reports, format, preset.decimals);
            for e in &preset.experiments {
                let own: Vec<EvidenceReport> = reports.iter().filter(|r| r.model == e.name).cloned().collect();
                write_outputs(e, &own, &emit_table(&own, format, preset.decimals))?;
            }
            Ok((serde_json::to_string_pretty(&reports)?, table))
        }
        PresetKind::Variance => {
            let rows: Vec<_> = preset
                .experiments
                .par_iter()
                .map(|e| diagnose_variance(e, data).map_err(anyhow::Error::new))
                .collect::<anyhow::Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect();
            Ok((serde_json::to_string_pretty(&rows)?, emit_variance_table(&rows, format, preset.decimals)))
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> anyhow::Result<Preset> {
    Ok(with_seed(ConfigFile::load(path)?.into_preset(), seed))
}

fn single_experiment(path: &Path, seed: Option<u64>) -> anyhow::Result<ExperimentConfig> {
    let mut preset = load_config(path, seed)?;
    if preset.experiments.len() != 1 {
        return Err(Error::config("config", "this command needs a single-experiment config").into());
    }
    Ok(preset.experiments.remove(0))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config("threads", e.to_string()))?;
    }
    let data = data_dir(cli.data_dir);
    match cli.command {
        Command::Sample { config, seed, out } => {
            let e = single_experiment(&config, seed)?;
            let model = build_model(&e.model, &data).map_err(|err| err.in_stage("load"))?;
            let chain = sample_chain(&model, &e.sampler).map_err(|err| err.in_stage("sample"))?;
            save_chain(&chain, &out).with_context(|| format!("writing {}", out.display()))?;
            println!(
                "{}: {} draws of {} values written to {}",
                e.name,
                chain.len(),
                chain.layout().total_dim(),
                out.display()
            );
        }
        Command::Estimate {
            config,
            chain,
            seed,
            out,
            format,
        } => {
            let (json, table) = match chain {
                Some(path) => {
                    let e = single_experiment(&config, seed)?;
                    let model = build_model(&e.model, &data).map_err(|err| err.in_stage("load"))?;
                    let chain = load_chain(&path).map_err(|err| err.in_stage("load chain"))?;
                    let reports = estimate_from_chain(&model, &e, &chain)?;
                    let decimals = ConfigFile::Experiment(e.clone()).into_preset().decimals;
                    let table = emit_table(&reports, format, decimals);
                    write_outputs(&e, &reports, &table)?;
                    (serde_json::to_string_pretty(&reports)?, table)
                }
                None => {
                    let preset = load_config(&config, seed)?;
                    if preset.kind == PresetKind::Variance {
                        return Err(Error::config("kind", "use diagnose-variance for variance presets").into());
                    }
                    evidence_or_variance(&preset, &data, format)?
                }
            };
            print!("{table}");
            if let Some(p) = out {
                write_file(&p, &json)?;
            }
        }
        Command::Reproduce {
            table,
            seed,
            out,
            format,
        } => {
            let text = PRESETS
                .iter()
                .find(|(name, _)| *name == table)
                .map(|(_, t)| *t)
                .ok_or_else(|| Error::config("table", format!("unknown table `{table}`; expected table1 ... table5")))?;
            let preset = with_seed(ConfigFile::parse(text)?.into_preset(), seed);
            if !preset.title.is_empty() {
                println!("{}\n", preset.title);
            }
            let (json, rendered) = evidence_or_variance(&preset, &data, format)?;
            print!("{rendered}");
            if let Some(dir) = out {
                let ext = if format == TableFormat::Csv { "csv" } else { "txt" };
                write_file(&dir.join(format!("{table}.json")), &json)?;
                write_file(&dir.join(format!("{table}.{ext}")), &rendered)?;
            }
        }
        Command::DiagnoseVariance {
            config,
            seed,
            out,
            format,
        } => {
            let mut preset = load_config(&config, seed)?;
            preset.kind = PresetKind::Variance;
            let (json, table) = evidence_or_variance(&preset, &data, format)?;
            print!("{table}");
            if let Some(p) = out {
                write_file(&p, &json)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
