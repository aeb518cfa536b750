use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use closer_core::experiment::{
    ablate, ablation_csv, apply_preset, desk_config, export, header, run, write_run, AblationGrid, ExperimentConfig,
    ExportKind,
};
use closer_core::{Error, Result};

#[derive(Parser)]
#[command(name = "closer", version, about = "Few-shot class-incremental learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (JSON). Defaults to the built-in desk setting.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Loss preset applied on top of the config: baseline, baseline_rs or closer.
    #[arg(long)]
    preset: Option<String>,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train, replace the classifier, run all sessions and write reports.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the temperature / contrastive / inter-class ablation grid.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render artifacts (metrics, histograms, features, ib) of a finished run.
    Export {
        what: String,
        /// Directory of a completed run.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run with information-plane estimation enabled and print the points.
    IbEval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config and print its hash.
    ValidateConfig {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Also print the resolved config as JSON.
        #[arg(long)]
        dump: bool,
    },
}

fn resolve(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut c = match &args.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| e.at_stage(format!("config {}", p.display())))?,
        None => desk_config(),
    };
    if let Some(p) = &args.preset {
        apply_preset(&mut c, p).map_err(|e| e.at_stage("config"))?;
    }
    if let Some(s) = args.seed {
        c.master_seed = s;
    }
    c.validate().map_err(|e| e.at_stage("config"))?;
    Ok(c)
}

fn out_dir(explicit: &Option<PathBuf>, config: &ExperimentConfig) -> Result<PathBuf> {
    explicit
        .clone()
        .or_else(|| config.output_dir.clone())
        .ok_or_else(|| Error::invalid("no output directory: pass --out or set output_dir").at_stage("config"))
}

fn main_inner(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { cfg, out } => {
            let config = resolve(&cfg)?;
            let dir = out_dir(&out, &config)?;
            let result = run(&config)?;
            write_run(&result, &dir).map_err(|e| e.at_stage("write_reports"))?;
            let a = &result.aggregate;
            println!("config_hash={} master_seed={}", result.config_hash, result.master_seed);
            for s in &a.sessions {
                println!(
                    "session {}: A_W {:.2} ± {:.2}{}",
                    s.session,
                    s.a_w.mean,
                    s.a_w.std,
                    s.a_n.map(|n| format!("  A_N {:.2}", n.mean)).unwrap_or_default()
                );
            }
            if let Some(pd) = a.pd {
                println!("PD {:.2} ± {:.2}", pd.mean, pd.std);
            }
            println!("wrote {}", dir.display());
        }
        Command::Ablate { cfg, out } => {
            let config = resolve(&cfg)?;
            let dir = out_dir(&out, &config)?;
            let table = ablate(&config, &AblationGrid::full(&config)).map_err(|e| e.at_stage("ablate"))?;
            std::fs::create_dir_all(&dir)?;
            let csv = ablation_csv(&table);
            std::fs::write(dir.join("ablation.csv"), &csv).map_err(|e| Error::from(e).at_stage("write_reports"))?;
            print!("{csv}");
        }
        Command::Export { what, run: run_dir, out } => {
            let kind: ExportKind = what.parse().map_err(|e: Error| e.at_stage("export"))?;
            for p in export(&run_dir, kind, &out).map_err(|e| e.at_stage("export"))? {
                println!("wrote {}", p.display());
            }
        }
        Command::IbEval { cfg, out } => {
            let mut config = resolve(&cfg)?;
            config.metrics.ib = true;
            let result = run(&config)?;
            print!("{}", header(&result.config_hash, result.master_seed));
            println!("trial,group,i_xz,i_yz,closed_form_bound");
            for t in &result.trials {
                for p in t.report.ib.as_deref().unwrap_or_default() {
                    println!(
                        "{},{},{},{},{}",
                        t.trial,
                        p.group,
                        p.i_xz,
                        p.i_yz,
                        p.closed_form_bound.map(|b| b.to_string()).unwrap_or_default()
                    );
                }
            }
            if let Some(dir) = out.or(config.output_dir.clone()) {
                write_run(&result, &dir).map_err(|e| e.at_stage("write_reports"))?;
            }
        }
        Command::ValidateConfig { cfg, dump } => {
            let config = resolve(&cfg)?;
            if dump {
                println!("{}", config.to_json_pretty()?);
            } else {
                println!("ok {} config_hash={}", config.name, config.hash());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
