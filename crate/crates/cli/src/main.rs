use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{ArgGroup, Parser, Subcommand};
use dgq_core::analysis::BopsModel;
use dgq_core::pipeline::{
    compare_plans, generate_synthetic, run_apply, run_calibrate, PipelineConfig, QuantPlan,
    QuantPolicy, SyntheticSpec,
};
use dgq_core::tensorio::load_calibration_set;

#[derive(Parser)]
#[command(
    name = "dgq",
    version,
    about = "Distribution-aware group quantization toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a quantization plan from a calibration set.
    Calibrate {
        #[arg(long)]
        manifest: PathBuf,
        /// JSON policy; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fake-quantize held-out dumps with a plan and report the error.
    Apply {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip the per-group error breakdown.
        #[arg(long)]
        no_per_group: bool,
    },
    /// Evaluate several plans side by side on the same dumps.
    Compare {
        /// Comma-separated plan files.
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        plans: Vec<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        /// Also write the comparison as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Bit operations at a given weight/activation bit-width.
    #[command(group(ArgGroup::new("size").required(true).args(["flops", "full_bops"])))]
    Bops {
        #[arg(long)]
        flops: Option<f64>,
        /// BOPs measured at 32/32 bits, rescaled to the requested widths.
        #[arg(long)]
        full_bops: Option<f64>,
        #[arg(long)]
        bw: u32,
        #[arg(long)]
        ba: u32,
    },
    /// Write a synthetic calibration set with planted outliers.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        layers: usize,
        #[arg(long, default_value_t = 4)]
        timesteps: usize,
        #[arg(long, default_value_t = 2)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn plan_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .filter(|s| s != "plan")
        .or_else(|| {
            path.parent()
                .and_then(Path::file_name)
                .map(|s| s.to_string_lossy().into_owned())
        })
        .unwrap_or_else(|| path.display().to_string())
}

/// Write to stdout; a closed pipe (e.g. `| head`) ends the program quietly.
fn emit(text: &str) {
    if let Err(e) = io::stdout().lock().write_all(text.as_bytes()) {
        if e.kind() == io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error: writing output: {e}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Calibrate {
            manifest,
            config,
            out,
        } => {
            let policy = match config {
                Some(path) => QuantPolicy::read(&path)?,
                None => QuantPolicy::default(),
            };
            let result = run_calibrate(&PipelineConfig::new(manifest, &out, policy))?;
            let plan = &result.plan;
            emit(&format!("wrote {}\n", result.plan_path.display()));
            emit(&format!(
                "{} layers, {} timesteps, parameter overhead {} bytes\n",
                plan.layers.len(),
                plan.num_timesteps,
                plan.overhead.total_bytes
            ));
        }
        Command::Apply {
            plan,
            manifest,
            out,
            no_per_group,
        } => {
            let plan = QuantPlan::read(&plan)?;
            let report = run_apply(&plan, manifest, &out, !no_per_group)?;
            emit(&report.text_table());
            emit(&format!("wrote {}\n", out.join("report.json").display()));
        }
        Command::Compare {
            plans,
            manifest,
            json,
        } => {
            if plans.len() < 2 {
                return Err(
                    dgq_core::Error::Validation("compare needs at least two plans".into()).into(),
                );
            }
            let loaded = plans
                .iter()
                .map(|p| Ok((plan_label(p), QuantPlan::read(p)?)))
                .collect::<Result<Vec<_>>>()?;
            let set = load_calibration_set(manifest)?;
            let cmp = compare_plans(&loaded, &set)?;
            emit(&cmp.text_table());
            if let Some(path) = json {
                let text = serde_json::to_string_pretty(&cmp)?;
                std::fs::write(&path, text + "\n")
                    .with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Bops {
            flops,
            full_bops,
            bw,
            ba,
        } => {
            let model = match (flops, full_bops) {
                (Some(f), _) => BopsModel::new(f, bw, ba),
                (None, Some(b)) => BopsModel::from_full_precision_bops(b, bw, ba),
                (None, None) => unreachable!("clap requires one of the two"),
            }
            .map_err(|e| dgq_core::Error::Validation(e.to_string()))?;
            emit(&format!("{}\n", model.bops));
        }
        Command::GenSynthetic {
            out,
            layers,
            timesteps,
            samples,
            seed,
        } => {
            let spec = SyntheticSpec {
                layers,
                timesteps,
                samples,
                seed,
                ..SyntheticSpec::default()
            };
            let (manifest, suite) = generate_synthetic(&out, spec)?;
            emit(&format!(
                "wrote {} ({} layers)\n",
                manifest.display(),
                suite.layers.len()
            ));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = e
                .downcast_ref::<dgq_core::Error>()
                .is_some_and(dgq_core::Error::is_validation);
            ExitCode::from(if validation { 2 } else { 1 })
        }
    }
}
