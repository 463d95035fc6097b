use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nfinv_cli::io::{self, read_grid};
use nfinv_cli::manifest::{parse_manifest, Method, RunManifest, SvdMethod};
use nfinv_cli::render::{render_heatmap, RenderOptions};
use nfinv_cli::run::{self, Seeds};
use nfinv_cli::CliError;
use nfinv_core::checkpoint::read_checkpoint;

#[derive(Parser)]
#[command(name = "nfinv", version, about = "Neural-field geophysical inversion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Overrides the manifest seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the manifest output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the true model grid, its heatmap and the resolved manifest.
    MakeScenario(RunArgs),
    /// Also write clean and noisy data.
    Simulate(RunArgs),
    /// Full run: scenario, data, inversion(s), optional SVD, metrics.
    Invert {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        method: Option<Method>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// SVD of the weight Jacobian of a saved network.
    Svd {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, value_parser = parse_svd_method)]
        method: Option<SvdMethod>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render a grid CSV as a PNG heatmap.
    Render {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        vmin: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        vmax: Option<f64>,
    },
    /// Summarize run directories: metrics and CSV checksums.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn parse_svd_method(s: &str) -> Result<SvdMethod, String> {
    match s {
        "exact" => Ok(SvdMethod::Exact),
        "gram" => Ok(SvdMethod::Gram),
        "randomized" => Ok(SvdMethod::Randomized),
        other => Err(format!("unknown SVD method `{other}` (exact, gram, randomized)")),
    }
}

fn load(path: &Path) -> Result<RunManifest, CliError> {
    parse_manifest(&io::read_text(path)?)
}

fn resolve(args: &RunArgs) -> Result<(RunManifest, PathBuf), CliError> {
    let mut m = load(&args.manifest)?;
    if let Some(seed) = args.seed {
        m.seed = seed;
    }
    if let Some(out) = &args.out {
        m.output_dir = Some(out.clone());
    }
    let out = m
        .output_dir
        .clone()
        .ok_or_else(|| CliError::Schema { path: "output_dir".into(), message: "give --out or set output_dir".into() })?;
    Ok((m, out))
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::MakeScenario(args) => {
            let (m, out) = resolve(&args)?;
            nfinv_cli::manifest::validate(&m)?;
            let mesh = run::build_mesh(&m)?;
            let truth = run::build_truth(&m, &mesh, &Seeds::from_global(m.seed))?;
            run::write_truth(&out, &m, &mesh, &truth)?;
            println!("wrote {}", out.display());
        }
        Command::Simulate(args) => {
            let (m, out) = resolve(&args)?;
            let scn = run::build_scenario(&m)?;
            run::write_truth(&out, &m, &scn.mesh, &scn.truth)?;
            run::write_data(&out, &scn)?;
            println!("wrote {} ({} data)", out.display(), scn.clean.len());
        }
        Command::Invert { run: args, method, epochs } => {
            let (mut m, out) = resolve(&args)?;
            if let Some(method) = method {
                m.method = method;
            }
            if let Some(epochs) = epochs {
                m.nfs.epochs = epochs;
            }
            let summary = run::run_case(&m, &out)?;
            for (name, mm) in &summary.metrics.methods {
                println!(
                    "{name}: rmse {:.4e}  chi2 {:.3}  artifact {:.4e}  iterations {}  {:.1} s",
                    mm.rmse, mm.chi2, mm.artifact_energy, mm.iterations, mm.runtime_seconds
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Svd { manifest, checkpoint, out, k, method, seed } => {
            let mut m = load(&manifest)?;
            if let Some(k) = k {
                m.svd.k = k;
            }
            if let Some(method) = method {
                m.svd.method = method;
            }
            if let Some(seed) = seed {
                m.seed = seed;
            }
            let (mlp, _) = read_checkpoint(&checkpoint)?;
            let mesh = run::build_mesh(&m)?;
            let svd = run::run_svd(&m, &mesh, &mlp, Seeds::from_global(m.seed).svd)?;
            let summary = run::write_svd(&out, &mesh, &svd, m.svd.export_vectors)?;
            match summary.decay_ratio_1_10 {
                Some(r) => println!("lambda_1 / lambda_10 = {r:.3}"),
                None => println!("lambda_1 = {:.4e}", summary.singular_values[0]),
            }
        }
        Command::Render { grid, out, vmin, vmax } => {
            let g = read_grid(&grid)?;
            render_heatmap(&g, &RenderOptions { vmin, vmax, pixels_per_cell: 0 }, &out)?;
        }
        Command::Report { runs } => {
            for dir in runs {
                let metrics = io::read_text(&dir.join("metrics.json"))?;
                println!("== {}", dir.display());
                println!("{metrics}");
                for rel in io::list_csv(&dir)? {
                    println!("{}  {}", io::sha256_hex(&dir.join(&rel))?, rel.display());
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Numerical { checkpoint: Some(p), .. } = &e {
                eprintln!("diagnostic checkpoint: {}", p.display());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
