use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sonotrace::config::SimulationConfig;
use sonotrace::ertf::write_bank;
use sonotrace::mesh::MaterialParams;
use sonotrace::output::{emit_json, write_scan, write_simulation};
use sonotrace::pipeline::{ear_bank, mesh_info, run_simulation, spectral_grid, with_workers, RunOptions};
use sonotrace::scan::{run_rotation_scan, run_sphere_scan, ScanAxis, ScanOptions};

#[derive(Parser)]
#[command(name = "sonotrace", version, about = "Sonar echo simulation on triangle meshes")]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML or JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> anyhow::Result<(SimulationConfig, PathBuf)> {
        let mut cfg = SimulationConfig::load(&self.config)
            .with_context(|| format!("loading {}", self.config.display()))?;
        if let Some(s) = self.seed {
            cfg.params.seed = s;
        }
        if let Some(w) = self.workers {
            if w == 0 {
                bail!("--workers must be at least 1");
            }
        }
        let out = match &self.out {
            Some(o) => o.clone(),
            None => cfg.resolve(&cfg.output.directory),
        };
        Ok((cfg, out))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    X,
    Y,
    Z,
}

impl From<Axis> for ScanAxis {
    fn from(a: Axis) -> ScanAxis {
        match a {
            Axis::X => ScanAxis::X,
            Axis::Y => ScanAxis::Y,
            Axis::Z => ScanAxis::Z,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Ear {
    Left,
    Right,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Runs one simulation and writes IRs, ear responses and received signals.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Rotates the objects about a world axis and simulates each angle.
    ScanRotation {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "z")]
        axis: Axis,
        #[arg(long, default_value_t = -90.0, allow_hyphen_values = true)]
        start: f64,
        #[arg(long, default_value_t = 90.0, allow_hyphen_values = true)]
        end: f64,
        #[arg(long, default_value_t = 1.0)]
        step: f64,
        /// Skip the per-angle impulse-response matrices.
        #[arg(long)]
        no_irs: bool,
    },
    /// Places the first object on equal-area directions of the frontal
    /// hemisphere and simulates each placement.
    ScanSphere {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        points: usize,
        /// Distance from the emitter (m).
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long)]
        no_irs: bool,
    },
    /// Fits (or builds) the ear filter banks and writes them.
    FitErtf {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "both")]
        ear: Ear,
    },
    /// Repairs an STL mesh and reports diagnostics as JSON.
    MeshInfo {
        mesh: PathBuf,
        /// Uses this config's first-object material and frequency grid.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Frequencies (Hz) at which to report BRDF ranges.
        #[arg(long = "frequency", value_delimiter = ',')]
        frequencies: Vec<f64>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct FitSummary {
    ear: &'static str,
    channels: usize,
    taps: usize,
    file: String,
    fit: Option<sonotrace::ertf::FitReport>,
}

fn simulate(common: &Common) -> anyhow::Result<()> {
    let (cfg, out) = common.load()?;
    let result = run_simulation(&cfg, &RunOptions { workers: common.workers })?;
    let files = write_simulation(&out, &cfg, &result)?;
    log::info!("wrote {} files to {}", files.len(), out.display());
    let s = &result.metadata.stats;
    println!(
        "{}: {} specular and {} diffraction contributions ({} dropped)",
        out.display(),
        s.specular_contributions,
        s.diffraction_contributions,
        s.specular_dropped + s.diffraction_dropped
    );
    Ok(())
}

fn scan_options(common: &Common, no_irs: bool) -> ScanOptions {
    ScanOptions {
        workers: common.workers,
        keep_irs: !no_irs,
    }
}

fn fit_ertf(common: &Common, ear: Ear) -> anyhow::Result<()> {
    let (cfg, out) = common.load()?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut summary = Vec::new();
    for (name, which, ear_cfg, group) in [
        ("left", Ear::Left, &cfg.ertf.left, &cfg.ertf.left_group),
        ("right", Ear::Right, &cfg.ertf.right, &cfg.ertf.right_group),
    ] {
        if ear != Ear::Both && ear != which {
            continue;
        }
        let (bank, fit) = with_workers(common.workers, || ear_bank(&cfg, ear_cfg, group.as_deref()))??;
        let file = out.join(format!("{name}.bank"));
        write_bank(&file, &bank)?;
        summary.push(FitSummary {
            ear: name,
            channels: bank.num_channels(),
            taps: bank.len(),
            file: file.display().to_string(),
            fit,
        });
    }
    emit_json(Some(&out.join("fit_report.json")), &summary)?;
    emit_json(None, &summary)?;
    Ok(())
}

fn mesh_report(mesh: &Path, config: Option<&Path>, frequencies: &[f64], out: Option<&Path>) -> anyhow::Result<()> {
    let (material, mut freqs, c) = match config {
        Some(p) => {
            let cfg = SimulationConfig::load(p).with_context(|| format!("loading {}", p.display()))?;
            let grid = spectral_grid(&cfg)?;
            let material = cfg.mesh.objects.first().map(|o| o.material.clone()).unwrap_or_default();
            (material, grid.brdf_freqs.clone(), cfg.params.speed_of_sound)
        }
        None => (MaterialParams::default(), vec![40e3], 343.0),
    };
    if !frequencies.is_empty() {
        freqs = frequencies.to_vec();
    }
    let info = mesh_info(mesh, &material, &freqs, c).with_context(|| format!("inspecting {}", mesh.display()))?;
    emit_json(out, &info)?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { common } => simulate(&common),
        Command::ScanRotation {
            common,
            axis,
            start,
            end,
            step,
            no_irs,
        } => {
            let (cfg, out) = common.load()?;
            let scan = run_rotation_scan(&cfg, axis.into(), start, end, step, &scan_options(&common, no_irs))?;
            write_scan(&out, &cfg, &scan)?;
            println!("{}: {} angles", out.display(), scan.len());
            Ok(())
        }
        Command::ScanSphere {
            common,
            points,
            radius,
            no_irs,
        } => {
            let (cfg, out) = common.load()?;
            let scan = run_sphere_scan(&cfg, points, radius, &scan_options(&common, no_irs))?;
            write_scan(&out, &cfg, &scan)?;
            println!("{}: {} directions", out.display(), scan.len());
            Ok(())
        }
        Command::FitErtf { common, ear } => fit_ertf(&common, ear),
        Command::MeshInfo {
            mesh,
            config,
            frequencies,
            out,
        } => mesh_report(&mesh, config.as_deref(), &frequencies, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Library errors already embed their causes in the message.
            let mut msg = String::new();
            for cause in e.chain() {
                let text = cause.to_string();
                if !msg.contains(&text) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&text);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
