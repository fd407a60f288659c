//! Command-line front end. Exit codes: 0 ran, 1 configuration or input
//! error, 2 the corpus had failing scans.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ctqa::config::{resolve_config, ConfigOverlay, SelectionPolicy};
use ctqa::gallery::{render_montage, MontageOptions};
use ctqa::pipeline::{load_series, run_pipeline, write_gallery_index};
use ctqa::report::{export, read_report, with_verdicts, QaReport, REPORT_FILE};
use ctqa::synth::{write_corpus, CorpusSpec, SeriesGeometry};
use ctqa::verdicts::{read_verdicts, VERDICTS_FILE};
use ctqa::volume::assemble_volume;
use ctqa::volume::nifti::{read_nifti_file, write_nifti_file};
use ctqa::volume::orientation::{check_orientation, reorient_to_standard};
use ctqa::volume::roi::{crop_roi, lung_mask, LungMaskParams};

#[derive(Parser)]
#[command(name = "ctqa", version, about = "Quality assessment for CT series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Run the full pipeline over a corpus.
    Qa(QaArgs),
    /// Assemble one series directory into a NIfTI volume.
    Convert {
        series_dir: PathBuf,
        output: PathBuf,
        /// Reorient to the standard axis order before writing.
        #[arg(long)]
        reorient: bool,
    },
    /// Crop a NIfTI volume to the lung region.
    Crop {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = 0.10)]
        margin: f64,
    },
    /// Render a three-plane montage PNG of a NIfTI volume.
    Gallery {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = ctqa::gallery::DEFAULT_TILE_SIZE)]
        tile_size: usize,
    },
    /// Rebuild report files in an output directory from its verdict log.
    Report { output_dir: PathBuf },
    /// Serve the review API for an output directory.
    Serve {
        output_dir: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
    /// Write a synthetic corpus with ground truth.
    Synth {
        output_dir: PathBuf,
        #[arg(long, default_value_t = 20)]
        clean: usize,
        /// Series per objective defect class.
        #[arg(long, default_value_t = 10)]
        per_defect: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = GeometryArg::Compact)]
        geometry: GeometryArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum GeometryArg {
    Compact,
    Chest,
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectionArg {
    LargestSliceCount,
    All,
}

#[derive(Args)]
struct QaArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    corpus_id: Option<String>,
    #[arg(long)]
    epsilon_mm: Option<f64>,
    #[arg(long)]
    epsilon_rel: Option<f64>,
    #[arg(long)]
    delta: Option<usize>,
    #[arg(long)]
    sigma1: Option<f64>,
    #[arg(long)]
    sigma2: Option<f64>,
    /// Maximum voxel size per axis, e.g. 1,1,5.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    phi: Option<Vec<f64>>,
    /// Check to skip (repeatable), e.g. --disable C7.
    #[arg(long = "disable")]
    disabled: Vec<String>,
    #[arg(long)]
    no_crop: bool,
    #[arg(long)]
    no_gallery: bool,
    #[arg(long)]
    crop_margin: Option<f64>,
    #[arg(long)]
    tile_size: Option<usize>,
    #[arg(long, value_enum)]
    selection: Option<SelectionArg>,
    #[arg(long)]
    force_assembly: bool,
    #[arg(long)]
    review_sample: Option<usize>,
    #[arg(long)]
    review_seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    no_resume: bool,
    /// Report timestamp, e.g. 2024-01-01T00:00:00Z.
    #[arg(long)]
    fixed_clock: Option<DateTime<Utc>>,
}

impl QaArgs {
    fn overlay(self) -> Result<ConfigOverlay, String> {
        let phi = self
            .phi
            .map(|v| <[f64; 3]>::try_from(v).map_err(|_| "--phi takes three values".to_string()))
            .transpose()?;
        Ok(ConfigOverlay {
            input_root: self.input,
            output_root: self.output,
            corpus_id: self.corpus_id,
            epsilon_mm: self.epsilon_mm,
            epsilon_rel: self.epsilon_rel,
            delta: self.delta,
            sigma1: self.sigma1,
            sigma2: self.sigma2,
            phi,
            disabled_checks: (!self.disabled.is_empty()).then_some(self.disabled),
            crop: self.no_crop.then_some(false),
            gallery: self.no_gallery.then_some(false),
            crop_margin: self.crop_margin,
            tile_size: self.tile_size,
            selection: self.selection.map(|s| match s {
                SelectionArg::LargestSliceCount => SelectionPolicy::LargestSliceCount,
                SelectionArg::All => SelectionPolicy::All,
            }),
            force_assembly: self.force_assembly.then_some(true),
            review_sample_size: self.review_sample,
            review_seed: self.review_seed,
            workers: self.workers,
            resume: self.no_resume.then_some(false),
            fixed_clock: self.fixed_clock,
            ..Default::default()
        })
    }
}

fn summarize(report: &QaReport) -> ExitCode {
    let t = &report.totals;
    println!(
        "{} scans: {} pass, {} warn, {} needs-review, {} fail",
        t.scans, t.pass, t.warn, t.needs_review, t.fail
    );
    for row in &report.rate_table {
        println!(
            "  {:<5} {:>6}/{:<6} {}",
            row.check.to_string(),
            row.failed,
            row.applicable,
            row.failure_pct
        );
    }
    if t.fail > 0 {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn qa(args: QaArgs) -> Result<ExitCode, String> {
    let config_file = args.config.clone();
    let config = resolve_config(config_file.as_deref(), args.overlay()?).map_err(|e| e.to_string())?;
    let report = run_pipeline(&config).map_err(|e| e.to_string())?;
    println!("wrote {}", config.output_root.display());
    Ok(summarize(&report))
}

fn rebuild_report(dir: &Path) -> Result<ExitCode, String> {
    let base = read_report(&dir.join(REPORT_FILE)).map_err(|e| e.to_string())?;
    let verdicts = read_verdicts(&dir.join(VERDICTS_FILE)).map_err(|e| e.to_string())?;
    let report = with_verdicts(&base, &verdicts).map_err(|e| e.to_string())?;
    export(&report, dir).map_err(|e| e.to_string())?;
    write_gallery_index(&report, dir).map_err(|e| e.to_string())?;
    Ok(summarize(&report))
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Qa(args) => qa(args),
        Command::Convert {
            series_dir,
            output,
            reorient,
        } => {
            let (manifest, slabs) = load_series(&series_dir)?;
            let mut volume = assemble_volume(&manifest, &slabs).map_err(|e| e.to_string())?;
            let c6 = check_orientation(&volume.affine);
            println!("{}: {}", c6.check, c6.detail);
            if reorient {
                volume = reorient_to_standard(&volume).map_err(|e| e.to_string())?;
            }
            write_nifti_file(&output, &volume).map_err(|e| e.to_string())?;
            println!("wrote {} ({:?})", output.display(), volume.dims);
            Ok(ExitCode::SUCCESS)
        }
        Command::Crop { input, output, margin } => {
            let volume = read_nifti_file(&input).map_err(|e| e.to_string())?;
            let mask = lung_mask(&volume, &LungMaskParams::default()).map_err(|e| e.to_string())?;
            let roi = crop_roi(&volume, &mask, margin).map_err(|e| e.to_string())?;
            write_nifti_file(&output, &roi).map_err(|e| e.to_string())?;
            println!(
                "{} mask voxels, wrote {} ({:?})",
                mask.count(),
                output.display(),
                roi.dims
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Gallery {
            input,
            output,
            tile_size,
        } => {
            let volume = read_nifti_file(&input).map_err(|e| e.to_string())?;
            let id = input
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let options = MontageOptions {
                tile_size,
                ..Default::default()
            };
            let montage = render_montage(&id, &volume, &options).map_err(|e| e.to_string())?;
            let png = montage.to_png().map_err(|e| e.to_string())?;
            std::fs::write(&output, png).map_err(|e| format!("{}: {e}", output.display()))?;
            println!("wrote {} ({}x{})", output.display(), montage.width, montage.height);
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { output_dir } => rebuild_report(&output_dir),
        Command::Serve { output_dir, addr } => {
            let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            println!("serving {} on http://{addr}", output_dir.display());
            runtime
                .block_on(ctqa::service::serve_review(&output_dir, addr))
                .map_err(|e| e.to_string())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth {
            output_dir,
            clean,
            per_defect,
            seed,
            geometry,
        } => {
            let mut spec = CorpusSpec::benchmark(seed);
            spec.clean = clean;
            for entry in &mut spec.defects {
                entry.1 = per_defect;
            }
            spec.geometry = match geometry {
                GeometryArg::Compact => SeriesGeometry::compact(),
                GeometryArg::Chest => SeriesGeometry::chest(),
            };
            let truth = write_corpus(&output_dir, &spec).map_err(|e| e.to_string())?;
            println!("wrote {} series to {}", truth.len(), output_dir.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}
