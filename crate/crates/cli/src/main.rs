use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use ttc_cli::io::{load_image, load_video_frames};
use ttc_cli::manifest::{parse_list, SyntheticSpec};
use ttc_cli::{run_manifest, DataKind, ExperimentManifest, LayoutSpec, MaskSpec, RunSummary};
use ttc_core::metrics::{entanglement_entropy, mean_ssim, rse, ssim_image};
use ttc_core::synthetic::GeneratorKind;
use ttc_core::{SolverConfig, Split};

#[derive(Parser)]
#[command(name = "ttc", version, about = "Low-rank tensor completion for images, videos and synthetic tensors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Complete an image or frame directory.
    Complete(CompleteArgs),
    /// Sweep synthetic low-rank tensors over rank and missing ratio.
    PhaseDiagram(PhaseArgs),
    /// Show the ket-augmented layout of an image.
    Augment(AugmentArgs),
    /// Compare a recovered image or frame directory with its reference.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct SolverArgs {
    /// silrtc, silrtc-tt, silrtc-square, tmac, tmac-tt or tmac-square.
    #[arg(long, default_value = "tmac-tt")]
    solver: String,
    #[arg(long)]
    f: Option<f64>,
    #[arg(long)]
    th: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    maxiter: Option<usize>,
    /// Comma-separated ranks for the factorization engine.
    #[arg(long)]
    ranks: Option<String>,
    /// Sweep f or th and keep the lowest RSE.
    #[arg(long)]
    tune: bool,
}

impl SolverArgs {
    fn config(&self, seed: u64) -> anyhow::Result<SolverConfig> {
        let mut c = SolverConfig::preset(&self.solver)?.with_seed(seed);
        if let Some(f) = self.f {
            c = c.with_penalty_factor(f);
        }
        if let Some(th) = self.th {
            c = c.with_rank_threshold(th);
        }
        if let Some(tol) = self.tol {
            c = c.with_tol(tol);
        }
        if let Some(n) = self.maxiter {
            c = c.with_max_iter(n);
        }
        if let Some(r) = &self.ranks {
            c = c.with_ranks(parse_list(r).map_err(anyhow::Error::msg)?);
        }
        Ok(c)
    }
}

#[derive(Args)]
struct CompleteArgs {
    /// Manifest file; other flags are ignored when given.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Image file, or frame directory with --frames.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    frames: bool,
    /// Keep frames as (F, H, W, 3) instead of stacking them vertically.
    #[arg(long)]
    no_merge: bool,
    /// Missing ratio of a uniformly random mask.
    #[arg(long, conflicts_with = "mask")]
    mr: Option<f64>,
    /// Overlay image whose white pixels are missing.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Augmentation levels such as 2x2,2x2,... or "auto".
    #[arg(long, default_value = "none")]
    ka: String,
    #[arg(long)]
    coarse_first: bool,
    /// Edge-pad the image up to the size the --ka levels cover.
    #[arg(long)]
    pad: bool,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct PhaseArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// tt or tucker.
    #[arg(long, default_value = "tt")]
    generator: String,
    #[arg(long, default_value = "10,10,10,10,10")]
    shape: String,
    #[arg(long, default_value = "2,6,10")]
    ranks: String,
    #[arg(long, default_value = "0.5,0.7,0.9")]
    mr: String,
    #[arg(long, default_value = "tmac-tt")]
    solvers: String,
    #[arg(long, default_value_t = 3)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Give the factorization engine the generator's exact ranks.
    #[arg(long)]
    true_ranks: bool,
    #[arg(long)]
    tune: bool,
    /// Success cut-off on the mean RSE of a cell.
    #[arg(long, default_value_t = 1e-2)]
    threshold: f64,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    maxiter: Option<usize>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, default_value = "phase")]
    out: PathBuf,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "auto")]
    ka: String,
    #[arg(long)]
    coarse_first: bool,
    /// Also report the entanglement entropy of every prefix split.
    #[arg(long)]
    entropy: bool,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    reference: PathBuf,
    #[arg(long)]
    recovered: PathBuf,
    /// Treat both paths as frame directories.
    #[arg(long)]
    frames: bool,
}

fn complete_manifest(a: &CompleteArgs) -> anyhow::Result<ExperimentManifest> {
    if let Some(p) = &a.manifest {
        return Ok(ExperimentManifest::from_file(p)?);
    }
    let input = a.input.clone().context("--input or --manifest is required")?;
    let mask = match (&a.mr, &a.mask) {
        (Some(mr), None) => MaskSpec::Random { mr: *mr },
        (None, Some(p)) => MaskSpec::Overlay(p.clone()),
        _ => bail!("give exactly one of --mr or --mask"),
    };
    let mut m = ExperimentManifest::image(input, 0.0, a.out.clone());
    m.kind = if a.frames { DataKind::Frames } else { DataKind::Image };
    m.mask = Some(mask);
    m.seed = a.seed;
    m.layout = LayoutSpec::parse(&a.ka)?;
    m.coarse_first = a.coarse_first;
    m.pad = a.pad;
    m.merge_rows = !a.no_merge;
    m.solver = a.solver.config(a.seed)?;
    m.tune = a.solver.tune;
    m.validate()?;
    Ok(m)
}

fn phase_manifest(a: &PhaseArgs) -> anyhow::Result<ExperimentManifest> {
    if let Some(p) = &a.manifest {
        let m = ExperimentManifest::from_file(p)?;
        if m.kind != DataKind::Synthetic {
            bail!("{} is not a synthetic manifest", p.display());
        }
        return Ok(m);
    }
    let generator = match a.generator.as_str() {
        "tt" => GeneratorKind::TensorTrain,
        "tucker" => GeneratorKind::Tucker,
        g => bail!("unknown generator {g:?}"),
    };
    let list_err = anyhow::Error::msg;
    let mut m = ExperimentManifest::image("", 0.0, a.out.clone());
    m.kind = DataKind::Synthetic;
    m.input = None;
    m.mask = None;
    m.seed = a.seed;
    m.tune = a.tune;
    if let Some(tol) = a.tol {
        m.solver = m.solver.with_tol(tol);
    }
    if let Some(n) = a.maxiter {
        m.solver = m.solver.with_max_iter(n);
    }
    m.synthetic = Some(SyntheticSpec {
        generator,
        shape: parse_list(&a.shape).map_err(list_err)?,
        ranks: parse_list(&a.ranks).map_err(list_err)?,
        missing_ratios: parse_list(&a.mr).map_err(list_err)?,
        solvers: parse_list(&a.solvers).map_err(list_err)?,
        trials: a.trials,
        true_ranks: a.true_ranks,
        threshold: a.threshold,
        workers: a.workers,
    });
    m.validate()?;
    Ok(m)
}

fn print_summary(s: &RunSummary) -> anyhow::Result<()> {
    match s {
        RunSummary::Completion { report, .. } => println!("{}", serde_json::to_string_pretty(report)?),
        RunSummary::PhaseDiagram { grids, .. } => {
            for g in grids {
                println!("{} (mean RSE, rows = rank, columns = mr)", g.solver);
                println!("  r\\mr {}", g.missing_ratios.iter().map(|m| format!("{m:>9}")).collect::<String>());
                for (r, row) in g.ranks.iter().zip(&g.mean_rse) {
                    println!("  {r:>4} {}", row.iter().map(|v| format!("{v:>9.2e}")).collect::<String>());
                }
            }
        }
    }
    for a in s.artifacts() {
        eprintln!("wrote {}", a.display());
    }
    Ok(())
}

fn augment(a: &AugmentArgs) -> anyhow::Result<()> {
    let img = load_image(&a.input)?;
    let shape = [img.shape()[0], img.shape()[1], img.shape()[2]];
    let Some(layout) = LayoutSpec::parse(&a.ka)?.build(shape, a.coarse_first)? else {
        bail!("--ka none has no layout to show");
    };
    let aug = layout.forward(&img)?;
    let mut out = serde_json::json!({
        "source_shape": shape,
        "levels": layout.to_string(),
        "augmented_shape": aug.shape(),
    });
    if a.entropy {
        let s: Vec<f64> = (1..aug.order())
            .map(|k| entanglement_entropy(&aug, Split::Prefix(k)))
            .collect::<Result<_, _>>()?;
        out["prefix_entropy"] = serde_json::json!(s);
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn metrics(a: &MetricsArgs) -> anyhow::Result<()> {
    let out = if a.frames {
        let reference = load_video_frames(&a.reference, false)?;
        let recovered = load_video_frames(&a.recovered, false)?;
        let q = mean_ssim(&recovered, &reference, 1)?;
        serde_json::json!({ "rse": q.rse, "ssim": q.ssim, "per_frame_ssim": q.per_frame_ssim })
    } else {
        let reference = load_image(&a.reference)?;
        let recovered = load_image(&a.recovered)?;
        serde_json::json!({
            "rse": rse(&recovered, &reference)?,
            "ssim": ssim_image(&recovered, &reference)?,
        })
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Complete(a) => print_summary(&run_manifest(&complete_manifest(&a)?)?),
        Command::PhaseDiagram(a) => print_summary(&run_manifest(&phase_manifest(&a)?)?),
        Command::Augment(a) => augment(&a),
        Command::Metrics(a) => metrics(&a),
    }
}
