//! Manifest execution: load, mask, augment, solve, invert, report.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use ttc_core::algorithms::RANK_THRESHOLDS;
use ttc_core::augmentation::crop;
use ttc_core::metrics::{mean_ssim, rse, ssim_image};
use ttc_core::synthetic::{records_to_csv, run_phase_diagram, sample_mask, PhaseDiagramConfig, SolverSpec};
use ttc_core::{algorithms::PENALTY_FACTORS, DenseTensor, Engine, KaLayout, ObservationMask, SolveReport, SolverConfig};

use crate::error::{invalid, io_err, Result};
use crate::io;
use crate::manifest::{DataKind, ExperimentManifest, MaskSpec};

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub solver: String,
    /// RSE against the input, in the input's own layout.
    pub rse: f64,
    pub ssim: Option<f64>,
    pub per_frame_ssim: Vec<f64>,
    pub source_shape: Vec<usize>,
    pub solved_shape: Vec<usize>,
    pub layout: String,
    pub observed: usize,
    pub missing_ratio: f64,
    pub iterations: usize,
    pub converged: bool,
    pub penalty_factor: f64,
    pub rank_threshold: f64,
    pub ranks: Option<Vec<usize>>,
    pub weights: Vec<f64>,
    pub seed: u64,
    pub tuned: bool,
    pub elapsed_secs: f64,
}

/// Contents of `summary.json` for a phase-diagram run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub solver: String,
    pub ranks: Vec<usize>,
    pub missing_ratios: Vec<f64>,
    pub mean_rse: Vec<Vec<f64>>,
    pub success: Vec<Vec<bool>>,
    pub success_threshold: f64,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub enum RunSummary {
    Completion {
        report: RunReport,
        artifacts: Vec<PathBuf>,
    },
    PhaseDiagram {
        grids: Vec<GridSummary>,
        artifacts: Vec<PathBuf>,
    },
}

impl RunSummary {
    pub fn artifacts(&self) -> &[PathBuf] {
        match self {
            RunSummary::Completion { artifacts, .. } | RunSummary::PhaseDiagram { artifacts, .. } => artifacts,
        }
    }
}

/// Runs a manifest and writes its artifacts under `m.out`.
pub fn run_manifest(m: &ExperimentManifest) -> Result<RunSummary> {
    m.validate()?;
    fs::create_dir_all(&m.out).map_err(io_err(&m.out))?;
    match m.kind {
        DataKind::Synthetic => run_synthetic(m),
        DataKind::Image | DataKind::Frames => run_completion(m),
    }
}

/// Solve setup in the input's layout: the data, its mask and, for videos,
/// the frame count.
struct Source {
    data: DenseTensor,
    mask: ObservationMask,
    frames: Option<usize>,
}

fn load_source(m: &ExperimentManifest) -> Result<Source> {
    let input = m.input.as_ref().expect("validated");
    let (data, frames) = match m.kind {
        DataKind::Image => (io::load_image(input)?, None),
        _ => {
            let t = io::load_video_frames(input, false)?;
            let f = t.shape()[0];
            if m.merge_rows {
                (io::merge_frames(&t)?, Some(f))
            } else {
                (t, Some(f))
            }
        }
    };
    let mask = match m.mask.as_ref().expect("validated") {
        MaskSpec::Random { mr } => sample_mask(&data, *mr, m.seed)?,
        MaskSpec::Overlay(p) => {
            if data.order() != 3 {
                return Err(invalid("overlay masks need an image or a merged VST"));
            }
            io::mask_from_overlay(&data, &io::load_image(p)?)?
        }
    };
    Ok(Source { data, mask, frames })
}

/// Maps a source into the space the solver works in and back.
struct Transport {
    source_hw: (usize, usize),
    padded_hw: (usize, usize),
    layout: Option<KaLayout>,
}

impl Transport {
    fn new(m: &ExperimentManifest, shape: &[usize]) -> Result<Self> {
        if m.layout != crate::LayoutSpec::None && shape.len() != 3 {
            return Err(invalid("ket augmentation needs an (H, W, C) input; set merge_rows for videos"));
        }
        if shape.len() != 3 {
            return Ok(Self {
                source_hw: (0, 0),
                padded_hw: (0, 0),
                layout: None,
            });
        }
        let (h, w) = (shape[0], shape[1]);
        let padded_hw = match (m.pad, m.layout.covered_size()) {
            (true, Some((ph, pw))) if ph >= h && pw >= w => (ph, pw),
            (true, Some((ph, pw))) => {
                return Err(invalid(format!("layout covers {ph}x{pw}, smaller than the {h}x{w} input")))
            }
            _ => (h, w),
        };
        let layout = m.layout.build([padded_hw.0, padded_hw.1, shape[2]], m.coarse_first)?;
        Ok(Self {
            source_hw: (h, w),
            padded_hw,
            layout,
        })
    }

    fn padded(&self) -> bool {
        self.padded_hw != self.source_hw
    }

    fn forward_mask(&self, mask: &ObservationMask) -> Result<ObservationMask> {
        let mask = if self.padded() {
            // padding is never observed
            let (h, w) = self.source_hw;
            let (ph, pw) = self.padded_hw;
            let c = mask.shape()[2];
            let idx: Vec<usize> = mask
                .indices()
                .iter()
                .map(|&off| {
                    let (y, rest) = (off % h, off / h);
                    let (x, ch) = (rest % w, rest / w);
                    y + ph * (x + pw * ch)
                })
                .collect();
            ObservationMask::new(vec![ph, pw, c], idx, mask.values().to_vec())?
        } else {
            mask.clone()
        };
        Ok(match &self.layout {
            Some(l) => l.forward_mask(&mask)?,
            None => mask,
        })
    }

    #[cfg(test)]
    fn forward(&self, t: &DenseTensor) -> Result<DenseTensor> {
        let t = if self.padded() {
            ttc_core::augmentation::pad_edge(t, self.padded_hw.0, self.padded_hw.1)?
        } else {
            t.clone()
        };
        Ok(match &self.layout {
            Some(l) => l.forward(&t)?,
            None => t,
        })
    }

    fn inverse(&self, t: &DenseTensor) -> Result<DenseTensor> {
        let t = match &self.layout {
            Some(l) => l.inverse(t)?,
            None => t.clone(),
        };
        Ok(if self.padded() {
            crop(&t, self.source_hw.0, self.source_hw.1)?
        } else {
            t
        })
    }
}

fn candidates(m: &ExperimentManifest) -> Vec<SolverConfig> {
    let s = &m.solver;
    if !m.tune {
        return vec![s.clone()];
    }
    match s.engine {
        Engine::Shrinkage => PENALTY_FACTORS.iter().map(|&f| s.clone().with_penalty_factor(f)).collect(),
        Engine::Factorization if s.ranks.is_none() => {
            RANK_THRESHOLDS.iter().map(|&th| s.clone().with_rank_threshold(th)).collect()
        }
        Engine::Factorization => vec![s.clone()],
    }
}

fn run_completion(m: &ExperimentManifest) -> Result<RunSummary> {
    let src = load_source(m)?;
    let transport = Transport::new(m, src.data.shape())?;
    let mask = transport.forward_mask(&src.mask)?;
    info!(
        "solving {:?} ({} observed, layout {})",
        mask.shape(),
        mask.len(),
        transport.layout.as_ref().map_or("none".into(), |l| l.to_string())
    );

    let mut best: Option<(SolveReport, SolverConfig, DenseTensor, f64)> = None;
    for cfg in candidates(m) {
        let report = ttc_core::solve(&mask, &cfg)?;
        let recovered = transport.inverse(&report.recovered)?;
        let err = rse(&recovered, &src.data)?;
        info!("{} f={} th={}: rse {err:.4e}", cfg.algorithm(), cfg.penalty_factor, cfg.rank_threshold);
        if best.as_ref().is_none_or(|b| err < b.3) {
            best = Some((report, cfg, recovered, err));
        }
    }
    let (report, cfg, recovered, err) = best.expect("at least one candidate");

    let mut artifacts = Vec::new();
    let (ssim, per_frame_ssim) = match src.frames {
        None => {
            let path = m.out.join("recovered.png");
            io::save_image(&recovered, &path)?;
            artifacts.push(path);
            let observed = src.mask.zero_filled();
            let path = m.out.join("observed.png");
            io::save_image(&observed, &path)?;
            artifacts.push(path);
            (Some(ssim_image(&recovered, &src.data)?), Vec::new())
        }
        Some(f) => {
            let (rec4, ref4) = if m.merge_rows {
                (io::split_vst(&recovered, f)?, io::split_vst(&src.data, f)?)
            } else {
                (recovered.clone(), src.data.clone())
            };
            artifacts.extend(io::save_video_frames(&rec4, m.out.join("frames"))?);
            let q = mean_ssim(&rec4, &ref4, 1)?;
            (q.ssim, q.per_frame_ssim)
        }
    };

    let run = RunReport {
        solver: cfg.algorithm().to_string(),
        rse: err,
        ssim,
        per_frame_ssim,
        source_shape: src.data.shape().to_vec(),
        solved_shape: mask.shape().to_vec(),
        layout: transport.layout.as_ref().map_or("none".into(), |l| l.to_string()),
        observed: src.mask.len(),
        missing_ratio: src.mask.missing_ratio(),
        iterations: report.iterations,
        converged: report.converged,
        penalty_factor: cfg.penalty_factor,
        rank_threshold: cfg.rank_threshold,
        ranks: report.ranks.clone(),
        weights: report.weights.clone(),
        seed: m.seed,
        tuned: m.tune,
        elapsed_secs: report.elapsed_secs,
    };
    artifacts.push(write(&m.out.join("report.json"), &serde_json::to_string_pretty(&run)?)?);
    artifacts.push(write(&m.out.join("trace.csv"), &trace_csv(&report))?);
    artifacts.push(write(&m.out.join("manifest.txt"), &m.to_text())?);
    Ok(RunSummary::Completion { report: run, artifacts })
}

/// Solve in the augmented space and map back; exposed for callers that
/// hold tensors rather than files.
pub fn complete_image(
    image: &DenseTensor,
    mask: &ObservationMask,
    layout: Option<&KaLayout>,
    cfg: &SolverConfig,
) -> Result<(DenseTensor, SolveReport)> {
    let solved_mask = match layout {
        Some(l) => l.forward_mask(mask)?,
        None => mask.clone(),
    };
    let report = ttc_core::solve(&solved_mask, cfg)?;
    let recovered = match layout {
        Some(l) => l.inverse(&report.recovered)?,
        None => report.recovered.clone(),
    };
    if recovered.shape() != image.shape() {
        return Err(invalid("layout does not match the image"));
    }
    Ok((recovered, report))
}

pub fn trace_csv(report: &SolveReport) -> String {
    let mut s = String::from("iteration,relative_change,objective\n");
    for e in &report.trace {
        let obj = e.objective.map_or(String::new(), |o| format!("{o:e}"));
        s.push_str(&format!("{},{:e},{obj}\n", e.iteration, e.relative_change));
    }
    s
}

fn write(path: &Path, contents: &str) -> Result<PathBuf> {
    fs::write(path, contents).map_err(io_err(path))?;
    Ok(path.to_path_buf())
}

fn write_bytes(path: &Path, contents: &[u8]) -> Result<PathBuf> {
    fs::write(path, contents).map_err(io_err(path))?;
    Ok(path.to_path_buf())
}

fn run_synthetic(m: &ExperimentManifest) -> Result<RunSummary> {
    let s = m.synthetic.as_ref().expect("validated");
    let mut cfg = PhaseDiagramConfig::new(s.generator, s.shape.clone(), s.ranks.clone(), s.missing_ratios.clone());
    cfg.trials = s.trials;
    cfg.seed = m.seed;
    cfg.success_threshold = s.threshold;
    cfg.workers = s.workers;
    cfg.solvers = s
        .solvers
        .iter()
        .map(|name| {
            let base = SolverConfig::preset(name)?
                .with_penalty_factor(m.solver.penalty_factor)
                .with_rank_threshold(m.solver.rank_threshold)
                .with_tol(m.solver.tol)
                .with_max_iter(m.solver.max_iter);
            let mut spec = SolverSpec::new(name.clone(), base);
            spec.true_ranks = s.true_ranks;
            spec.tune = m.tune;
            Ok(spec)
        })
        .collect::<Result<_>>()?;
    let grids = run_phase_diagram(&cfg)?;

    let mut artifacts = Vec::new();
    let all: Vec<_> = grids.iter().flat_map(|g| g.records.iter().cloned()).collect();
    artifacts.push(write(&m.out.join("phase.csv"), &records_to_csv(&all))?);
    let mut summaries = Vec::new();
    for g in &grids {
        artifacts.push(write(&m.out.join(format!("phase_{}.csv", g.solver)), &g.to_csv())?);
        artifacts.push(write_bytes(&m.out.join(format!("phase_{}.pgm", g.solver)), &g.to_pgm(16))?);
        summaries.push(GridSummary {
            solver: g.solver.clone(),
            ranks: g.ranks.clone(),
            missing_ratios: g.missing_ratios.clone(),
            mean_rse: g.cells.clone(),
            success: (0..g.ranks.len())
                .map(|i| (0..g.missing_ratios.len()).map(|j| g.is_success(i, j)).collect())
                .collect(),
            success_threshold: g.success_threshold,
            trials: g.trials,
            seed: g.seed,
        });
    }
    artifacts.push(write(&m.out.join("summary.json"), &serde_json::to_string_pretty(&summaries)?)?);
    artifacts.push(write(&m.out.join("manifest.txt"), &m.to_text())?);
    Ok(RunSummary::PhaseDiagram {
        grids: summaries,
        artifacts,
    })
}
