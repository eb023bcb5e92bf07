//! Synthetic low-rank data, random masks and phase-diagram sweeps.

use std::fmt::Write as _;
use std::time::Instant;

use log::warn;
use nalgebra::DMatrix;
use rand::seq::index;
use rayon::prelude::*;

use crate::algorithms::{solve, Engine, Scheme, SolveReport, SolverConfig, PENALTY_FACTORS, RANK_THRESHOLDS};
use crate::error::{Error, Result};
use crate::mask::ObservationMask;
use crate::metrics::rse;
use crate::random::{derive_seed, gaussian_matrix, gaussian_vec, seeded};
use crate::tensor::{fold_matrix, DenseTensor, Split};

/// Tensor with entries `A1[i1] A2[i2] ... AN[iN]` for standard normal TT
/// cores, so that `rank(X_[k]) <= ranks[k-1]`.
pub fn gen_tt_tensor(shape: &[usize], ranks: &[usize], seed: u64) -> Result<DenseTensor> {
    let order = shape.len();
    if order < 2 || ranks.len() != order - 1 {
        return Err(Error::arg(format!(
            "TT generator needs N >= 2 and N-1 ranks, got shape {shape:?} and ranks {ranks:?}"
        )));
    }
    if ranks.contains(&0) {
        return Err(Error::arg("TT ranks must be positive"));
    }
    DenseTensor::zeros(shape)?;
    for (k, &r) in ranks.iter().enumerate() {
        let left: usize = shape[..=k].iter().product();
        let right: usize = shape[k + 1..].iter().product();
        if r > left.min(right) {
            warn!("TT rank {r} at split {} exceeds {}; effective rank saturates", k + 1, left.min(right));
        }
    }
    let mut rng = seeded(seed);
    // running left contraction, (I_1 ... I_k) x r_k
    let mut acc = gaussian_matrix(shape[0], ranks[0], &mut rng);
    for k in 1..order {
        let r_in = ranks[k - 1];
        let r_out = if k + 1 < order { ranks[k] } else { 1 };
        // core as r_in x (I_k r_out), column index i + I_k * r'
        let core = gaussian_matrix(r_in, shape[k] * r_out, &mut rng);
        let rows = acc.nrows() * shape[k];
        let next = &acc * core;
        acc = DMatrix::from_vec(rows, r_out, next.data.into());
    }
    DenseTensor::new(shape.to_vec(), acc.data.into())
}

/// Mode-n product `t x_n m`: multiplies every mode-n fiber by `m`
/// (`J x I_n`), giving a tensor whose mode `n` has size `J`.
pub fn mode_n_product(t: &DenseTensor, m: &DMatrix<f64>, n: usize) -> Result<DenseTensor> {
    let view = t.unfold_mode_n(n)?;
    if m.ncols() != view.matrix.nrows() {
        return Err(Error::arg(format!(
            "mode-{n} product needs {} columns, got {}",
            view.matrix.nrows(),
            m.ncols()
        )));
    }
    let mut shape = t.shape().to_vec();
    shape[n - 1] = m.nrows();
    fold_matrix(&(m * view.matrix), &shape, Split::ModeN(n))
}

/// `G x_1 A1^T ... x_N AN^T` with a standard normal core `G` of shape
/// `ranks` and standard normal factors `A_k` (`r_k x I_k`).
pub fn gen_tucker_tensor(shape: &[usize], ranks: &[usize], seed: u64) -> Result<DenseTensor> {
    if ranks.len() != shape.len() {
        return Err(Error::arg(format!(
            "Tucker generator needs one rank per mode, got shape {shape:?} and ranks {ranks:?}"
        )));
    }
    DenseTensor::zeros(shape)?;
    if ranks.contains(&0) {
        return Err(Error::arg("Tucker ranks must be positive"));
    }
    for (k, (&r, &d)) in ranks.iter().zip(shape).enumerate() {
        if r > d {
            warn!("Tucker rank {r} exceeds dimension {d} in mode {}; effective rank saturates", k + 1);
        }
    }
    let mut rng = seeded(seed);
    let core_len = ranks.iter().product();
    let mut t = DenseTensor::new(ranks.to_vec(), gaussian_vec(core_len, &mut rng))?;
    for (k, (&r, &d)) in ranks.iter().zip(shape).enumerate() {
        let a = gaussian_matrix(r, d, &mut rng);
        t = mode_n_product(&t, &a.transpose(), k + 1)?;
    }
    Ok(t)
}

/// `round((1 - mr) * total)` distinct offsets drawn uniformly, sorted.
pub fn sample_indices(shape: &[usize], mr: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&mr) {
        return Err(Error::arg(format!("missing ratio must lie in [0, 1), got {mr}")));
    }
    let total: usize = shape.iter().product();
    let count = ((1.0 - mr) * total as f64).round() as usize;
    if count == 0 {
        return Err(Error::arg(format!(
            "missing ratio {mr} leaves no observed entries out of {total}"
        )));
    }
    let mut rng = seeded(seed);
    let mut picked = index::sample(&mut rng, total, count).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Uniform random observation of `t` at missing ratio `mr`.
pub fn sample_mask(t: &DenseTensor, mr: f64, seed: u64) -> Result<ObservationMask> {
    ObservationMask::observe(t, sample_indices(t.shape(), mr, seed)?)
}

/// Best run of `cfg` by RSE against `truth`, one run per candidate value
/// written into the config by `set`. Returns the report, the winning value
/// and its RSE.
pub fn solve_best_of(
    mask: &ObservationMask,
    cfg: &SolverConfig,
    truth: &DenseTensor,
    candidates: &[f64],
    set: impl Fn(SolverConfig, f64) -> SolverConfig,
) -> Result<(SolveReport, f64, f64)> {
    let mut best: Option<(SolveReport, f64, f64)> = None;
    for &v in candidates {
        let report = solve(mask, &set(cfg.clone(), v))?;
        let err = rse(&report.recovered, truth)?;
        if best.as_ref().is_none_or(|b| err < b.2) {
            best = Some((report, v, err));
        }
    }
    best.ok_or_else(|| Error::arg("empty candidate list"))
}

/// Best-of-`f` over the penalty sweep. The factorization engine does not
/// use `f`, so it runs once.
pub fn solve_best_f(
    mask: &ObservationMask,
    cfg: &SolverConfig,
    truth: &DenseTensor,
) -> Result<(SolveReport, f64, f64)> {
    let factors: &[f64] = match cfg.engine {
        Engine::Shrinkage => &PENALTY_FACTORS,
        Engine::Factorization => std::slice::from_ref(&cfg.penalty_factor),
    };
    solve_best_of(mask, cfg, truth, factors, SolverConfig::with_penalty_factor)
}

/// Best-of-`th` over [`RANK_THRESHOLDS`] for rank initialization. Runs once
/// when the config fixes its ranks or uses the shrinkage engine.
pub fn solve_best_th(
    mask: &ObservationMask,
    cfg: &SolverConfig,
    truth: &DenseTensor,
) -> Result<(SolveReport, f64, f64)> {
    let ths: &[f64] = if cfg.engine == Engine::Factorization && cfg.ranks.is_none() {
        &RANK_THRESHOLDS
    } else {
        std::slice::from_ref(&cfg.rank_threshold)
    };
    solve_best_of(mask, cfg, truth, ths, SolverConfig::with_rank_threshold)
}

/// Which low-rank model a synthetic tensor follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeneratorKind {
    TensorTrain,
    Tucker,
}

impl GeneratorKind {
    /// A tensor of the given shape with every rank component equal to `rank`.
    pub fn generate(&self, shape: &[usize], rank: usize, seed: u64) -> Result<DenseTensor> {
        match self {
            GeneratorKind::TensorTrain => gen_tt_tensor(shape, &vec![rank; shape.len().saturating_sub(1)], seed),
            GeneratorKind::Tucker => gen_tucker_tensor(shape, &vec![rank; shape.len()], seed),
        }
    }
}

/// Exact ranks of the matricizations a scheme penalizes, for data from
/// `kind` with every rank component equal to `rank`.
pub fn true_ranks(kind: GeneratorKind, shape: &[usize], rank: usize, scheme: Scheme) -> Vec<usize> {
    let order = shape.len();
    let sat = |r: usize, split: Split| {
        let (rows, cols) = split.dims(shape).expect("valid split");
        r.min(rows).min(cols)
    };
    let pow = |k: usize| rank.saturating_pow(k as u32);
    match (kind, scheme) {
        (GeneratorKind::TensorTrain, Scheme::TensorTrain | Scheme::Square) => {
            (1..order).map(|k| sat(rank, Split::Prefix(k))).collect()
        }
        (GeneratorKind::TensorTrain, Scheme::Tucker) => (1..=order)
            .map(|n| {
                let links = usize::from(n > 1) + usize::from(n < order);
                sat(pow(links), Split::ModeN(n))
            })
            .collect(),
        (GeneratorKind::Tucker, Scheme::TensorTrain | Scheme::Square) => (1..order)
            .map(|k| sat(pow(k).min(pow(order - k)), Split::Prefix(k)))
            .collect(),
        (GeneratorKind::Tucker, Scheme::Tucker) => (1..=order).map(|n| sat(rank, Split::ModeN(n))).collect(),
    }
}

/// One solver column of a phase-diagram sweep.
#[derive(Debug, Clone)]
pub struct SolverSpec {
    pub name: String,
    pub config: SolverConfig,
    /// Supply the generator's exact ranks to the factorization engine.
    pub true_ranks: bool,
    /// Try every penalty factor (shrinkage) or rank threshold
    /// (factorization without fixed ranks) and keep the best RSE.
    pub tune: bool,
}

impl SolverSpec {
    pub fn new(name: impl Into<String>, config: SolverConfig) -> Self {
        Self {
            name: name.into(),
            config,
            true_ranks: false,
            tune: false,
        }
    }

    /// Named preset (`"tmac-tt"`, ...) with default settings.
    pub fn preset(name: &str) -> Result<Self> {
        Ok(Self::new(name, SolverConfig::preset(name)?))
    }

    pub fn with_true_ranks(mut self) -> Self {
        self.true_ranks = true;
        self
    }

    pub fn with_tuning(mut self) -> Self {
        self.tune = true;
        self
    }
}

#[derive(Debug, Clone)]
pub struct PhaseDiagramConfig {
    pub kind: GeneratorKind,
    pub shape: Vec<usize>,
    pub ranks: Vec<usize>,
    pub missing_ratios: Vec<f64>,
    pub solvers: Vec<SolverSpec>,
    pub trials: usize,
    pub seed: u64,
    /// A cell succeeds when its mean RSE is at most this.
    pub success_threshold: f64,
    /// Worker threads; 0 uses the global rayon pool.
    pub workers: usize,
}

impl PhaseDiagramConfig {
    pub fn new(kind: GeneratorKind, shape: Vec<usize>, ranks: Vec<usize>, missing_ratios: Vec<f64>) -> Self {
        Self {
            kind,
            shape,
            ranks,
            missing_ratios,
            solvers: Vec::new(),
            trials: 3,
            seed: 0,
            success_threshold: 1e-2,
            workers: 0,
        }
    }
}

/// One solver run in one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub solver: String,
    pub rank: usize,
    pub mr: f64,
    pub trial: usize,
    pub rse: f64,
    pub iterations: usize,
    pub seconds: f64,
}

pub const CSV_HEADER: &str = "solver,rank,mr,trial,rse,iterations,seconds";

impl CellRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:e},{},{:.6}",
            self.solver, self.rank, self.mr, self.trial, self.rse, self.iterations, self.seconds
        )
    }
}

/// Mean RSE per `(rank, mr)` cell for one solver.
#[derive(Debug, Clone)]
pub struct PhaseGrid {
    pub solver: String,
    pub ranks: Vec<usize>,
    pub missing_ratios: Vec<f64>,
    /// `cells[i][j]` is the mean RSE at `ranks[i]`, `missing_ratios[j]`.
    pub cells: Vec<Vec<f64>>,
    pub success_threshold: f64,
    pub trials: usize,
    pub seed: u64,
    pub records: Vec<CellRecord>,
}

impl PhaseGrid {
    pub fn is_success(&self, i: usize, j: usize) -> bool {
        self.cells[i][j] <= self.success_threshold
    }

    pub fn to_csv(&self) -> String {
        records_to_csv(&self.records)
    }

    /// Binary PGM of the grid: ranks grow downwards, missing ratios to the
    /// right; successful cells white, failed (RSE 1) black, the rest gray.
    pub fn to_pgm(&self, cell_px: usize) -> Vec<u8> {
        let cell_px = cell_px.max(1);
        let (h, w) = (self.ranks.len() * cell_px, self.missing_ratios.len() * cell_px);
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        for y in 0..h {
            for x in 0..w {
                let (i, j) = (y / cell_px, x / cell_px);
                let level = if self.is_success(i, j) {
                    255
                } else {
                    (200.0 * (1.0 - self.cells[i][j].min(1.0))).round() as u8
                };
                out.push(level);
            }
        }
        out
    }
}

pub fn records_to_csv(records: &[CellRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    s
}

/// Seed of the synthetic tensor and mask in a cell; shared by all solvers
/// so they see identical data.
pub fn cell_data_seed(master: u64, rank: usize, mr: f64, trial: usize) -> u64 {
    derive_seed(&[master, 0xda7a, rank as u64, mr.to_bits(), trial as u64])
}

fn cell_solver_seed(master: u64, solver: usize, rank: usize, mr: f64, trial: usize) -> u64 {
    derive_seed(&[master, 0x501e, solver as u64, rank as u64, mr.to_bits(), trial as u64])
}

fn run_cell(cfg: &PhaseDiagramConfig, solver: usize, rank: usize, mr: f64, trial: usize) -> CellRecord {
    let spec = &cfg.solvers[solver];
    let start = Instant::now();
    let outcome = (|| -> Result<(f64, usize)> {
        let data_seed = cell_data_seed(cfg.seed, rank, mr, trial);
        let truth = cfg.kind.generate(&cfg.shape, rank, data_seed)?;
        let mask = sample_mask(&truth, mr, derive_seed(&[data_seed, 1]))?;
        let mut sc = spec.config.clone().with_seed(cell_solver_seed(cfg.seed, solver, rank, mr, trial));
        if spec.true_ranks {
            sc.ranks = Some(true_ranks(cfg.kind, &cfg.shape, rank, sc.scheme));
        }
        let (report, err) = if spec.tune {
            let (r, _, e) = match sc.engine {
                Engine::Shrinkage => solve_best_f(&mask, &sc, &truth)?,
                Engine::Factorization => solve_best_th(&mask, &sc, &truth)?,
            };
            (r, e)
        } else {
            let r = solve(&mask, &sc)?;
            let e = rse(&r.recovered, &truth)?;
            (r, e)
        };
        if !err.is_finite() {
            return Err(Error::numerical(report.iterations, "non-finite RSE"));
        }
        Ok((err, report.iterations))
    })();
    let (err, iterations) = outcome.unwrap_or_else(|e| {
        warn!("{} r={rank} mr={mr} trial={trial} failed: {e}", spec.name);
        (1.0, 0)
    });
    CellRecord {
        solver: spec.name.clone(),
        rank,
        mr,
        trial,
        rse: err,
        iterations,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs every `(solver, rank, mr, trial)` combination and aggregates a
/// [`PhaseGrid`] per solver. Failed runs count as RSE 1.
pub fn run_phase_diagram(cfg: &PhaseDiagramConfig) -> Result<Vec<PhaseGrid>> {
    if cfg.ranks.is_empty() || cfg.missing_ratios.is_empty() || cfg.solvers.is_empty() || cfg.trials == 0 {
        return Err(Error::arg("phase diagram needs nonempty axes, solvers and trials"));
    }
    let total: usize = cfg.shape.iter().product();
    if total > 1_000_000 {
        warn!("phase diagram over {total} entries per tensor; expect long runtimes");
    }
    let mut jobs = Vec::new();
    for s in 0..cfg.solvers.len() {
        for &r in &cfg.ranks {
            for &mr in &cfg.missing_ratios {
                for t in 0..cfg.trials {
                    jobs.push((s, r, mr, t));
                }
            }
        }
    }
    let exec = || -> Vec<CellRecord> {
        jobs.par_iter()
            .map(|&(s, r, mr, t)| run_cell(cfg, s, r, mr, t))
            .collect()
    };
    let records = if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::arg(format!("thread pool: {e}")))?
            .install(exec)
    } else {
        exec()
    };

    Ok(cfg
        .solvers
        .iter()
        .map(|spec| {
            let mine: Vec<CellRecord> = records.iter().filter(|r| r.solver == spec.name).cloned().collect();
            let cells = cfg
                .ranks
                .iter()
                .map(|&r| {
                    cfg.missing_ratios
                        .iter()
                        .map(|&mr| {
                            let hits: Vec<f64> = mine
                                .iter()
                                .filter(|c| c.rank == r && c.mr.to_bits() == mr.to_bits())
                                .map(|c| c.rse)
                                .collect();
                            hits.iter().sum::<f64>() / hits.len() as f64
                        })
                        .collect()
                })
                .collect();
            PhaseGrid {
                solver: spec.name.clone(),
                ranks: cfg.ranks.clone(),
                missing_ratios: cfg.missing_ratios.clone(),
                cells,
                success_threshold: cfg.success_threshold,
                trials: cfg.trials,
                seed: cfg.seed,
                records: mine,
            }
        })
        .collect())
}

/// A smooth synthetic color clip `(frames, height, width, 3)` with values
/// in `[0, 1]`: a drifting background gradient, a panning low-frequency
/// texture and a few blobs moving on straight paths.
pub fn gen_video_clip(frames: usize, height: usize, width: usize, seed: u64) -> Result<DenseTensor> {
    let mut rng = seeded(seed);
    let params = gaussian_vec(32, &mut rng);
    let (h, w) = (height as f64, width as f64);
    let blobs: Vec<[f64; 7]> = (0..3)
        .map(|b| {
            let p = &params[8 + 7 * b..8 + 7 * (b + 1)];
            [
                0.2 + 0.6 * sigmoid(p[0]),          // start row (fraction)
                0.2 + 0.6 * sigmoid(p[1]),          // start col
                0.01 * p[2],                        // row velocity per frame
                0.01 * p[3],                        // col velocity
                0.08 + 0.08 * sigmoid(p[4]),        // radius (fraction)
                sigmoid(p[5]),                      // hue-ish mix
                0.3 + 0.4 * sigmoid(p[6]),          // intensity
            ]
        })
        .collect();
    DenseTensor::from_fn(&[frames, height, width, 3], |i| {
        let (f, y, x, c) = (i[0] as f64, i[1] as f64 / h, i[2] as f64 / w, i[3]);
        let tint = [0.9, 0.7, 0.5][c];
        let mut v = 0.25 + 0.25 * tint * (y + 0.5 * x + 0.01 * f * params[0]).clamp(0.0, 1.5);
        v += 0.08 * ((6.0 * x + 0.15 * f + params[1]).sin() * (4.0 * y + params[2]).cos());
        for b in &blobs {
            let cy = b[0] + b[2] * f;
            let cx = b[1] + b[3] * f;
            let d2 = ((y - cy).powi(2) + (x - cx).powi(2)) / (b[4] * b[4]);
            let color = [b[5], 1.0 - b[5], 0.5][c];
            v += b[6] * color * (-d2).exp();
        }
        v.clamp(0.0, 1.0)
    })
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
