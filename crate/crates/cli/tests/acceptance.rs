//! Exit criteria. Each test writes one `criterion N ...: PASS|FAIL` line to
//! stderr (outside the test harness capture) and then asserts it.
//!
//! Criterion 4 reads the test image from `TTC_PEPPERS` when set, otherwise
//! it uses the bundled `tests/data/astronaut256.png`.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use ttc_cli::io::{load_image, merge_frames, save_video_frames, split_vst};
use ttc_cli::{run_manifest, DataKind, ExperimentManifest, LayoutSpec, RunSummary};
use ttc_core::algorithms::{solve_observed, RANK_THRESHOLDS};
use ttc_core::linalg::{numerical_rank, shrink, singular_values};
use ttc_core::metrics::{entanglement_entropy, entanglement_entropy_reduced, mean_ssim, rse};
use ttc_core::synthetic::{
    gen_tt_tensor, gen_tucker_tensor, gen_video_clip, run_phase_diagram, sample_mask, solve_best_f, solve_best_th,
    true_ranks, GeneratorKind, PhaseDiagramConfig, SolverSpec,
};
use ttc_core::{solve, DenseTensor, Engine, KaLayout, Matrix, ObservationMask, Scheme, SolverConfig, Split};

fn verdict(id: u32, name: &str, pass: bool, detail: String) {
    let line = format!(
        "criterion {id} [{name}]: {} | {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = writeln!(std::io::stderr(), "{line}");
    assert!(pass, "{line}");
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

#[test]
fn criterion_1_tt_recovery_at_high_missing_ratio() {
    const TOL: f64 = 1e-3;
    const MAX_ITER: usize = 1000;
    const BUDGET_SECS: f64 = 300.0;
    let start = Instant::now();
    let shape = [20, 20, 20, 20];
    let truth = gen_tt_tensor(&shape, &[4, 4, 4], 101).unwrap();
    let mask = sample_mask(&truth, 0.9, 102).unwrap();
    let cfg = SolverConfig::preset("tmac-tt")
        .unwrap()
        .with_ranks(true_ranks(GeneratorKind::TensorTrain, &shape, 4, Scheme::TensorTrain))
        .with_max_iter(MAX_ITER)
        .with_seed(103);
    let report = solve(&mask, &cfg).unwrap();
    let err = rse(&report.recovered, &truth).unwrap();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        "20^4 TT rank 4, mr 0.9, TMac-TT",
        err <= TOL && report.iterations <= MAX_ITER && secs <= BUDGET_SECS,
        format!(
            "rse {err:.3e} (<= {TOL:e}), {} iterations, {secs:.1}s (<= {BUDGET_SECS}s)",
            report.iterations
        ),
    );
}

#[test]
fn criterion_2_tt_schemes_beat_tucker_schemes() {
    const INSTANCES: u64 = 10;
    let shape = [10; 5];
    let mut medians = Vec::new();
    let mut lines = Vec::new();
    let names = ["silrtc-tt", "silrtc", "tmac-tt", "tmac"];
    let mut errs = vec![Vec::new(); names.len()];
    for i in 0..INSTANCES {
        let truth = gen_tt_tensor(&shape, &[3; 4], 200 + i).unwrap();
        let mask = sample_mask(&truth, 0.7, 300 + i).unwrap();
        for (slot, name) in names.iter().enumerate() {
            let cfg = SolverConfig::preset(name).unwrap().with_seed(400 + i);
            // f only enters the shrinkage engine; the factorization engine is
            // tuned through its rank threshold instead
            let (_, _, err) = match cfg.engine {
                Engine::Shrinkage => solve_best_f(&mask, &cfg, &truth).unwrap(),
                Engine::Factorization => solve_best_th(&mask, &cfg, &truth).unwrap(),
            };
            errs[slot].push(err);
        }
    }
    for (name, e) in names.iter().zip(&errs) {
        let m = median(e.clone());
        lines.push(format!("{name} median {m:.3e}"));
        medians.push(m);
    }
    verdict(
        2,
        "median RSE ordering on 10 instances of 10^5, mr 0.7",
        medians[0] < medians[1] && medians[2] < medians[3],
        lines.join(", "),
    );
}

#[test]
fn criterion_3_phase_diagram_corners() {
    const SUCCESS: f64 = 1e-2;
    const BUDGET_SECS: f64 = 1800.0;
    let start = Instant::now();
    let mut cfg = PhaseDiagramConfig::new(
        GeneratorKind::TensorTrain,
        vec![10; 5],
        vec![2, 6, 10],
        vec![0.5, 0.7, 0.9],
    );
    cfg.solvers = vec![SolverSpec::preset("tmac-tt").unwrap().with_true_ranks()];
    cfg.success_threshold = SUCCESS;
    cfg.seed = 500;
    let grid = &run_phase_diagram(&cfg).unwrap()[0];
    let secs = start.elapsed().as_secs_f64();
    let all = (0..3).all(|i| (0..3).all(|j| grid.is_success(i, j)));
    let worst = grid.cells.iter().flatten().copied().fold(0.0, f64::max);
    let cells: Vec<String> = grid
        .ranks
        .iter()
        .zip(&grid.cells)
        .map(|(r, row)| format!("r{r}: {}", row.iter().map(|v| format!("{v:.1e}")).collect::<Vec<_>>().join(" ")))
        .collect();
    verdict(
        3,
        "TMac-TT phase grid r {2,6,10} x mr {0.5,0.7,0.9}",
        all && secs <= BUDGET_SECS,
        format!("worst mean rse {worst:.2e} (<= {SUCCESS:e}), {secs:.0}s; {}", cells.join("; ")),
    );
}

#[test]
fn criterion_4_image_completion_band() {
    const LOW: f64 = 0.12;
    const HIGH: f64 = 0.20;
    let (path, label) = match std::env::var_os("TTC_PEPPERS") {
        Some(p) => (PathBuf::from(p), "TTC_PEPPERS image"),
        None => (data_dir().join("astronaut256.png"), "substitute astronaut256.png (Peppers unavailable)"),
    };
    let image = load_image(&path).unwrap();
    assert_eq!(image.shape(), &[256, 256, 3]);
    let layout = KaLayout::uniform([256, 256, 3], 2, 2).unwrap();
    assert_eq!(layout.augmented_shape().len(), 9);
    let mask = sample_mask(&image, 0.9, 600).unwrap();
    let aug_mask = layout.forward_mask(&mask).unwrap();
    let aug_truth = layout.forward(&image).unwrap();
    let cfg = SolverConfig::preset("tmac-tt").unwrap().with_seed(601);
    let mut best: Option<(f64, f64, f64)> = None;
    let mut tried = Vec::new();
    for &th in &RANK_THRESHOLDS {
        // the f sweep is a no-op for this engine
        let (report, f, _) = solve_best_f(&aug_mask, &cfg.clone().with_rank_threshold(th), &aug_truth).unwrap();
        let err = rse(&layout.inverse(&report.recovered).unwrap(), &image).unwrap();
        tried.push(format!("th {th}: {err:.4}"));
        if best.is_none_or(|b| err < b.0) {
            best = Some((err, th, f));
        }
    }
    let (err, th, f) = best.unwrap();
    verdict(
        4,
        "256x256x3 at mr 0.9, KA order 9, TMac-TT",
        (LOW..=HIGH).contains(&err),
        format!("{label}: best rse {err:.4} at th {th} f {f} (band [{LOW}, {HIGH}]); {}", tried.join(", ")),
    );
}

#[test]
fn criterion_5_tucker_data_parity() {
    const FACTOR: f64 = 2.0;
    let shape = [10; 5];
    let truth = gen_tucker_tensor(&shape, &[3; 5], 700).unwrap();
    let mask = sample_mask(&truth, 0.5, 701).unwrap();
    let run = |scheme| {
        let cfg = SolverConfig::new(scheme, Engine::Factorization)
            .with_ranks(true_ranks(GeneratorKind::Tucker, &shape, 3, scheme))
            .with_seed(702);
        rse(&solve(&mask, &cfg).unwrap().recovered, &truth).unwrap()
    };
    let tt = run(Scheme::TensorTrain);
    let tucker = run(Scheme::Tucker);
    verdict(
        5,
        "Tucker rank 3 data, 10^5, mr 0.5",
        tt <= FACTOR * tucker,
        format!("TMac-TT {tt:.3e} <= {FACTOR} x TMac {tucker:.3e}"),
    );
}

struct Mix(u64);

impl Mix {
    fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }
}

fn shape_and_data() -> impl Strategy<Value = (Vec<usize>, Vec<f64>)> {
    prop::collection::vec(1usize..=5, 2..=5).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        (Just(shape), prop::collection::vec(-1e3f64..1e3, n))
    })
}

fn fold_round_trips() -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&shape_and_data(), |(shape, data)| {
            let t = DenseTensor::new(shape.clone(), data).unwrap();
            for k in 1..=shape.len() {
                let mut splits = vec![Split::ModeN(k)];
                if k < shape.len() {
                    splits.push(Split::Prefix(k));
                }
                for split in splits {
                    let back = t.unfold(split).unwrap().fold().unwrap();
                    prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn mode_n_column_formula() -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases: 200,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&shape_and_data(), |(shape, data)| {
            let t = DenseTensor::new(shape.clone(), data).unwrap();
            for n in 1..=shape.len() {
                let m = t.unfold_mode_n(n).unwrap().matrix;
                for off in 0..t.len() {
                    let idx = t.multi_index(off);
                    // column = sum over k != n of i_k * prod of earlier dims except n
                    let mut col = 0;
                    let mut stride = 1;
                    for (k, (&i, &d)) in idx.iter().zip(&shape).enumerate() {
                        if k + 1 != n {
                            col += i * stride;
                            stride *= d;
                        }
                    }
                    prop_assert_eq!(m[(idx[n - 1], col)].to_bits(), t.data()[off].to_bits());
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn nuclear(m: &Matrix) -> f64 {
    singular_values(m).unwrap().iter().sum()
}

fn shrink_is_proximal() -> Result<(), String> {
    let mut rng = Mix(800);
    let gamma = 0.5;
    for trial in 0..20 {
        let m = Matrix::from_fn(4, 4, |_, _| rng.next());
        let x = shrink(&m, gamma).unwrap();
        let obj = |y: &Matrix| gamma * nuclear(y) + 0.5 * (y - &m).norm_squared();
        let at = obj(&x);
        for _ in 0..1000 {
            let scale = 10f64.powf(-3.0 * (rng.next() + 1.0));
            let y = &x + Matrix::from_fn(4, 4, |_, _| scale * rng.next());
            if obj(&y) < at - 1e-12 {
                return Err(format!("trial {trial}: perturbation lowers the objective"));
            }
        }
    }
    Ok(())
}

fn fidelity_every_iteration() -> Result<(), String> {
    let t = gen_tt_tensor(&[5, 4, 6, 3], &[2, 3, 2], 810).unwrap();
    let mask = sample_mask(&t, 0.6, 811).unwrap();
    for name in ["silrtc", "silrtc-tt", "silrtc-square", "tmac", "tmac-tt", "tmac-square"] {
        let cfg = SolverConfig::preset(name).unwrap().with_max_iter(30).with_tol(0.0);
        let mut bad = None;
        solve_observed(&mask, &cfg, |it, x| {
            if bad.is_none() && !mask.agrees_with(x) {
                bad = Some(it);
            }
        })
        .map_err(|e| e.to_string())?;
        if let Some(it) = bad {
            return Err(format!("{name} changed observed entries at iteration {it}"));
        }
    }
    Ok(())
}

fn objective_monotone() -> Result<(), String> {
    for seed in 0..20u64 {
        let t = gen_tt_tensor(&[5, 6, 4, 5], &[2, 3, 2], 820 + seed).unwrap();
        let mask = sample_mask(&t, 0.5, 840 + seed).unwrap();
        let cfg = SolverConfig::preset("silrtc-tt")
            .unwrap()
            .with_penalty_factor([0.01, 0.05, 0.1, 0.5, 1.0][seed as usize % 5])
            .with_max_iter(150)
            .with_tol(0.0);
        let report = solve(&mask, &cfg).map_err(|e| e.to_string())?;
        let obj: Vec<f64> = report.trace.iter().filter_map(|e| e.objective).collect();
        if let Some(w) = obj.windows(2).find(|w| w[1] > w[0] * (1.0 + 1e-12) + 1e-12) {
            return Err(format!("seed {seed}: objective rose {} -> {}", w[0], w[1]));
        }
    }
    Ok(())
}

fn ka_is_a_norm_preserving_bijection() -> Result<(), String> {
    let mut rng = Mix(850);
    for (shape, u, v, modes) in [([256, 256, 3], 2, 2, 9), ([27, 8, 3], 3, 2, 4)] {
        let img = DenseTensor::from_fn(&shape, |_| rng.next()).unwrap();
        let layout = KaLayout::uniform(shape, u, v).map_err(|e| e.to_string())?;
        let aug = layout.forward(&img).map_err(|e| e.to_string())?;
        if aug.order() != modes || aug.shape()[..modes - 1].iter().any(|&d| d != u * v) {
            return Err(format!("unexpected layout {:?}", aug.shape()));
        }
        let mut a = img.data().to_vec();
        let mut b = aug.data().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        if a != b {
            return Err(format!("{shape:?}: entries not preserved"));
        }
        // same entries, different summation order
        let (na, nb) = (aug.frobenius_norm(), img.frobenius_norm());
        if (na - nb).abs() > 1e-12 * nb {
            return Err(format!("{shape:?}: norm {na} vs {nb}"));
        }
        if layout.inverse(&aug).map_err(|e| e.to_string())? != img {
            return Err(format!("{shape:?}: inverse mismatch"));
        }
    }
    Ok(())
}

fn entropy_checks() -> Result<(), String> {
    let outer = DenseTensor::from_fn(&[3, 4, 5], |i| (1 + i[0]) as f64 * (2 + i[1]) as f64 * (3 - i[2] as i64) as f64)
        .unwrap();
    for k in 1..3 {
        let s = entanglement_entropy(&outer, Split::Prefix(k)).map_err(|e| e.to_string())?;
        if s.abs() > 1e-10 {
            return Err(format!("rank one split {k} has entropy {s}"));
        }
    }
    for r in 1..=4 {
        let t = DenseTensor::from_fn(&[4, 4], |i| if i[0] == i[1] && i[0] < r { 2.0 } else { 0.0 }).unwrap();
        let s = entanglement_entropy(&t, Split::Prefix(1)).map_err(|e| e.to_string())?;
        if (s - (r as f64).log2()).abs() > 1e-12 {
            return Err(format!("{r} equal values give entropy {s}"));
        }
    }
    let mut rng = Mix(860);
    for _ in 0..20 {
        let t = DenseTensor::from_fn(&[4, 4, 4], |_| rng.next()).unwrap();
        for split in [Split::Prefix(1), Split::Prefix(2), Split::ModeN(2)] {
            let a = entanglement_entropy(&t, split).map_err(|e| e.to_string())?;
            for row_side in [true, false] {
                let b = entanglement_entropy_reduced(&t, split, row_side).map_err(|e| e.to_string())?;
                if (a - b).abs() > 1e-8 {
                    return Err(format!("{split}: {a} vs {b}"));
                }
            }
        }
    }
    Ok(())
}

fn generator_certificates() -> Result<(), String> {
    let rank_of = |m: Matrix| numerical_rank(&singular_values(&m).unwrap(), 1e-7);
    let tt = gen_tt_tensor(&[4, 5, 6, 5], &[2, 4, 3], 870).unwrap();
    let got: Vec<usize> = (1..4).map(|k| rank_of(tt.unfold_prefix(k).unwrap().matrix)).collect();
    if got != vec![2, 4, 3] {
        return Err(format!("TT ranks {got:?}"));
    }
    let tucker = gen_tucker_tensor(&[6, 7, 5], &[2, 3, 4], 871).unwrap();
    let got: Vec<usize> = (1..=3).map(|n| rank_of(tucker.unfold_mode_n(n).unwrap().matrix)).collect();
    if got != vec![2, 3, 4] {
        return Err(format!("Tucker ranks {got:?}"));
    }
    Ok(())
}

fn manifest_replays_identically() -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let make = |out: &str| {
        let mut m = ExperimentManifest::image(data_dir().join("astronaut256.png"), 0.8, dir.path().join(out));
        m.seed = 880;
        m.layout = LayoutSpec::Auto;
        m.solver = m.solver.clone().with_ranks(vec![2, 4, 4, 4, 4, 4, 4, 3]).with_max_iter(15);
        m
    };
    let a = run_manifest(&make("a")).map_err(|e| e.to_string())?;
    let b = run_manifest(&make("b")).map_err(|e| e.to_string())?;
    for (pa, pb) in a.artifacts().iter().zip(b.artifacts()) {
        let name = pa.file_name().unwrap().to_string_lossy().to_string();
        let (ba, bb) = (std::fs::read(pa).unwrap(), std::fs::read(pb).unwrap());
        let same = match name.as_str() {
            "report.json" => strip_timing(&ba) == strip_timing(&bb),
            "manifest.txt" => true,
            _ => ba == bb,
        };
        if !same {
            return Err(format!("{name} differs between runs"));
        }
    }
    Ok(())
}

fn strip_timing(bytes: &[u8]) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
    v.as_object_mut().unwrap().remove("elapsed_secs");
    v
}

#[test]
fn criterion_6_property_suites() {
    let checks: [(&str, fn() -> Result<(), String>); 9] = [
        ("fold/unfold round trips (1000 cases)", fold_round_trips),
        ("mode-n column index formula", mode_n_column_formula),
        ("shrink proximal minimality", shrink_is_proximal),
        ("observed entries kept every iteration", fidelity_every_iteration),
        ("shrinkage objective monotone (20 runs)", objective_monotone),
        ("KA bijection 4^8x3 and 6^3x3", ka_is_a_norm_preserving_bijection),
        ("entropy endpoints and two routes", entropy_checks),
        ("generator rank certificates", generator_certificates),
        ("manifest replay", manifest_replays_identically),
    ];
    let mut failures = Vec::new();
    for (name, check) in checks {
        if let Err(e) = check() {
            failures.push(format!("{name}: {e}"));
        }
    }
    verdict(
        6,
        "property suites",
        failures.is_empty(),
        if failures.is_empty() {
            format!("{} suites green", checks.len())
        } else {
            failures.join("; ")
        },
    );
}

#[test]
fn criterion_7_synthetic_clip_ordering() {
    let frames = 16;
    let dir = tempfile::tempdir().unwrap();
    let clip = gen_video_clip(frames, 64, 64, 900).unwrap();
    save_video_frames(&clip, dir.path().join("input")).unwrap();

    let run = |solver: &str| {
        let mut m = ExperimentManifest::image(dir.path().join("input"), 0.95, dir.path().join(solver));
        m.kind = DataKind::Frames;
        m.seed = 901;
        m.layout = LayoutSpec::Auto;
        m.solver = SolverConfig::preset(solver).unwrap().with_seed(901);
        m.tune = true;
        match run_manifest(&m).unwrap() {
            RunSummary::Completion { report, .. } => report,
            _ => unreachable!(),
        }
    };
    let tt = run("tmac-tt");
    let tucker = run("tmac");

    // zero-fill baseline on the same 8-bit frames and mask
    let stored = ttc_cli::io::load_video_frames(dir.path().join("input"), true).unwrap();
    let mask: ObservationMask = sample_mask(&stored, 0.95, 901).unwrap();
    let zero = mean_ssim(&split_vst(&mask.zero_filled(), frames).unwrap(), &split_vst(&stored, frames).unwrap(), 1)
        .unwrap()
        .ssim
        .unwrap();
    assert_eq!(merge_frames(&split_vst(&stored, frames).unwrap()).unwrap(), stored);

    let (s_tt, s_tucker) = (tt.ssim.unwrap(), tucker.ssim.unwrap());
    verdict(
        7,
        "16x64x64x3 clip, mr 0.95, VST + KA",
        s_tt > s_tucker && s_tt > zero,
        format!(
            "SSIM TMac-TT {s_tt:.3} (th {}), TMac {s_tucker:.3} (th {}), zero-fill {zero:.3}; layout {}",
            tt.rank_threshold, tucker.rank_threshold, tt.layout
        ),
    );
}
