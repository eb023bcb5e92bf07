//! Flat `key = value` experiment manifests.
//!
//! ```text
//! # inpaint one image
//! kind = image
//! input = peppers.png
//! mr = 0.9
//! seed = 7
//! ka = auto
//! solver = tmac-tt
//! th = 0.3
//! out = runs/peppers
//! ```
//!
//! Relative paths resolve against the manifest's directory. Blank lines and
//! `#` comments are ignored; a key may appear once.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use ttc_core::synthetic::GeneratorKind;
use ttc_core::{KaLayout, SolverConfig};

use crate::error::{invalid, io_err, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    Image,
    Frames,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MaskSpec {
    /// Uniformly random entries at this missing ratio.
    Random { mr: f64 },
    /// Pure-white pixels of this image are missing.
    Overlay(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayoutSpec {
    None,
    Auto,
    Levels(Vec<(usize, usize)>),
}

impl LayoutSpec {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "none" | "" => Ok(LayoutSpec::None),
            "auto" => Ok(LayoutSpec::Auto),
            levels => Ok(LayoutSpec::Levels(KaLayout::parse_levels(levels)?)),
        }
    }

    /// Layout for an `(H, W, C)` source, if any.
    pub fn build(&self, shape: [usize; 3], coarse_first: bool) -> Result<Option<KaLayout>> {
        let layout = match self {
            LayoutSpec::None => return Ok(None),
            LayoutSpec::Auto => KaLayout::auto(shape)?,
            LayoutSpec::Levels(l) => KaLayout::new(shape, l.clone())?,
        };
        Ok(Some(layout.with_coarse_first(coarse_first)))
    }

    /// Height and width the levels cover, if fixed.
    pub fn covered_size(&self) -> Option<(usize, usize)> {
        match self {
            LayoutSpec::Levels(l) => Some((l.iter().map(|p| p.0).product(), l.iter().map(|p| p.1).product())),
            _ => None,
        }
    }
}

impl fmt::Display for LayoutSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayoutSpec::None => f.write_str("none"),
            LayoutSpec::Auto => f.write_str("auto"),
            LayoutSpec::Levels(l) => {
                let parts: Vec<String> = l.iter().map(|(u, v)| format!("{u}x{v}")).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

/// Settings of a phase-diagram sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub generator: GeneratorKind,
    pub shape: Vec<usize>,
    pub ranks: Vec<usize>,
    pub missing_ratios: Vec<f64>,
    pub solvers: Vec<String>,
    pub trials: usize,
    pub true_ranks: bool,
    pub threshold: f64,
    pub workers: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentManifest {
    pub kind: DataKind,
    pub input: Option<PathBuf>,
    pub mask: Option<MaskSpec>,
    pub seed: u64,
    pub layout: LayoutSpec,
    pub coarse_first: bool,
    /// Edge-pad images up to the size a fixed layout covers.
    pub pad: bool,
    /// Load frame directories as a VST instead of `(F, H, W, C)`.
    pub merge_rows: bool,
    pub solver: SolverConfig,
    /// Sweep `f` (shrinkage) or `th` (factorization) and keep the best RSE.
    pub tune: bool,
    pub out: PathBuf,
    pub synthetic: Option<SyntheticSpec>,
}

const KEYS: [&str; 27] = [
    "kind", "input", "mr", "mask", "seed", "ka", "ka_order", "pad", "merge_rows", "solver", "f", "th", "tol",
    "maxiter", "ranks", "weights", "tune", "out", "generator", "shape", "grid_ranks", "grid_mr", "solvers",
    "trials", "true_ranks", "threshold", "workers",
];

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.take(key)
            .map(|(line, v)| {
                v.parse::<T>().map_err(|e| CliError::Manifest {
                    line,
                    message: format!("{key}: {e}"),
                })
            })
            .transpose()
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: fmt::Display,
    {
        self.take(key)
            .map(|(line, v)| parse_list(&v).map_err(|message| CliError::Manifest { line, message: format!("{key}: {message}") }))
            .transpose()
    }

    fn flag(&mut self, key: &str) -> Result<Option<bool>> {
        self.take(key)
            .map(|(line, v)| match v.as_str() {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(CliError::Manifest {
                    line,
                    message: format!("{key}: expected true or false, got {v:?}"),
                }),
            })
            .transpose()
    }
}

/// Comma-separated values.
pub fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|e| format!("{p:?}: {e}")))
        .collect()
}

fn parse_generator(s: &str) -> Result<GeneratorKind> {
    match s {
        "tt" => Ok(GeneratorKind::TensorTrain),
        "tucker" => Ok(GeneratorKind::Tucker),
        _ => Err(invalid(format!("unknown generator {s:?}, expected tt or tucker"))),
    }
}

fn generator_name(g: GeneratorKind) -> &'static str {
    match g {
        GeneratorKind::TensorTrain => "tt",
        GeneratorKind::Tucker => "tucker",
    }
}

fn need<T>(v: Option<T>, key: &str) -> Result<T> {
    v.ok_or_else(|| invalid(format!("synthetic manifests need {key}")))
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentManifest {
    /// Image completion with a random mask and default solver settings.
    pub fn image(input: impl Into<PathBuf>, mr: f64, out: impl Into<PathBuf>) -> Self {
        Self {
            kind: DataKind::Image,
            input: Some(input.into()),
            mask: Some(MaskSpec::Random { mr }),
            seed: 0,
            layout: LayoutSpec::None,
            coarse_first: false,
            pad: false,
            merge_rows: true,
            solver: SolverConfig::preset("tmac-tt").expect("preset"),
            tune: false,
            out: out.into(),
            synthetic: None,
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((k, v)) = content.split_once('=') else {
                return Err(CliError::Manifest {
                    line,
                    message: format!("expected key = value, got {content:?}"),
                });
            };
            let key = k.trim().to_string();
            if !KEYS.contains(&key.as_str()) {
                return Err(CliError::Manifest {
                    line,
                    message: format!("unknown key {key:?}"),
                });
            }
            if map.insert(key.clone(), (line, v.trim().to_string())).is_some() {
                return Err(CliError::Manifest {
                    line,
                    message: format!("duplicate key {key:?}"),
                });
            }
        }
        let mut e = Entries { map };
        let resolve = |p: String| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };

        let kind = match e.take("kind").map(|(_, v)| v).as_deref() {
            None | Some("image") => DataKind::Image,
            Some("frames") => DataKind::Frames,
            Some("synthetic") => DataKind::Synthetic,
            Some(other) => return Err(invalid(format!("unknown kind {other:?}"))),
        };
        let input = e.take("input").map(|(_, v)| resolve(v));
        let mr: Option<f64> = e.parse("mr")?;
        let overlay = e.take("mask").map(|(_, v)| resolve(v));
        let mask = match (mr, overlay) {
            (Some(_), Some(_)) => return Err(invalid("give either mr or mask, not both")),
            (Some(mr), None) => Some(MaskSpec::Random { mr }),
            (None, Some(p)) => Some(MaskSpec::Overlay(p)),
            (None, None) => None,
        };
        let seed = e.parse("seed")?.unwrap_or(0);
        let layout = match e.take("ka") {
            Some((_, v)) => LayoutSpec::parse(&v)?,
            None => LayoutSpec::None,
        };
        let coarse_first = match e.take("ka_order").map(|(_, v)| v).as_deref() {
            None | Some("fine-first") => false,
            Some("coarse-first") => true,
            Some(other) => return Err(invalid(format!("ka_order must be fine-first or coarse-first, got {other:?}"))),
        };
        let pad = e.flag("pad")?.unwrap_or(false);
        let merge_rows = e.flag("merge_rows")?.unwrap_or(true);
        let solver_name = e.take("solver").map(|(_, v)| v).unwrap_or_else(|| "tmac-tt".into());
        let mut solver = SolverConfig::preset(&solver_name)?.with_seed(seed);
        if let Some(f) = e.parse("f")? {
            solver = solver.with_penalty_factor(f);
        }
        if let Some(th) = e.parse("th")? {
            solver = solver.with_rank_threshold(th);
        }
        if let Some(tol) = e.parse("tol")? {
            solver = solver.with_tol(tol);
        }
        if let Some(n) = e.parse("maxiter")? {
            solver = solver.with_max_iter(n);
        }
        if let Some(r) = e.list("ranks")? {
            solver = solver.with_ranks(r);
        }
        if let Some(w) = e.list("weights")? {
            solver = solver.with_weights(w);
        }
        let tune = e.flag("tune")?.unwrap_or(false);
        let out = e.take("out").map(|(_, v)| resolve(v)).unwrap_or_else(|| base.join("out"));

        let synthetic = if kind == DataKind::Synthetic {
            Some(SyntheticSpec {
                generator: parse_generator(&e.take("generator").map(|(_, v)| v).unwrap_or_else(|| "tt".into()))?,
                shape: need(e.list("shape")?, "shape")?,
                ranks: need(e.list("grid_ranks")?, "grid_ranks")?,
                missing_ratios: need(e.list("grid_mr")?, "grid_mr")?,
                solvers: e.list("solvers")?.unwrap_or_else(|| vec![solver_name.clone()]),
                trials: e.parse("trials")?.unwrap_or(3),
                true_ranks: e.flag("true_ranks")?.unwrap_or(false),
                threshold: e.parse("threshold")?.unwrap_or(1e-2),
                workers: e.parse("workers")?.unwrap_or(0),
            })
        } else {
            None
        };
        if let Some((key, (line, _))) = e.map.into_iter().next() {
            return Err(CliError::Manifest {
                line,
                message: format!("{key} does not apply to this kind of manifest"),
            });
        }

        let m = Self {
            kind,
            input,
            mask,
            seed,
            layout,
            coarse_first,
            pad,
            merge_rows,
            solver,
            tune,
            out,
            synthetic,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        match self.kind {
            DataKind::Image | DataKind::Frames => {
                if self.input.is_none() {
                    return Err(invalid("image and frame manifests need an input"));
                }
                match &self.mask {
                    None => return Err(invalid("give exactly one of mr or mask")),
                    Some(MaskSpec::Random { mr }) if !(0.0..1.0).contains(mr) => {
                        return Err(invalid(format!("mr must lie in [0, 1), got {mr}")))
                    }
                    _ => {}
                }
            }
            DataKind::Synthetic => {
                let s = self.synthetic.as_ref().ok_or_else(|| invalid("missing synthetic settings"))?;
                if s.shape.len() < 2 || s.ranks.is_empty() || s.missing_ratios.is_empty() || s.trials == 0 {
                    return Err(invalid("synthetic sweep needs an order >= 2 shape, nonempty grids and trials"));
                }
                for name in &s.solvers {
                    SolverConfig::preset(name)?;
                }
            }
        }
        Ok(())
    }

    /// Manifest text that parses back to this manifest (paths as given).
    pub fn to_text(&self) -> String {
        let mut lines = Vec::new();
        let kind = match self.kind {
            DataKind::Image => "image",
            DataKind::Frames => "frames",
            DataKind::Synthetic => "synthetic",
        };
        lines.push(format!("kind = {kind}"));
        if let Some(p) = &self.input {
            lines.push(format!("input = {}", p.display()));
        }
        match &self.mask {
            Some(MaskSpec::Random { mr }) => lines.push(format!("mr = {mr}")),
            Some(MaskSpec::Overlay(p)) => lines.push(format!("mask = {}", p.display())),
            None => {}
        }
        lines.push(format!("seed = {}", self.seed));
        let s = &self.solver;
        lines.push(format!("solver = {}", s.algorithm()));
        lines.push(format!("f = {}", s.penalty_factor));
        lines.push(format!("th = {}", s.rank_threshold));
        lines.push(format!("tol = {}", s.tol));
        lines.push(format!("maxiter = {}", s.max_iter));
        if let Some(r) = &s.ranks {
            lines.push(format!("ranks = {}", join(r)));
        }
        if let Some(w) = &s.weights {
            lines.push(format!("weights = {}", join(w)));
        }
        lines.push(format!("tune = {}", self.tune));
        lines.push(format!("out = {}", self.out.display()));
        if let Some(syn) = &self.synthetic {
            lines.push(format!("generator = {}", generator_name(syn.generator)));
            lines.push(format!("shape = {}", join(&syn.shape)));
            lines.push(format!("grid_ranks = {}", join(&syn.ranks)));
            lines.push(format!("grid_mr = {}", join(&syn.missing_ratios)));
            lines.push(format!("solvers = {}", syn.solvers.join(",")));
            lines.push(format!("trials = {}", syn.trials));
            lines.push(format!("true_ranks = {}", syn.true_ranks));
            lines.push(format!("threshold = {}", syn.threshold));
            lines.push(format!("workers = {}", syn.workers));
        } else {
            lines.push(format!("ka = {}", self.layout));
            lines.push(format!(
                "ka_order = {}",
                if self.coarse_first { "coarse-first" } else { "fine-first" }
            ));
            lines.push(format!("pad = {}", self.pad));
            lines.push(format!("merge_rows = {}", self.merge_rows));
        }
        lines.push(String::new());
        lines.join("\n")
    }
}
