//! Gradient-magnitude sweeps and the anchor-regression simulation.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{pair_geometry, BBox};
use crate::losses::{loss, LossKind, LossTerms};

/// Translations run from 0 to this multiple of the target extent, which
/// carries the predicted box past the point where the overlap vanishes.
pub const TRANSLATE_SPAN: f64 = 1.5;
/// Scale factors swept in scale mode.
pub const SCALE_RANGE: (f64, f64) = (0.2, 2.0);
/// Lower bound applied to width and height after every descent step.
pub const MIN_SIZE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepMode {
    /// Equal-size box displaced along +x by `t`.
    Translate,
    /// Co-centered box with both sides scaled by `k`.
    Scale,
    /// Equal-size box displaced by `(t, t)`.
    TranslateDiagonal,
}

impl SweepMode {
    pub fn name(&self) -> &'static str {
        match self {
            SweepMode::Translate => "translate",
            SweepMode::Scale => "scale",
            SweepMode::TranslateDiagonal => "translate_diagonal",
        }
    }

    /// Range of the offset parameter for a given target.
    pub fn offset_range(&self, target: &BBox) -> (f64, f64) {
        match self {
            SweepMode::Translate => (0.0, TRANSLATE_SPAN * target.w()),
            SweepMode::TranslateDiagonal => (0.0, TRANSLATE_SPAN * target.w().max(target.h())),
            SweepMode::Scale => SCALE_RANGE,
        }
    }

    /// The predicted box at offset parameter `t`.
    pub fn predicted(&self, target: &BBox, t: f64) -> Result<BBox> {
        Ok(match self {
            SweepMode::Translate => target.translated(t, 0.0)?,
            SweepMode::TranslateDiagonal => target.translated(t, t)?,
            SweepMode::Scale => {
                BBox::new(target.cx(), target.cy(), t * target.w(), t * target.h())?
            }
        })
    }
}

impl fmt::Display for SweepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "translate" => Ok(SweepMode::Translate),
            "scale" => Ok(SweepMode::Scale),
            "translate_diagonal" | "diagonal" => Ok(SweepMode::TranslateDiagonal),
            other => Err(Error::Config(format!("unknown sweep mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub target: BBox,
    pub mode: SweepMode,
    pub samples: usize,
    pub kinds: Vec<LossKind>,
}

impl SweepConfig {
    /// Unit-square target at the origin, translate mode, 200 samples.
    pub fn new(kinds: Vec<LossKind>) -> Self {
        SweepConfig {
            target: BBox::new(0.0, 0.0, 1.0, 1.0).expect("unit square"),
            mode: SweepMode::Translate,
            samples: 200,
            kinds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(Error::Config(format!(
                "samples must be >= 2, got {}",
                self.samples
            )));
        }
        if self.kinds.is_empty() {
            return Err(Error::Config("no loss kinds selected".into()));
        }
        self.kinds.iter().try_for_each(LossKind::validate)
    }

    /// The evenly spaced offset parameters, endpoints included.
    pub fn offsets(&self) -> Vec<f64> {
        linspace(self.mode.offset_range(&self.target), self.samples)
    }
}

fn linspace((lo, hi): (f64, f64), samples: usize) -> Vec<f64> {
    let last = (samples - 1) as f64;
    (0..samples)
        .map(|i| {
            if i + 1 == samples {
                hi
            } else {
                lo + (hi - lo) * i as f64 / last
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub kind: LossKind,
    pub offset: f64,
    pub iou: f64,
    pub value: f64,
    pub grad: [f64; 4],
    pub grad_norm: f64,
    pub terms: LossTerms,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub mode: SweepMode,
    pub target: BBox,
    /// Sorted by kind (canonical order), then offset.
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn rows_for(&self, kind: LossKind) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(move |r| r.kind == kind)
    }
}

pub fn gradient_sweep(cfg: &SweepConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let offsets = cfg.offsets();
    let mut kinds = cfg.kinds.clone();
    kinds.sort_by_key(LossKind::index);

    let mut rows = Vec::with_capacity(kinds.len() * offsets.len());
    for &kind in &kinds {
        for &offset in &offsets {
            let pred = cfg.mode.predicted(&cfg.target, offset)?;
            let r = loss(kind, &pred, &cfg.target)?;
            rows.push(SweepRow {
                kind,
                offset,
                iou: pair_geometry(&pred, &cfg.target).iou,
                value: r.value,
                grad: r.grad,
                grad_norm: r.grad_norm(),
                terms: r.terms,
            });
        }
    }
    Ok(SweepReport {
        mode: cfg.mode,
        target: cfg.target,
        rows,
    })
}

/// Anchor placement: centers on concentric rings around each target, and at
/// every center one anchor per (scale, aspect ratio) combination.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorLayout {
    pub ring_radii: Vec<f64>,
    pub points_per_ring: usize,
    /// Anchor area relative to the target's area.
    pub scales: Vec<f64>,
    /// Width over height.
    pub aspect_ratios: Vec<f64>,
    /// Half-width of a uniform jitter added to every ring point; 0 disables
    /// it and makes the layout independent of the seed.
    pub jitter: f64,
}

/// Aspect ratios 1:4 through 4:1, used for both targets and anchors.
pub fn default_aspect_ratios() -> Vec<f64> {
    vec![1.0 / 4.0, 1.0 / 3.0, 1.0 / 2.0, 1.0, 2.0, 3.0, 4.0]
}

impl Default for AnchorLayout {
    fn default() -> Self {
        AnchorLayout {
            ring_radii: vec![0.3, 0.6, 1.0, 1.5, 2.0, 2.5, 3.0],
            points_per_ring: 16,
            scales: vec![0.5, 0.67, 0.75, 1.0, 1.33, 1.5, 2.0],
            aspect_ratios: default_aspect_ratios(),
            jitter: 0.0,
        }
    }
}

impl AnchorLayout {
    pub fn anchors_per_target(&self) -> usize {
        self.ring_radii.len() * self.points_per_ring * self.scales.len() * self.aspect_ratios.len()
    }

    /// Ring points relative to a target center, in ring-major order.
    fn ring_points(&self, seed: u64) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(self.ring_radii.len() * self.points_per_ring);
        for &r in &self.ring_radii {
            for j in 0..self.points_per_ring {
                let theta = std::f64::consts::TAU * j as f64 / self.points_per_ring as f64;
                let (mut dx, mut dy) = (r * theta.cos(), r * theta.sin());
                if self.jitter > 0.0 {
                    dx += rng.random_range(-self.jitter..=self.jitter);
                    dy += rng.random_range(-self.jitter..=self.jitter);
                }
                points.push((dx, dy));
            }
        }
        points
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub targets: Vec<BBox>,
    pub layout: AnchorLayout,
    pub iterations: usize,
    pub step_size: f64,
    /// Per-iteration multiplier on the step size.
    pub step_decay: f64,
    pub kinds: Vec<LossKind>,
    /// Only consulted when the layout asks for jitter.
    pub seed: u64,
}

/// Unit-area targets at the origin with aspect ratios 1:4 through 4:1.
pub fn default_targets() -> Vec<BBox> {
    default_aspect_ratios()
        .into_iter()
        .map(|a| BBox::new(0.0, 0.0, a.sqrt(), 1.0 / a.sqrt()).expect("positive size"))
        .collect()
}

impl SimConfig {
    pub fn new(kinds: Vec<LossKind>) -> Self {
        SimConfig {
            targets: default_targets(),
            layout: AnchorLayout::default(),
            iterations: 200,
            step_size: 0.1,
            step_decay: 1.0,
            kinds,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.targets.is_empty() {
            return bad("no targets".into());
        }
        let l = &self.layout;
        if l.ring_radii.is_empty()
            || l.points_per_ring == 0
            || l.scales.is_empty()
            || l.aspect_ratios.is_empty()
        {
            return bad("anchor layout produces no anchors".into());
        }
        if l.ring_radii.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad(format!(
                "ring radii must be finite and >= 0: {:?}",
                l.ring_radii
            ));
        }
        if l.scales
            .iter()
            .chain(&l.aspect_ratios)
            .any(|x| !(x.is_finite() && *x > 0.0))
        {
            return bad("anchor scales and aspect ratios must be positive".into());
        }
        if !(l.jitter.is_finite() && l.jitter >= 0.0) {
            return bad(format!("jitter must be >= 0, got {}", l.jitter));
        }
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return bad(format!("step size must be > 0, got {}", self.step_size));
        }
        if !(self.step_decay > 0.0 && self.step_decay <= 1.0) {
            return bad(format!(
                "step decay must be in (0, 1], got {}",
                self.step_decay
            ));
        }
        if self.kinds.is_empty() {
            return bad("no loss kinds selected".into());
        }
        self.kinds.iter().try_for_each(LossKind::validate)
    }

    /// Every (anchor, target) pair in triple order: target-major, then ring
    /// point, scale, aspect ratio.
    pub fn pairs(&self) -> Result<Vec<(BBox, BBox)>> {
        let points = self.layout.ring_points(self.seed);
        let mut pairs = Vec::with_capacity(self.targets.len() * self.layout.anchors_per_target());
        for target in &self.targets {
            for &(dx, dy) in &points {
                for &scale in &self.layout.scales {
                    let area = scale * target.area();
                    for &aspect in &self.layout.aspect_ratios {
                        let anchor = BBox::new(
                            target.cx() + dx,
                            target.cy() + dy,
                            (area * aspect).sqrt(),
                            (area / aspect).sqrt(),
                        )?;
                        pairs.push((anchor, *target));
                    }
                }
            }
        }
        Ok(pairs)
    }
}

/// `|x1 - x1'| + |y1 - y1'| + |x2 - x2'| + |y2 - y2'|`.
pub fn corner_error(a: &BBox, b: &BBox) -> f64 {
    let (ca, cb) = (a.corners(), b.corners());
    ca.iter().zip(&cb).map(|(p, q)| (p - q).abs()).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KindSeries {
    pub kind: LossKind,
    /// Total corner error over all triples, indexed by iteration
    /// (`iterations + 1` entries, iteration 0 first).
    pub total_error: Vec<f64>,
    /// Corner error of each triple after the last iteration, in triple order.
    pub final_errors: Vec<f64>,
}

impl KindSeries {
    pub fn initial(&self) -> f64 {
        self.total_error[0]
    }

    pub fn final_total(&self) -> f64 {
        *self.total_error.last().expect("non-empty series")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub iterations: usize,
    pub triples_per_kind: usize,
    pub series: Vec<KindSeries>,
}

impl SimReport {
    pub fn series_for(&self, kind: LossKind) -> Option<&KindSeries> {
        self.series.iter().find(|s| s.kind == kind)
    }
}

/// Triples per work unit. Totals are summed within a chunk and then across
/// chunks in order, so the result does not depend on the thread count.
const CHUNK: usize = 256;

/// Gradient descent of one anchor toward its target. Calls `record` with
/// the corner error at every iteration, starting with iteration 0.
fn descend(
    kind: LossKind,
    anchor: BBox,
    target: &BBox,
    cfg: &SimConfig,
    mut record: impl FnMut(usize, f64),
) -> Result<BBox> {
    let mut current = anchor;
    let mut step = cfg.step_size;
    record(0, corner_error(&current, target));
    for it in 1..=cfg.iterations {
        let grad = loss(kind, &current, target)?.grad;
        let mut p = current.params();
        for (x, g) in p.iter_mut().zip(grad) {
            *x -= step * g;
        }
        p[2] = p[2].max(MIN_SIZE);
        p[3] = p[3].max(MIN_SIZE);
        current = BBox::from_params(p)?;
        record(it, corner_error(&current, target));
        step *= cfg.step_decay;
    }
    Ok(current)
}

pub fn regression_sim(cfg: &SimConfig) -> Result<SimReport> {
    cfg.validate()?;
    let pairs = cfg.pairs()?;
    let len = cfg.iterations + 1;

    let series = cfg
        .kinds
        .iter()
        .map(|&kind| {
            let chunks: Vec<(Vec<f64>, Vec<f64>)> = pairs
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut totals = vec![0.0; len];
                    let mut finals = Vec::with_capacity(chunk.len());
                    for (anchor, target) in chunk {
                        let end = descend(kind, *anchor, target, cfg, |it, err| totals[it] += err)?;
                        finals.push(corner_error(&end, target));
                    }
                    Ok((totals, finals))
                })
                .collect::<Result<_>>()?;

            let mut total_error = vec![0.0; len];
            let mut final_errors = Vec::with_capacity(pairs.len());
            for (totals, finals) in chunks {
                for (acc, t) in total_error.iter_mut().zip(totals) {
                    *acc += t;
                }
                final_errors.extend(finals);
            }
            Ok(KindSeries {
                kind,
                total_error,
                final_errors,
            })
        })
        .collect::<Result<_>>()?;

    Ok(SimReport {
        iterations: cfg.iterations,
        triples_per_kind: pairs.len(),
        series,
    })
}
