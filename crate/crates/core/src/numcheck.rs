//! Finite-difference verification of the analytic loss gradients.
//!
//! The oracle only ever evaluates loss *values* ([`loss_value`] and
//! [`ciou_value_with_alpha`]); it never touches the gradient code it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::losses::{ciou_internals, ciou_value_with_alpha, loss, loss_value, LossKind};

/// Centers of sampled boxes are uniform in `[-CENTER_RANGE, CENTER_RANGE]`.
pub const CENTER_RANGE: f64 = 2.0;
/// Sizes of sampled boxes are log-uniform in `SIZE_RANGE`.
pub const SIZE_RANGE: (f64, f64) = (0.1, 4.0);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdConfig {
    /// Step relative to `max(|coordinate|, 1)`.
    pub step_rel: f64,
    pub tol_rel: f64,
    /// Absolute floor below which a mismatch is always accepted.
    pub tol_abs: f64,
    /// Pairs with any edge of `pred` this close to an edge of `gt` are skipped.
    pub exclusion_margin: f64,
}

impl Default for FdConfig {
    fn default() -> Self {
        FdConfig {
            step_rel: 1e-5,
            tol_rel: 1e-6,
            tol_abs: 1e-9,
            exclusion_margin: 1e-4,
        }
    }
}

impl FdConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !(positive(self.step_rel) && positive(self.tol_rel) && positive(self.tol_abs)) {
            return Err(Error::Config(format!(
                "step and tolerances must be positive: {self:?}"
            )));
        }
        if !(self.exclusion_margin.is_finite() && self.exclusion_margin >= 0.0) {
            return Err(Error::Config(format!(
                "exclusion margin must be >= 0: {}",
                self.exclusion_margin
            )));
        }
        if self.step_rel <= self.tol_rel {
            return Err(Error::Config(format!(
                "step_rel ({}) must exceed tol_rel ({})",
                self.step_rel, self.tol_rel
            )));
        }
        Ok(())
    }

    /// Mismatch between an analytic and a finite-difference component,
    /// relative to the larger of the two. The denominator is floored at
    /// `tol_abs / tol_rel`, so `err <= tol_rel` holds exactly when the
    /// mismatch is within the relative tolerance or the absolute floor.
    pub fn component_error(&self, analytic: f64, numeric: f64) -> f64 {
        let floor = self.tol_abs / self.tol_rel;
        (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
    }
}

const FIELDS: [&str; 4] = ["cx", "cy", "w", "h"];

/// Per-component perturbed copies of `pred`, `+step` when `sign > 0`.
fn perturbed(pred: &BBox, i: usize, sign: f64, cfg: &FdConfig) -> Result<(BBox, f64)> {
    let mut p = pred.params();
    let step = cfg.step_rel * p[i].abs().max(1.0);
    let moved = p[i] + sign * step;
    if i >= 2 && moved <= 0.0 {
        return Err(Error::Perturbation {
            field: FIELDS[i],
            value: p[i],
            step,
        });
    }
    p[i] = moved;
    Ok((BBox::from_params(p)?, step))
}

/// Evaluates the loss value with CIoU's `alpha` frozen at `alpha`.
fn value_at(kind: LossKind, pred: &BBox, gt: &BBox, alpha: f64) -> Result<f64> {
    match kind {
        LossKind::Ciou => Ok(ciou_value_with_alpha(pred, gt, alpha)),
        _ => loss_value(kind, pred, gt),
    }
}

/// Central-difference gradient `(L(p + d) - L(p - d)) / 2d` per component,
/// with `d = step_rel * max(|p_i|, 1)`. For CIoU, `alpha` is held at its
/// value at the unperturbed pair.
pub fn fd_gradient(kind: LossKind, pred: &BBox, gt: &BBox, cfg: &FdConfig) -> Result<[f64; 4]> {
    kind.validate()?;
    let alpha = ciou_internals(pred, gt).alpha;
    let mut grad = [0.0; 4];
    for (i, g) in grad.iter_mut().enumerate() {
        let (plus, step) = perturbed(pred, i, 1.0, cfg)?;
        let (minus, _) = perturbed(pred, i, -1.0, cfg)?;
        *g =
            (value_at(kind, &plus, gt, alpha)? - value_at(kind, &minus, gt, alpha)?) / (2.0 * step);
    }
    Ok(grad)
}

/// Forward and backward one-sided differences. On smooth configurations
/// they agree to first order in the step; across a kink they differ by the
/// jump in the derivative.
pub fn one_sided_gradients(
    kind: LossKind,
    pred: &BBox,
    gt: &BBox,
    cfg: &FdConfig,
) -> Result<([f64; 4], [f64; 4])> {
    kind.validate()?;
    let alpha = ciou_internals(pred, gt).alpha;
    let center = value_at(kind, pred, gt, alpha)?;
    let mut forward = [0.0; 4];
    let mut backward = [0.0; 4];
    for i in 0..4 {
        let (plus, step) = perturbed(pred, i, 1.0, cfg)?;
        let (minus, _) = perturbed(pred, i, -1.0, cfg)?;
        forward[i] = (value_at(kind, &plus, gt, alpha)? - center) / step;
        backward[i] = (center - value_at(kind, &minus, gt, alpha)?) / step;
    }
    Ok((forward, backward))
}

/// Smallest distance between an edge of `pred` and an edge of `gt` on the
/// same axis. The losses are smooth everywhere this is nonzero.
pub fn edge_clearance(pred: &BBox, gt: &BBox) -> f64 {
    let [px1, py1, px2, py2] = pred.corners();
    let [gx1, gy1, gx2, gy2] = gt.corners();
    let axis = |lo: f64, hi: f64, glo: f64, ghi: f64| {
        [
            (lo - glo).abs(),
            (hi - ghi).abs(),
            (hi - glo).abs(),
            (lo - ghi).abs(),
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min)
    };
    axis(px1, px2, gx1, gx2).min(axis(py1, py2, gy1, gy2))
}

/// True when the pair is within `margin` of a configuration where some edge
/// of `pred` coincides with an edge of `gt`.
pub fn near_nonsmooth(pred: &BBox, gt: &BBox, margin: f64) -> bool {
    edge_clearance(pred, gt) < margin
}

/// Draws one pair from the fixed test population.
pub fn sample_pair<R: Rng + ?Sized>(rng: &mut R) -> (BBox, BBox) {
    let (lo, hi) = (SIZE_RANGE.0.ln(), SIZE_RANGE.1.ln());
    let mut draw = || {
        let cx = rng.random_range(-CENTER_RANGE..=CENTER_RANGE);
        let cy = rng.random_range(-CENTER_RANGE..=CENTER_RANGE);
        let w = rng.random_range(lo..=hi).exp();
        let h = rng.random_range(lo..=hi).exp();
        BBox::new(cx, cy, w, h).expect("sampled box is valid")
    };
    let pred = draw();
    let gt = draw();
    (pred, gt)
}

/// Deterministic list of `count` pairs for `seed`.
pub fn sample_pairs(count: usize, seed: u64) -> Vec<(BBox, BBox)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| sample_pair(&mut rng)).collect()
}

/// Location of the largest mismatch seen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorstCase {
    pub kind: LossKind,
    pub pred: BBox,
    pub gt: BBox,
    /// Index into `[cx, cy, w, h]`.
    pub component: usize,
    pub pair_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KindCheck {
    pub kind: LossKind,
    pub max_rel_err: f64,
    pub worst: Option<WorstCase>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub pairs_tested: usize,
    pub pairs_skipped: usize,
    pub max_rel_err: f64,
    pub worst_case: Option<WorstCase>,
    pub passed: bool,
    pub per_kind: Vec<KindCheck>,
}

impl GradCheckReport {
    pub fn pairs_generated(&self) -> usize {
        self.pairs_tested + self.pairs_skipped
    }

    pub fn skip_fraction(&self) -> f64 {
        self.pairs_skipped as f64 / self.pairs_generated().max(1) as f64
    }
}

/// Checks every kind on `pair_count` random pairs drawn with `seed`.
pub fn run_gradcheck(
    kinds: &[LossKind],
    pair_count: usize,
    seed: u64,
    cfg: &FdConfig,
) -> Result<GradCheckReport> {
    if pair_count == 0 {
        return Err(Error::Config("pair_count must be at least 1".into()));
    }
    check_pairs(kinds, &sample_pairs(pair_count, seed), cfg)
}

/// Checks every kind on the given pairs. Pairs are evaluated in parallel;
/// the worst case is the first maximum in pair order, so the report does not
/// depend on scheduling.
pub fn check_pairs(
    kinds: &[LossKind],
    pairs: &[(BBox, BBox)],
    cfg: &FdConfig,
) -> Result<GradCheckReport> {
    cfg.validate()?;
    if kinds.is_empty() {
        return Err(Error::Config("no loss kinds selected".into()));
    }
    for kind in kinds {
        kind.validate()?;
    }

    let outcomes: Vec<Option<Vec<WorstCase>>> = pairs
        .par_iter()
        .enumerate()
        .map(|(pair_index, (pred, gt))| {
            if near_nonsmooth(pred, gt, cfg.exclusion_margin) {
                return Ok(None);
            }
            kinds
                .iter()
                .map(|&kind| {
                    let analytic = loss(kind, pred, gt)?.grad;
                    let numeric = fd_gradient(kind, pred, gt, cfg)?;
                    let mut worst: Option<WorstCase> = None;
                    for component in 0..4 {
                        let rel_err = cfg.component_error(analytic[component], numeric[component]);
                        if worst.is_none_or(|w| rel_err > w.rel_err) {
                            worst = Some(WorstCase {
                                kind,
                                pred: *pred,
                                gt: *gt,
                                component,
                                pair_index,
                                analytic: analytic[component],
                                numeric: numeric[component],
                                rel_err,
                            });
                        }
                    }
                    Ok(worst.expect("four components"))
                })
                .collect::<Result<Vec<_>>>()
                .map(Some)
        })
        .collect::<Result<_>>()?;

    let mut per_kind: Vec<KindCheck> = kinds
        .iter()
        .map(|&kind| KindCheck {
            kind,
            max_rel_err: 0.0,
            worst: None,
        })
        .collect();
    let mut pairs_skipped = 0;
    for outcome in &outcomes {
        let Some(cases) = outcome else {
            pairs_skipped += 1;
            continue;
        };
        for (check, case) in per_kind.iter_mut().zip(cases) {
            if check.worst.is_none() || case.rel_err > check.max_rel_err {
                check.max_rel_err = case.rel_err;
                check.worst = Some(*case);
            }
        }
    }

    let mut max_rel_err = 0.0;
    let mut worst_case = None;
    for check in &per_kind {
        if worst_case.is_none() || check.max_rel_err > max_rel_err {
            max_rel_err = check.max_rel_err;
            worst_case = check.worst;
        }
    }

    Ok(GradCheckReport {
        pairs_tested: pairs.len() - pairs_skipped,
        pairs_skipped,
        max_rel_err,
        worst_case,
        passed: max_rel_err <= cfg.tol_rel,
        per_kind,
    })
}
