//! The IoU loss family: IoU, GIoU, DIoU, CIoU, EIoU, N-IoU and N-EIoU.
//!
//! Every loss is evaluated together with its gradient with respect to the
//! predicted box parameters `[cx, cy, w, h]`; the ground-truth box is a
//! constant. Gradients are assembled by hand from the partial derivatives of
//! the shared pair geometry (intersection, union, enclosing box, center
//! distance).
//!
//! Where the geometry is not differentiable (coinciding edges, edges that
//! just touch) every `min`/`max`/clamp contributes the midpoint of its
//! one-sided derivatives. With that convention every loss has an exactly zero
//! gradient at `pred == gt`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{axis_extents, pair_geometry, BBox, PairGeometry};

/// Default focusing constant for N-IoU and N-EIoU.
pub const DEFAULT_N: f64 = 9.0;

/// Selector over the loss family. The focusing constant `n` only exists on
/// the two N-variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Iou,
    Giou,
    Diou,
    Ciou,
    Eiou,
    Niou { n: f64 },
    Neiou { n: f64 },
}

impl LossKind {
    pub const NAMES: [&'static str; 7] = ["iou", "giou", "diou", "ciou", "eiou", "niou", "neiou"];

    /// All seven kinds in canonical order, N-variants carrying `n`.
    pub fn all(n: f64) -> Vec<LossKind> {
        vec![
            LossKind::Iou,
            LossKind::Giou,
            LossKind::Diou,
            LossKind::Ciou,
            LossKind::Eiou,
            LossKind::Niou { n },
            LossKind::Neiou { n },
        ]
    }

    /// Parses a kind name, attaching `n` to the N-variants.
    pub fn parse_with_n(name: &str, n: f64) -> Result<Self> {
        let kind = match name
            .trim()
            .to_ascii_lowercase()
            .replace(['-', '_'], "")
            .as_str()
        {
            "iou" => LossKind::Iou,
            "giou" => LossKind::Giou,
            "diou" => LossKind::Diou,
            "ciou" => LossKind::Ciou,
            "eiou" => LossKind::Eiou,
            "niou" => LossKind::Niou { n },
            "neiou" => LossKind::Neiou { n },
            _ => return Err(Error::UnknownKind(name.to_string())),
        };
        kind.validate()?;
        Ok(kind)
    }

    /// Lower-case name used in CSV output and on the command line.
    pub fn name(&self) -> &'static str {
        Self::NAMES[self.index()]
    }

    /// Position in canonical order; used to sort report rows.
    pub fn index(&self) -> usize {
        match self {
            LossKind::Iou => 0,
            LossKind::Giou => 1,
            LossKind::Diou => 2,
            LossKind::Ciou => 3,
            LossKind::Eiou => 4,
            LossKind::Niou { .. } => 5,
            LossKind::Neiou { .. } => 6,
        }
    }

    pub fn focusing(&self) -> Option<f64> {
        match *self {
            LossKind::Niou { n } | LossKind::Neiou { n } => Some(n),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.focusing() {
            Some(n) if !(n.is_finite() && n > 0.0) => Err(Error::FocusingConstant(n)),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.focusing() {
            Some(n) => write!(f, "{}(n={})", self.name(), n),
            None => f.write_str(self.name()),
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse_with_n(s, DEFAULT_N)
    }
}

/// Parses a comma-separated list of kind names. An empty list selects all
/// seven kinds.
pub fn parse_kinds(list: &str, n: f64) -> Result<Vec<LossKind>> {
    let names: Vec<&str> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if names.is_empty() {
        let all = LossKind::all(n);
        LossKind::Niou { n }.validate()?;
        return Ok(all);
    }
    names
        .into_iter()
        .map(|name| LossKind::parse_with_n(name, n))
        .collect()
}

/// The additive parts of a loss value.
///
/// `overlap` is `1 - IoU` (or `1 - N-IoU`), `penalty` the GIoU enclosing-area
/// term or the normalized center distance, `aspect` the CIoU `alpha * v` or
/// the EIoU width/height term.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub overlap: f64,
    pub penalty: f64,
    pub aspect: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.overlap + self.penalty + self.aspect
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossResult {
    pub value: f64,
    /// `[dL/dcx, dL/dcy, dL/dw, dL/dh]` at the predicted box.
    pub grad: [f64; 4],
    pub terms: LossTerms,
}

impl LossResult {
    /// Euclidean norm of the gradient.
    pub fn grad_norm(&self) -> f64 {
        norm4(&self.grad)
    }
}

pub(crate) fn norm4(v: &[f64; 4]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// The CIoU aspect-ratio penalty `v` and its trade-off weight `alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CiouInternals {
    pub v: f64,
    pub alpha: f64,
}

const FOUR_OVER_PI_SQ: f64 = 4.0 / (PI * PI);

pub fn ciou_internals(pred: &BBox, gt: &BBox) -> CiouInternals {
    ciou_internals_with_iou(pred, gt, pair_geometry(pred, gt).iou)
}

fn ciou_internals_with_iou(pred: &BBox, gt: &BBox, iou: f64) -> CiouInternals {
    let delta = (gt.w() / gt.h()).atan() - (pred.w() / pred.h()).atan();
    let v = FOUR_OVER_PI_SQ * delta * delta;
    let alpha = if v == 0.0 { 0.0 } else { v / ((1.0 - iou) + v) };
    CiouInternals { v, alpha }
}

/// Partial derivatives `(dv/dw, dv/dh)` of the CIoU aspect penalty with
/// respect to the predicted width and height.
///
/// They always satisfy `w * dv/dw + h * dv/dh = 0`.
pub fn aspect_penalty_grad(pred: &BBox, gt: &BBox) -> (f64, f64) {
    let (w, h) = (pred.w(), pred.h());
    let delta = (gt.w() / gt.h()).atan() - (w / h).atan();
    let coef = 2.0 * FOUR_OVER_PI_SQ * delta / (w * w + h * h);
    (-coef * h, coef * w)
}

/// The N-IoU overlap metric `(1 + n) I / (U + n I)`; the N-IoU loss is one
/// minus this.
pub fn niou_metric(inter: f64, union_area: f64, n: f64) -> f64 {
    let x = inter / union_area;
    (1.0 + n) * x / (1.0 + n * x)
}

fn eiou_aspect(pred: &BBox, gt: &BBox, g: &PairGeometry) -> f64 {
    let ew = pred.w() - gt.w();
    let eh = pred.h() - gt.h();
    ew * ew / (g.enc_w * g.enc_w) + eh * eh / (g.enc_h * g.enc_h)
}

fn terms_from_geometry(
    kind: LossKind,
    pred: &BBox,
    gt: &BBox,
    g: &PairGeometry,
    ciou_alpha: Option<f64>,
) -> LossTerms {
    let distance = || g.center_dist_sq / g.enc_diag_sq;
    match kind {
        LossKind::Iou => LossTerms {
            overlap: 1.0 - g.iou,
            ..Default::default()
        },
        LossKind::Giou => LossTerms {
            overlap: 1.0 - g.iou,
            penalty: (g.enc_area - g.union_area) / g.enc_area,
            aspect: 0.0,
        },
        LossKind::Diou => LossTerms {
            overlap: 1.0 - g.iou,
            penalty: distance(),
            aspect: 0.0,
        },
        LossKind::Ciou => {
            let internals = ciou_internals_with_iou(pred, gt, g.iou);
            let alpha = ciou_alpha.unwrap_or(internals.alpha);
            LossTerms {
                overlap: 1.0 - g.iou,
                penalty: distance(),
                aspect: alpha * internals.v,
            }
        }
        LossKind::Eiou => LossTerms {
            overlap: 1.0 - g.iou,
            penalty: distance(),
            aspect: eiou_aspect(pred, gt, g),
        },
        LossKind::Niou { n } => LossTerms {
            overlap: 1.0 - niou_metric(g.inter, g.union_area, n),
            ..Default::default()
        },
        LossKind::Neiou { n } => LossTerms {
            overlap: 1.0 - niou_metric(g.inter, g.union_area, n),
            penalty: distance(),
            aspect: eiou_aspect(pred, gt, g),
        },
    }
}

/// Loss value only, without the gradient.
pub fn loss_value(kind: LossKind, pred: &BBox, gt: &BBox) -> Result<f64> {
    kind.validate()?;
    Ok(terms_from_geometry(kind, pred, gt, &pair_geometry(pred, gt), None).total())
}

/// CIoU value with the trade-off weight `alpha` held at a caller-supplied
/// value instead of being recomputed from the pair.
pub fn ciou_value_with_alpha(pred: &BBox, gt: &BBox, alpha: f64) -> f64 {
    terms_from_geometry(
        LossKind::Ciou,
        pred,
        gt,
        &pair_geometry(pred, gt),
        Some(alpha),
    )
    .total()
}

/// Loss value and gradient with respect to `pred`.
///
/// For CIoU, `alpha` is treated as a constant during differentiation.
pub fn loss(kind: LossKind, pred: &BBox, gt: &BBox) -> Result<LossResult> {
    kind.validate()?;
    let g = pair_geometry(pred, gt);
    let terms = terms_from_geometry(kind, pred, gt, &g, None);
    let d = GeometryPartials::new(pred, gt);

    let overlap = match kind {
        LossKind::Niou { n } | LossKind::Neiou { n } => {
            // d/dθ of -(1+n) I / (U + nI) = -(1+n) (U dI - I dU) / (U + nI)^2
            let denom = g.union_area + n * g.inter;
            let scale = -(1.0 + n) / (denom * denom);
            combine(&d.inter, g.union_area, &d.union_area, -g.inter, scale)
        }
        _ => {
            let scale = -1.0 / (g.union_area * g.union_area);
            combine(&d.inter, g.union_area, &d.union_area, -g.inter, scale)
        }
    };

    let penalty = match kind {
        LossKind::Iou | LossKind::Niou { .. } => [0.0; 4],
        LossKind::Giou => {
            // (E - U) / E = 1 - U / E
            let scale = -1.0 / (g.enc_area * g.enc_area);
            combine(&d.union_area, g.enc_area, &d.enc_area, -g.union_area, scale)
        }
        _ => {
            let c2 = g.enc_diag_sq;
            combine(
                &d.center_dist_sq,
                c2,
                &d.enc_diag_sq,
                -g.center_dist_sq,
                1.0 / (c2 * c2),
            )
        }
    };

    let aspect = match kind {
        LossKind::Ciou => {
            let alpha = ciou_internals_with_iou(pred, gt, g.iou).alpha;
            let (dv_dw, dv_dh) = aspect_penalty_grad(pred, gt);
            [0.0, 0.0, alpha * dv_dw, alpha * dv_dh]
        }
        LossKind::Eiou | LossKind::Neiou { .. } => {
            let ew = pred.w() - gt.w();
            let eh = pred.h() - gt.h();
            let (cw, ch) = (g.enc_w, g.enc_h);
            // d/dθ e^2 / C^2 = 2 e de / C^2 - 2 e^2 dC / C^3
            let mut out: [f64; 4] = std::array::from_fn(|i| {
                -2.0 * ew * ew * d.enc_w[i] / (cw * cw * cw)
                    - 2.0 * eh * eh * d.enc_h[i] / (ch * ch * ch)
            });
            out[2] += 2.0 * ew / (cw * cw);
            out[3] += 2.0 * eh / (ch * ch);
            out
        }
        _ => [0.0; 4],
    };

    let mut grad = [0.0; 4];
    for i in 0..4 {
        grad[i] = overlap[i] + penalty[i] + aspect[i];
    }
    Ok(LossResult {
        value: terms.total(),
        grad,
        terms,
    })
}

/// `scale * (da * b + a_coef * db)`, the shared shape of every quotient-rule
/// numerator here.
fn combine(da: &[f64; 4], b: f64, db: &[f64; 4], a_coef: f64, scale: f64) -> [f64; 4] {
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = scale * (da[i] * b + a_coef * db[i]);
    }
    out
}

/// Derivative of `max(a, b)` with respect to `a`, midpoint on ties.
fn max_partial(a: f64, b: f64) -> f64 {
    if a > b {
        1.0
    } else if a < b {
        0.0
    } else {
        0.5
    }
}

/// Partials of one axis (x or y) of the pair geometry with respect to the
/// predicted center and size along that axis.
struct AxisPartials {
    inter: f64,
    d_inter: (f64, f64),
    enc: f64,
    d_enc: (f64, f64),
}

impl AxisPartials {
    fn new(c: f64, s: f64, gc: f64, gs: f64) -> Self {
        let (lo, hi) = (c - 0.5 * s, c + 0.5 * s);
        let (glo, ghi) = (gc - 0.5 * gs, gc + 0.5 * gs);

        // overlap = min(hi, ghi) - max(lo, glo), clamped at zero
        let a_hi = max_partial(ghi, hi);
        let a_lo = max_partial(lo, glo);
        let raw = hi.min(ghi) - lo.max(glo);
        let (inter, enc) = axis_extents(c, s, gc, gs);
        let gate = max_partial(raw, 0.0);
        let d_inter = (gate * (a_hi - a_lo), gate * 0.5 * (a_hi + a_lo));

        // enclosing extent = max(hi, ghi) - min(lo, glo)
        let b_hi = max_partial(hi, ghi);
        let b_lo = max_partial(glo, lo);
        let d_enc = (b_hi - b_lo, 0.5 * (b_hi + b_lo));

        AxisPartials {
            inter,
            d_inter,
            enc,
            d_enc,
        }
    }
}

/// Gradients of the pair-geometry quantities, each as `[d/dcx, d/dcy, d/dw,
/// d/dh]`.
struct GeometryPartials {
    inter: [f64; 4],
    union_area: [f64; 4],
    enc_w: [f64; 4],
    enc_h: [f64; 4],
    enc_area: [f64; 4],
    enc_diag_sq: [f64; 4],
    center_dist_sq: [f64; 4],
}

impl GeometryPartials {
    fn new(pred: &BBox, gt: &BBox) -> Self {
        let x = AxisPartials::new(pred.cx(), pred.w(), gt.cx(), gt.w());
        let y = AxisPartials::new(pred.cy(), pred.h(), gt.cy(), gt.h());

        let inter = [
            x.d_inter.0 * y.inter,
            x.inter * y.d_inter.0,
            x.d_inter.1 * y.inter,
            x.inter * y.d_inter.1,
        ];
        let union_area = [
            -inter[0],
            -inter[1],
            pred.h() - inter[2],
            pred.w() - inter[3],
        ];
        let enc_w = [x.d_enc.0, 0.0, x.d_enc.1, 0.0];
        let enc_h = [0.0, y.d_enc.0, 0.0, y.d_enc.1];

        let mut enc_area = [0.0; 4];
        let mut enc_diag_sq = [0.0; 4];
        for i in 0..4 {
            enc_area[i] = enc_w[i] * y.enc + x.enc * enc_h[i];
            enc_diag_sq[i] = 2.0 * (x.enc * enc_w[i] + y.enc * enc_h[i]);
        }
        let center_dist_sq = [
            2.0 * (pred.cx() - gt.cx()),
            2.0 * (pred.cy() - gt.cy()),
            0.0,
            0.0,
        ];

        GeometryPartials {
            inter,
            union_area,
            enc_w,
            enc_h,
            enc_area,
            enc_diag_sq,
            center_dist_sq,
        }
    }
}
