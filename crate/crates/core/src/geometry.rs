//! Axis-aligned boxes in center-size form and the pairwise quantities every
//! loss in this crate is built from.

use std::fmt;

use crate::error::BoxError;

/// An axis-aligned bounding box `(cx, cy, w, h)` with strictly positive,
/// finite size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

impl BBox {
    /// Builds a validated box. Width and height must be strictly positive and
    /// every field finite.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, BoxError> {
        for (field, value) in [("cx", cx), ("cy", cy), ("w", w), ("h", h)] {
            if !value.is_finite() {
                return Err(BoxError::NonFinite { field, value });
            }
        }
        if w <= 0.0 {
            return Err(BoxError::NonPositive {
                field: "width",
                value: w,
            });
        }
        if h <= 0.0 {
            return Err(BoxError::NonPositive {
                field: "height",
                value: h,
            });
        }
        Ok(Self { cx, cy, w, h })
    }

    /// Builds a box from corner coordinates `(x1, y1, x2, y2)`.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, BoxError> {
        for (field, value) in [("x1", x1), ("y1", y1), ("x2", x2), ("y2", y2)] {
            if !value.is_finite() {
                return Err(BoxError::NonFinite { field, value });
            }
        }
        if x2 <= x1 {
            return Err(BoxError::InvertedCorners {
                axis: 'x',
                lo: x1,
                hi: x2,
            });
        }
        if y2 <= y1 {
            return Err(BoxError::InvertedCorners {
                axis: 'y',
                lo: y1,
                hi: y2,
            });
        }
        Self::new(0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1)
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Parameters in gradient order `[cx, cy, w, h]`.
    pub fn params(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    /// Inverse of [`BBox::params`].
    pub fn from_params(p: [f64; 4]) -> Result<Self, BoxError> {
        Self::new(p[0], p[1], p[2], p[3])
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Corners `(x1, y1, x2, y2)`.
    pub fn corners(&self) -> [f64; 4] {
        let (hw, hh) = (0.5 * self.w, 0.5 * self.h);
        [self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh]
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Result<Self, BoxError> {
        Self::new(self.cx + dx, self.cy + dy, self.w, self.h)
    }

    /// Multiplies all four parameters by `k`.
    pub fn scaled(&self, k: f64) -> Result<Self, BoxError> {
        Self::new(self.cx * k, self.cy * k, self.w * k, self.h * k)
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.cx, self.cy, self.w, self.h)
    }
}

/// Shorthand for [`BBox::new`].
pub fn make_box(cx: f64, cy: f64, w: f64, h: f64) -> Result<BBox, BoxError> {
    BBox::new(cx, cy, w, h)
}

/// Pairwise quantities shared by every loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairGeometry {
    /// Intersection area.
    pub inter: f64,
    pub union_area: f64,
    pub iou: f64,
    /// Width of the smallest enclosing box.
    pub enc_w: f64,
    /// Height of the smallest enclosing box.
    pub enc_h: f64,
    /// Squared diagonal of the enclosing box.
    pub enc_diag_sq: f64,
    pub enc_area: f64,
    /// Squared distance between box centers.
    pub center_dist_sq: f64,
}

/// Overlap and enclosing extent along one axis for intervals given by
/// center and size. Concentric intervals take the sizes directly so that a
/// box compared with itself is exact; otherwise the corner difference is
/// clamped to what the sizes allow.
pub(crate) fn axis_extents(c: f64, s: f64, gc: f64, gs: f64) -> (f64, f64) {
    if c == gc {
        return (s.min(gs), s.max(gs));
    }
    let (lo, hi) = (c - 0.5 * s, c + 0.5 * s);
    let (glo, ghi) = (gc - 0.5 * gs, gc + 0.5 * gs);
    let inter = (hi.min(ghi) - lo.max(glo)).clamp(0.0, s.min(gs));
    let enc = (hi.max(ghi) - lo.min(glo)).max(s.max(gs));
    (inter, enc)
}

pub fn pair_geometry(pred: &BBox, gt: &BBox) -> PairGeometry {
    let (ix, enc_w) = axis_extents(pred.cx, pred.w, gt.cx, gt.w);
    let (iy, enc_h) = axis_extents(pred.cy, pred.h, gt.cy, gt.h);

    let inter = ix * iy;
    let union_area = pred.area() + gt.area() - inter;
    let iou = (inter / union_area).clamp(0.0, 1.0);
    let dx = pred.cx - gt.cx;
    let dy = pred.cy - gt.cy;

    PairGeometry {
        inter,
        union_area,
        iou,
        enc_w,
        enc_h,
        enc_diag_sq: enc_w * enc_w + enc_h * enc_h,
        enc_area: enc_w * enc_h,
        center_dist_sq: dx * dx + dy * dy,
    }
}

/// Intersection over union, in `[0, 1]`.
pub fn iou(pred: &BBox, gt: &BBox) -> f64 {
    pair_geometry(pred, gt).iou
}
