use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BoxError {
    #[error("degenerate box ({x1}, {y1}, {x2}, {y2})")]
    Degenerate { x1: f64, y1: f64, x2: f64, y2: f64 },
}

/// Axis-aligned rectangle in pixel-edge coordinates: a box covering pixel
/// columns `a..b` has `x1 = a`, `x2 = b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox<T> {
    pub x1: T,
    pub y1: T,
    pub x2: T,
    pub y2: T,
}

impl<T: Scalar> BBox<T> {
    pub fn new(x1: T, y1: T, x2: T, y2: T) -> Result<Self, BoxError> {
        let b = Self { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    /// Builds without validation; callers that need a valid box should call
    /// [`BBox::validate`].
    pub const fn raw(x1: T, y1: T, x2: T, y2: T) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn from_center(cx: T, cy: T, w: T, h: T) -> Self {
        let half = T::lit(0.5);
        Self { x1: cx - half * w, y1: cy - half * h, x2: cx + half * w, y2: cy + half * h }
    }

    pub fn validate(&self) -> Result<(), BoxError> {
        let ok = [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite())
            && self.x1 < self.x2
            && self.y1 < self.y2;
        if ok {
            Ok(())
        } else {
            Err(BoxError::Degenerate {
                x1: self.x1.to_f64_lossy(),
                y1: self.y1.to_f64_lossy(),
                x2: self.x2.to_f64_lossy(),
                y2: self.y2.to_f64_lossy(),
            })
        }
    }

    pub fn width(&self) -> T {
        self.x2 - self.x1
    }

    pub fn height(&self) -> T {
        self.y2 - self.y1
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn center(&self) -> (T, T) {
        let half = T::lit(0.5);
        (half * (self.x1 + self.x2), half * (self.y1 + self.y2))
    }

    pub fn corners(&self) -> [T; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn from_corners(c: [T; 4]) -> Self {
        Self { x1: c[0], y1: c[1], x2: c[2], y2: c[3] }
    }

    pub fn intersection_area(&self, other: &Self) -> T {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        w.max(T::zero()) * h.max(T::zero())
    }

    /// Smallest box covering both.
    pub fn enclosing(&self, other: &Self) -> Self {
        Self {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }

    /// Clips to `[0, width] x [0, height]`.
    pub fn clip(&self, width: T, height: T) -> Self {
        let z = T::zero();
        Self {
            x1: self.x1.max(z).min(width),
            y1: self.y1.max(z).min(height),
            x2: self.x2.max(z).min(width),
            y2: self.y2.max(z).min(height),
        }
    }

    pub fn within(&self, width: T, height: T) -> bool {
        self.x1 >= T::zero() && self.y1 >= T::zero() && self.x2 <= width && self.y2 <= height
    }

    pub fn translate(&self, dx: T, dy: T) -> Self {
        Self { x1: self.x1 + dx, y1: self.y1 + dy, x2: self.x2 + dx, y2: self.y2 + dy }
    }

    /// Scales about the point `(px, py)` by `s`.
    pub fn scale_about(&self, px: T, py: T, s: T) -> Self {
        Self {
            x1: px + (self.x1 - px) * s,
            y1: py + (self.y1 - py) * s,
            x2: px + (self.x2 - px) * s,
            y2: py + (self.y2 - py) * s,
        }
    }

    pub fn cast<U: Scalar>(&self) -> BBox<U> {
        BBox {
            x1: U::lit(self.x1.to_f64_lossy()),
            y1: U::lit(self.y1.to_f64_lossy()),
            x2: U::lit(self.x2.to_f64_lossy()),
            y2: U::lit(self.y2.to_f64_lossy()),
        }
    }
}

/// Intersection over union, in `[0, 1]`.
pub fn iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    let inter = a.intersection_area(b);
    if inter <= T::zero() {
        return T::zero();
    }
    inter / (a.area() + b.area() - inter)
}

/// `1 - iou`.
pub fn iou_loss<T: Scalar>(pred: &BBox<T>, gt: &BBox<T>) -> Result<T, BoxError> {
    pred.validate()?;
    gt.validate()?;
    Ok(T::one() - iou(pred, gt))
}

/// The four additive parts of the EIoU loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EiouTerms<T> {
    pub iou_loss: T,
    pub center: T,
    pub width: T,
    pub height: T,
}

impl<T: Scalar> EiouTerms<T> {
    pub fn total(&self) -> T {
        self.iou_loss + self.center + self.width + self.height
    }
}

/// IoU loss plus squared center distance over the squared enclosing diagonal,
/// plus squared width and height gaps over the enclosing width and height
/// squared.
pub fn eiou_terms<T: Scalar>(pred: &BBox<T>, gt: &BBox<T>) -> Result<EiouTerms<T>, BoxError> {
    pred.validate()?;
    gt.validate()?;
    let enc = pred.enclosing(gt);
    let (wc, hc) = (enc.width(), enc.height());
    let (px, py) = pred.center();
    let (gx, gy) = gt.center();
    let sq = |v: T| v * v;
    Ok(EiouTerms {
        iou_loss: T::one() - iou(pred, gt),
        center: (sq(px - gx) + sq(py - gy)) / (sq(wc) + sq(hc)),
        width: sq(pred.width() - gt.width()) / sq(wc),
        height: sq(pred.height() - gt.height()) / sq(hc),
    })
}

pub fn eiou_loss<T: Scalar>(pred: &BBox<T>, gt: &BBox<T>) -> Result<T, BoxError> {
    eiou_terms(pred, gt).map(|t| t.total())
}
