use crate::detect::{BBox, Detection};
use crate::eval::EvalError;
use crate::phantom::Image;

pub const GT_INTENSITY: f64 = 1.0;
pub const DET_INTENSITY: f64 = 0.6;

/// Inclusive pixel columns and rows covered by `b`: `floor(x1)..=ceil(x2)-1`
/// and likewise for rows.
pub fn pixel_span(b: &BBox<f64>) -> ((usize, usize), (usize, usize)) {
    let lo = |v: f64| v.floor().max(0.0) as usize;
    let hi = |lo: usize, v: f64| ((v.ceil() as usize).saturating_sub(1)).max(lo);
    let (c0, r0) = (lo(b.x1), lo(b.y1));
    ((c0, hi(c0, b.x2)), (r0, hi(r0, b.y2)))
}

fn outline(img: &mut Image<f64>, b: &BBox<f64>, thickness: usize, v: f64) {
    let ((c0, c1), (r0, r1)) = pixel_span(b);
    for y in r0..=r1 {
        for x in c0..=c1 {
            let edge = (x - c0).min(c1 - x).min(y - r0).min(r1 - y);
            if edge < thickness {
                img.set(x, y, v);
            }
        }
    }
}

/// Copy of `image` with detections outlined at [`DET_INTENSITY`] (1 px, plus
/// a vertical line through the box center) and ground truth outlined on top
/// at [`GT_INTENSITY`] (2 px).
pub fn render_boxes(image: &Image<f64>, dets: &[Detection<f64>], gts: &[BBox<f64>]) -> Result<Image<f64>, EvalError> {
    let (w, h) = (image.width(), image.height());
    for b in dets.iter().map(|d| &d.bbox).chain(gts) {
        if !b.within(w as f64, h as f64) {
            return Err(EvalError::OutOfBounds(format!("{:?}", b.corners()), w, h));
        }
    }
    let mut out = image.clone();
    for d in dets {
        outline(&mut out, &d.bbox, 1, DET_INTENSITY);
        let ((c0, c1), (r0, r1)) = pixel_span(&d.bbox);
        let cx = ((d.bbox.x1 + d.bbox.x2) / 2.0).floor() as usize;
        let cx = cx.clamp(c0, c1);
        for y in r0..=r1 {
            out.set(cx, y, DET_INTENSITY);
        }
    }
    for g in gts {
        outline(&mut out, g, 2, GT_INTENSITY);
    }
    Ok(out)
}
