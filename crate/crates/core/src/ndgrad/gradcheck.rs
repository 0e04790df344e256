//! Central finite-difference certification of reverse-mode gradients.
//!
//! The oracle only evaluates forward passes; it never looks at `backward`.

use crate::ndgrad::{GradError, Graph, Tensor, Var};

/// Default central-difference step.
pub const STEP: f64 = 1e-5;
/// Points closer than this to a kink are not certified.
pub const KINK_RADIUS: f64 = 1e-3;
/// Magnitude floor in the relative-error denominator, so that gradients that
/// are zero up to rounding noise compare as absolute differences.
pub const REL_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, REL_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Outcome of certifying one input point.
#[derive(Clone, Debug, PartialEq)]
pub enum PointCheck {
    /// Worst relative error over the checked coordinates.
    Checked { worst: f64, coords: usize },
    /// The point or its stencil touches a non-smooth region.
    Skipped,
}

/// Builds a scalar loss from an input leaf.
pub trait LossBuilder: Fn(&mut Graph<f64>, Var) -> Result<Var, GradError> {}
impl<F: Fn(&mut Graph<f64>, Var) -> Result<Var, GradError>> LossBuilder for F {}

fn evaluate(
    build: &impl LossBuilder,
    shape: &[usize],
    x: &[f64],
) -> Result<(Graph<f64>, Var, Var), GradError> {
    let mut g = Graph::new();
    let input = g.param(&Tensor::new(shape.to_vec(), x.to_vec())?);
    let loss = build(&mut g, input)?;
    Ok((g, input, loss))
}

/// Compares autodiff against central differences at `x` for the listed
/// coordinates (all when `coords` is `None`).
///
/// With `kink_radius` set, the point is skipped when any relu input or
/// min/max gap is within that radius. Independently, a coordinate whose
/// stencil changes a branch decision skips the whole point.
pub fn check_point(
    build: &impl LossBuilder,
    shape: &[usize],
    x: &[f64],
    coords: Option<&[usize]>,
    step: f64,
    kink_radius: Option<f64>,
) -> Result<PointCheck, GradError> {
    let (g, input, loss) = evaluate(build, shape, x)?;
    if let Some(r) = kink_radius {
        if g.kink_margin() < r {
            return Ok(PointCheck::Skipped);
        }
    }
    let signature = g.kink_signature();
    let grads = g.backward(loss)?;
    let analytic = grads.wrt(input).expect("input is trainable").to_vec();
    let all: Vec<usize> = (0..x.len()).collect();
    let coords = coords.unwrap_or(&all);
    let mut worst = 0.0f64;
    let mut probe = x.to_vec();
    for &i in coords {
        probe[i] = x[i] + step;
        let (gp, _, lp) = evaluate(build, shape, &probe)?;
        probe[i] = x[i] - step;
        let (gm, _, lm) = evaluate(build, shape, &probe)?;
        probe[i] = x[i];
        if gp.kink_signature() != signature || gm.kink_signature() != signature {
            return Ok(PointCheck::Skipped);
        }
        let fd = (gp.scalar(lp)? - gm.scalar(lm)?) / (2.0 * step);
        worst = worst.max(relative_error(analytic[i], fd));
    }
    Ok(PointCheck::Checked { worst, coords: coords.len() })
}

/// Aggregate over many points.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FdReport {
    pub name: String,
    pub points: usize,
    pub coords: usize,
    pub skipped: usize,
    pub worst: f64,
}

impl FdReport {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), ..Self::default() }
    }

    pub fn record(&mut self, check: &PointCheck) {
        match check {
            PointCheck::Checked { worst, coords } => {
                self.points += 1;
                self.coords += coords;
                self.worst = self.worst.max(*worst);
            }
            PointCheck::Skipped => self.skipped += 1,
        }
    }

    pub fn passes(&self, tolerance: f64, min_points: usize) -> bool {
        self.points >= min_points && self.worst <= tolerance
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(0.0, 1e-9) - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn cubic_certifies() {
        let build = |g: &mut Graph<f64>, x: Var| {
            let sq = g.square(x)?;
            let cube = g.mul(sq, x)?;
            g.sum(cube)
        };
        let check = check_point(&build, &[3], &[0.5, -1.5, 2.0], None, STEP, None).unwrap();
        let PointCheck::Checked { worst, coords } = check else { panic!("skipped") };
        assert_eq!(coords, 3);
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn relu_near_zero_is_skipped() {
        let build = |g: &mut Graph<f64>, x: Var| {
            let r = g.relu(x)?;
            g.sum(r)
        };
        let check = check_point(&build, &[1], &[5e-4], None, STEP, Some(KINK_RADIUS)).unwrap();
        assert_eq!(check, PointCheck::Skipped);
        let check = check_point(&build, &[1], &[5e-6], None, STEP, None).unwrap();
        assert_eq!(check, PointCheck::Skipped);
    }

    #[test]
    fn report_tracks_worst_point() {
        let mut report = FdReport::new("demo");
        report.record(&PointCheck::Checked { worst: 1e-6, coords: 2 });
        report.record(&PointCheck::Checked { worst: 3e-3, coords: 2 });
        report.record(&PointCheck::Skipped);
        assert_eq!(report.points, 2);
        assert_eq!(report.skipped, 1);
        assert!(!report.passes(1e-4, 1));
    }
}
