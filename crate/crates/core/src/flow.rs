//! Dense optical flow (Horn–Schunck) and flow derivatives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{GrayFrame, Plane};

/// Smallest frame side accepted by [`estimate_flow`].
pub const MIN_FRAME_SIDE: usize = 3;

/// Parameters of the Horn–Schunck iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowParams {
    /// Smoothness weight α. The data term uses `α²`.
    pub alpha: f64,
    pub max_iterations: usize,
    /// Stop once the mean per-pixel update magnitude falls below this.
    pub epsilon: f64,
    /// Multiplier applied to `[0, 1]` intensities before estimation, so `alpha`
    /// is expressed on the familiar 8-bit intensity scale.
    pub intensity_scale: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            alpha: 15.0,
            max_iterations: 200,
            epsilon: 1e-4,
            intensity_scale: 255.0,
        }
    }
}

/// Horizontal and vertical displacement per pixel, in pixels per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub u: Plane,
    pub v: Plane,
}

impl FlowField {
    pub fn new(u: Plane, v: Plane) -> Result<Self> {
        u.check_shape(&v)?;
        if !u.all_finite() || !v.all_finite() {
            return Err(Error::NonFinite("flow field"));
        }
        Ok(FlowField { u, v })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            u: Plane::zeros(width, height),
            v: Plane::zeros(width, height),
        }
    }

    pub fn width(&self) -> usize {
        self.u.width()
    }

    pub fn height(&self) -> usize {
        self.u.height()
    }

    pub fn scaled(&self, factor: f64) -> FlowField {
        FlowField {
            u: self.u.map(|x| x * factor),
            v: self.v.map(|x| x * factor),
        }
    }
}

/// Result of [`estimate_flow`]. When `converged` is false the field is the
/// last iterate reached within the iteration budget.
#[derive(Debug, Clone)]
pub struct FlowEstimate {
    pub field: FlowField,
    pub iterations: usize,
    pub converged: bool,
}

/// Spatial and temporal derivatives of a flow field at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowDerivatives {
    pub du_dx: Plane,
    pub du_dy: Plane,
    pub dv_dx: Plane,
    pub dv_dy: Plane,
    pub du_dt: Plane,
    pub dv_dt: Plane,
}

/// Estimates the dense flow carrying `prev` onto `next`.
pub fn estimate_flow(prev: &GrayFrame, next: &GrayFrame, params: &FlowParams) -> Result<FlowEstimate> {
    prev.check_shape(next)?;
    let (w, h) = (prev.width(), prev.height());
    if w < MIN_FRAME_SIDE || h < MIN_FRAME_SIDE {
        return Err(Error::FrameTooSmall {
            width: w,
            height: h,
            min: MIN_FRAME_SIDE,
        });
    }
    if !prev.all_finite() || !next.all_finite() {
        return Err(Error::NonFinite("frame"));
    }
    if params.alpha <= 0.0 || params.epsilon <= 0.0 || params.intensity_scale <= 0.0 {
        return Err(Error::Config("flow alpha, epsilon and intensity_scale must be > 0".into()));
    }

    let s = params.intensity_scale;
    let mean = Plane::from_fn(w, h, |x, y| 0.5 * s * (prev.get(x, y) + next.get(x, y)));
    let ix = mean.diff_x();
    let iy = mean.diff_y();
    let it = Plane::from_fn(w, h, |x, y| s * (next.get(x, y) - prev.get(x, y)));
    let a2 = params.alpha * params.alpha;

    let n = w * h;
    let (ixd, iyd, itd) = (ix.data(), iy.data(), it.data());
    let denom: Vec<f64> = (0..n).map(|i| a2 + ixd[i] * ixd[i] + iyd[i] * iyd[i]).collect();

    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut u_avg = vec![0.0; n];
    let mut v_avg = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < params.max_iterations {
        neighbour_average(&u, w, h, &mut u_avg);
        neighbour_average(&v, w, h, &mut v_avg);
        let mut update = 0.0;
        for i in 0..n {
            let t = (ixd[i] * u_avg[i] + iyd[i] * v_avg[i] + itd[i]) / denom[i];
            let nu = u_avg[i] - ixd[i] * t;
            let nv = v_avg[i] - iyd[i] * t;
            update += ((nu - u[i]).powi(2) + (nv - v[i]).powi(2)).sqrt();
            u[i] = nu;
            v[i] = nv;
        }
        iterations += 1;
        if update / n as f64 <= params.epsilon {
            converged = true;
            break;
        }
    }

    Ok(FlowEstimate {
        field: FlowField::new(Plane::new(w, h, u)?, Plane::new(w, h, v)?)?,
        iterations,
        converged,
    })
}

/// Horn–Schunck Laplacian-style average: 1/6 for edge neighbours, 1/12 for
/// diagonals, with replicated borders.
fn neighbour_average(src: &[f64], w: usize, h: usize, dst: &mut [f64]) {
    for y in 0..h {
        let ym = y.saturating_sub(1);
        let yp = (y + 1).min(h - 1);
        for x in 0..w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            let edge = src[ym * w + x] + src[yp * w + x] + src[y * w + xm] + src[y * w + xp];
            let diag = src[ym * w + xm] + src[ym * w + xp] + src[yp * w + xm] + src[yp * w + xp];
            dst[y * w + x] = edge / 6.0 + diag / 12.0;
        }
    }
}

/// Derivatives of `flows[index]`. Temporal derivatives use the forward
/// difference `flows[index + 1] - flows[index]`, or the backward difference at
/// the last index.
pub fn flow_derivatives(flows: &[FlowField], index: usize) -> Result<FlowDerivatives> {
    if flows.len() < 2 {
        return Err(Error::InsufficientFrames {
            needed: 2,
            got: flows.len(),
        });
    }
    if index >= flows.len() {
        return Err(Error::dims(format!("index < {}", flows.len()), index));
    }
    let current = &flows[index];
    let (a, b) = if index + 1 < flows.len() {
        (current, &flows[index + 1])
    } else {
        (&flows[index - 1], current)
    };
    a.u.check_shape(&b.u)?;
    Ok(FlowDerivatives {
        du_dx: current.u.diff_x(),
        du_dy: current.u.diff_y(),
        dv_dx: current.v.diff_x(),
        dv_dy: current.v.diff_y(),
        du_dt: b.u.sub(&a.u)?,
        dv_dt: b.v.sub(&a.v)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs(p: &Plane) -> f64 {
        p.data().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let f = Plane::from_fn(16, 12, |x, y| ((x * 7 + y * 3) % 11) as f64 / 11.0);
        let est = estimate_flow(&f, &f, &FlowParams::default()).unwrap();
        assert!(max_abs(&est.field.u) < 1e-6);
        assert!(max_abs(&est.field.v) < 1e-6);
        assert!(est.converged);
    }

    #[test]
    fn textureless_frames_give_zero_flow() {
        let a = Plane::filled(10, 10, 0.5);
        let est = estimate_flow(&a, &a.clone(), &FlowParams::default()).unwrap();
        assert_eq!(max_abs(&est.field.u), 0.0);
        assert_eq!(max_abs(&est.field.v), 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = Plane::zeros(5, 5);
        let b = Plane::zeros(5, 6);
        assert!(matches!(
            estimate_flow(&a, &b, &FlowParams::default()),
            Err(Error::DimensionMismatch { .. })
        ));
        let tiny = Plane::zeros(2, 5);
        assert!(matches!(
            estimate_flow(&tiny, &tiny, &FlowParams::default()),
            Err(Error::FrameTooSmall { .. })
        ));
    }

    #[test]
    fn non_convergence_is_flagged() {
        let a = Plane::from_fn(20, 20, |x, y| ((x as f64 - 10.0).powi(2) + (y as f64 - 10.0).powi(2)) / 200.0);
        let b = Plane::from_fn(20, 20, |x, y| ((x as f64 - 11.0).powi(2) + (y as f64 - 10.0).powi(2)) / 200.0);
        let params = FlowParams {
            max_iterations: 2,
            epsilon: 1e-12,
            ..FlowParams::default()
        };
        let est = estimate_flow(&a, &b, &params).unwrap();
        assert!(!est.converged);
        assert_eq!(est.iterations, 2);
    }

    #[test]
    fn constant_flow_has_zero_derivatives() {
        let f = FlowField::new(Plane::filled(6, 5, 1.5), Plane::filled(6, 5, -0.5)).unwrap();
        let flows = vec![f.clone(), f.clone(), f];
        for i in 0..3 {
            let d = flow_derivatives(&flows, i).unwrap();
            for p in [&d.du_dx, &d.du_dy, &d.dv_dx, &d.dv_dy, &d.du_dt, &d.dv_dt] {
                assert_eq!(max_abs(p), 0.0);
            }
        }
    }

    #[test]
    fn linear_field_derivatives() {
        let f = FlowField::new(
            Plane::from_fn(7, 6, |x, _| x as f64),
            Plane::from_fn(7, 6, |_, y| y as f64),
        )
        .unwrap();
        let d = flow_derivatives(&[f.clone(), f], 0).unwrap();
        assert!(d.du_dx.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(d.dv_dy.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert_eq!(max_abs(&d.du_dy), 0.0);
        assert_eq!(max_abs(&d.dv_dx), 0.0);
    }

    #[test]
    fn temporal_difference_direction() {
        let mk = |c: f64| FlowField::new(Plane::filled(4, 4, c), Plane::filled(4, 4, 2.0 * c)).unwrap();
        let flows = vec![mk(0.0), mk(1.0), mk(3.0)];
        let d0 = flow_derivatives(&flows, 0).unwrap();
        assert_eq!(d0.du_dt.get(0, 0), 1.0);
        let d1 = flow_derivatives(&flows, 1).unwrap();
        assert_eq!(d1.du_dt.get(2, 2), 2.0);
        assert_eq!(d1.dv_dt.get(2, 2), 4.0);
        // last index falls back to the backward difference
        let d2 = flow_derivatives(&flows, 2).unwrap();
        assert_eq!(d2.du_dt.get(3, 3), 2.0);
    }

    #[test]
    fn short_sequence_errors() {
        let f = FlowField::zeros(4, 4);
        assert!(matches!(
            flow_derivatives(&[f], 0),
            Err(Error::InsufficientFrames { .. })
        ));
    }
}
