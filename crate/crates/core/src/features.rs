//! Per-pixel appearance, motion and kinematic features and their assembly
//! into a clip-level sample stack.

use std::fmt;
use std::ops::Range;

use nalgebra::Matrix2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{flow_derivatives, FlowField};
use crate::frame::{Frame, GrayFrame, Plane};

pub const INTENSITY_DIM: usize = 3;
pub const GRADIENT_DIM: usize = 4;
pub const BASIC_MOTION_DIM: usize = 5;
pub const KINEMATIC_DIM: usize = 7;
pub const REDUCED_KINEMATIC_DIM: usize = 4;
pub const POSITION_DIM: usize = 3;

/// Selects which feature blocks enter the per-pixel vector. Blocks are always
/// emitted in the order intensity, gradients, basic motion, kinematic,
/// position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSetMask {
    pub intensity: bool,
    pub gradients: bool,
    pub basic_motion: bool,
    pub kinematic: bool,
    /// Keep only divergence, vorticity and the two invariants of the gradient
    /// tensor, dropping the strain and rotation invariants.
    pub reduced_kinematic: bool,
    pub position: bool,
}

impl Default for FeatureSetMask {
    fn default() -> Self {
        Self::full_action()
    }
}

impl FeatureSetMask {
    /// RGB, gradients, basic motion and all kinematic features (d = 19).
    pub const fn full_action() -> Self {
        FeatureSetMask {
            intensity: true,
            gradients: true,
            basic_motion: true,
            kinematic: true,
            reduced_kinematic: false,
            position: false,
        }
    }

    /// Appearance only: RGB and gradients (d = 7).
    pub const fn appearance() -> Self {
        FeatureSetMask {
            intensity: true,
            gradients: true,
            basic_motion: false,
            kinematic: false,
            reduced_kinematic: false,
            position: false,
        }
    }

    /// Basic motion and kinematic features (d = 12).
    pub const fn motion() -> Self {
        FeatureSetMask {
            intensity: false,
            gradients: false,
            basic_motion: true,
            kinematic: true,
            reduced_kinematic: false,
            position: false,
        }
    }

    /// One-shot gesture descriptor: gradients, basic motion, reduced
    /// kinematics and pixel position (d = 16).
    pub const fn gesture() -> Self {
        FeatureSetMask {
            intensity: false,
            gradients: true,
            basic_motion: true,
            kinematic: true,
            reduced_kinematic: true,
            position: true,
        }
    }

    /// Gesture motion block alone (d = 9).
    pub const fn gesture_motion() -> Self {
        FeatureSetMask {
            gradients: false,
            position: false,
            ..Self::gesture()
        }
    }

    /// Gesture motion plus gradients (d = 13).
    pub const fn gesture_motion_gradients() -> Self {
        FeatureSetMask {
            position: false,
            ..Self::gesture()
        }
    }

    /// Gesture motion plus position (d = 12).
    pub const fn gesture_motion_position() -> Self {
        FeatureSetMask {
            gradients: false,
            ..Self::gesture()
        }
    }

    /// Looks up a named preset: `AF`, `MF`, `AMF` for action ablations and
    /// `M`, `MG`, `MP`, `ALL` (alias `gesture`) for the gesture variants.
    pub fn preset(name: &str) -> Option<Self> {
        Some(match name.to_ascii_uppercase().as_str() {
            "AF" | "APPEARANCE" => Self::appearance(),
            "MF" | "MOTION" => Self::motion(),
            "AMF" | "FULL" | "ACTION" => Self::full_action(),
            "M" => Self::gesture_motion(),
            "MG" => Self::gesture_motion_gradients(),
            "MP" => Self::gesture_motion_position(),
            "ALL" | "GESTURE" => Self::gesture(),
            _ => return None,
        })
    }

    fn kinematic_dim(&self) -> usize {
        match (self.kinematic, self.reduced_kinematic) {
            (false, _) => 0,
            (true, false) => KINEMATIC_DIM,
            (true, true) => REDUCED_KINEMATIC_DIM,
        }
    }

    /// Number of features per pixel.
    pub fn dim(&self) -> usize {
        let mut d = 0;
        if self.intensity {
            d += INTENSITY_DIM;
        }
        if self.gradients {
            d += GRADIENT_DIM;
        }
        if self.basic_motion {
            d += BASIC_MOTION_DIM;
        }
        d += self.kinematic_dim();
        if self.position {
            d += POSITION_DIM;
        }
        d
    }

    pub fn needs_flow(&self) -> bool {
        self.basic_motion || self.kinematic
    }

    /// Feature names in emission order.
    pub fn feature_names(&self) -> Vec<&'static str> {
        let mut names = Vec::with_capacity(self.dim());
        if self.intensity {
            names.extend(["R", "G", "B"]);
        }
        if self.gradients {
            names.extend(["dI/dx", "dI/dy", "d2I/dx2", "d2I/dy2"]);
        }
        if self.basic_motion {
            names.extend(["dI/dt", "u", "v", "du/dt", "dv/dt"]);
        }
        if self.kinematic {
            names.extend(["div", "vort", "tau2(G)", "tau3(G)"]);
            if !self.reduced_kinematic {
                names.extend(["tau2(S)", "tau3(S)", "tau3(R)"]);
            }
        }
        if self.position {
            names.extend(["x", "y", "t"]);
        }
        names
    }
}

impl fmt::Display for FeatureSetMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.intensity {
            parts.push("i");
        }
        if self.gradients {
            parts.push("g");
        }
        if self.basic_motion {
            parts.push("m");
        }
        if self.kinematic {
            parts.push(if self.reduced_kinematic { "k4" } else { "k" });
        }
        if self.position {
            parts.push("p");
        }
        write!(f, "{}[d={}]", parts.join("+"), self.dim())
    }
}

/// Which formula to use for the second invariant of a 2×2 tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondInvariant {
    /// `½[tr(M)² + tr(M²)]`
    #[default]
    Printed,
    /// `½[tr(M)² − tr(M²)]`, the textbook principal invariant (equals det M).
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureOptions {
    pub second_invariant: SecondInvariant,
}

/// Optical-flow gradient tensor `[[du/dx, du/dy], [dv/dx, dv/dy]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientTensor(pub Matrix2<f64>);

impl GradientTensor {
    pub fn new(du_dx: f64, du_dy: f64, dv_dx: f64, dv_dy: f64) -> Self {
        GradientTensor(Matrix2::new(du_dx, du_dy, dv_dx, dv_dy))
    }
}

/// Divergence `du/dx + dv/dy` and vorticity `dv/dx − du/dy`.
pub fn divergence_vorticity(g: &GradientTensor) -> (f64, f64) {
    let m = &g.0;
    (m[(0, 0)] + m[(1, 1)], m[(1, 0)] - m[(0, 1)])
}

/// Second and third invariants `(τ₂, τ₃)` with `τ₃ = −det M`.
pub fn tensor_invariants(m: &Matrix2<f64>, form: SecondInvariant) -> (f64, f64) {
    let tr = m.trace();
    let tr_sq = (m * m).trace();
    let tau2 = match form {
        SecondInvariant::Printed => 0.5 * (tr * tr + tr_sq),
        SecondInvariant::Standard => 0.5 * (tr * tr - tr_sq),
    };
    (tau2, -m.determinant())
}

/// Rate-of-strain (symmetric) and rate-of-rotation (antisymmetric) parts.
pub fn strain_rotation(g: &GradientTensor) -> (Matrix2<f64>, Matrix2<f64>) {
    let m = &g.0;
    let t = m.transpose();
    ((m + t) * 0.5, (m - t) * 0.5)
}

/// `[∇, Γ, τ₂(G), τ₃(G), τ₂(S), τ₃(S), τ₃(R)]`.
pub fn kinematic_vector(g: &GradientTensor, form: SecondInvariant) -> [f64; KINEMATIC_DIM] {
    let (div, vort) = divergence_vorticity(g);
    let (t2g, t3g) = tensor_invariants(&g.0, form);
    let (s, r) = strain_rotation(g);
    let (t2s, t3s) = tensor_invariants(&s, form);
    let (_, t3r) = tensor_invariants(&r, form);
    [div, vort, t2g, t3g, t2s, t3s, t3r]
}

/// Appearance features of one frame.
#[derive(Debug, Clone)]
pub struct AppearanceFeatures {
    /// R, G, B planes in `[0, 1]`, when requested.
    pub intensity: Option<[Plane; 3]>,
    /// `dI/dx, dI/dy, d²I/dx², d²I/dy²` of the grayscale frame.
    pub gradients: [Plane; 4],
}

pub fn appearance_features(frame: &Frame, include_intensity: bool) -> Result<AppearanceFeatures> {
    let intensity = if include_intensity {
        if !frame.is_color() {
            return Err(Error::GrayscaleIntensity);
        }
        Some([frame.channel(0), frame.channel(1), frame.channel(2)])
    } else {
        None
    };
    Ok(AppearanceFeatures {
        intensity,
        gradients: gradient_planes(&frame.gray()),
    })
}

fn gradient_planes(gray: &GrayFrame) -> [Plane; 4] {
    [gray.diff_x(), gray.diff_y(), gray.diff2_x(), gray.diff2_y()]
}

/// Index of the flow field paired with frame `index`: the forward flow, or the
/// last flow for the final frame.
fn flow_index(index: usize, flow_count: usize) -> usize {
    index.min(flow_count - 1)
}

/// `[dI/dt, u, v, du/dt, dv/dt]` for frame `index` of a video whose flows
/// satisfy `flows.len() == frames.len() - 1`.
pub fn basic_motion_features(frames: &[GrayFrame], flows: &[FlowField], index: usize) -> Result<[Plane; 5]> {
    check_video(frames.len(), flows.len())?;
    if index >= frames.len() {
        return Err(Error::dims(format!("index < {}", frames.len()), index));
    }
    let dt = if index + 1 < frames.len() {
        frames[index + 1].sub(&frames[index])?
    } else {
        frames[index].sub(&frames[index - 1])?
    };
    let fi = flow_index(index, flows.len());
    let deriv = flow_derivatives(flows, fi)?;
    let flow = &flows[fi];
    dt.check_shape(&flow.u)?;
    Ok([dt, flow.u.clone(), flow.v.clone(), deriv.du_dt, deriv.dv_dt])
}

fn check_video(frames: usize, flows: usize) -> Result<()> {
    if frames < 2 {
        return Err(Error::InsufficientFrames { needed: 2, got: frames });
    }
    if flows + 1 != frames {
        return Err(Error::dims(format!("{} flow fields", frames - 1), flows));
    }
    Ok(())
}

/// Per-pixel boolean mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl PixelMask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dims(width * height, data.len()));
        }
        Ok(PixelMask { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// Foreground mask: true where `depth < threshold`.
pub fn depth_mask(depth: &Plane, frame_size: (usize, usize), threshold: f64) -> Result<PixelMask> {
    if (depth.width(), depth.height()) != frame_size {
        return Err(Error::dims(
            format!("{}x{}", frame_size.0, frame_size.1),
            format!("{}x{}", depth.width(), depth.height()),
        ));
    }
    Ok(PixelMask {
        width: depth.width(),
        height: depth.height(),
        data: depth.data().iter().map(|&z| z < threshold).collect(),
    })
}

/// Per-pixel feature vectors of one clip, row-major within each frame and
/// frames in temporal order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStack {
    dim: usize,
    samples: Vec<f64>,
    mask: Option<FeatureSetMask>,
}

impl FeatureStack {
    /// Wraps flat sample data (`n * dim` values).
    pub fn from_samples(dim: usize, samples: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::EmptyFeatureMask);
        }
        if samples.len() % dim != 0 {
            return Err(Error::dims(format!("multiple of {dim}"), samples.len()));
        }
        Ok(FeatureStack {
            dim,
            samples,
            mask: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mask(&self) -> Option<&FeatureSetMask> {
        self.mask.as_ref()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn samples(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.samples.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.samples
    }
}

/// A window of frames inside a video together with the video's flow fields.
#[derive(Debug, Clone)]
pub struct ClipView<'a> {
    /// All frames of the video.
    pub frames: &'a [Frame],
    /// Flow `k` carries frame `k` onto frame `k + 1`; empty when no motion
    /// block is requested.
    pub flows: &'a [FlowField],
    /// Frames of the video belonging to the clip.
    pub range: Range<usize>,
}

/// Builds the clip's feature stack. `validity`, when given, holds one mask
/// per clip frame; masked-out pixels are dropped from the stack.
pub fn assemble_stack(
    clip: &ClipView<'_>,
    mask: &FeatureSetMask,
    validity: Option<&[PixelMask]>,
    options: &FeatureOptions,
) -> Result<FeatureStack> {
    let d = mask.dim();
    if d == 0 {
        return Err(Error::EmptyFeatureMask);
    }
    if clip.range.is_empty() || clip.frames.is_empty() {
        return Err(Error::Empty("clip"));
    }
    if clip.range.end > clip.frames.len() {
        return Err(Error::dims(format!("range within {} frames", clip.frames.len()), format!("{:?}", clip.range)));
    }
    let (w, h) = (clip.frames[0].width(), clip.frames[0].height());
    if clip.frames.iter().any(|f| f.width() != w || f.height() != h) {
        return Err(Error::dims(format!("{w}x{h} frames"), "mixed frame sizes"));
    }
    if mask.intensity && clip.frames.iter().any(|f| !f.is_color()) {
        return Err(Error::GrayscaleIntensity);
    }
    let t_len = clip.range.len();
    if let Some(v) = validity {
        if v.len() != t_len {
            return Err(Error::dims(format!("{t_len} validity masks"), v.len()));
        }
        if v.iter().any(|m| m.width != w || m.height != h) {
            return Err(Error::dims(format!("{w}x{h} validity masks"), "misaligned mask"));
        }
    }

    let grays: Vec<GrayFrame> = if mask.needs_flow() || mask.gradients {
        clip.frames.iter().map(Frame::gray).collect()
    } else {
        Vec::new()
    };
    if mask.needs_flow() {
        check_video(clip.frames.len(), clip.flows.len())?;
        if clip.flows.len() < 2 {
            return Err(Error::InsufficientFrames {
                needed: 3,
                got: clip.frames.len(),
            });
        }
        if clip.flows[0].width() != w || clip.flows[0].height() != h {
            return Err(Error::dims(format!("{w}x{h} flow"), "misaligned flow"));
        }
    }

    let per_frame: Vec<Vec<f64>> = clip
        .range
        .clone()
        .into_par_iter()
        .map(|k| {
            let planes = frame_feature_planes(clip, &grays, k, mask, options, t_len)?;
            let valid = validity.map(|v| v[k - clip.range.start].data.as_slice());
            Ok(interleave(&planes, valid))
        })
        .collect::<Result<_>>()?;

    let samples: Vec<f64> = per_frame.concat();
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature stack"));
    }
    Ok(FeatureStack {
        dim: d,
        samples,
        mask: Some(*mask),
    })
}

fn frame_feature_planes(
    clip: &ClipView<'_>,
    grays: &[GrayFrame],
    k: usize,
    mask: &FeatureSetMask,
    options: &FeatureOptions,
    t_len: usize,
) -> Result<Vec<Plane>> {
    let frame = &clip.frames[k];
    let (w, h) = (frame.width(), frame.height());
    let mut planes = Vec::with_capacity(mask.dim());
    if mask.intensity {
        planes.extend((0..3).map(|c| frame.channel(c)));
    }
    if mask.gradients {
        planes.extend(gradient_planes(&grays[k]));
    }
    if mask.basic_motion {
        planes.extend(basic_motion_features(grays, clip.flows, k)?);
    }
    if mask.kinematic {
        let deriv = flow_derivatives(clip.flows, flow_index(k, clip.flows.len()))?;
        let n_kin = mask.kinematic_dim();
        let mut kin: Vec<Vec<f64>> = vec![Vec::with_capacity(w * h); n_kin];
        for i in 0..w * h {
            let g = GradientTensor::new(
                deriv.du_dx.data()[i],
                deriv.du_dy.data()[i],
                deriv.dv_dx.data()[i],
                deriv.dv_dy.data()[i],
            );
            let fk = kinematic_vector(&g, options.second_invariant);
            for (dst, &val) in kin.iter_mut().zip(&fk) {
                dst.push(val);
            }
        }
        for data in kin {
            planes.push(Plane::new(w, h, data)?);
        }
    }
    if mask.position {
        let t = (k - clip.range.start) as f64 / t_len as f64;
        planes.push(Plane::from_fn(w, h, |x, _| x as f64 / w as f64));
        planes.push(Plane::from_fn(w, h, |_, y| y as f64 / h as f64));
        planes.push(Plane::filled(w, h, t));
    }
    Ok(planes)
}

fn interleave(planes: &[Plane], valid: Option<&[bool]>) -> Vec<f64> {
    let n = planes[0].len();
    let mut out = Vec::with_capacity(n * planes.len());
    for i in 0..n {
        if valid.is_some_and(|v| !v[i]) {
            continue;
        }
        out.extend(planes.iter().map(|p| p.data()[i]));
    }
    out
}
