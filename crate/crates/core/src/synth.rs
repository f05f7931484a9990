//! Seeded synthetic motion dataset: textured Gaussian blobs that oscillate
//! vertically, translate horizontally or rotate in place. Appearance is
//! drawn independently of the class, so only motion separates the classes.

use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, VideoRecord};
use crate::error::{Error, Result};
use crate::frame::{Frame, Plane};
use crate::pnm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionClass {
    Oscillate,
    Translate,
    Rotate,
}

impl MotionClass {
    pub fn name(self) -> &'static str {
        match self {
            MotionClass::Oscillate => "oscillate",
            MotionClass::Translate => "translate",
            MotionClass::Rotate => "rotate",
        }
    }
}

impl fmt::Display for MotionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MotionClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oscillate" => Ok(MotionClass::Oscillate),
            "translate" => Ok(MotionClass::Translate),
            "rotate" => Ok(MotionClass::Rotate),
            _ => Err(Error::Config(format!("unknown motion class `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub classes: Vec<MotionClass>,
    /// Number of actors; every actor performs every class.
    pub groups: usize,
    /// Videos per (class, group) pair.
    pub videos_per_group: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Half-width of uniform per-pixel noise, in [0, 1] intensity units.
    pub noise: f64,
    /// Also write 16-bit depth maps.
    pub depth: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: vec![MotionClass::Oscillate, MotionClass::Translate, MotionClass::Rotate],
            groups: 5,
            videos_per_group: 2,
            frames: 40,
            width: 64,
            height: 48,
            noise: 0.01,
            depth: false,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() || self.groups == 0 || self.videos_per_group == 0 {
            return Err(Error::Config("synth: classes, groups and videos_per_group must be non-empty".into()));
        }
        if self.frames < 2 {
            return Err(Error::Config("synth.frames must be >= 2".into()));
        }
        if self.width < 32 || self.height < 32 {
            return Err(Error::Config("synth frames must be at least 32x32".into()));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return Err(Error::Config("synth.noise must lie in [0, 0.5)".into()));
        }
        Ok(())
    }

    pub fn video_count(&self) -> usize {
        self.classes.len() * self.groups * self.videos_per_group
    }
}

/// Depth of the blob core and of the background, in raw 16-bit units.
pub const BLOB_DEPTH: f64 = 900.0;
pub const BACKGROUND_DEPTH: f64 = 2600.0;

#[derive(Debug, Clone)]
struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amp: f64,
}

fn waves(rng: &mut ChaCha8Rng, n: usize, wavelength: (f64, f64)) -> Vec<Wave> {
    (0..n)
        .map(|_| {
            let theta = rng.gen_range(0.0..PI);
            let k = 2.0 * PI / rng.gen_range(wavelength.0..wavelength.1);
            Wave {
                kx: k * theta.cos(),
                ky: k * theta.sin(),
                phase: rng.gen_range(0.0..2.0 * PI),
                amp: rng.gen_range(0.5..1.0),
            }
        })
        .collect()
}

/// Texture value in [0, 1].
fn texture(ws: &[Wave], x: f64, y: f64) -> f64 {
    let total: f64 = ws.iter().map(|w| w.amp).sum();
    let s: f64 = ws.iter().map(|w| w.amp * (w.kx * x + w.ky * y + w.phase).sin()).sum();
    0.5 + 0.5 * s / total
}

/// Per-actor traits shared by all of that actor's videos.
#[derive(Debug, Clone)]
struct Actor {
    sigma: f64,
    wavelength: (f64, f64),
}

/// Blob pose over time.
#[derive(Debug, Clone, Copy)]
enum Trajectory {
    Oscillate { x: f64, y: f64, amplitude: f64, period: f64, phase: f64 },
    Translate { x0: f64, y: f64, speed: f64 },
    Rotate { x: f64, y: f64, omega: f64, angle0: f64 },
}

impl Trajectory {
    /// Centre and rotation angle at frame `t`.
    fn pose(&self, t: f64) -> (f64, f64, f64) {
        match *self {
            Trajectory::Oscillate {
                x,
                y,
                amplitude,
                period,
                phase,
            } => (x, y + amplitude * (2.0 * PI * t / period + phase).sin(), 0.0),
            Trajectory::Translate { x0, y, speed } => (x0 + speed * t, y, 0.0),
            Trajectory::Rotate { x, y, omega, angle0 } => (x, y, angle0 + omega * t),
        }
    }
}

#[derive(Debug, Clone)]
struct VideoSpec {
    blob_color: [f64; 3],
    background: [f64; 3],
    blob_texture: [Vec<Wave>; 3],
    background_texture: [Vec<Wave>; 3],
    sigma: f64,
    trajectory: Trajectory,
    noise_seed: u64,
}

fn draw_video(class: MotionClass, actor: &Actor, spec: &SynthSpec, rng: &mut ChaCha8Rng) -> VideoSpec {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let mut color = || [rng.gen_range(0.35..0.95), rng.gen_range(0.35..0.95), rng.gen_range(0.35..0.95)];
    let blob_color = color();
    let background = [rng.gen_range(0.05..0.3), rng.gen_range(0.05..0.3), rng.gen_range(0.05..0.3)];
    let blob_texture = [(); 3].map(|_| waves(rng, 3, actor.wavelength));
    let background_texture = [(); 3].map(|_| waves(rng, 2, (8.0, 16.0)));
    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let span = (spec.frames - 1) as f64;
    let trajectory = match class {
        MotionClass::Oscillate => Trajectory::Oscillate {
            x: w / 2.0 + rng.gen_range(-0.15..0.15) * w,
            y: h / 2.0 + rng.gen_range(-0.05..0.05) * h,
            amplitude: rng.gen_range(3.0..5.0),
            period: rng.gen_range(14.0..20.0),
            phase: rng.gen_range(0.0..2.0 * PI),
        },
        MotionClass::Translate => {
            let margin = 0.15 * w;
            let speed = rng.gen_range(0.5f64..0.9).min((w - 2.0 * margin) / span.max(1.0));
            let travel = speed * span;
            let start = rng.gen_range(margin..=(w - margin - travel).max(margin));
            let x0 = if sign > 0.0 { start } else { w - start };
            Trajectory::Translate {
                x0,
                y: h / 2.0 + rng.gen_range(-0.1..0.1) * h,
                speed: sign * speed,
            }
        }
        MotionClass::Rotate => Trajectory::Rotate {
            x: w / 2.0 + rng.gen_range(-0.1..0.1) * w,
            y: h / 2.0 + rng.gen_range(-0.08..0.08) * h,
            omega: sign * rng.gen_range(0.06..0.12),
            angle0: rng.gen_range(0.0..2.0 * PI),
        },
    };
    VideoSpec {
        blob_color,
        background,
        blob_texture,
        background_texture,
        sigma: actor.sigma * rng.gen_range(0.9..1.1),
        trajectory,
        noise_seed: rng.gen(),
    }
}

/// Renders frame `t` and its depth map.
fn render(v: &VideoSpec, spec: &SynthSpec, t: usize, rng: &mut ChaCha8Rng) -> (Frame, Plane) {
    let (cx, cy, angle) = v.trajectory.pose(t as f64);
    let (sin, cos) = angle.sin_cos();
    let two_s2 = 2.0 * v.sigma * v.sigma;
    let (w, h) = (spec.width, spec.height);
    let mut data = Vec::with_capacity(w * h * 3);
    let mut depth = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            // blob-local coordinates
            let lx = cos * dx + sin * dy;
            let ly = -sin * dx + cos * dy;
            let alpha = (-(dx * dx + dy * dy) / two_s2).exp();
            for c in 0..3 {
                let shade = 0.35 + 0.65 * texture(&v.blob_texture[c], lx, ly);
                let bg_shade = 0.85 + 0.3 * texture(&v.background_texture[c], x as f64, y as f64);
                let value = (1.0 - alpha) * v.background[c] * bg_shade + alpha * v.blob_color[c] * shade;
                let noise = if spec.noise > 0.0 {
                    rng.gen_range(-spec.noise..=spec.noise)
                } else {
                    0.0
                };
                data.push((value + noise).clamp(0.0, 1.0));
            }
            depth.push((1.0 - alpha) * BACKGROUND_DEPTH + alpha * BLOB_DEPTH);
        }
    }
    let frame = Frame::new(w, h, 3, data).expect("frame buffer matches size");
    let depth = Plane::new(w, h, depth).expect("depth buffer matches size");
    (frame, depth)
}

/// One generated video held in memory.
#[derive(Debug, Clone)]
pub struct SynthVideo {
    pub record: VideoRecord,
    pub frames: Vec<Frame>,
    pub depths: Vec<Plane>,
}

fn plan(spec: &SynthSpec, seed: u64) -> Vec<(VideoRecord, VideoSpec)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actors: Vec<Actor> = (0..spec.groups)
        .map(|_| {
            let lo = rng.gen_range(4.0..6.0);
            Actor {
                sigma: rng.gen_range(6.5..8.5),
                wavelength: (lo, lo + rng.gen_range(2.0..4.0)),
            }
        })
        .collect();
    let mut out = Vec::with_capacity(spec.video_count());
    for class in &spec.classes {
        for (g, actor) in actors.iter().enumerate() {
            for k in 0..spec.videos_per_group {
                let group = format!("g{}", g + 1);
                let video_id = format!("{}_{}_{}", class.name(), group, k);
                let vs = draw_video(*class, actor, spec, &mut rng);
                let dir = PathBuf::from("videos").join(&video_id);
                let record = VideoRecord {
                    frames_dir: dir.clone(),
                    depth_dir: spec.depth.then(|| dir.join("depth")),
                    video_id,
                    label: class.name().to_owned(),
                    group,
                    frame_count: spec.frames,
                };
                out.push((record, vs));
            }
        }
    }
    out
}

fn render_video(spec: &SynthSpec, record: VideoRecord, vs: &VideoSpec) -> SynthVideo {
    let mut rng = ChaCha8Rng::seed_from_u64(vs.noise_seed);
    let (frames, depths) = (0..spec.frames).map(|t| render(vs, spec, t, &mut rng)).unzip();
    SynthVideo { record, frames, depths }
}

/// Generates the dataset in memory. Output depends only on `spec` and `seed`.
pub fn generate(spec: &SynthSpec, seed: u64) -> Result<Vec<SynthVideo>> {
    spec.validate()?;
    Ok(plan(spec, seed)
        .into_par_iter()
        .map(|(record, vs)| render_video(spec, record, &vs))
        .collect())
}

pub const MANIFEST_FILE: &str = "manifest.tsv";

/// Writes the dataset under `out` (frames as P6, depth as 16-bit P5) and
/// returns the manifest, which is saved as `out/manifest.tsv`.
pub fn write_dataset(spec: &SynthSpec, seed: u64, out: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let plan = plan(spec, seed);
    plan.par_iter().try_for_each(|(record, vs)| -> Result<()> {
        let video = render_video(spec, record.clone(), vs);
        let dir = out.join(&record.frames_dir);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (t, f) in video.frames.iter().enumerate() {
            pnm::write_frame(&dir.join(format!("frame_{t:04}.ppm")), f)?;
        }
        if let Some(d) = &record.depth_dir {
            let ddir = out.join(d);
            std::fs::create_dir_all(&ddir).map_err(|e| Error::io(&ddir, e))?;
            for (t, p) in video.depths.iter().enumerate() {
                pnm::write_depth(&ddir.join(format!("depth_{t:04}.pgm")), p)?;
            }
        }
        Ok(())
    })?;
    let mut classes: Vec<String> = spec.classes.iter().map(|c| c.name().to_owned()).collect();
    classes.sort();
    classes.dedup();
    let manifest = DatasetManifest {
        root: out.to_path_buf(),
        classes: Some(classes),
        videos: plan.into_iter().map(|(r, _)| r).collect(),
    };
    manifest.save(&out.join(MANIFEST_FILE))?;
    Ok(manifest)
}
