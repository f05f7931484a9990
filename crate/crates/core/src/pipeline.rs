//! End-to-end orchestration: descriptor extraction, dictionary training,
//! evaluation and feature ablation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::classify::{evaluate, majority_vote, nn_classify_clip, ClipLabelVector, EvalReport};
use crate::config::{Method, PipelineConfig};
use crate::covariance::{clip_ranges, covariance_integral, regularize, ClipMeta};
use crate::dataset::{check_disjoint, DatasetManifest, Split, VideoRecord};
use crate::error::{Error, Result};
use crate::features::{assemble_stack, depth_mask, ClipView, FeatureSetMask, PixelMask};
use crate::flow::{estimate_flow, FlowField, FlowParams};
use crate::frame::{Frame, Plane};
use crate::labels::ClassSet;
use crate::omp::{batch_omp, build_dictionary, OmpParams, VectorDictionary};
use crate::pnm;
use crate::spd::{log_descriptor, LogDescriptor};
use crate::store::{self, DescriptorRecord, DictionaryFile, StoreHeader};
use crate::tsc::{tsc_classify_clip, TensorDictionary};

/// Frames, flows and optional depth of one video.
#[derive(Debug, Clone)]
pub struct VideoData {
    pub record: VideoRecord,
    pub frames: Vec<Frame>,
    /// `frames.len() − 1` fields, or empty when no motion features are needed.
    pub flows: Vec<FlowField>,
    pub depths: Option<Vec<Plane>>,
}

/// Flow between every pair of consecutive frames.
pub fn compute_flows(video_id: &str, frames: &[Frame], params: &FlowParams) -> Result<Vec<FlowField>> {
    let gray: Vec<_> = frames.iter().map(Frame::gray).collect();
    (0..gray.len().saturating_sub(1))
        .into_par_iter()
        .map(|k| {
            let est = estimate_flow(&gray[k], &gray[k + 1], params)?;
            if !est.converged {
                log::debug!("video {video_id}: flow {k} stopped after {} iterations", est.iterations);
            }
            Ok(est.field)
        })
        .collect()
}

impl VideoData {
    /// Assembles in-memory video data, or `None` (with a warning) when the
    /// video is too short for the requested features.
    pub fn new(
        record: VideoRecord,
        frames: Vec<Frame>,
        depths: Option<Vec<Plane>>,
        needs_flow: bool,
        flow: &FlowParams,
    ) -> Result<Option<Self>> {
        let min_frames = if needs_flow { 3 } else { 2 };
        if frames.len() < min_frames {
            log::warn!(
                "skipping video {}: {} frames, need at least {min_frames}",
                record.video_id,
                frames.len()
            );
            return Ok(None);
        }
        if let Some(d) = &depths {
            if d.len() != frames.len() {
                return Err(Error::dims(
                    format!("{} depth maps for video {}", frames.len(), record.video_id),
                    d.len(),
                ));
            }
        }
        let flows = if needs_flow {
            compute_flows(&record.video_id, &frames, flow)?
        } else {
            Vec::new()
        };
        Ok(Some(VideoData {
            record,
            frames,
            flows,
            depths,
        }))
    }

    pub fn load(manifest: &DatasetManifest, record: &VideoRecord, config: &PipelineConfig, needs_flow: bool) -> Result<Option<Self>> {
        let frames = manifest.load_frames(record)?;
        let depths = if config.features.depth_mask {
            manifest.load_depths(record)?
        } else {
            None
        };
        Self::new(record.clone(), frames, depths, needs_flow, &config.flow)
    }
}

/// Clip descriptors of one video under `mask`. Clips with fewer than two
/// valid samples are skipped with a warning.
pub fn video_descriptors(video: &VideoData, mask: &FeatureSetMask, config: &PipelineConfig) -> Result<Vec<DescriptorRecord>> {
    let ranges = clip_ranges(video.frames.len(), config.clip.length, config.clip.min_length);
    let (w, h) = (video.frames[0].width(), video.frames[0].height());
    let options = config.features.options();
    let validity: Option<Vec<PixelMask>> = match (&video.depths, config.features.depth_mask) {
        (Some(d), true) => Some(
            d.iter()
                .map(|p| depth_mask(p, (w, h), config.features.depth_threshold))
                .collect::<Result<_>>()?,
        ),
        _ => None,
    };
    let results: Vec<Option<DescriptorRecord>> = ranges
        .into_par_iter()
        .enumerate()
        .map(|(clip_index, range)| -> Result<Option<DescriptorRecord>> {
            let view = ClipView {
                frames: &video.frames,
                flows: &video.flows,
                range: range.clone(),
            };
            let masks = validity.as_ref().map(|v| &v[range]);
            let stack = assemble_stack(&view, mask, masks, &options)?;
            let raw = match covariance_integral(&stack) {
                Ok(c) => c,
                Err(Error::InsufficientSamples { got, .. }) => {
                    log::warn!("video {} clip {clip_index}: {got} samples, skipped", video.record.video_id);
                    return Ok(None);
                }
                Err(e) => return Err(e),
            };
            let meta = ClipMeta {
                video_id: video.record.video_id.clone(),
                clip_index,
                label: video.record.label.clone(),
                group: video.record.group.clone(),
            };
            let cov = regularize(&raw, &config.regularization)?.with_meta(meta.clone());
            let log = log_descriptor(&cov.matrix, config.features.off_diagonal, meta)?;
            Ok(Some(DescriptorRecord { cov, log }))
        })
        .collect::<Result<_>>()?;
    Ok(results.into_iter().flatten().collect())
}

pub fn store_header(config: &PipelineConfig) -> Result<StoreHeader> {
    Ok(StoreHeader {
        features: config.features.mask.label(),
        dim: config.mask()?.dim(),
        weight: config.features.off_diagonal,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExtractSummary {
    pub videos: usize,
    pub skipped: Vec<String>,
    pub clips: usize,
}

/// Extracts descriptors for every manifest video into `store_dir`, one file
/// per video. `dump_flow` writes each flow field as a pair of pixmaps.
pub fn extract(
    manifest: &DatasetManifest,
    config: &PipelineConfig,
    store_dir: &Path,
    dump_flow: Option<&Path>,
) -> Result<ExtractSummary> {
    let mask = config.mask()?;
    let header = store_header(config)?;
    std::fs::create_dir_all(store_dir).map_err(|e| Error::io(store_dir, e))?;
    let outcomes: Vec<Option<usize>> = manifest
        .videos
        .par_iter()
        .map(|record| -> Result<Option<usize>> {
            let Some(video) = VideoData::load(manifest, record, config, mask.needs_flow())? else {
                return Ok(None);
            };
            if let Some(dir) = dump_flow {
                let vdir = dir.join(&record.video_id);
                std::fs::create_dir_all(&vdir).map_err(|e| Error::io(&vdir, e))?;
                for (k, f) in video.flows.iter().enumerate() {
                    pnm::dump_flow(&vdir, &format!("flow_{k:04}"), f)?;
                }
            }
            let records = video_descriptors(&video, &mask, config)?;
            store::write_descriptors(&store::video_path(store_dir, &record.video_id), &header, &records)?;
            log::info!("video {}: {} clips", record.video_id, records.len());
            Ok(Some(records.len()))
        })
        .collect::<Result<_>>()?;
    let mut summary = ExtractSummary::default();
    for (record, outcome) in manifest.videos.iter().zip(outcomes) {
        match outcome {
            Some(n) => {
                summary.videos += 1;
                summary.clips += n;
            }
            None => summary.skipped.push(record.video_id.clone()),
        }
    }
    Ok(summary)
}

/// Loads the descriptor files of `videos` (skipping ones never extracted),
/// checking that all share one header.
pub fn load_store(store_dir: &Path, videos: &[&VideoRecord]) -> Result<(Option<StoreHeader>, Vec<Vec<DescriptorRecord>>)> {
    let mut header: Option<StoreHeader> = None;
    let mut out = Vec::with_capacity(videos.len());
    for v in videos {
        let path = store::video_path(store_dir, &v.video_id);
        if !path.exists() {
            log::warn!("no descriptors for video {} in {}", v.video_id, store_dir.display());
            out.push(Vec::new());
            continue;
        }
        let (h, records) = store::read_descriptors(&path)?;
        match &header {
            None => header = Some(h),
            Some(prev) if *prev != h => {
                return Err(Error::parse(&path, format!("header {h:?} differs from {prev:?}")));
            }
            _ => {}
        }
        out.push(records);
    }
    Ok((header, out))
}

/// Stacks the training-split descriptors into a dictionary.
pub fn train(manifest: &DatasetManifest, split: &Split, store_dir: &Path) -> Result<DictionaryFile> {
    split.check_disjoint()?;
    let videos = split.train_videos(manifest);
    let (header, per_video) = load_store(store_dir, &videos)?;
    let records: Vec<DescriptorRecord> = per_video.into_iter().flatten().collect();
    let header = match header {
        Some(h) if !records.is_empty() => h,
        _ => return Err(Error::Empty("training split")),
    };
    Ok(DictionaryFile {
        header,
        train_groups: split.train_groups.clone(),
        records,
    })
}

/// Atom count per label.
pub fn label_histogram(records: &[DescriptorRecord]) -> BTreeMap<String, usize> {
    let mut h = BTreeMap::new();
    for r in records {
        *h.entry(r.meta().label.clone()).or_default() += 1;
    }
    h
}

/// A trained clip classifier.
#[derive(Debug)]
pub enum Classifier {
    Omp { dict: VectorDictionary, params: OmpParams },
    Tsc { dict: TensorDictionary, config: PipelineConfig },
    Nn { exemplars: Vec<LogDescriptor> },
}

/// Clips of the first training video (by id) of each class.
pub fn one_shot_exemplars(train: &[DescriptorRecord]) -> Vec<LogDescriptor> {
    let mut first: BTreeMap<&str, &str> = BTreeMap::new();
    for r in train {
        let m = r.meta();
        let e = first.entry(m.label.as_str()).or_insert(m.video_id.as_str());
        if m.video_id.as_str() < *e {
            *e = m.video_id.as_str();
        }
    }
    train
        .iter()
        .filter(|r| first.get(r.meta().label.as_str()) == Some(&r.meta().video_id.as_str()))
        .map(|r| r.log.clone())
        .collect()
}

impl Classifier {
    pub fn build(method: Method, train: &[DescriptorRecord], config: &PipelineConfig) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Empty("training descriptors"));
        }
        Ok(match method {
            Method::Omp => {
                let logs: Vec<LogDescriptor> = train.iter().map(|r| r.log.clone()).collect();
                let dict = build_dictionary(&logs)?;
                let mut params = config.omp;
                if params.sparsity > dict.len() {
                    log::warn!("omp.sparsity {} exceeds {} atoms, clamped", params.sparsity, dict.len());
                    params.sparsity = dict.len();
                }
                Classifier::Omp { dict, params }
            }
            Method::Tsc => {
                let covs: Vec<_> = train.iter().map(|r| r.cov.clone()).collect();
                Classifier::Tsc {
                    dict: TensorDictionary::from_descriptors(&covs, config.tsc.trace_normalize)?,
                    config: config.clone(),
                }
            }
            Method::Nn => Classifier::Nn {
                exemplars: one_shot_exemplars(train),
            },
        })
    }

    /// Labels every clip of one video.
    pub fn classify_clips(&self, clips: &[DescriptorRecord]) -> Result<ClipLabelVector> {
        let mut out = ClipLabelVector::default();
        match self {
            Classifier::Omp { dict, params } => {
                let queries: Vec<&[f64]> = clips.iter().map(|c| c.log.values.as_slice()).collect();
                for code in batch_omp(dict, &queries, params)? {
                    let c = code.best_class().ok_or(Error::Empty("omp class residuals"))?;
                    out.push(dict.classes().name(c), code.best_residual());
                }
            }
            Classifier::Tsc { dict, config } => {
                for clip in clips {
                    let decision = tsc_classify_clip(&clip.cov.matrix, dict, &config.tsc, &config.regularization)?;
                    log::trace!("{} clip {}: {}", clip.meta().video_id, clip.meta().clip_index, decision.solution.diagnostic_line());
                    out.push(dict.classes().name(decision.class), decision.divergences[decision.class]);
                }
            }
            Classifier::Nn { exemplars } => {
                for clip in clips {
                    let (label, dist) = nn_classify_clip(&clip.log, exemplars)?;
                    out.push(label, dist);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoPrediction {
    pub video_id: String,
    pub truth: String,
    pub method: Method,
    pub predicted: String,
    pub clips: ClipLabelVector,
}

pub const PREDICTIONS_HEADER: &str = "# covmotion predictions v1";

pub fn predictions_to_text(preds: &[VideoPrediction]) -> String {
    let mut s = format!("{PREDICTIONS_HEADER}\nmethod\tvideo_id\ttruth\tpredicted\tclip_labels\n");
    for p in preds {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            p.method,
            p.video_id,
            p.truth,
            p.predicted,
            p.clips.labels.join(",")
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub reports: Vec<EvalReport>,
    pub predictions: Vec<VideoPrediction>,
}

/// Classifies every test video with every method. `test` holds the clip
/// descriptors of each test video, aligned with `test_videos`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_split(
    train: &[DescriptorRecord],
    test_videos: &[&VideoRecord],
    test: &[Vec<DescriptorRecord>],
    classes: &ClassSet,
    methods: &[Method],
    config: &PipelineConfig,
    split_id: &str,
    feature_set: &str,
) -> Result<EvalOutput> {
    if test_videos.is_empty() {
        return Err(Error::Empty("test split"));
    }
    let dim = train.first().map(|r| r.cov.dim()).ok_or(Error::Empty("training descriptors"))?;
    for (v, clips) in test_videos.iter().zip(test) {
        if clips.is_empty() {
            log::error!("test video {} has no clip descriptors", v.video_id);
            return Err(Error::Empty("clip descriptors of a test video"));
        }
        if let Some(c) = clips.iter().find(|c| c.cov.dim() != dim) {
            return Err(Error::dims(dim, c.cov.dim()));
        }
    }
    let truth: Vec<String> = test_videos.iter().map(|v| v.label.clone()).collect();
    let mut out = EvalOutput {
        reports: Vec::new(),
        predictions: Vec::new(),
    };
    for &method in methods {
        let classifier = Classifier::build(method, train, config)?;
        let clip_labels: Vec<ClipLabelVector> = test
            .par_iter()
            .map(|clips| classifier.classify_clips(clips))
            .collect::<Result<_>>()?;
        let mut predicted = Vec::with_capacity(test_videos.len());
        for ((v, clips), t) in test_videos.iter().zip(clip_labels).zip(&truth) {
            let label = majority_vote(&clips)?;
            predicted.push(label.clone());
            out.predictions.push(VideoPrediction {
                video_id: v.video_id.clone(),
                truth: t.clone(),
                method,
                predicted: label,
                clips,
            });
        }
        let mut report = evaluate(&predicted, &truth, classes)?;
        report.method = method.name().to_owned();
        report.split_id = split_id.to_owned();
        report.feature_set = feature_set.to_owned();
        log::info!("{method}/{feature_set}: accuracy {:.4}", report.accuracy);
        out.reports.push(report);
    }
    Ok(out)
}

/// Evaluates the test split of `manifest` against a stored dictionary.
pub fn eval(
    manifest: &DatasetManifest,
    split: &Split,
    dict: &DictionaryFile,
    store_dir: &Path,
    methods: &[Method],
    config: &PipelineConfig,
) -> Result<EvalOutput> {
    split.check_disjoint()?;
    check_disjoint(&dict.train_groups, &split.test_groups)?;
    let test_videos = split.test_videos(manifest);
    let (header, test) = load_store(store_dir, &test_videos)?;
    if let Some(h) = header {
        if h.dim != dict.header.dim {
            return Err(Error::dims(dict.header.dim, h.dim));
        }
    }
    evaluate_split(
        &dict.records,
        &test_videos,
        &test,
        &manifest.class_set(),
        methods,
        config,
        &split.id(),
        &dict.header.features,
    )
}

/// Runs every (mask, method) cell on one split. Frames and flows are
/// computed once per video and shared across masks.
pub fn run_ablation(
    manifest: &DatasetManifest,
    config: &PipelineConfig,
    masks: &[(String, FeatureSetMask)],
    methods: &[Method],
) -> Result<Vec<EvalReport>> {
    if masks.is_empty() || methods.is_empty() {
        return Err(Error::Config("ablation needs at least one mask and one method".into()));
    }
    let split = manifest.split(&config.split, config.seed)?;
    let needs_flow = masks.iter().any(|(_, m)| m.needs_flow());
    let videos: Vec<VideoData> = manifest
        .videos
        .par_iter()
        .map(|r| -> Result<Option<VideoData>> {
            let frames = manifest.load_frames(r)?;
            ablation_check_channels(r, &frames, masks)?;
            let depths = if config.features.depth_mask {
                manifest.load_depths(r)?
            } else {
                None
            };
            VideoData::new(r.clone(), frames, depths, needs_flow, &config.flow)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    ablation_on_videos(&videos, &split, &manifest.class_set(), config, masks, methods)
}

fn ablation_check_channels(r: &VideoRecord, frames: &[Frame], masks: &[(String, FeatureSetMask)]) -> Result<()> {
    if frames.iter().any(|f| !f.is_color()) {
        if let Some((name, _)) = masks.iter().find(|(_, m)| m.intensity) {
            log::error!("video {}: mask {name} needs colour frames", r.video_id);
            return Err(Error::GrayscaleIntensity);
        }
    }
    Ok(())
}

/// Ablation over already loaded videos.
pub fn ablation_on_videos(
    videos: &[VideoData],
    split: &Split,
    classes: &ClassSet,
    config: &PipelineConfig,
    masks: &[(String, FeatureSetMask)],
    methods: &[Method],
) -> Result<Vec<EvalReport>> {
    split.check_disjoint()?;
    let mut reports = Vec::with_capacity(masks.len() * methods.len());
    for (name, mask) in masks {
        let per_video: Vec<Vec<DescriptorRecord>> = videos
            .par_iter()
            .map(|v| video_descriptors(v, mask, config))
            .collect::<Result<_>>()?;
        let mut train = Vec::new();
        let mut test_videos = Vec::new();
        let mut test = Vec::new();
        for (v, records) in videos.iter().zip(per_video) {
            if split.is_train(&v.record.group) {
                train.extend(records);
            } else if split.is_test(&v.record.group) {
                test_videos.push(&v.record);
                test.push(records);
            }
        }
        let out = evaluate_split(&train, &test_videos, &test, classes, methods, config, &split.id(), name)?;
        reports.extend(out.reports);
    }
    Ok(reports)
}
