//! Dataset manifests, frame directories and group-disjoint splits.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::SplitSpec;
use crate::error::{Error, Result};
use crate::frame::{Frame, Plane};
use crate::labels::ClassSet;
use crate::pnm;

pub const MANIFEST_HEADER: &str = "# covmotion manifest v1";
pub const MANIFEST_COLUMNS: [&str; 6] = ["video_id", "label", "group", "frames_dir", "depth_dir", "frame_count"];
const CLASSES_PREFIX: &str = "# classes:";
const NO_DEPTH: &str = "-";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoRecord {
    pub video_id: String,
    pub label: String,
    pub group: String,
    /// Relative to the manifest directory unless absolute.
    pub frames_dir: PathBuf,
    pub depth_dir: Option<PathBuf>,
    pub frame_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    /// Directory that relative paths are resolved against.
    pub root: PathBuf,
    /// Declared class set; derived from the records when absent.
    pub classes: Option<Vec<String>>,
    pub videos: Vec<VideoRecord>,
}

fn check_token(path: &Path, what: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(|c| c.is_whitespace() || c == ',') {
        return Err(Error::parse(path, format!("invalid {what} `{s}`")));
    }
    Ok(())
}

impl DatasetManifest {
    pub fn parse(text: &str, root: &Path, source: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, l)) if l.trim() == MANIFEST_HEADER => {}
            _ => return Err(Error::parse(source, format!("missing header `{MANIFEST_HEADER}`"))),
        }
        let mut classes = None;
        let mut seen_columns = false;
        let mut videos = Vec::new();
        let mut ids = BTreeSet::new();
        for (n, line) in lines {
            let lineno = n + 1;
            if let Some(rest) = line.strip_prefix(CLASSES_PREFIX) {
                let names: Vec<String> = rest.split(',').map(|s| s.trim().to_owned()).filter(|s| !s.is_empty()).collect();
                classes = Some(names);
                continue;
            }
            if line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if !seen_columns {
                if fields != MANIFEST_COLUMNS {
                    return Err(Error::parse(source, format!("line {lineno}: expected column header")));
                }
                seen_columns = true;
                continue;
            }
            if fields.len() != MANIFEST_COLUMNS.len() {
                return Err(Error::parse(
                    source,
                    format!("line {lineno}: expected {} fields, got {}", MANIFEST_COLUMNS.len(), fields.len()),
                ));
            }
            check_token(source, "video id", fields[0])?;
            check_token(source, "label", fields[1])?;
            check_token(source, "group", fields[2])?;
            let frame_count = fields[5]
                .parse()
                .map_err(|_| Error::parse(source, format!("line {lineno}: bad frame count `{}`", fields[5])))?;
            if !ids.insert(fields[0].to_owned()) {
                return Err(Error::parse(source, format!("line {lineno}: duplicate video id `{}`", fields[0])));
            }
            videos.push(VideoRecord {
                video_id: fields[0].to_owned(),
                label: fields[1].to_owned(),
                group: fields[2].to_owned(),
                frames_dir: PathBuf::from(fields[3]),
                depth_dir: (fields[4] != NO_DEPTH).then(|| PathBuf::from(fields[4])),
                frame_count,
            });
        }
        if let Some(declared) = &classes {
            if let Some(v) = videos.iter().find(|v| !declared.contains(&v.label)) {
                return Err(Error::UnknownLabel(v.label.clone()));
            }
        }
        Ok(DatasetManifest {
            root: root.to_path_buf(),
            classes,
            videos,
        })
    }

    /// Loads a manifest and checks that every referenced directory exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let m = Self::parse(&text, &root, path)?;
        for v in &m.videos {
            let dirs = std::iter::once(m.frames_dir(v)).chain(m.depth_dir(v));
            for d in dirs {
                if !d.is_dir() {
                    return Err(Error::parse(path, format!("video `{}`: missing directory {}", v.video_id, d.display())));
                }
            }
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from(MANIFEST_HEADER);
        s.push('\n');
        if let Some(c) = &self.classes {
            let _ = writeln!(s, "{CLASSES_PREFIX} {}", c.join(","));
        }
        s.push_str(&MANIFEST_COLUMNS.join("\t"));
        s.push('\n');
        for v in &self.videos {
            let depth = v.depth_dir.as_ref().map_or(NO_DEPTH.to_owned(), |d| d.display().to_string());
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}",
                v.video_id,
                v.label,
                v.group,
                v.frames_dir.display(),
                depth,
                v.frame_count
            );
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        pnm::write_bytes_atomic(path, self.to_text().as_bytes())
    }

    pub fn class_set(&self) -> ClassSet {
        match &self.classes {
            Some(c) => ClassSet::from_labels(c.iter().map(String::as_str)),
            None => ClassSet::from_labels(self.videos.iter().map(|v| v.label.as_str())),
        }
    }

    pub fn groups(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.videos.iter().map(|v| v.group.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }

    pub fn video(&self, id: &str) -> Option<&VideoRecord> {
        self.videos.iter().find(|v| v.video_id == id)
    }

    pub fn frames_dir(&self, v: &VideoRecord) -> PathBuf {
        self.root.join(&v.frames_dir)
    }

    pub fn depth_dir(&self, v: &VideoRecord) -> Option<PathBuf> {
        v.depth_dir.as_ref().map(|d| self.root.join(d))
    }

    pub fn load_frames(&self, v: &VideoRecord) -> Result<Vec<Frame>> {
        let paths = frame_paths(&self.frames_dir(v))?;
        if paths.len() != v.frame_count {
            log::warn!(
                "video {}: manifest declares {} frames, found {}",
                v.video_id,
                v.frame_count,
                paths.len()
            );
        }
        let frames = paths.iter().map(|p| pnm::read_frame(p)).collect::<Result<Vec<_>>>()?;
        if let Some(f) = frames.first() {
            if frames.iter().any(|g| g.width() != f.width() || g.height() != f.height()) {
                return Err(Error::parse(self.frames_dir(v), "frames differ in size"));
            }
        }
        Ok(frames)
    }

    pub fn load_depths(&self, v: &VideoRecord) -> Result<Option<Vec<Plane>>> {
        let Some(dir) = self.depth_dir(v) else {
            return Ok(None);
        };
        let paths = frame_paths(&dir)?;
        paths.iter().map(|p| pnm::read_depth(p)).collect::<Result<Vec<_>>>().map(Some)
    }

    /// Group-disjoint split. Explicit test groups win; otherwise a seeded
    /// shuffle of the sorted groups picks `ceil(fraction · groups)` test groups,
    /// always leaving at least one group on each side.
    pub fn split(&self, spec: &SplitSpec, seed: u64) -> Result<Split> {
        let groups = self.groups();
        let test: BTreeSet<String> = if spec.test_groups.is_empty() {
            if groups.len() < 2 {
                return Err(Error::Config(format!("need at least 2 groups to split, found {}", groups.len())));
            }
            let k = ((spec.test_fraction * groups.len() as f64).ceil() as usize).clamp(1, groups.len() - 1);
            let mut shuffled = groups.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            shuffled.into_iter().take(k).collect()
        } else {
            for g in &spec.test_groups {
                if !groups.contains(g) {
                    return Err(Error::Config(format!("test group `{g}` not in manifest")));
                }
            }
            spec.test_groups.iter().cloned().collect()
        };
        let train: BTreeSet<String> = groups.into_iter().filter(|g| !test.contains(g)).collect();
        let split = Split {
            train_groups: train.into_iter().collect(),
            test_groups: test.into_iter().collect(),
        };
        split.check_disjoint()?;
        Ok(split)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train_groups: Vec<String>,
    pub test_groups: Vec<String>,
}

impl Split {
    pub fn id(&self) -> String {
        format!("test={}", self.test_groups.join(","))
    }

    pub fn check_disjoint(&self) -> Result<()> {
        check_disjoint(&self.train_groups, &self.test_groups)
    }

    pub fn is_train(&self, group: &str) -> bool {
        self.train_groups.iter().any(|g| g == group)
    }

    pub fn is_test(&self, group: &str) -> bool {
        self.test_groups.iter().any(|g| g == group)
    }

    pub fn train_videos<'a>(&self, m: &'a DatasetManifest) -> Vec<&'a VideoRecord> {
        m.videos.iter().filter(|v| self.is_train(&v.group)).collect()
    }

    pub fn test_videos<'a>(&self, m: &'a DatasetManifest) -> Vec<&'a VideoRecord> {
        m.videos.iter().filter(|v| self.is_test(&v.group)).collect()
    }
}

/// Fails with the shared group ids when the two sets intersect.
pub fn check_disjoint(train: &[String], test: &[String]) -> Result<()> {
    let overlap: Vec<String> = train.iter().filter(|g| test.contains(g)).cloned().collect();
    if overlap.is_empty() {
        Ok(())
    } else {
        Err(Error::SplitOverlap(overlap))
    }
}

fn numeric_key(path: &Path) -> Option<u64> {
    let stem = path.file_stem()?.to_str()?;
    let digits: String = stem
        .chars()
        .rev()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(char::is_ascii_digit)
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    digits.parse().ok()
}

/// `.ppm`/`.pgm` files in `dir`, ordered by the last number in the file stem.
pub fn frame_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for e in entries {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if p.is_file() && matches!(ext.as_deref(), Some("ppm" | "pgm")) {
            paths.push(p);
        }
    }
    paths.sort_by(|a, b| (numeric_key(a), a).cmp(&(numeric_key(b), b)));
    Ok(paths)
}
