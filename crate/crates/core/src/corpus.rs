//! Domain types shared by every stage, and the JSON Lines corpus format.
//!
//! A corpus file starts with a header record followed by one record per web
//! image or video:
//!
//! ```text
//! {"format":"laf-corpus","version":1,"num_labels":N,"feature_dim":d}
//! {"kind":"image","id":"img-0","label":3,"feature":"<base64 f64le>","relevant":true}
//! {"kind":"video","split":"train","id":"vid-0","label":3,"frames":["<base64 f64le>",...],"gt_segments":[[4,10]],"laf_weights":[...]}
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::ops::Deref;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{decode_f64s, encode_f64s};
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const CORPUS_FORMAT: &str = "laf-corpus";
pub const CORPUS_VERSION: u32 = 1;

/// Index of a fine-grained action in `0..num_labels`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionLabel(pub usize);

impl ActionLabel {
    pub fn index(self) -> usize {
        self.0
    }
}

impl std::fmt::Display for ActionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A frame or image embedding. Opaque to the toolkit beyond its dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for FeatureVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(values: Vec<f64>) -> Self {
        FeatureVector(values)
    }
}

/// Half-open step interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interval {
    pub start: usize,
    pub end: usize,
}

impl Interval {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start >= end {
            return Err(Error::validation(
                format!("interval [{start}, {end})"),
                "start must be < end",
            ));
        }
        Ok(Interval { start, end })
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    pub fn intersection_len(&self, other: &Interval) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        hi.saturating_sub(lo)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WebImage {
    pub id: String,
    pub label: ActionLabel,
    pub feature: FeatureVector,
    /// Known only for synthetic corpora.
    pub relevant: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    pub id: String,
    pub label: ActionLabel,
    /// One feature per time step.
    pub frames: Vec<FeatureVector>,
    pub gt_segments: Option<Vec<Interval>>,
    /// Per-step loss weights in `[0, 1]`, one per frame.
    pub laf_weights: Option<Vec<f64>>,
}

impl VideoSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub num_labels: usize,
    pub feature_dim: usize,
    pub label_names: Option<Vec<String>>,
    pub images: Vec<WebImage>,
    pub train_videos: Vec<VideoSequence>,
    pub validation_videos: Vec<VideoSequence>,
    pub test_videos: Vec<VideoSequence>,
}

impl Corpus {
    pub fn new(num_labels: usize, feature_dim: usize) -> Self {
        Corpus {
            num_labels,
            feature_dim,
            label_names: None,
            images: Vec::new(),
            train_videos: Vec::new(),
            validation_videos: Vec::new(),
            test_videos: Vec::new(),
        }
    }

    pub fn videos(&self, split: Split) -> &[VideoSequence] {
        match split {
            Split::Train => &self.train_videos,
            Split::Validation => &self.validation_videos,
            Split::Test => &self.test_videos,
        }
    }

    pub fn videos_mut(&mut self, split: Split) -> &mut Vec<VideoSequence> {
        match split {
            Split::Train => &mut self.train_videos,
            Split::Validation => &mut self.validation_videos,
            Split::Test => &mut self.test_videos,
        }
    }

    /// All videos with their split, in file order.
    pub fn all_videos(&self) -> impl Iterator<Item = (Split, &VideoSequence)> {
        [Split::Train, Split::Validation, Split::Test]
            .into_iter()
            .flat_map(move |s| self.videos(s).iter().map(move |v| (s, v)))
    }

    pub fn find_video(&self, id: &str) -> Option<(Split, &VideoSequence)> {
        self.all_videos().find(|(_, v)| v.id == id)
    }

    pub fn record_count(&self) -> usize {
        self.images.len() + self.train_videos.len() + self.validation_videos.len() + self.test_videos.len()
    }

    /// Checks every type invariant, naming the first offending record.
    pub fn validate(&self) -> Result<()> {
        self.check_header()?;
        let mut image_ids = HashSet::new();
        for img in &self.images {
            let name = format!("image '{}'", img.id);
            self.check_image(img, &name)?;
            if !image_ids.insert(img.id.as_str()) {
                return Err(Error::validation(name, "duplicate image id"));
            }
        }
        let mut video_ids = HashSet::new();
        for (_, v) in self.all_videos() {
            let name = format!("video '{}'", v.id);
            self.check_video(v, &name)?;
            if !video_ids.insert(v.id.as_str()) {
                return Err(Error::validation(name, "duplicate video id"));
            }
        }
        Ok(())
    }

    fn check_header(&self) -> Result<()> {
        if self.num_labels == 0 {
            return Err(Error::validation("header", "num_labels must be >= 1"));
        }
        if self.feature_dim == 0 {
            return Err(Error::validation("header", "feature_dim must be >= 1"));
        }
        if let Some(names) = &self.label_names {
            if names.len() != self.num_labels {
                return Err(Error::validation(
                    "header",
                    format!("{} label names for {} labels", names.len(), self.num_labels),
                ));
            }
            let unique: HashSet<&String> = names.iter().collect();
            if unique.len() != names.len() {
                return Err(Error::validation("header", "label names are not unique"));
            }
        }
        Ok(())
    }

    fn check_label(&self, label: ActionLabel, record: &str) -> Result<()> {
        if label.0 >= self.num_labels {
            return Err(Error::validation(
                record,
                format!("label {} >= num_labels {}", label.0, self.num_labels),
            ));
        }
        Ok(())
    }

    fn check_feature(&self, f: &FeatureVector, record: &str) -> Result<()> {
        if f.dim() != self.feature_dim {
            return Err(Error::validation(
                record,
                format!(
                    "dimension mismatch: feature has {} values, corpus feature_dim is {}",
                    f.dim(),
                    self.feature_dim
                ),
            ));
        }
        if !f.is_finite() {
            return Err(Error::validation(record, "non-finite feature value"));
        }
        Ok(())
    }

    fn check_image(&self, img: &WebImage, record: &str) -> Result<()> {
        self.check_label(img.label, record)?;
        self.check_feature(&img.feature, record)
    }

    fn check_video(&self, v: &VideoSequence, record: &str) -> Result<()> {
        self.check_label(v.label, record)?;
        if v.frames.is_empty() {
            return Err(Error::validation(record, "video has no frames"));
        }
        for (t, f) in v.frames.iter().enumerate() {
            self.check_feature(f, &format!("{record} step {t}"))?;
        }
        let len = v.frames.len();
        if let Some(segs) = &v.gt_segments {
            for s in segs {
                if s.start >= s.end || s.end > len {
                    return Err(Error::validation(
                        record,
                        format!("gt segment [{}, {}) outside [0, {len}) or empty", s.start, s.end),
                    ));
                }
            }
        }
        if let Some(w) = &v.laf_weights {
            if w.len() != len {
                return Err(Error::validation(
                    record,
                    format!("{} laf weights for {len} frames", w.len()),
                ));
            }
            if let Some(bad) = w.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(Error::validation(record, format!("laf weight {bad} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderRecord {
    format: String,
    version: u32,
    num_labels: usize,
    feature_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_names: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    Image {
        id: String,
        label: usize,
        feature: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        relevant: Option<bool>,
    },
    Video {
        split: Split,
        id: String,
        label: usize,
        frames: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gt_segments: Option<Vec<[usize; 2]>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        laf_weights: Option<Vec<f64>>,
    },
}

/// Reads and validates a corpus file.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_corpus(reader: impl BufRead) -> Result<Corpus> {
    let mut corpus: Option<Corpus> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io("<corpus stream>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { line: line_no, message };
        let Some(corpus) = corpus.as_mut() else {
            let header: HeaderRecord =
                serde_json::from_str(&line).map_err(|e| parse_err(format!("bad header: {e}")))?;
            if header.format != CORPUS_FORMAT {
                return Err(parse_err(format!(
                    "format '{}' is not '{CORPUS_FORMAT}'",
                    header.format
                )));
            }
            if header.version != CORPUS_VERSION {
                return Err(parse_err(format!("unsupported version {}", header.version)));
            }
            let mut c = Corpus::new(header.num_labels, header.feature_dim);
            c.label_names = header.label_names;
            c.check_header()?;
            corpus = Some(c);
            continue;
        };
        let record: Record = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let decode = |text: &str| -> Result<FeatureVector> { decode_f64s(text).map(FeatureVector).map_err(&parse_err) };
        match record {
            Record::Image {
                id,
                label,
                feature,
                relevant,
            } => {
                let img = WebImage {
                    label: ActionLabel(label),
                    feature: decode(&feature)?,
                    relevant,
                    id,
                };
                corpus.check_image(&img, &format!("image '{}' (line {line_no})", img.id))?;
                corpus.images.push(img);
            }
            Record::Video {
                split,
                id,
                label,
                frames,
                gt_segments,
                laf_weights,
            } => {
                let frames = frames.iter().map(|f| decode(f)).collect::<Result<Vec<_>>>()?;
                let video = VideoSequence {
                    id,
                    label: ActionLabel(label),
                    frames,
                    gt_segments: gt_segments
                        .map(|segs| segs.into_iter().map(|[start, end]| Interval { start, end }).collect()),
                    laf_weights,
                };
                corpus.check_video(&video, &format!("video '{}' (line {line_no})", video.id))?;
                corpus.videos_mut(split).push(video);
            }
        }
    }
    let corpus = corpus.ok_or_else(|| Error::validation("corpus", "no records"))?;
    corpus.validate()?;
    Ok(corpus)
}

/// Validates and writes a corpus; the file is replaced atomically.
pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    corpus.validate()?;
    write_atomic(path.as_ref(), |w| write_corpus(corpus, w))
}

pub fn write_corpus(corpus: &Corpus, mut w: impl Write) -> Result<()> {
    let header = HeaderRecord {
        format: CORPUS_FORMAT.to_string(),
        version: CORPUS_VERSION,
        num_labels: corpus.num_labels,
        feature_dim: corpus.feature_dim,
        label_names: corpus.label_names.clone(),
    };
    let io_err = |e: std::io::Error| Error::io("<corpus stream>", e);
    writeln!(w, "{}", to_json(&header)).map_err(io_err)?;
    for img in &corpus.images {
        let rec = Record::Image {
            id: img.id.clone(),
            label: img.label.0,
            feature: encode_f64s(&img.feature),
            relevant: img.relevant,
        };
        writeln!(w, "{}", to_json(&rec)).map_err(io_err)?;
    }
    for (split, v) in corpus.all_videos() {
        let rec = Record::Video {
            split,
            id: v.id.clone(),
            label: v.label.0,
            frames: v.frames.iter().map(|f| encode_f64s(f)).collect(),
            gt_segments: v
                .gt_segments
                .as_ref()
                .map(|segs| segs.iter().map(|s| [s.start, s.end]).collect()),
            laf_weights: v.laf_weights.clone(),
        };
        writeln!(w, "{}", to_json(&rec)).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("corpus records always serialize")
}
