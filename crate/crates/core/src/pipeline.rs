//! Experiment configuration and the file-based stages chained by the CLI:
//! synth → transfer → train → localize → eval.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{load_corpus, save_corpus, ActionLabel, Corpus, VideoSequence};
use crate::error::{Error, Result};
use crate::evaluation::{hit_at_k, mean_ap, EvalConfig, GroundTruth};
use crate::io::{write_atomic, write_json};
use crate::localization::{
    localize, read_detections, sort_detections, write_detections, Detection, LocalizationConfig,
};
use crate::lstm::{train_lstm, LstmModel, LstmTrainConfig, TrainReport};
use crate::synth::{corpus_stats, generate_with_modes, CorpusStats, SynthSpec};
use crate::transfer::{run_domain_transfer, TransferConfig, TransferLog};

/// How per-step loss weights are chosen for LSTM training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// Weights from domain transfer, stored in the corpus.
    #[default]
    Laf,
    /// Every step weighted 1.
    Uniform,
    /// A seeded `floor(0.3 T)` steps per video weighted 1, the rest 0.
    Random30,
}

impl WeightMode {
    pub fn name(self) -> &'static str {
        match self {
            WeightMode::Laf => "laf",
            WeightMode::Uniform => "uniform",
            WeightMode::Random30 => "random30",
        }
    }
}

impl std::str::FromStr for WeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "laf" => Ok(WeightMode::Laf),
            "uniform" => Ok(WeightMode::Uniform),
            "random30" => Ok(WeightMode::Random30),
            other => Err(Error::Config(format!(
                "unknown weight mode '{other}' (laf|uniform|random30)"
            ))),
        }
    }
}

/// Default locations; command-line arguments take precedence.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    pub corpus: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, every stage seed is derived from this one.
    pub seed: Option<u64>,
    pub train_mode: WeightMode,
    /// Seeds the random-30% step selection.
    pub random_weight_seed: u64,
    pub synth: SynthSpec,
    pub transfer: TransferConfig,
    pub lstm: LstmTrainConfig,
    pub localization: LocalizationConfig,
    pub eval: EvalConfig,
    pub paths: PathConfig,
}

fn derive_seed(seed: u64, stage: u64) -> u64 {
    seed ^ stage.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.transfer.validate()?;
        self.lstm.validate()?;
        self.localization.validate()?;
        self.eval.validate()
    }

    /// Copy with stage seeds derived from the global seed, if one is set.
    pub fn resolved(&self) -> RunConfig {
        let mut c = self.clone();
        if let Some(s) = self.seed {
            c.synth.seed = derive_seed(s, 0);
            c.transfer.seed = derive_seed(s, 1);
            c.transfer.classifier.seed = derive_seed(s, 2);
            c.lstm.seed = derive_seed(s, 3);
            c.random_weight_seed = derive_seed(s, 4);
        }
        c
    }
}

/// Parses a JSON config; errors name the offending key path.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(format!("at `{path}`: {}", e.into_inner()))
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Training copies of `videos` with per-step weights for `mode`.
pub fn weighted_videos(videos: &[VideoSequence], mode: WeightMode, seed: u64) -> Result<Vec<VideoSequence>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    videos
        .iter()
        .map(|v| {
            let mut v = v.clone();
            let t = v.len();
            v.laf_weights = Some(match mode {
                WeightMode::Laf => {
                    let w = v.laf_weights.take().ok_or_else(|| {
                        Error::validation(
                            format!("video '{}'", v.id),
                            "laf mode needs laf_weights; run transfer first",
                        )
                    })?;
                    w
                }
                WeightMode::Uniform => vec![1.0; t],
                WeightMode::Random30 => {
                    let mut w = vec![0.0; t];
                    let count = (3 * t) / 10;
                    for i in sample(&mut rng, t, count) {
                        w[i] = 1.0;
                    }
                    w
                }
            });
            Ok(v)
        })
        .collect()
}

/// Fused class scores per video id.
pub type VideoScores = BTreeMap<String, Vec<f64>>;

/// Localizes every video; detections come back in the canonical file order.
pub fn localize_videos(
    model: &LstmModel,
    videos: &[VideoSequence],
    config: &LocalizationConfig,
) -> Result<(Vec<Detection>, VideoScores)> {
    let per_video = videos
        .par_iter()
        .map(|v| localize(model, v, config))
        .collect::<Result<Vec<_>>>()?;
    let mut detections = Vec::new();
    let mut scores = VideoScores::new();
    for (v, out) in videos.iter().zip(per_video) {
        detections.extend(out.detections);
        scores.insert(v.id.clone(), out.scores);
    }
    sort_detections(&mut detections);
    Ok((detections, scores))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub hit_at: BTreeMap<String, f64>,
    pub map_at: BTreeMap<String, f64>,
    pub per_label_ap: BTreeMap<String, BTreeMap<String, f64>>,
}

impl EvalReport {
    pub fn map_at(&self, r: f64) -> Option<f64> {
        self.map_at.get(&r.to_string()).copied()
    }

    pub fn to_table(&self) -> String {
        let mut s = String::from("metric\tvalue\n");
        for (k, v) in &self.hit_at {
            let _ = writeln!(s, "Hit@{k}\t{v:.6}");
        }
        for (r, v) in &self.map_at {
            let _ = writeln!(s, "mAP@{r}\t{v:.6}");
        }
        let ratios: Vec<&String> = self.map_at.keys().collect();
        if !self.per_label_ap.is_empty() {
            s.push_str("\nlabel");
            for r in &ratios {
                let _ = write!(s, "\tAP@{r}");
            }
            s.push('\n');
            let mut labels: Vec<(&String, &BTreeMap<String, f64>)> = self.per_label_ap.iter().collect();
            labels.sort_by_key(|(l, _)| l.parse::<usize>().unwrap_or(usize::MAX));
            for (label, aps) in labels {
                s.push_str(label);
                for r in &ratios {
                    let _ = write!(s, "\t{:.6}", aps.get(*r).copied().unwrap_or(f64::NAN));
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Hit@k from fused video scores (or, without them, from the best detection
/// score per label) and mAP at every configured overlap on `videos`.
pub fn evaluate(
    detections: &[Detection],
    scores: Option<&VideoScores>,
    videos: &[VideoSequence],
    num_labels: usize,
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let known: HashMap<&str, &VideoSequence> = videos.iter().map(|v| (v.id.as_str(), v)).collect();
    for d in detections {
        if !known.contains_key(d.video_id.as_str()) {
            return Err(Error::validation(
                format!("detection for '{}'", d.video_id),
                "unknown video id",
            ));
        }
        if d.label.0 >= num_labels {
            return Err(Error::LabelOutOfRange {
                label: d.label.0,
                num_labels,
            });
        }
    }

    let mut video_scores = Vec::with_capacity(videos.len());
    let mut labels = Vec::with_capacity(videos.len());
    let mut fallback: HashMap<&str, Vec<f64>> = HashMap::new();
    if scores.is_none() {
        for d in detections {
            let s = fallback
                .entry(d.video_id.as_str())
                .or_insert_with(|| vec![0.0; num_labels]);
            s[d.label.0] = s[d.label.0].max(d.score);
        }
    }
    for v in videos {
        let s = match scores {
            Some(map) => map
                .get(&v.id)
                .cloned()
                .ok_or_else(|| Error::validation(format!("video '{}'", v.id), "no fused scores"))?,
            None => fallback
                .get(v.id.as_str())
                .cloned()
                .unwrap_or_else(|| vec![0.0; num_labels]),
        };
        if s.len() != num_labels {
            return Err(Error::DimensionMismatch {
                expected: num_labels,
                actual: s.len(),
            });
        }
        video_scores.push(s);
        labels.push(v.label);
    }

    let mut hit_at = BTreeMap::new();
    for &k in &config.hit_ks {
        hit_at.insert(k.to_string(), hit_at_k(&video_scores, &labels, k)?);
    }

    let mut truth = GroundTruth::new();
    for v in videos {
        if let Some(segs) = &v.gt_segments {
            truth
                .entry(v.label)
                .or_default()
                .entry(v.id.clone())
                .or_default()
                .extend(segs.iter().copied());
        }
    }
    let mut map_at = BTreeMap::new();
    let mut per_label_ap: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for &r in &config.overlap_ratios {
        let (mean, per_label) = mean_ap(detections, &truth, r, config.interpolated)?;
        map_at.insert(r.to_string(), mean);
        for (ActionLabel(l), ap) in per_label {
            per_label_ap.entry(l.to_string()).or_default().insert(r.to_string(), ap);
        }
    }
    Ok(EvalReport {
        hit_at,
        map_at,
        per_label_ap,
    })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const SYNTH_MODES_FILE: &str = "synth_modes.json";
pub const LAF_CORPUS_FILE: &str = "corpus_laf.jsonl";
pub const CNN_I_FILE: &str = "cnn_i.json";
pub const TRANSFER_LOG_FILE: &str = "transfer_log.json";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const VIDEO_SCORES_FILE: &str = "video_scores.json";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_TABLE_FILE: &str = "report.txt";

pub fn model_file(mode: WeightMode) -> String {
    format!("lstm_{}.json", mode.name())
}

pub fn loss_file(mode: WeightMode) -> String {
    format!("loss_{}.json", mode.name())
}

/// Writes `corpus.jsonl` and the mode-center sidecar.
pub fn stage_synth(cfg: &RunConfig, out: &Path) -> Result<CorpusStats> {
    let cfg = cfg.resolved();
    let (corpus, modes) = generate_with_modes(&cfg.synth)?;
    let stats = corpus_stats(&corpus)?;
    ensure_dir(out)?;
    save_corpus(&corpus, out.join(CORPUS_FILE))?;
    write_json(&out.join(SYNTH_MODES_FILE), &modes)?;
    Ok(stats)
}

/// Writes the LAF-annotated corpus, the image classifier and the log.
pub fn stage_transfer(cfg: &RunConfig, corpus_path: &Path, out: &Path) -> Result<TransferLog> {
    let cfg = cfg.resolved();
    let mut corpus = load_corpus(corpus_path)?;
    let result = run_domain_transfer(&corpus, &cfg.transfer)?;
    result.apply_to(&mut corpus)?;
    ensure_dir(out)?;
    save_corpus(&corpus, out.join(LAF_CORPUS_FILE))?;
    result.cnn_i.save(out.join(CNN_I_FILE))?;
    write_json(&out.join(TRANSFER_LOG_FILE), &result.log)?;
    Ok(result.log)
}

/// In-memory training on the corpus's train split.
pub fn train_on_corpus(cfg: &RunConfig, corpus: &Corpus, mode: WeightMode) -> Result<(LstmModel, TrainReport)> {
    let cfg = cfg.resolved();
    let videos = weighted_videos(&corpus.train_videos, mode, cfg.random_weight_seed)?;
    train_lstm(&videos, &cfg.lstm, corpus.num_labels, corpus.feature_dim)
}

/// Writes `lstm_<mode>.json` and `loss_<mode>.json`.
pub fn stage_train(cfg: &RunConfig, corpus_path: &Path, mode: WeightMode, out: &Path) -> Result<TrainReport> {
    let corpus = load_corpus(corpus_path)?;
    let (model, report) = train_on_corpus(cfg, &corpus, mode)?;
    ensure_dir(out)?;
    model.save(out.join(model_file(mode)))?;
    write_json(&out.join(loss_file(mode)), &report)?;
    Ok(report)
}

fn check_model_fits(model: &LstmModel, corpus: &Corpus) -> Result<()> {
    if model.dims.input != corpus.feature_dim {
        return Err(Error::DimensionMismatch {
            expected: corpus.feature_dim,
            actual: model.dims.input,
        });
    }
    if model.dims.outputs != corpus.num_labels {
        return Err(Error::DimensionMismatch {
            expected: corpus.num_labels,
            actual: model.dims.outputs,
        });
    }
    Ok(())
}

/// Localizes the test split; writes detections and fused video scores.
pub fn stage_localize(cfg: &RunConfig, model_path: &Path, corpus_path: &Path, out: &Path) -> Result<usize> {
    let model = LstmModel::load(model_path)?;
    let corpus = load_corpus(corpus_path)?;
    check_model_fits(&model, &corpus)?;
    let (detections, scores) = localize_videos(&model, &corpus.test_videos, &cfg.localization)?;
    ensure_dir(out)?;
    let det_path = out.join(DETECTIONS_FILE);
    write_atomic(&det_path, |w| write_detections(&detections, w))?;
    write_json(&out.join(VIDEO_SCORES_FILE), &scores)?;
    Ok(detections.len())
}

pub fn load_video_scores(path: &Path) -> Result<VideoScores> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("{}: {e}", path.display()),
    })
}

/// Scores detections against the test split. Fused scores are read from
/// `scores_path` when given.
pub fn stage_eval(
    cfg: &RunConfig,
    detections_path: &Path,
    corpus_path: &Path,
    scores_path: Option<&Path>,
    out: &Path,
) -> Result<EvalReport> {
    let corpus = load_corpus(corpus_path)?;
    let file = File::open(detections_path).map_err(|e| Error::io(detections_path, e))?;
    let detections = read_detections(BufReader::new(file))?;
    let scores = scores_path.map(load_video_scores).transpose()?;
    let report = evaluate(
        &detections,
        scores.as_ref(),
        &corpus.test_videos,
        corpus.num_labels,
        &cfg.eval,
    )?;
    ensure_dir(out)?;
    write_json(&out.join(REPORT_FILE), &report)?;
    let table = report.to_table();
    write_atomic(&out.join(REPORT_TABLE_FILE), |w| {
        w.write_all(table.as_bytes())
            .map_err(|e| Error::io(out.join(REPORT_TABLE_FILE), e))
    })?;
    Ok(report)
}

/// All stages in order, everything written under `out`.
pub fn run_pipeline(cfg: &RunConfig, out: &Path) -> Result<EvalReport> {
    cfg.validate()?;
    stage_synth(cfg, out)?;
    let mode = cfg.train_mode;
    let train_input = if mode == WeightMode::Laf {
        stage_transfer(cfg, &out.join(CORPUS_FILE), out)?;
        out.join(LAF_CORPUS_FILE)
    } else {
        out.join(CORPUS_FILE)
    };
    stage_train(cfg, &train_input, mode, out)?;
    stage_localize(cfg, &out.join(model_file(mode)), &train_input, out)?;
    stage_eval(
        cfg,
        &out.join(DETECTIONS_FILE),
        &train_input,
        Some(&out.join(VIDEO_SCORES_FILE)),
        out,
    )
}
