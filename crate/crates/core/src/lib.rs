//! Weakly-supervised temporal action localization.
//!
//! The pipeline filters a noisy web-image pool and weakly labeled video frames
//! against each other ([`transfer`]), scores every training frame with the
//! resulting image-trained classifier, trains an LSTM with a recurrent
//! projection layer whose per-step loss is weighted by those scores
//! ([`lstm`]), and localizes actions with sliding windows and temporal NMS
//! ([`localization`]), evaluated by Hit@k and mAP ([`evaluation`]).

pub mod classifier;
pub mod codec;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod localization;
pub mod lstm;
pub mod math;
pub mod pipeline;
pub mod synth;
pub mod transfer;

pub use corpus::{ActionLabel, Corpus, FeatureVector, Interval, Split, VideoSequence, WebImage};
pub use error::{Error, Result};
