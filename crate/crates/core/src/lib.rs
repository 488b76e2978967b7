//! Data model, synthetic collision scenes, flow kinematics, training
//! objectives and evaluation metrics for audible-action localization.

pub mod annotation;
pub mod decode;
pub mod error;
pub mod kinematics;
pub mod losses;
pub mod metrics;
pub mod resize;
pub mod sampling;
pub mod synth;
pub mod video;

pub use annotation::{gaussian_soft_labels, load_annotations, save_annotations, AnnotationTrack, SoftLabelTrack};
pub use decode::{decode_events, PredictionTrack};
pub use error::{Error, Result};
pub use sampling::{reassemble, sample_training_clip, sliding_windows, window_spans, TrainingClip, WindowSpan};
pub use video::VideoSequence;
