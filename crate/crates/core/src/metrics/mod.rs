//! Evaluation metrics: METEOR, two-class classification scores and
//! inter-judge agreement.

pub mod agreement;
pub mod classification;
pub mod meteor;

pub use agreement::{agreement_rwg, AgreementError, AgreementMode, Dimension, RatingsMatrix};
pub use classification::{classification_report, ClassificationReport, MetricsError};
pub use meteor::{meteor, MeteorOptions};
