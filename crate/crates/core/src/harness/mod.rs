//! Configuration, training, evaluation and model artifacts.

mod artifact;
mod config;
mod error;
mod eval;
mod gradcheck;
mod run;
mod train;

pub use artifact::{load, save, AnyModel, FORMAT_VERSION};
pub use config::{Config, ConfigError, InputDropoutMode, PunctPolicy};
pub use error::HarnessError;
pub use eval::{evaluate, evaluate_sentences, is_punct, EvalReport, PUNCT_TAGS};
pub use gradcheck::{gradcheck_config, gradcheck_suite, model_gradcheck, GradcheckReport, EPS};
pub use run::{parse_file, train_files, TrainSummary};
pub use train::{evaluate_model, make_batches, parse_all, train, with_predictions, EpochLog, TrainOutcome};
