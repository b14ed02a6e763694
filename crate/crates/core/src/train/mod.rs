//! Losses, the ADAM optimiser and the training loop.

pub mod adam;
pub mod config;
pub mod loss;
pub mod trace;
pub mod trainer;

pub use adam::{adam_step, AdamState, ALPHA_FLOOR};
pub use config::TrainConfig;
pub use loss::{regularized_loss, sharpness_penalty, square_loss};
pub use trace::{read_trace, trace_header, trace_to_csv, trace_to_csv_with, write_trace, TraceRow};
pub use trainer::{initial_schedule, split_dataset, train, train_model, train_model_with, validation_len, validation_mpjpe, TrainOutcome};
