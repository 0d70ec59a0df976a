//! Small trainable transformer used as a stand-in for pretrained models.

mod checkpoint;
mod config;
pub(crate) mod model;
mod tokenizer;
pub(crate) mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{NumberInit, ToyConfig};
pub use model::{BlockParams, CaptureSpec, Captures, Params, Positions, ToyLM};
pub use tokenizer::{Tokenizer, BOS, BOS_ID, N_NUMBERS, N_RESERVED, OPERATORS};
pub use train::{
    answer_accuracy, answer_loss_grad, arithmetic_prompt, capture_prompts, split_pairs, train_arithmetic, ArithMetrics,
    ArithTask, ArithTrainConfig, EvalPoint,
};
