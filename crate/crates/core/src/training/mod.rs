//! Joint training of encoder, decoder and codebook, plus the data and
//! checkpoint plumbing around it.

mod checkpoint;
mod dataset;
mod loss;
mod trainer;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, KB_FILE, PARAMS_FILE, REPORT_FILE, SNAPSHOT_FILE,
};
pub use dataset::{
    ingest_dataset, read_cifar_batch, read_idx_images, write_idx_images, DatasetKind, ImageSet,
    Splits,
};
pub use loss::{loss_and_grads, LossOutput, LossParts, NormMode};
pub use trainer::{
    published_codec, route_codebook_grad, train, EpochReport, GradientProbe, StepReport,
    TrainChannel, TrainConfig, TrainOutcome, TrainReport, Trainer,
};
