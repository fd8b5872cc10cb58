//! Cross-domain contrastive defect classification.
//!
//! A small convolutional encoder is trained with triplets whose anchors and
//! negatives come from a labeled source domain and whose positives are
//! defect-free target-domain images. Unseen target images are then labeled
//! by their mean embedding distance to banks of positive and negative
//! references.
//!
//! The modules follow the pipeline order: [`synthetic`] and [`dataset`]
//! produce images, [`sampler`] draws triplets, [`encoder`] with [`layers`]
//! embeds them, [`loss`] and [`optim`] drive [`trainer`], [`classifier`]
//! labels queries and [`experiment`] ties it all together.

pub mod classifier;
pub mod cli;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod pgm;
pub mod sampler;
pub mod seed;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use classifier::{
    build_bank, classify, classify_batch, ConfusionMatrix, ReferenceBank, Verdict,
};
pub use dataset::{
    read_dataset, split, write_dataset, Dataset, Domain, Label, LabeledImage, TrainingPools,
};
pub use encoder::{init_encoder, Embedding, EncoderConfig, EncoderModel};
pub use error::{Error, Result};
pub use experiment::{
    metrics, run_experiment, run_suite, ExperimentConfig, ExperimentReport, Metrics, SuiteReport,
};
pub use loss::{LossConfig, LossVariant};
pub use optim::OptimizerConfig;
pub use sampler::{sample_epoch, Mode, Triplet};
pub use synthetic::GeneratorSpec;
pub use tensor::Tensor;
pub use trainer::{train, TrainConfig, TrainReport};
