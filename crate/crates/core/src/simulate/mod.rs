//! Universal training data: autoencoder reconstructions composited into
//! real images under random masks.

mod autoencoder;
mod composite;
mod dataset;

pub use autoencoder::{
    discriminator_loss, generator_loss, reconstruction_loss, train_autoencoder, AeTrainConfig,
    AeTrainReport, AutoencoderConfig, AutoencoderModel, DiscriminatorModel, GeneratorLoss,
    TrainingMeta, REC_SCALE, STAGES,
};
pub use composite::composite;
pub use dataset::{
    generate_universal_dataset, load_dataset, sample_mask_params, simulate_samples,
    DatasetManifest, SampleEntry, UniversalSample, MANIFEST_VERSION,
};
