//! Feature-space CycleGAN: generator and discriminator networks plus the
//! adversarial training loop against a frozen feature extractor.

mod nets;
mod train;

pub use nets::{
    discriminator_param_formula, generator_param_formula, Discriminator, DiscriminatorConfig, Generator,
    GeneratorConfig, Scale,
};
pub use train::{
    hallucinate, train_featuregan, write_loss_csv, FeatureGanBundle, FeatureGanConfig, GanLogRow, LOSS_CSV_HEADER,
};
