//! Adversarially trained autoencoder whose reconstructions stand in for
//! generated image content.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tch::nn::{self, OptimizerConfig, VarStore};
use tch::{Device, Kind, Reduction, Tensor};

use crate::checkpoint::{digest, Checkpoint, CheckpointKind};
use crate::error::{Error, Result};
use crate::image::{common_size, images_to_tensor, Image};
use crate::params::{derive_seed, reinitialize};

/// Number of stride-2 stages on each side of the bottleneck.
pub const STAGES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderConfig {
    /// Channels after the first encoder stage; doubles per stage.
    pub base_channels: i64,
    /// Discriminator width, same doubling scheme.
    pub disc_channels: i64,
    /// `[height, width]`, each divisible by 16.
    pub input_size: [usize; 2],
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            base_channels: 32,
            disc_channels: 32,
            input_size: [64, 64],
        }
    }
}

impl AutoencoderConfig {
    pub fn validate(&self) -> Result<()> {
        let [h, w] = self.input_size;
        let unit = 1 << STAGES;
        if h % unit != 0 || w % unit != 0 || h == 0 || w == 0 {
            return Err(Error::InvalidParams(format!(
                "autoencoder input {h}x{w} must be a positive multiple of {unit}"
            )));
        }
        if self.base_channels < 1 || self.disc_channels < 1 {
            return Err(Error::InvalidParams(
                "channel widths must be positive".into(),
            ));
        }
        Ok(())
    }

    fn widths(base: i64) -> [i64; STAGES] {
        [base, base * 2, base * 4, base * 8]
    }
}

fn down(p: nn::Path, cin: i64, cout: i64) -> nn::Conv2D {
    nn::conv2d(
        p,
        cin,
        cout,
        4,
        nn::ConvConfig {
            stride: 2,
            padding: 1,
            ..Default::default()
        },
    )
}

/// Provenance recorded with a trained model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub steps: usize,
    pub seed: u64,
    pub lambda: f64,
    pub final_d_loss: Option<f64>,
    pub final_g_adv_loss: Option<f64>,
    pub final_rec_loss: Option<f64>,
}

/// Encoder of four stride-2 convs to a bottleneck and a decoder of four
/// stride-2 transposed convs, without skip connections.
#[derive(Debug)]
pub struct AutoencoderModel {
    cfg: AutoencoderConfig,
    vs: VarStore,
    encoder: Vec<nn::Conv2D>,
    decoder: Vec<nn::ConvTranspose2D>,
    pub meta: TrainingMeta,
}

impl AutoencoderModel {
    pub fn new(cfg: &AutoencoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let vs = VarStore::new(Device::Cpu);
        let root = vs.root();
        let widths = AutoencoderConfig::widths(cfg.base_channels);
        let mut cin = 3;
        let encoder = widths
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let conv = down(&root / format!("enc{i}"), cin, c);
                cin = c;
                conv
            })
            .collect();
        let outs = [widths[2], widths[1], widths[0], 3];
        let decoder = outs
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let conv = nn::conv_transpose2d(
                    &root / format!("dec{i}"),
                    cin,
                    c,
                    4,
                    nn::ConvTransposeConfig {
                        stride: 2,
                        padding: 1,
                        ..Default::default()
                    },
                );
                cin = c;
                conv
            })
            .collect();
        reinitialize(&vs, seed);
        Ok(Self {
            cfg: cfg.clone(),
            vs,
            encoder,
            decoder,
            meta: TrainingMeta {
                seed,
                ..Default::default()
            },
        })
    }

    pub fn config(&self) -> &AutoencoderConfig {
        &self.cfg
    }

    pub fn var_store(&self) -> &VarStore {
        &self.vs
    }

    /// Reconstruction in `[0, 1]` of an `[N, 3, H, W]` batch.
    pub fn forward(&self, xs: &Tensor) -> Tensor {
        let z = self
            .encoder
            .iter()
            .fold(xs.shallow_clone(), |h, c| h.apply(c).leaky_relu());
        let last = self.decoder.len() - 1;
        self.decoder.iter().enumerate().fold(z, |h, (i, c)| {
            let h = h.apply(c);
            if i == last {
                h.sigmoid()
            } else {
                h.relu()
            }
        })
    }

    fn check(&self, img: &Image) -> Result<()> {
        let [h, w] = self.cfg.input_size;
        if img.dims() != (h, w) {
            return Err(Error::ShapeMismatch(format!(
                "autoencoder expects {h}x{w} images, got {}x{}",
                img.height(),
                img.width()
            )));
        }
        Ok(())
    }

    /// Reconstruct one image; output is clamped to `[0, 1]`.
    pub fn reconstruct(&self, img: &Image) -> Result<Image> {
        self.check(img)?;
        let out = tch::no_grad(|| self.forward(&img.to_tensor()));
        Image::from_tensor(&out)
    }

    /// Mean squared reconstruction error over a set of images.
    pub fn mean_rec_error(&self, images: &[Image]) -> Result<f64> {
        let mut total = 0.0;
        for img in images {
            let r = self.reconstruct(img)?;
            let se: f64 = r
                .data()
                .iter()
                .zip(img.data())
                .map(|(a, b)| ((a - b) as f64).powi(2))
                .sum();
            total += se / img.data().len() as f64;
        }
        Ok(total / images.len().max(1) as f64)
    }

    fn ckpt_config(&self) -> serde_json::Value {
        serde_json::json!({ "autoencoder": self.cfg, "meta": self.meta })
    }

    /// Checkpoint holding only the generator, whose bytes define the
    /// autoencoder digest.
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_stores(
            CheckpointKind::Autoencoder,
            self.ckpt_config(),
            &[("generator", &self.vs)],
        )
    }

    /// SHA-256 of the generator-only checkpoint bytes.
    pub fn digest(&self) -> Result<String> {
        Ok(digest(&self.to_checkpoint().to_bytes()?))
    }

    /// Write the generator and, if given, the discriminator into one file.
    pub fn save(
        &self,
        disc: Option<&DiscriminatorModel>,
        path: impl AsRef<Path>,
    ) -> Result<String> {
        let mut stores = vec![("generator", &self.vs)];
        if let Some(d) = disc {
            stores.push(("discriminator", &d.vs));
        }
        Checkpoint::from_stores(CheckpointKind::Autoencoder, self.ckpt_config(), &stores).save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck = Checkpoint::load(path)?;
        ck.expect_kind(CheckpointKind::Autoencoder)?;
        let cfg: AutoencoderConfig = serde_json::from_value(ck.config["autoencoder"].clone())?;
        let meta: TrainingMeta = serde_json::from_value(ck.config["meta"].clone())?;
        let mut model = Self::new(&cfg, 0)?;
        ck.load_into("generator", &model.vs)?;
        model.meta = meta;
        Ok(model)
    }
}

/// Four stride-2 convs, global average pooling and a linear real/fake score.
#[derive(Debug)]
pub struct DiscriminatorModel {
    vs: VarStore,
    convs: Vec<nn::Conv2D>,
    fc: nn::Linear,
}

impl DiscriminatorModel {
    pub fn new(cfg: &AutoencoderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let vs = VarStore::new(Device::Cpu);
        let root = vs.root();
        let widths = AutoencoderConfig::widths(cfg.disc_channels);
        let mut cin = 3;
        let convs = widths
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let conv = down(&root / format!("conv{i}"), cin, c);
                cin = c;
                conv
            })
            .collect();
        let fc = nn::linear(&root / "fc", cin, 1, Default::default());
        reinitialize(&vs, seed);
        Ok(Self { vs, convs, fc })
    }

    pub fn var_store(&self) -> &VarStore {
        &self.vs
    }

    /// Real/fake logits `[N]`.
    pub fn logits(&self, xs: &Tensor) -> Tensor {
        self.convs
            .iter()
            .fold(xs.shallow_clone(), |h, c| h.apply(c).leaky_relu())
            .mean_dim(&[2i64, 3][..], false, Kind::Float)
            .apply(&self.fc)
            .squeeze_dim(1)
    }

    /// Probability that `img` is real, strictly inside `(0, 1)`.
    pub fn real_probability(&self, img: &Image) -> f64 {
        let logit = tch::no_grad(|| self.logits(&img.to_tensor())).double_value(&[0]);
        let p = 1.0 / (1.0 + (-logit).exp());
        p.clamp(f64::EPSILON, 1.0 - f64::EPSILON)
    }
}

/// Intensity scale at which the reconstruction norm is measured.
pub const REC_SCALE: f64 = 255.0;

/// `||G(I) - I||_2` per image in 8-bit intensity units, averaged over the
/// batch.
pub fn reconstruction_loss(recon: &Tensor, target: &Tensor) -> Tensor {
    ((recon - target) * REC_SCALE)
        .flatten(1, -1)
        .square()
        .sum_dim_intlist(&[1i64][..], false, recon.kind())
        .sqrt()
        .mean(recon.kind())
}

/// Discriminator objective: maximizing `log D(I) + log(1 - D(G(I)))`,
/// written as a loss to minimize.
pub fn discriminator_loss(real_logits: &Tensor, fake_logits: &Tensor) -> Tensor {
    let ones = real_logits.ones_like();
    let zeros = fake_logits.zeros_like();
    real_logits.binary_cross_entropy_with_logits::<Tensor>(&ones, None, None, Reduction::Mean)
        + fake_logits.binary_cross_entropy_with_logits::<Tensor>(
            &zeros,
            None,
            None,
            Reduction::Mean,
        )
}

#[derive(Debug)]
pub struct GeneratorLoss {
    pub total: Tensor,
    pub adversarial: Tensor,
    pub reconstruction: Tensor,
}

/// Non-saturating adversarial term `-log D(G(I))` plus `λ · L_rec`.
pub fn generator_loss(
    fake_logits: &Tensor,
    recon: &Tensor,
    target: &Tensor,
    lambda: f64,
) -> GeneratorLoss {
    let ones = fake_logits.ones_like();
    let adversarial =
        fake_logits.binary_cross_entropy_with_logits::<Tensor>(&ones, None, None, Reduction::Mean);
    let reconstruction = reconstruction_loss(recon, target);
    let total = &adversarial + &reconstruction * lambda;
    GeneratorLoss {
        total,
        adversarial,
        reconstruction,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AeTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    /// Weight of the reconstruction term.
    pub lambda: f64,
    pub seed: u64,
    pub model: AutoencoderConfig,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            learning_rate: 2e-4,
            beta1: 0.5,
            lambda: 0.1,
            seed: 0,
            model: AutoencoderConfig::default(),
        }
    }
}

/// Per-step loss histories.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AeTrainReport {
    pub d_loss: Vec<f64>,
    pub g_adv_loss: Vec<f64>,
    pub rec_loss: Vec<f64>,
    /// Mean reconstruction error over the training set before the first step.
    pub initial_rec_error: f64,
    /// Same, after the last step.
    pub final_rec_error: f64,
}

/// Train generator and discriminator with alternating updates.
pub fn train_autoencoder(
    images: &[Image],
    cfg: &AeTrainConfig,
) -> Result<(AutoencoderModel, DiscriminatorModel, AeTrainReport)> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if images.len() < 2 {
        return Err(Error::InvalidParams(
            "autoencoder training needs at least two images".into(),
        ));
    }
    let (h, w) = common_size(images)?;
    let mut model_cfg = cfg.model.clone();
    model_cfg.input_size = [h, w];
    if cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) || !(cfg.lambda >= 0.0) {
        return Err(Error::InvalidParams(
            "batch_size, learning_rate must be positive and lambda >= 0".into(),
        ));
    }

    let mut gen = AutoencoderModel::new(&model_cfg, derive_seed(cfg.seed, "generator"))?;
    let disc = DiscriminatorModel::new(&model_cfg, derive_seed(cfg.seed, "discriminator"))?;
    let adam = nn::Adam {
        beta1: cfg.beta1,
        ..Default::default()
    };
    let mut g_opt = adam.build(&gen.vs, cfg.learning_rate)?;
    let mut d_opt = adam.build(&disc.vs, cfg.learning_rate)?;

    let data = images_to_tensor(images);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "batches"));
    let mut order: Vec<i64> = (0..images.len() as i64).collect();
    let mut cursor = order.len();

    let mut report = AeTrainReport {
        initial_rec_error: gen.mean_rec_error(images)?,
        ..Default::default()
    };
    for step in 0..cfg.steps {
        let mut idx = Vec::with_capacity(cfg.batch_size);
        while idx.len() < cfg.batch_size.min(order.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let real = data.index_select(0, &Tensor::from_slice(&idx));

        let fake = gen.forward(&real);
        let d_loss = discriminator_loss(&disc.logits(&real), &disc.logits(&fake.detach()));
        d_opt.backward_step(&d_loss);

        let g = generator_loss(&disc.logits(&fake), &fake, &real, cfg.lambda);
        g_opt.backward_step(&g.total);

        let d = d_loss.double_value(&[]);
        let adv = g.adversarial.double_value(&[]);
        let rec = g.reconstruction.double_value(&[]);
        for (what, v) in [
            ("discriminator loss", d),
            ("adversarial loss", adv),
            ("reconstruction loss", rec),
        ] {
            if !v.is_finite() {
                return Err(Error::DivergenceDetected {
                    step,
                    what: what.into(),
                });
            }
        }
        report.d_loss.push(d);
        report.g_adv_loss.push(adv);
        report.rec_loss.push(rec);
        if step % 100 == 0 {
            log::debug!("ae step {step}: d {d:.4} adv {adv:.4} rec {rec:.5}");
        }
    }
    report.final_rec_error = gen.mean_rec_error(images)?;
    gen.meta = TrainingMeta {
        steps: cfg.steps,
        seed: cfg.seed,
        lambda: cfg.lambda,
        final_d_loss: report.d_loss.last().copied(),
        final_g_adv_loss: report.g_adv_loss.last().copied(),
        final_rec_loss: report.rec_loss.last().copied(),
    };
    Ok((gen, disc, report))
}
