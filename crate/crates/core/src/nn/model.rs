//! The full translation model: two auto-encoders and four discriminators.
//!
//! Decoders are named by the domain of the image their encoders read:
//! `G_c = (E_c^CT, E_c^AF, D_c)` maps corrupted images to the artifact-free
//! domain and `G_f` maps the other way. Discriminators are named by the
//! domain they judge: `adv_c` and `adv_fc` look at corrupted-domain images,
//! `adv_f` and `adv_cf` at artifact-free ones.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::layers::Layer;
use super::networks::{ArtifactEncoder, ContentEncoder, Decoder, Discriminator};
use super::params::{Init, ParamStore, seeded};
use crate::data::Domain;
use crate::error::{Error, Result};
use crate::motion::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub base_filters: usize,
    pub content_blocks: usize,
    pub artifact_blocks: usize,
    pub leaky_slope: f64,
    /// rows, cols, channels
    pub input_shape: [usize; 3],
    pub discriminator_filters: Vec<usize>,
    /// Kernel of the decoder's residual blocks.
    pub decoder_kernel: usize,
    pub instance_norm_eps: f64,
    pub init_std: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            base_filters: 64,
            content_blocks: 4,
            artifact_blocks: 3,
            leaky_slope: 0.2,
            input_shape: [208, 256, 3],
            discriminator_filters: vec![64, 128, 256, 512],
            decoder_kernel: 3,
            instance_norm_eps: 1e-8,
            init_std: 0.02,
        }
    }
}

impl NetworkConfig {
    /// Reduced widths for CPU-scale experiments.
    pub fn reduced(rows: usize, cols: usize) -> Self {
        Self {
            base_filters: 8,
            input_shape: [rows, cols, 3],
            discriminator_filters: vec![16, 32, 64, 128],
            ..Self::default()
        }
    }

    /// Channels of the content and artifact codes.
    pub fn code_channels(&self) -> usize {
        self.base_filters << (self.content_blocks - 2)
    }

    /// Spatial divisor the input grid must satisfy.
    pub fn grid_divisor(&self) -> usize {
        (1usize << (self.content_blocks - 1)).max(1 << self.discriminator_filters.len())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.content_blocks < 2 {
            return fail(format!("content_blocks must be at least 2, got {}", self.content_blocks));
        }
        if self.artifact_blocks + 1 != self.content_blocks {
            return fail(format!(
                "artifact_blocks ({}) must be content_blocks - 1 ({}) so the codes align",
                self.artifact_blocks,
                self.content_blocks - 1
            ));
        }
        if self.base_filters == 0 || self.discriminator_filters.is_empty() || self.discriminator_filters.contains(&0) {
            return fail("filter counts must be positive".into());
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return fail(format!("leaky_slope must lie in [0, 1), got {}", self.leaky_slope));
        }
        if self.decoder_kernel % 2 == 0 {
            return fail(format!("decoder_kernel must be odd, got {}", self.decoder_kernel));
        }
        if !(self.instance_norm_eps > 0.0 && self.init_std > 0.0) {
            return fail("instance_norm_eps and init_std must be positive".into());
        }
        let [rows, cols, ch] = self.input_shape;
        let d = self.grid_divisor();
        if ch != 3 || rows == 0 || rows % d != 0 || cols == 0 || cols % d != 0 {
            return fail(format!("input_shape {rows}x{cols}x{ch} needs 3 channels and dims divisible by {d}"));
        }
        Ok(())
    }
}

/// Encoder pair plus decoder mapping one domain to the other.
#[derive(Debug, Clone)]
pub struct AutoEncoder {
    pub content: ContentEncoder,
    pub artifact: ArtifactEncoder,
    pub decoder: Decoder,
}

/// Content pyramid (last level is the content code) and artifact code.
#[derive(Debug, Clone)]
pub struct Codes {
    pub pyramid: Vec<Tensor>,
    pub artifact: Tensor,
}

impl Codes {
    pub fn content(&self) -> &Tensor {
        self.pyramid.last().expect("pyramid has at least two levels")
    }
}

impl AutoEncoder {
    pub fn encode(&self, x: &Tensor) -> Result<Codes> {
        Ok(Codes {
            pyramid: self.content.forward(x)?,
            artifact: self.artifact.forward(x)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let codes = self.encode(x)?;
        self.decoder.forward(codes.content(), &codes.artifact)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    CorruptedToFree,
    FreeToCorrupted,
}

/// The four discriminators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Critic {
    /// Corrupted domain, same-domain translations.
    C,
    /// Artifact-free domain, same-domain translations.
    F,
    /// Artifact-free domain, content-swapped images.
    CF,
    /// Corrupted domain, content-swapped images.
    FC,
}

impl Critic {
    pub const ALL: [Critic; 4] = [Critic::C, Critic::F, Critic::CF, Critic::FC];

    pub fn key(self) -> &'static str {
        match self {
            Critic::C => "adv_c",
            Critic::F => "adv_f",
            Critic::CF => "adv_cf",
            Critic::FC => "adv_fc",
        }
    }

    pub fn judged_domain(self) -> Domain {
        match self {
            Critic::C | Critic::FC => Domain::Corrupted,
            Critic::F | Critic::CF => Domain::Free,
        }
    }
}

pub const GENERATOR_KEYS: [&str; 6] = ["e_ct_c", "e_af_c", "d_c", "e_ct_f", "e_af_f", "d_f"];
pub const DISCRIMINATOR_KEYS: [&str; 4] = ["adv_c", "adv_f", "adv_cf", "adv_fc"];

/// Every image produced by one forward pass over an unpaired couple.
#[derive(Debug, Clone)]
pub struct TranslationBundle {
    pub x_c: Tensor,
    pub x_f: Tensor,
    /// `G_c` encoders on `x_c`.
    pub codes_c: Codes,
    /// `G_f` encoders on `x_f`.
    pub codes_f: Codes,
    pub x_cf: Tensor,
    pub x_fc: Tensor,
    /// `G_f` encoders on `x_cf`.
    pub codes_cf: Codes,
    /// `G_c` encoders on `x_fc`.
    pub codes_fc: Codes,
    pub rec_c: Tensor,
    pub rec_f: Tensor,
    pub ident_c: Tensor,
    pub ident_f: Tensor,
    /// `D_c(z_f^CT, z_c^AF)`, artifact-free domain.
    pub swap_cf: Tensor,
    /// `D_f(z_c^CT, z_f^AF)`, corrupted domain.
    pub swap_fc: Tensor,
}

#[derive(Debug, Clone)]
pub struct Duncan {
    config: NetworkConfig,
    stores: BTreeMap<String, ParamStore>,
    pub g_c: AutoEncoder,
    pub g_f: AutoEncoder,
    critics: BTreeMap<Critic, Discriminator>,
    dtype: DType,
    device: Device,
}

impl Duncan {
    pub fn new(config: &NetworkConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        let mut stores = BTreeMap::new();
        let mut net = |key: &str, f: &mut dyn FnMut(&mut Init) -> Result<()>| -> Result<()> {
            let (mut store, mut rng) = seeded(derive_seed(seed, key, 0), dtype, device);
            f(&mut Init::new(&mut store, &mut rng, config.init_std))?;
            stores.insert(key.to_string(), store);
            Ok(())
        };
        let mut autoencoder = |side: &str| -> Result<AutoEncoder> {
            let (mut content, mut artifact, mut decoder) = (None, None, None);
            net(&format!("e_ct_{side}"), &mut |i| Ok(content = Some(ContentEncoder::new(i, config, dtype)?)))?;
            net(&format!("e_af_{side}"), &mut |i| Ok(artifact = Some(ArtifactEncoder::new(i, config, dtype)?)))?;
            net(&format!("d_{side}"), &mut |i| Ok(decoder = Some(Decoder::new(i, config)?)))?;
            Ok(AutoEncoder {
                content: content.expect("built above"),
                artifact: artifact.expect("built above"),
                decoder: decoder.expect("built above"),
            })
        };
        let g_c = autoencoder("c")?;
        let g_f = autoencoder("f")?;
        let mut critics = BTreeMap::new();
        for critic in Critic::ALL {
            net(critic.key(), &mut |i| {
                critics.insert(critic, Discriminator::new(i, config, dtype)?);
                Ok(())
            })?;
        }
        Ok(Self {
            config: config.clone(),
            stores,
            g_c,
            g_f,
            critics,
            dtype,
            device: device.clone(),
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Parameter stores keyed by sub-network name.
    pub fn stores(&self) -> &BTreeMap<String, ParamStore> {
        &self.stores
    }

    pub fn store(&self, key: &str) -> Result<&ParamStore> {
        self.stores
            .get(key)
            .ok_or_else(|| Error::InvalidArgument(format!("no sub-network named {key}")))
    }

    fn vars_of(&self, keys: &[&str]) -> Vec<(String, Var)> {
        keys.iter()
            .flat_map(|k| {
                self.stores[*k]
                    .vars()
                    .iter()
                    .map(move |(n, v)| (format!("{k}.{n}"), v.clone()))
            })
            .collect()
    }

    pub fn generator_vars(&self) -> Vec<(String, Var)> {
        self.vars_of(&GENERATOR_KEYS)
    }

    pub fn discriminator_vars(&self) -> Vec<(String, Var)> {
        self.vars_of(&DISCRIMINATOR_KEYS)
    }

    pub fn critic(&self, which: Critic) -> &Discriminator {
        &self.critics[&which]
    }

    fn generator(&self, d: Direction) -> &AutoEncoder {
        match d {
            Direction::CorruptedToFree => &self.g_c,
            Direction::FreeToCorrupted => &self.g_f,
        }
    }

    pub fn translate(&self, x: &Tensor, direction: Direction) -> Result<Tensor> {
        self.generator(direction).forward(x)
    }

    /// Translate to the other domain and back: `(intermediate, reconstruction)`.
    pub fn cycle(&self, x: &Tensor, start: Domain) -> Result<(Tensor, Tensor)> {
        let (there, back) = match start {
            Domain::Corrupted => (Direction::CorruptedToFree, Direction::FreeToCorrupted),
            Domain::Free => (Direction::FreeToCorrupted, Direction::CorruptedToFree),
        };
        let mid = self.translate(x, there)?;
        let rec = self.translate(&mid, back)?;
        Ok((mid, rec))
    }

    /// `(D_c(z_f^CT, z_c^AF), D_f(z_c^CT, z_f^AF))`.
    pub fn content_swap(&self, x_c: &Tensor, x_f: &Tensor) -> Result<(Tensor, Tensor)> {
        let codes_c = self.g_c.encode(x_c)?;
        let codes_f = self.g_f.encode(x_f)?;
        self.swap_codes(&codes_c, &codes_f)
    }

    fn swap_codes(&self, codes_c: &Codes, codes_f: &Codes) -> Result<(Tensor, Tensor)> {
        Ok((
            self.g_c.decoder.forward(codes_f.content(), &codes_c.artifact)?,
            self.g_f.decoder.forward(codes_c.content(), &codes_f.artifact)?,
        ))
    }

    /// Route `x` through the auto-encoder whose output domain is `x`'s own.
    pub fn identity_translate(&self, x: &Tensor, domain: Domain) -> Result<Tensor> {
        match domain {
            Domain::Corrupted => self.g_f.forward(x),
            Domain::Free => self.g_c.forward(x),
        }
    }

    pub fn discriminate(&self, x: &Tensor, which: Critic) -> Result<Tensor> {
        self.critic(which).forward(x)
    }

    /// Run every translation path once.
    pub fn forward_bundle(&self, x_c: &Tensor, x_f: &Tensor) -> Result<TranslationBundle> {
        let codes_c = self.g_c.encode(x_c)?;
        let codes_f = self.g_f.encode(x_f)?;
        let x_cf = self.g_c.decoder.forward(codes_c.content(), &codes_c.artifact)?;
        let x_fc = self.g_f.decoder.forward(codes_f.content(), &codes_f.artifact)?;
        let codes_cf = self.g_f.encode(&x_cf)?;
        let codes_fc = self.g_c.encode(&x_fc)?;
        let rec_c = self.g_f.decoder.forward(codes_cf.content(), &codes_cf.artifact)?;
        let rec_f = self.g_c.decoder.forward(codes_fc.content(), &codes_fc.artifact)?;
        let ident_c = self.g_f.forward(x_c)?;
        let ident_f = self.g_c.forward(x_f)?;
        let (swap_cf, swap_fc) = self.swap_codes(&codes_c, &codes_f)?;
        Ok(TranslationBundle {
            x_c: x_c.clone(),
            x_f: x_f.clone(),
            codes_c,
            codes_f,
            x_cf,
            x_fc,
            codes_cf,
            codes_fc,
            rec_c,
            rec_f,
            ident_c,
            ident_f,
            swap_cf,
            swap_fc,
        })
    }

    /// Layer graph of each sub-network.
    pub fn describe(&self) -> BTreeMap<String, Vec<Layer>> {
        let mut out = BTreeMap::new();
        for (side, g) in [("c", &self.g_c), ("f", &self.g_f)] {
            out.insert(format!("e_ct_{side}"), g.content.describe().concat());
            out.insert(format!("e_af_{side}"), g.artifact.describe());
            out.insert(format!("d_{side}"), g.decoder.describe());
        }
        for (c, d) in &self.critics {
            out.insert(c.key().to_string(), d.describe());
        }
        out
    }
}
