//! Alternating adversarial optimization, loss logging and checkpoints.

mod adam;
mod checkpoint;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{CHECKPOINT_FORMAT, CHECKPOINT_VERSION, CheckpointMeta, load_checkpoint, load_model, save_checkpoint};

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetManifest, SlabPipeline, Split, UnpairedSampler};
use crate::error::{Error, Result};
use crate::losses::{
    ExtractorConfig, LossReport, LossWeights, PerceptualExtractor, Role, ScorePair, WeightPreset, cd_adv_loss,
    feature_losses, iqc_loss, ms_cc_loss, prc_loss, sd_adv_loss,
};
use crate::motion::derive_seed;
use crate::nn::{Critic, Duncan, NetworkConfig, TranslationBundle, slabs_to_tensor};

pub const CHECKPOINT_FILE: &str = "checkpoint.safetensors";
pub const LOSS_LOG_FILE: &str = "loss_log.jsonl";
/// Step records kept inside a checkpoint.
pub const LOSS_TAIL: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    pub extractor: ExtractorConfig,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub total_steps: u64,
    pub checkpoint_every: u64,
    pub seed: u64,
    pub weight_preset: WeightPreset,
    /// Explicit weights; overrides the preset when set.
    pub weights: Option<LossWeights>,
    /// Crop (rows, cols) replacing the network's input grid.
    pub crop_size: Option<[usize; 2]>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            network: NetworkConfig::default(),
            extractor: ExtractorConfig::default(),
            optimizer: AdamConfig::default(),
            batch_size: 1,
            total_steps: 1000,
            checkpoint_every: 500,
            seed: 0,
            weight_preset: WeightPreset::InVivo,
            weights: None,
            crop_size: None,
        }
    }
}

impl TrainConfig {
    pub fn effective_network(&self) -> NetworkConfig {
        let mut n = self.network.clone();
        if let Some([rows, cols]) = self.crop_size {
            n.input_shape = [rows, cols, 3];
        }
        n
    }

    pub fn loss_weights(&self) -> LossWeights {
        self.weights.unwrap_or_else(|| LossWeights::preset(self.weight_preset))
    }

    pub fn pipeline(&self) -> SlabPipeline {
        let [rows, cols, _] = self.effective_network().input_shape;
        SlabPipeline::new(rows, cols)
    }

    pub fn validate(&self) -> Result<()> {
        self.effective_network().validate()?;
        self.optimizer.validate()?;
        self.loss_weights().validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        Ok(())
    }
}

/// One line of the loss log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    #[serde(flatten)]
    pub report: LossReport,
    /// Discriminator-phase objectives.
    pub d_sd_adv: f64,
    pub d_cd_adv: f64,
    pub wall_time_s: f64,
}

/// Everything that evolves during training.
#[derive(Debug)]
pub struct TrainState {
    pub config: TrainConfig,
    pub model: Duncan,
    pub extractor: PerceptualExtractor,
    opt_g: Adam,
    opt_d: Adam,
    /// Completed steps.
    pub step: u64,
    pub history: Vec<StepRecord>,
}

fn finite(term: &str, step: u64, t: &Tensor) -> Result<f64> {
    let v = t.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Diverged {
            term: term.into(),
            step,
            value: v,
        })
    }
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        Self::with_dtype(config, DType::F32)
    }

    pub fn with_dtype(config: &TrainConfig, dtype: DType) -> Result<Self> {
        config.validate()?;
        let device = Device::Cpu;
        let model = Duncan::new(&config.effective_network(), derive_seed(config.seed, "model", 0), dtype, &device)?;
        let extractor = PerceptualExtractor::from_config(&config.extractor, dtype, &device)?;
        let opt_g = Adam::new(model.generator_vars(), config.optimizer)?;
        let opt_d = Adam::new(model.discriminator_vars(), config.optimizer)?;
        Ok(Self {
            config: config.clone(),
            model,
            extractor,
            opt_g,
            opt_d,
            step: 0,
            history: Vec::new(),
        })
    }

    pub fn optimizers(&self) -> (&Adam, &Adam) {
        (&self.opt_g, &self.opt_d)
    }

    pub(crate) fn optimizers_mut(&mut self) -> (&mut Adam, &mut Adam) {
        (&mut self.opt_g, &mut self.opt_d)
    }

    /// Checksum over the six generator sub-networks.
    pub fn generator_checksum(&self) -> Result<String> {
        self.checksum_of(&crate::nn::GENERATOR_KEYS)
    }

    pub fn discriminator_checksum(&self) -> Result<String> {
        self.checksum_of(&crate::nn::DISCRIMINATOR_KEYS)
    }

    fn checksum_of(&self, keys: &[&str]) -> Result<String> {
        keys.iter()
            .map(|k| self.model.store(k)?.checksum())
            .collect::<Result<Vec<_>>>()
            .map(|v| v.join(""))
    }

    /// Discriminator objectives `(sd_adv, cd_adv)` with generator outputs
    /// detached.
    pub fn discriminator_objective(&self, b: &TranslationBundle) -> Result<(Tensor, Tensor)> {
        let m = &self.model;
        let pair = |critic: Critic, real: &Tensor, fake: &Tensor| -> Result<ScorePair> {
            Ok(ScorePair {
                real: Some(m.discriminate(real, critic)?),
                fake: m.discriminate(&fake.detach(), critic)?,
            })
        };
        let sd = sd_adv_loss(
            &pair(Critic::C, &b.x_c, &b.x_fc)?,
            &pair(Critic::F, &b.x_f, &b.x_cf)?,
            Role::Discriminator,
        )?;
        let cd = cd_adv_loss(
            &pair(Critic::FC, &b.x_c, &b.swap_fc)?,
            &pair(Critic::CF, &b.x_f, &b.swap_cf)?,
            Role::Discriminator,
        )?;
        Ok((sd, cd))
    }

    /// Generator-phase terms, in report order without the total:
    /// ms_cc, prc, erc, src, iqc, sd_adv, cd_adv. Discriminators are frozen.
    pub fn generator_terms(&self, b: &TranslationBundle) -> Result<[Tensor; 7]> {
        let m = &self.model;
        let judge = |critic: Critic, fake: &Tensor| -> Result<ScorePair> {
            Ok(ScorePair {
                real: None,
                fake: m.critic(critic).frozen().forward(fake)?,
            })
        };
        let ms_cc = ms_cc_loss(&b.codes_c.pyramid, &b.codes_cf.pyramid, &b.codes_f.pyramid, &b.codes_fc.pyramid)?;
        let prc = prc_loss(&b.x_c, &b.rec_c, &b.x_f, &b.rec_f)?;
        let (erc, src) = feature_losses(&self.extractor, &b.x_c, &b.rec_c, &b.x_f, &b.rec_f)?;
        let iqc = iqc_loss(&b.x_c, &b.ident_c, &b.x_f, &b.ident_f)?;
        let sd = sd_adv_loss(&judge(Critic::C, &b.x_fc)?, &judge(Critic::F, &b.x_cf)?, Role::Generator)?;
        let cd = cd_adv_loss(&judge(Critic::FC, &b.swap_fc)?, &judge(Critic::CF, &b.swap_cf)?, Role::Generator)?;
        Ok([ms_cc, prc, erc, src, iqc, sd, cd])
    }

    /// One discriminator update followed by one generator update.
    pub fn train_step(&mut self, x_c: &Tensor, x_f: &Tensor) -> Result<StepRecord> {
        let started = Instant::now();
        let step = self.step;
        let bundle = self.model.forward_bundle(x_c, x_f)?;

        let (d_sd, d_cd) = self.discriminator_objective(&bundle)?;
        let d_sd_adv = finite("d_sd_adv", step, &d_sd)?;
        let d_cd_adv = finite("d_cd_adv", step, &d_cd)?;
        let grads = (d_sd + d_cd)?.backward()?;
        self.opt_d.step(&grads)?;

        let terms = self.generator_terms(&bundle)?;
        let names = ["ms_cc", "prc", "erc", "src", "iqc", "sd_adv", "cd_adv"];
        let mut values = [0.0; 7];
        for ((v, t), name) in values.iter_mut().zip(&terms).zip(names) {
            *v = finite(name, step, t)?;
        }
        let w = self.config.loss_weights();
        let [ms_cc, prc, erc, src, iqc, sd, cd] = terms;
        let total = ((sd + cd)?
            + (ms_cc * w.ms_cc)?
            + (prc * w.prc)?
            + (erc * w.erc)?
            + (src * w.src)?
            + (iqc * w.iqc)?)?;
        finite("total", step, &total)?;
        let report = LossReport {
            ms_cc: values[0],
            prc: values[1],
            erc: values[2],
            src: values[3],
            iqc: values[4],
            sd_adv: values[5],
            cd_adv: values[6],
            total: 0.0,
        }
        .with_total(&w)
        .map_err(|e| match e {
            Error::Diverged { term, value, .. } => Error::Diverged { term, step, value },
            other => other,
        })?;
        let grads = total.backward()?;
        self.opt_g.step(&grads)?;

        self.step += 1;
        let record = StepRecord {
            step,
            report,
            d_sd_adv,
            d_cd_adv,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        self.history.push(record);
        if self.history.len() > LOSS_TAIL {
            self.history.remove(0);
        }
        Ok(record)
    }
}

/// Input tensors for step `step`: a seeded draw of `batch_size` unpaired
/// couples, independent of how many steps ran before in this process.
pub fn sample_batch(
    sampler: &UnpairedSampler,
    seed: u64,
    step: u64,
    batch_size: usize,
    dtype: DType,
) -> Result<(Tensor, Tensor)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "sample", step as usize));
    let mut cs = Vec::with_capacity(batch_size);
    let mut fs = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let (c, f) = sampler.sample(&mut rng);
        cs.push(c.pixels.view());
        fs.push(f.pixels.view());
    }
    Ok((slabs_to_tensor(&cs, dtype, &Device::Cpu)?, slabs_to_tensor(&fs, dtype, &Device::Cpu)?))
}

/// Run steps until `state.step == until`, appending to `log` when given and
/// checkpointing to `checkpoint` every `checkpoint_every` steps and at the
/// end.
pub fn run(
    state: &mut TrainState,
    sampler: &UnpairedSampler,
    until: u64,
    log: Option<&Path>,
    checkpoint: Option<&Path>,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<()> {
    let mut log_file = match log {
        Some(p) => Some(
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| Error::io(p, e))?,
        ),
        None => None,
    };
    let dtype = state.model.dtype();
    while state.step < until {
        let (x_c, x_f) = sample_batch(sampler, state.config.seed, state.step, state.config.batch_size, dtype)?;
        let record = state.train_step(&x_c, &x_f)?;
        if let (Some(f), Some(p)) = (log_file.as_mut(), log) {
            let line = serde_json::to_string(&record)?;
            writeln!(f, "{line}").map_err(|e| Error::io(p, e))?;
        }
        on_step(&record);
        if let Some(p) = checkpoint
            && state.step % state.config.checkpoint_every == 0
            && state.step != until
        {
            save_checkpoint(state, p)?;
        }
    }
    if let Some(p) = checkpoint {
        save_checkpoint(state, p)?;
    }
    Ok(())
}

/// Drop log records for steps at or after `from` so a resumed run continues
/// the log without gaps or repeats.
pub fn truncate_log(path: &Path, from: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut kept = String::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let rec: StepRecord = serde_json::from_str(line)
            .map_err(|e| Error::format(path, format!("bad loss log line: {e}")))?;
        if rec.step < from {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    crate::io_util::write_atomic(path, kept.as_bytes())
}

pub fn read_log(path: &Path) -> Result<Vec<StepRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::format(path, format!("bad loss log line: {e}"))))
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

impl TrainOutputs {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            checkpoint: dir.join(CHECKPOINT_FILE),
            log: dir.join(LOSS_LOG_FILE),
        }
    }
}

/// Train on the train split of `manifest`, writing the checkpoint and loss
/// log into `out_dir`. With `resume`, continue from an existing checkpoint
/// there.
pub fn train(manifest: &DatasetManifest, config: &TrainConfig, out_dir: &Path, resume: bool) -> Result<TrainState> {
    config.validate()?;
    manifest.check_trainable()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let outputs = TrainOutputs::in_dir(out_dir);
    let mut state = if resume && outputs.checkpoint.exists() {
        load_checkpoint(&outputs.checkpoint, Some(config))?
    } else {
        if outputs.log.exists() {
            std::fs::remove_file(&outputs.log).map_err(|e| Error::io(&outputs.log, e))?;
        }
        TrainState::new(config)?
    };
    truncate_log(&outputs.log, state.step)?;
    let sampler = UnpairedSampler::from_manifest(manifest, &config.pipeline(), Split::Train)?;
    run(
        &mut state,
        &sampler,
        config.total_steps,
        Some(&outputs.log),
        Some(&outputs.checkpoint),
        |_| {},
    )?;
    Ok(state)
}
