//! Training objectives: consistency terms, least-squares adversarial terms
//! and their weighted total.

mod extractor;

pub use extractor::{ExtractorConfig, PerceptualExtractor, Tap, VGG19_STAGES};

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightPreset {
    InVivo,
    InSilico,
}

crate::data::text_enum!(WeightPreset {
    WeightPreset::InVivo => "in_vivo",
    WeightPreset::InSilico => "in_silico",
});

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub ms_cc: f64,
    pub prc: f64,
    pub erc: f64,
    pub src: f64,
    pub iqc: f64,
}

impl LossWeights {
    pub fn preset(p: WeightPreset) -> Self {
        match p {
            WeightPreset::InVivo => Self {
                ms_cc: 5.0,
                prc: 10.0,
                erc: 5.0,
                src: 5.0,
                iqc: 1.0,
            },
            WeightPreset::InSilico => Self {
                ms_cc: 10.0,
                prc: 20.0,
                erc: 10.0,
                src: 10.0,
                iqc: 5.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.ms_cc, self.prc, self.erc, self.src, self.iqc];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!("loss weights must be finite and non-negative, got {self:?}")))
        }
    }
}

/// Generator-phase scalars of one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub ms_cc: f64,
    pub prc: f64,
    pub erc: f64,
    pub src: f64,
    pub iqc: f64,
    pub sd_adv: f64,
    pub cd_adv: f64,
    pub total: f64,
}

impl LossReport {
    pub fn named(&self) -> [(&'static str, f64); 8] {
        [
            ("ms_cc", self.ms_cc),
            ("prc", self.prc),
            ("erc", self.erc),
            ("src", self.src),
            ("iqc", self.iqc),
            ("sd_adv", self.sd_adv),
            ("cd_adv", self.cd_adv),
            ("total", self.total),
        ]
    }

    /// Fill `total` from the other fields; fails on the first non-finite term.
    pub fn with_total(mut self, w: &LossWeights) -> Result<Self> {
        self.total = total_loss(&self, w)?;
        Ok(self)
    }
}

/// `sd_adv + cd_adv + sum(lambda_k * term_k)`; any non-finite term is an error.
pub fn total_loss(r: &LossReport, w: &LossWeights) -> Result<f64> {
    for (name, v) in r.named().into_iter().take(7) {
        if !v.is_finite() {
            return Err(Error::Diverged {
                term: name.into(),
                step: 0,
                value: v,
            });
        }
    }
    Ok(r.sd_adv + r.cd_adv + w.ms_cc * r.ms_cc + w.prc * r.prc + w.erc * r.erc + w.src * r.src + w.iqc * r.iqc)
}

/// Mean absolute difference over all elements.
pub fn mean_l1(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("L1 between {:?} and {:?}", a.dims(), b.dims())));
    }
    Ok((a - b)?.abs()?.mean_all()?)
}

fn pyramid_l1(a: &[Tensor], b: &[Tensor]) -> Result<Tensor> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("pyramids with {} and {} levels", a.len(), b.len())));
    }
    let terms = a.iter().zip(b).map(|(x, y)| mean_l1(x, y)).collect::<Result<Vec<_>>>()?;
    Ok(Tensor::stack(&terms, 0)?.sum_all()?)
}

/// Multi-scale content consistency: per-level mean L1 between each input's
/// content pyramid and its translation's, summed over levels and both
/// directions.
pub fn ms_cc_loss(phi_c_xc: &[Tensor], phi_f_xcf: &[Tensor], phi_f_xf: &[Tensor], phi_c_xfc: &[Tensor]) -> Result<Tensor> {
    Ok((pyramid_l1(phi_c_xc, phi_f_xcf)? + pyramid_l1(phi_f_xf, phi_c_xfc)?)?)
}

/// Pixel reconstruction consistency.
pub fn prc_loss(x_c: &Tensor, rec_c: &Tensor, x_f: &Tensor, rec_f: &Tensor) -> Result<Tensor> {
    Ok((mean_l1(x_c, rec_c)? + mean_l1(x_f, rec_f)?)?)
}

/// Edge reconstruction consistency on low-tap features.
pub fn erc_loss(
    ext: &PerceptualExtractor,
    x_c: &Tensor,
    rec_c: &Tensor,
    x_f: &Tensor,
    rec_f: &Tensor,
) -> Result<Tensor> {
    let (a, _) = ext.features(x_c)?;
    let (b, _) = ext.features(rec_c)?;
    let (c, _) = ext.features(x_f)?;
    let (d, _) = ext.features(rec_f)?;
    Ok((mean_l1(&a, &b)? + mean_l1(&c, &d)?)?)
}

/// Semantic reconstruction consistency on high-tap features.
pub fn src_loss(
    ext: &PerceptualExtractor,
    x_c: &Tensor,
    rec_c: &Tensor,
    x_f: &Tensor,
    rec_f: &Tensor,
) -> Result<Tensor> {
    let (_, a) = ext.features(x_c)?;
    let (_, b) = ext.features(rec_c)?;
    let (_, c) = ext.features(x_f)?;
    let (_, d) = ext.features(rec_f)?;
    Ok((mean_l1(&a, &b)? + mean_l1(&c, &d)?)?)
}

/// Both feature terms from one pass per image: `(erc, src)`.
pub fn feature_losses(
    ext: &PerceptualExtractor,
    x_c: &Tensor,
    rec_c: &Tensor,
    x_f: &Tensor,
    rec_f: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let mut erc = Vec::new();
    let mut src = Vec::new();
    for (x, rec) in [(x_c, rec_c), (x_f, rec_f)] {
        let (xl, xh) = ext.features(x)?;
        let (rl, rh) = ext.features(rec)?;
        erc.push(mean_l1(&xl, &rl)?);
        src.push(mean_l1(&xh, &rh)?);
    }
    Ok(((&erc[0] + &erc[1])?, (&src[0] + &src[1])?))
}

/// Image-quality consistency of identity translations.
pub fn iqc_loss(x_c: &Tensor, ident_c: &Tensor, x_f: &Tensor, ident_f: &Tensor) -> Result<Tensor> {
    Ok((mean_l1(x_c, ident_c)? + mean_l1(x_f, ident_f)?)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Discriminator,
    Generator,
}

/// Scores one discriminator gave to real and generated images of its
/// domain. `real` may be omitted for the generator role.
#[derive(Debug, Clone)]
pub struct ScorePair {
    pub real: Option<Tensor>,
    pub fake: Tensor,
}

fn least_squares(pair: &ScorePair, role: Role) -> Result<Tensor> {
    let fake_to_one = ((&pair.fake - 1.0)?.sqr()?.mean_all()? * 0.5)?;
    match role {
        Role::Generator => Ok(fake_to_one),
        Role::Discriminator => {
            let real = pair
                .real
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("discriminator objective needs real scores".into()))?;
            let real_term = ((real - 1.0)?.sqr()?.mean_all()? * 0.5)?;
            let fake_term = (pair.fake.sqr()?.mean_all()? * 0.5)?;
            Ok((real_term + fake_term)?)
        }
    }
}

/// Same-domain adversarial term summed over the corrupted and artifact-free
/// domains.
pub fn sd_adv_loss(corrupted: &ScorePair, free: &ScorePair, role: Role) -> Result<Tensor> {
    Ok((least_squares(corrupted, role)? + least_squares(free, role)?)?)
}

/// Cross-domain adversarial term on content-swapped images, summed over the
/// two swap discriminators.
pub fn cd_adv_loss(corrupted_swap: &ScorePair, free_swap: &ScorePair, role: Role) -> Result<Tensor> {
    Ok((least_squares(corrupted_swap, role)? + least_squares(free_swap, role)?)?)
}
