//! Low-rank adapters: `W' = W + (alpha / rank) * B * A`.
//!
//! `A` is `rank x in` and drawn from a seeded uniform distribution with bound
//! `1 / rank`; `B` is `out x rank` and starts at zero, so a fresh adapter set
//! leaves the model unchanged.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{ModelError, ModelParameters, Stage};
use crate::tensor::{matmul, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LoraTarget {
    Query,
    Value,
}

impl LoraTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            LoraTarget::Query => "query",
            LoraTarget::Value => "value",
        }
    }

    fn weight_suffix(self) -> &'static str {
        match self {
            LoraTarget::Query => "attn.wq",
            LoraTarget::Value => "attn.wv",
        }
    }
}

impl fmt::Display for LoraTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LoraTarget {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "query" => Ok(LoraTarget::Query),
            "value" => Ok(LoraTarget::Value),
            other => Err(ModelError::InvalidConfig(format!("unknown LoRA target `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    /// Dropout probability on the adapter input, in `[0, 1)`.
    pub dropout: f64,
    pub targets: Vec<LoraTarget>,
}

impl LoraConfig {
    /// Pre-training stage: rank 16, alpha 32, dropout 0.05 on query/value.
    pub fn lpt() -> Self {
        Self {
            rank: 16,
            alpha: 32.0,
            dropout: 0.05,
            targets: alloc::vec![LoraTarget::Query, LoraTarget::Value],
        }
    }

    /// Fine-tuning stage: rank 8, alpha 16, dropout 0.05 on query/value.
    pub fn lft() -> Self {
        Self {
            rank: 8,
            alpha: 16.0,
            dropout: 0.05,
            targets: alloc::vec![LoraTarget::Query, LoraTarget::Value],
        }
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.rank == 0 {
            return Err(ModelError::InvalidConfig("LoRA rank must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(ModelError::InvalidConfig("LoRA alpha must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::InvalidConfig("LoRA dropout must lie in [0, 1)".into()));
        }
        if self.targets.is_empty() {
            return Err(ModelError::InvalidConfig("LoRA needs at least one target".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraPair {
    /// `rank x in`
    pub a: Tensor,
    /// `out x rank`
    pub b: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapters {
    config: LoraConfig,
    stage: Stage,
    scale: f64,
    factors: BTreeMap<String, LoraPair>,
}

impl LoraAdapters {
    /// Fresh adapters for every targeted matrix of `params`. `stage` is the
    /// stage these adapters are trained for.
    pub fn new(
        params: &ModelParameters,
        config: LoraConfig,
        stage: Stage,
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut targets = config.targets.clone();
        targets.sort();
        targets.dedup();
        let bound = 1.0 / config.rank as f64;
        let mut factors = BTreeMap::new();
        for l in 0..params.config().layers {
            for target in &targets {
                let name = format!("layers.{l}.{}", target.weight_suffix());
                let w = params
                    .get(&name)
                    .ok_or_else(|| ModelError::ShapeError(format!("missing `{name}`")))?;
                let (out, inp) = (w.shape()[0], w.shape()[1]);
                if config.rank > out.min(inp) {
                    return Err(ModelError::InvalidConfig(format!(
                        "rank {} exceeds the smaller dimension of `{name}`",
                        config.rank
                    )));
                }
                let a = Tensor::uniform(&[config.rank, inp], bound, &mut rng);
                let b = Tensor::zeros(&[out, config.rank]);
                factors.insert(name, LoraPair { a, b });
            }
        }
        Ok(Self {
            scale: config.scale(),
            config,
            stage,
            factors,
        })
    }

    /// Rebuilds adapters from stored factors (used by checkpoint loading).
    pub fn from_factors(
        config: LoraConfig,
        stage: Stage,
        factors: BTreeMap<String, LoraPair>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        for (name, pair) in &factors {
            let (a, b) = (pair.a.shape(), pair.b.shape());
            if a.len() != 2 || b.len() != 2 || a[0] != config.rank || b[1] != config.rank {
                return Err(ModelError::ShapeError(format!(
                    "adapter `{name}` has shapes {a:?}/{b:?} for rank {}",
                    config.rank
                )));
            }
        }
        Ok(Self {
            scale: config.scale(),
            config,
            stage,
            factors,
        })
    }

    pub fn config(&self) -> &LoraConfig {
        &self.config
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn factors(&self) -> &BTreeMap<String, LoraPair> {
        &self.factors
    }

    pub fn factors_mut(&mut self) -> &mut BTreeMap<String, LoraPair> {
        &mut self.factors
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.stage == other.stage
            && self.scale.to_bits() == other.scale.to_bits()
            && self.factors.len() == other.factors.len()
            && self.factors.iter().zip(&other.factors).all(|((na, a), (nb, b))| {
                na == nb && a.a.bit_eq(&b.a) && a.b.bit_eq(&b.b)
            })
    }

    pub(crate) fn check_compatible(&self, params: &ModelParameters) -> Result<(), ModelError> {
        for (name, pair) in &self.factors {
            let w = params
                .get(name)
                .ok_or_else(|| ModelError::ShapeError(format!("no base weight `{name}`")))?;
            let (out, inp) = (w.shape()[0], w.shape()[1]);
            if pair.a.shape() != [self.config.rank, inp] || pair.b.shape() != [out, self.config.rank] {
                return Err(ModelError::ShapeError(format!(
                    "adapter for `{name}` does not fit a {out}x{inp} weight"
                )));
            }
        }
        Ok(())
    }
}

/// Folds the adapters into the base weights. The result carries the
/// adapters' stage tag.
pub fn merge_lora(
    params: &ModelParameters,
    adapters: &LoraAdapters,
) -> Result<ModelParameters, ModelError> {
    adapters.check_compatible(params)?;
    let mut merged = params.clone();
    let r = adapters.config.rank;
    for (name, pair) in &adapters.factors {
        let w = merged.get_mut(name).expect("checked above");
        let (out, inp) = (w.shape()[0], w.shape()[1]);
        let delta = matmul(pair.b.data(), pair.a.data(), out, r, inp);
        for (wv, dv) in w.data_mut().iter_mut().zip(delta) {
            *wv += adapters.scale * dv;
        }
    }
    Ok(merged.with_stage(adapters.stage))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::tiny;
    use crate::model::{forward, Mode};
    use rand::Rng;

    fn randomize_b(adapters: &mut LoraAdapters, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for pair in adapters.factors_mut().values_mut() {
            for v in pair.b.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }

    #[test]
    fn stage_defaults() {
        let lpt = LoraConfig::lpt();
        assert_eq!((lpt.rank, lpt.alpha, lpt.dropout), (16, 32.0, 0.05));
        assert_eq!(lpt.scale(), 2.0);
        let lft = LoraConfig::lft();
        assert_eq!((lft.rank, lft.alpha, lft.dropout), (8, 16.0, 0.05));
        assert_eq!(lft.scale(), 2.0);
    }

    #[test]
    fn fresh_adapters_are_a_no_op() {
        let params = ModelParameters::init(tiny(), 1).unwrap();
        let cfg = LoraConfig {
            rank: 4,
            ..LoraConfig::lft()
        };
        let adapters = LoraAdapters::new(&params, cfg, Stage::Lpt, 2).unwrap();
        assert!(adapters.factors().values().all(|p| p.b.data().iter().all(|&v| v == 0.0)));
        let merged = merge_lora(&params, &adapters).unwrap();
        for (name, t) in params.tensors() {
            assert_eq!(t, merged.get(name).unwrap());
        }
        assert_eq!(merged.stage(), Stage::Lpt);
        let base = forward(&params, None, &[1, 2, 3], Mode::Eval).unwrap();
        let with = forward(&params, Some(&adapters), &[1, 2, 3], Mode::Eval).unwrap();
        assert_eq!(base, with);
    }

    #[test]
    fn merge_scale_is_alpha_over_rank() {
        let params = ModelParameters::zeros(tiny()).unwrap();
        let cfg = LoraConfig {
            rank: 2,
            alpha: 4.0,
            dropout: 0.0,
            targets: alloc::vec![LoraTarget::Query],
        };
        let mut adapters = LoraAdapters::new(&params, cfg, Stage::Lpt, 0).unwrap();
        for pair in adapters.factors_mut().values_mut() {
            pair.a.data_mut().fill(1.0);
            pair.b.data_mut().fill(1.0);
        }
        let merged = merge_lora(&params, &adapters).unwrap();
        // (B A)_ij = rank = 2, times scale 2.
        assert!(merged.get("layers.0.attn.wq").unwrap().data().iter().all(|&v| v == 4.0));
        assert!(merged.get("layers.0.attn.wv").unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn merged_forward_matches_adapter_forward() {
        let params = ModelParameters::init(tiny(), 4).unwrap();
        let mut adapters = LoraAdapters::new(&params, LoraConfig { rank: 3, ..LoraConfig::lpt() }, Stage::Lpt, 5).unwrap();
        randomize_b(&mut adapters, 6);
        let merged = merge_lora(&params, &adapters).unwrap();
        let a = forward(&merged, None, &[5, 6, 7, 8], Mode::Eval).unwrap();
        let b = forward(&params, Some(&adapters), &[5, 6, 7, 8], Mode::Eval).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-9);
    }

    #[test]
    fn rank_bound_and_shape_errors() {
        let params = ModelParameters::init(tiny(), 4).unwrap();
        let too_big = LoraConfig { rank: 9, ..LoraConfig::lft() };
        assert!(LoraAdapters::new(&params, too_big, Stage::Lpt, 0).is_err());

        let mut other = tiny();
        other.embed_dim = 4;
        let small = ModelParameters::init(other, 0).unwrap();
        let adapters = LoraAdapters::new(&params, LoraConfig { rank: 2, ..LoraConfig::lft() }, Stage::Lpt, 0).unwrap();
        assert!(matches!(merge_lora(&small, &adapters), Err(ModelError::ShapeError(_))));
    }
}
