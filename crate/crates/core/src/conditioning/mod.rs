//! Token resampling and dual-stream cross-attention conditioning.
//!
//! Foveal and peripheral patch-token grids each pass through their own
//! perceiver resampler, producing a fixed number of conditioning tokens. A
//! constant learned text stream completes the three-term cross-attention
//! used at every denoiser site.

mod attention;
mod resampler;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::PatchTokenGrid;
use crate::error::{Error, Result};
use crate::tensor::{Mat, ParamId, ParamStore, Tape};

pub use attention::{
    dual_cross_attention, dual_cross_attention_var, perceiver_attention, perceiver_attention_var,
    project_kv, AttentionWeights, CondVars, CrossAttentionSite, ProjectionBank, Stream,
    StreamProjection,
};
pub use resampler::{Resampler, ResamplerConfig};

/// Default dropout probabilities used during training.
pub const P_DROP_FOVEAL: f64 = 0.05;
pub const P_DROP_PERIPHERAL: f64 = 0.10;

/// Stream scales.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lambdas {
    pub foveal: f64,
    pub peripheral: f64,
}

impl Lambdas {
    pub const TRAINING: Lambdas = Lambdas {
        foveal: 1.0,
        peripheral: 1.0,
    };
    pub const INFERENCE: Lambdas = Lambdas {
        foveal: 1.2,
        peripheral: 0.7,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.foveal >= 0.0 && self.peripheral >= 0.0) {
            return Err(Error::Config(format!("stream scales must be non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Which image streams carry real tokens (the others hold null tokens).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveStreams {
    pub foveal: bool,
    pub peripheral: bool,
}

impl ActiveStreams {
    pub const BOTH: ActiveStreams = ActiveStreams {
        foveal: true,
        peripheral: true,
    };
    pub const NONE: ActiveStreams = ActiveStreams {
        foveal: false,
        peripheral: false,
    };
}

/// The three condition streams and their scales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditioningSet {
    pub text: Mat,
    pub foveal: Mat,
    pub peripheral: Mat,
    pub lambda_foveal: f64,
    pub lambda_peripheral: f64,
    pub active: ActiveStreams,
}

impl ConditioningSet {
    pub fn tokens(&self, stream: Stream) -> &Mat {
        match stream {
            Stream::Text => &self.text,
            Stream::Foveal => &self.foveal,
            Stream::Peripheral => &self.peripheral,
        }
    }

    pub fn with_lambdas(mut self, lambdas: Lambdas) -> Self {
        self.lambda_foveal = lambdas.foveal;
        self.lambda_peripheral = lambdas.peripheral;
        self
    }
}

/// Learned null tokens substituted for dropped image streams.
#[derive(Clone, Debug, PartialEq)]
pub struct NullTokens {
    pub foveal: Mat,
    pub peripheral: Mat,
}

/// Draws which image streams survive dropout. Always consumes two uniforms
/// (foveal first) so the stream of decisions is reproducible.
pub fn draw_dropout<R: Rng + ?Sized>(p_fov: f64, p_per: f64, rng: &mut R) -> Result<ActiveStreams> {
    for p in [p_fov, p_per] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1]")));
        }
    }
    let drop_f = rng.random::<f64>() < p_fov;
    let drop_p = rng.random::<f64>() < p_per;
    Ok(ActiveStreams {
        foveal: !drop_f,
        peripheral: !drop_p,
    })
}

/// Replaces each image stream by its null tokens with the given probability.
pub fn condition_dropout<R: Rng + ?Sized>(
    conds: &ConditioningSet,
    nulls: &NullTokens,
    p_fov: f64,
    p_per: f64,
    rng: &mut R,
) -> Result<ConditioningSet> {
    let keep = draw_dropout(p_fov, p_per, rng)?;
    let mut out = conds.clone();
    if !keep.foveal {
        out.foveal = nulls.foveal.clone();
        out.active.foveal = false;
    }
    if !keep.peripheral {
        out.peripheral = nulls.peripheral.clone();
        out.active.peripheral = false;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionerConfig {
    /// Width of encoder patch tokens.
    pub token_dim: usize,
    /// Width of conditioning tokens seen by the cross-attention sites.
    pub context_dim: usize,
    /// Length of the constant text stream.
    pub text_tokens: usize,
    pub resampler: ResamplerConfig,
}

impl Default for ConditionerConfig {
    fn default() -> Self {
        Self {
            token_dim: 32,
            context_dim: 32,
            text_tokens: 4,
            resampler: ResamplerConfig::default(),
        }
    }
}

/// Learned conditioning parameters: two resamplers, the constant text
/// stream and per-stream null tokens (initialised to zero).
#[derive(Clone, Debug)]
pub struct Conditioner {
    config: ConditionerConfig,
    pub foveal: Resampler,
    pub peripheral: Resampler,
    text: ParamId,
    null_foveal: ParamId,
    null_peripheral: ParamId,
}

impl Conditioner {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, config: ConditionerConfig, rng: &mut R) -> Result<Self> {
        let rc = ResamplerConfig {
            input_dim: config.token_dim,
            output_dim: config.context_dim,
            ..config.resampler
        };
        let foveal = Resampler::new(store, "cond.foveal", rc, rng)?;
        let peripheral = Resampler::new(store, "cond.peripheral", rc, rng)?;
        let m = rc.num_latents;
        let text = store.add(
            "cond.text",
            Mat::randn(config.text_tokens, config.context_dim, 1.0, rng),
        );
        let null_foveal = store.add("cond.null_foveal", Mat::zeros(m, config.context_dim));
        let null_peripheral = store.add("cond.null_peripheral", Mat::zeros(m, config.context_dim));
        Ok(Self {
            config: ConditionerConfig { resampler: rc, ..config },
            foveal,
            peripheral,
            text,
            null_foveal,
            null_peripheral,
        })
    }

    pub fn config(&self) -> &ConditionerConfig {
        &self.config
    }

    pub fn null_tokens(&self, store: &ParamStore) -> NullTokens {
        NullTokens {
            foveal: store.get(self.null_foveal).clone(),
            peripheral: store.get(self.null_peripheral).clone(),
        }
    }

    /// Condition nodes on `tape`; a `None` grid selects that stream's null tokens.
    pub fn vars(
        &self,
        tape: &mut Tape,
        foveal: Option<&PatchTokenGrid>,
        peripheral: Option<&PatchTokenGrid>,
        lambdas: Lambdas,
    ) -> Result<CondVars> {
        lambdas.validate()?;
        let text = tape.param(self.text);
        let foveal = match foveal {
            Some(g) => self.foveal.forward_grid(tape, g)?,
            None => tape.param(self.null_foveal),
        };
        let peripheral = match peripheral {
            Some(g) => self.peripheral.forward_grid(tape, g)?,
            None => tape.param(self.null_peripheral),
        };
        Ok(CondVars {
            text,
            foveal,
            peripheral,
            lambda_foveal: lambdas.foveal,
            lambda_peripheral: lambdas.peripheral,
        })
    }

    /// Materialised conditioning set for sampling.
    pub fn build(
        &self,
        store: &ParamStore,
        foveal: Option<&PatchTokenGrid>,
        peripheral: Option<&PatchTokenGrid>,
        lambdas: Lambdas,
    ) -> Result<ConditioningSet> {
        let mut tape = Tape::inference(store);
        let v = self.vars(&mut tape, foveal, peripheral, lambdas)?;
        Ok(ConditioningSet {
            text: tape.value(v.text).clone(),
            foveal: tape.value(v.foveal).clone(),
            peripheral: tape.value(v.peripheral).clone(),
            lambda_foveal: lambdas.foveal,
            lambda_peripheral: lambdas.peripheral,
            active: ActiveStreams {
                foveal: foveal.is_some(),
                peripheral: peripheral.is_some(),
            },
        })
    }

    /// Unconditional counterpart of `conds`: both image streams nulled. The
    /// text stream is the constant empty prompt and stays as is.
    pub fn unconditional(&self, store: &ParamStore, conds: &ConditioningSet) -> ConditioningSet {
        let nulls = self.null_tokens(store);
        ConditioningSet {
            text: conds.text.clone(),
            foveal: nulls.foveal,
            peripheral: nulls.peripheral,
            lambda_foveal: conds.lambda_foveal,
            lambda_peripheral: conds.lambda_peripheral,
            active: ActiveStreams::NONE,
        }
    }
}
