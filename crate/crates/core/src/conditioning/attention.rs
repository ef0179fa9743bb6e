use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::nn::{multi_head_attention, Init, Linear};
use crate::tensor::{Mat, ParamId, ParamStore, Tape, Var};

use super::ConditioningSet;

/// A conditioning stream entering the cross-attention sites.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stream {
    Text,
    Foveal,
    Peripheral,
}

impl Stream {
    pub const ALL: [Stream; 3] = [Stream::Text, Stream::Foveal, Stream::Peripheral];
}

/// Query, key and value projections of one perceiver attention block.
#[derive(Clone, Copy, Debug)]
pub struct AttentionWeights {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
}

impl AttentionWeights {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        key_dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut mk = |suffix: &str, cols: usize| {
            Linear::new(store, &format!("{name}.{suffix}"), dim, cols, false, Init::FanIn, rng).weight
        };
        let wq = mk("wq", key_dim);
        let wk = mk("wk", key_dim);
        let wv = mk("wv", dim);
        Self { wq, wk, wv }
    }
}

/// Latent queries attend over the inputs followed by the latents themselves.
/// `x = None` (or zero rows) leaves the latents as the only keys.
pub fn perceiver_attention_var(
    tape: &mut Tape,
    x: Option<Var>,
    latents: Var,
    w: &AttentionWeights,
    heads: usize,
) -> Var {
    let wq = tape.param(w.wq);
    let wk = tape.param(w.wk);
    let wv = tape.param(w.wv);
    let q = tape.matmul(latents, wq);
    let kv_in = match x {
        Some(x) if tape.shape(x).0 > 0 => tape.concat_rows(&[x, latents]),
        _ => latents,
    };
    let k = tape.matmul(kv_in, wk);
    let v = tape.matmul(kv_in, wv);
    multi_head_attention(tape, q, k, v, heads)
}

/// Matrix-level perceiver attention with explicit weights:
/// `x: N×d`, `latents: m×d`, `wq, wk: d×d_k`, `wv: d×d_v`.
pub fn perceiver_attention(
    x: &Mat,
    latents: &Mat,
    wq: &Mat,
    wk: &Mat,
    wv: &Mat,
    heads: usize,
) -> Result<Mat> {
    let d = latents.cols();
    if x.rows() > 0 && x.cols() != d {
        return Err(Error::geometry(format!("tokens have width {}, latents {d}", x.cols())));
    }
    if wq.rows() != d || wk.rows() != d || wv.rows() != d || wq.cols() != wk.cols() {
        return Err(Error::geometry("projection shapes inconsistent with latent width"));
    }
    if heads == 0 || wq.cols() % heads != 0 || wv.cols() % heads != 0 {
        return Err(Error::geometry(format!("{heads} heads do not divide the projection widths")));
    }
    let mut store = ParamStore::new();
    let w = AttentionWeights {
        wq: store.add("wq", wq.clone()),
        wk: store.add("wk", wk.clone()),
        wv: store.add("wv", wv.clone()),
    };
    let mut tape = Tape::inference(&store);
    let xv = (x.rows() > 0).then(|| tape.constant(x.clone()));
    let lv = tape.constant(latents.clone());
    let out = perceiver_attention_var(&mut tape, xv, lv, &w, heads);
    Ok(tape.value(out).clone())
}

/// Per-stream key/value projections of one cross-attention site.
#[derive(Clone, Debug)]
pub struct StreamProjection {
    pub stream: Stream,
    pub wk: ParamId,
    pub wv: ParamId,
}

/// One cross-attention site: a query projection from the feature map plus a
/// key/value pair for every registered stream.
#[derive(Clone, Debug)]
pub struct CrossAttentionSite {
    pub wq: ParamId,
    pub streams: Vec<StreamProjection>,
    pub feature_dim: usize,
    pub context_dim: usize,
    pub heads: usize,
}

impl CrossAttentionSite {
    pub fn projection(&self, stream: Stream) -> Result<&StreamProjection> {
        self.streams
            .iter()
            .find(|p| p.stream == stream)
            .ok_or_else(|| Error::Config(format!("stream {stream:?} is not registered at this site")))
    }
}

/// All cross-attention projections of a denoiser.
#[derive(Clone, Debug, Default)]
pub struct ProjectionBank {
    sites: Vec<CrossAttentionSite>,
}

impl ProjectionBank {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a site whose queries come from `feature_dim`-wide features
    /// and whose keys/values come from `context_dim`-wide condition tokens.
    #[allow(clippy::too_many_arguments)]
    pub fn add_site<R: Rng + ?Sized>(
        &mut self,
        store: &mut ParamStore,
        name: &str,
        feature_dim: usize,
        context_dim: usize,
        heads: usize,
        streams: &[Stream],
        rng: &mut R,
    ) -> usize {
        assert!(feature_dim % heads == 0, "heads must divide the feature width");
        let wq = Linear::new(store, &format!("{name}.wq"), feature_dim, feature_dim, false, Init::FanIn, rng)
            .weight;
        let streams = streams
            .iter()
            .map(|&s| {
                let tag = format!("{s:?}").to_lowercase();
                let wk = Linear::new(
                    store,
                    &format!("{name}.{tag}.wk"),
                    context_dim,
                    feature_dim,
                    false,
                    Init::FanIn,
                    rng,
                )
                .weight;
                let wv = Linear::new(
                    store,
                    &format!("{name}.{tag}.wv"),
                    context_dim,
                    feature_dim,
                    false,
                    Init::FanIn,
                    rng,
                )
                .weight;
                StreamProjection { stream: s, wk, wv }
            })
            .collect();
        self.sites.push(CrossAttentionSite {
            wq,
            streams,
            feature_dim,
            context_dim,
            heads,
        });
        self.sites.len() - 1
    }

    pub fn site(&self, index: usize) -> Result<&CrossAttentionSite> {
        self.sites
            .get(index)
            .ok_or_else(|| Error::Config(format!("no cross-attention site {index}")))
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }
}

/// `K_c = e_c W_K^c`, `V_c = e_c W_V^c` for stream `c` at `site`.
pub fn project_kv(
    e: &Mat,
    store: &ParamStore,
    bank: &ProjectionBank,
    site: usize,
    stream: Stream,
) -> Result<(Mat, Mat)> {
    let s = bank.site(site)?;
    let p = s.projection(stream)?;
    if e.cols() != s.context_dim {
        return Err(Error::geometry(format!(
            "condition tokens have width {}, site expects {}",
            e.cols(),
            s.context_dim
        )));
    }
    Ok((e.matmul(store.get(p.wk)), e.matmul(store.get(p.wv))))
}

/// Condition tokens and scales as tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct CondVars {
    pub text: Var,
    pub foveal: Var,
    pub peripheral: Var,
    pub lambda_foveal: f64,
    pub lambda_peripheral: f64,
}

impl CondVars {
    pub fn constant(tape: &mut Tape, conds: &ConditioningSet) -> Self {
        Self {
            text: tape.constant(conds.text.clone()),
            foveal: tape.constant(conds.foveal.clone()),
            peripheral: tape.constant(conds.peripheral.clone()),
            lambda_foveal: conds.lambda_foveal,
            lambda_peripheral: conds.lambda_peripheral,
        }
    }

    fn tokens(&self, stream: Stream) -> Var {
        match stream {
            Stream::Text => self.text,
            Stream::Foveal => self.foveal,
            Stream::Peripheral => self.peripheral,
        }
    }
}

/// Additive cross-attention over the text, foveal and peripheral streams:
/// `A_text + λ_f·A_fov + λ_p·A_per`, each term multi-head softmax attention
/// with queries from `f` and keys/values from that stream.
pub fn dual_cross_attention_var(
    tape: &mut Tape,
    f: Var,
    conds: &CondVars,
    site: &CrossAttentionSite,
) -> Result<Var> {
    let wq = tape.param(site.wq);
    let q = tape.matmul(f, wq);
    let mut out: Option<Var> = None;
    for stream in Stream::ALL {
        let p = site.projection(stream)?;
        let e = conds.tokens(stream);
        let wk = tape.param(p.wk);
        let wv = tape.param(p.wv);
        let k = tape.matmul(e, wk);
        let v = tape.matmul(e, wv);
        let a = multi_head_attention(tape, q, k, v, site.heads);
        let term = match stream {
            Stream::Text => a,
            Stream::Foveal => tape.scale(a, conds.lambda_foveal),
            Stream::Peripheral => tape.scale(a, conds.lambda_peripheral),
        };
        out = Some(match out {
            None => term,
            Some(acc) => tape.add(acc, term),
        });
    }
    Ok(out.expect("three streams"))
}

/// Matrix-level [`dual_cross_attention_var`] for features `f: hw×c`.
pub fn dual_cross_attention(
    f: &Mat,
    conds: &ConditioningSet,
    store: &ParamStore,
    bank: &ProjectionBank,
    site: usize,
) -> Result<Mat> {
    let s = bank.site(site)?;
    if f.cols() != s.feature_dim {
        return Err(Error::geometry(format!(
            "features have width {}, site expects {}",
            f.cols(),
            s.feature_dim
        )));
    }
    if !f.is_finite() {
        return Err(Error::Numeric(format!("non-finite query features at site {site}")));
    }
    for stream in Stream::ALL {
        let e = conds.tokens(stream);
        if e.cols() != s.context_dim {
            return Err(Error::geometry(format!(
                "{stream:?} tokens have width {}, site expects {}",
                e.cols(),
                s.context_dim
            )));
        }
        if !e.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite {stream:?} tokens entering softmax at site {site}"
            )));
        }
    }
    let mut tape = Tape::inference(store);
    let fv = tape.constant(f.clone());
    let cv = CondVars::constant(&mut tape, conds);
    let out = dual_cross_attention_var(&mut tape, fv, &cv, s)?;
    Ok(tape.value(out).clone())
}
