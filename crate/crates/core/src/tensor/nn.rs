use rand::Rng;

use super::{Mat, ParamId, ParamStore, Tape, Var};

/// Weight initialisation scale for a fresh layer.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// `N(0, 1/fan_in)`
    FanIn,
    /// `N(0, std)`
    Normal(f64),
    Zeros,
}

impl Init {
    fn make<R: Rng + ?Sized>(self, rows: usize, cols: usize, rng: &mut R) -> Mat {
        match self {
            Init::FanIn => Mat::randn(rows, cols, (1.0 / rows.max(1) as f64).sqrt(), rng),
            Init::Normal(std) => Mat::randn(rows, cols, std, rng),
            Init::Zeros => Mat::zeros(rows, cols),
        }
    }
}

/// `y = x·W + b` with `W: in×out`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), init.make(fan_in, fan_out, rng));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Mat::zeros(1, fan_out)));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.weight);
        let y = tape.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = tape.param(b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Row-wise layer norm with learned gain and shift.
#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Mat::filled(1, dim, 1.0)),
            shift: store.add(format!("{name}.shift"), Mat::zeros(1, dim)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let n = tape.layer_norm_rows(x, Self::EPS);
        let g = tape.param(self.gain);
        let s = tape.param(self.shift);
        let y = tape.mul_row(n, g);
        tape.add_row(y, s)
    }
}

/// Multi-head scaled dot-product attention: per head
/// `softmax(q_h k_hᵀ / √d_h) v_h`, heads concatenated column-wise.
pub fn multi_head_attention(tape: &mut Tape, q: Var, k: Var, v: Var, heads: usize) -> Var {
    let dk = tape.shape(q).1;
    let dv = tape.shape(v).1;
    assert_eq!(tape.shape(k).1, dk, "query/key width mismatch");
    assert_eq!(tape.shape(k).0, tape.shape(v).0, "key/value length mismatch");
    assert!(
        dk % heads == 0 && dv % heads == 0,
        "head count must divide widths"
    );
    if heads == 1 {
        return single_head(tape, q, k, v);
    }
    let (hk, hv) = (dk / heads, dv / heads);
    let outs: Vec<Var> = (0..heads)
        .map(|h| {
            let qh = tape.slice_cols(q, h * hk, hk);
            let kh = tape.slice_cols(k, h * hk, hk);
            let vh = tape.slice_cols(v, h * hv, hv);
            single_head(tape, qh, kh, vh)
        })
        .collect();
    tape.concat_cols(&outs)
}

fn single_head(tape: &mut Tape, q: Var, k: Var, v: Var) -> Var {
    let dk = tape.shape(q).1;
    let s = tape.matmul_t(q, k);
    let s = tape.scale(s, 1.0 / (dk as f64).sqrt());
    let p = tape.softmax_rows(s);
    tape.matmul(p, v)
}
