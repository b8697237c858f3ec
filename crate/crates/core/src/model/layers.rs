use rand::Rng;

use crate::numcore::{normal_init, xavier_uniform, NumError, ParamId, ParamStore, Scalar, Segments, Tape, Tensor, Var};

fn bias<T: Scalar>(n: usize) -> Tensor<T> {
    Tensor::zeros(&[1, n])
}

/// Gated recurrent unit weights. `w_*` map input to hidden, `u_*` hidden to hidden.
#[derive(Clone, Copy, Debug)]
pub struct GruParams {
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
}

impl GruParams {
    pub fn init<T: Scalar, R: Rng>(store: &mut ParamStore<T>, prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut w = |name: &str, rows: usize| store.add(format!("{prefix}.{name}"), xavier_uniform(rows, hidden, rng));
        let (w_z, w_r, w_h) = (w("w_z", input), w("w_r", input), w("w_h", input));
        let (u_z, u_r, u_h) = (w("u_z", hidden), w("u_r", hidden), w("u_h", hidden));
        Self {
            w_z,
            w_r,
            w_h,
            u_z,
            u_r,
            u_h,
            b_z: store.add(format!("{prefix}.b_z"), bias(hidden)),
            b_r: store.add(format!("{prefix}.b_r"), bias(hidden)),
            b_h: store.add(format!("{prefix}.b_h"), bias(hidden)),
        }
    }

    pub fn lookup<T: Scalar>(store: &ParamStore<T>, prefix: &str) -> Option<Self> {
        let g = |n: &str| store.id_of(&format!("{prefix}.{n}"));
        Some(Self {
            w_z: g("w_z")?,
            w_r: g("w_r")?,
            w_h: g("w_h")?,
            u_z: g("u_z")?,
            u_r: g("u_r")?,
            u_h: g("u_h")?,
            b_z: g("b_z")?,
            b_r: g("b_r")?,
            b_h: g("b_h")?,
        })
    }

    /// Runs the recurrence over the rows of `x` (`[n, input]`) from `h0 = 0` and
    /// returns every state stacked as `[n, hidden]`, in input row order.
    ///
    /// z = σ(x W_z + h U_z + b_z), r = σ(x W_r + h U_r + b_r),
    /// h̃ = tanh(x W_h + (r ⊙ h) U_h + b_h), h' = (1 − z) ⊙ h + z ⊙ h̃.
    pub fn sequence<T: Scalar>(&self, tape: &mut Tape<'_, T>, x: Var, reverse: bool) -> Result<Var, NumError> {
        let n = tape.value(x).rows();
        let (w_z, w_r, w_h) = (tape.param(self.w_z), tape.param(self.w_r), tape.param(self.w_h));
        let (u_z, u_r, u_h) = (tape.param(self.u_z), tape.param(self.u_r), tape.param(self.u_h));
        let (b_z, b_r, b_h) = (tape.param(self.b_z), tape.param(self.b_r), tape.param(self.b_h));
        let hidden = tape.value(u_z).cols();
        let xz = tape.matmul(x, w_z)?;
        let xz = tape.add(xz, b_z)?;
        let xr = tape.matmul(x, w_r)?;
        let xr = tape.add(xr, b_r)?;
        let xh = tape.matmul(x, w_h)?;
        let xh = tape.add(xh, b_h)?;
        let mut h = tape.constant(Tensor::zeros(&[1, hidden]));
        let mut states = vec![h; n];
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        for t in order {
            let xz_t = tape.slice_rows(xz, t, t + 1)?;
            let xr_t = tape.slice_rows(xr, t, t + 1)?;
            let xh_t = tape.slice_rows(xh, t, t + 1)?;
            let hz = tape.matmul(h, u_z)?;
            let z = tape.add(xz_t, hz)?;
            let z = tape.sigmoid(z);
            let hr = tape.matmul(h, u_r)?;
            let r = tape.add(xr_t, hr)?;
            let r = tape.sigmoid(r);
            let rh = tape.mul(r, h)?;
            let rhu = tape.matmul(rh, u_h)?;
            let cand = tape.add(xh_t, rhu)?;
            let cand = tape.tanh(cand);
            let delta = tape.sub(cand, h)?;
            let step = tape.mul(z, delta)?;
            h = tape.add(h, step)?;
            states[t] = h;
        }
        tape.concat_rows(&states)
    }
}

/// Additive attention with a learned context vector.
#[derive(Clone, Copy, Debug)]
pub struct AttnParams {
    pub w: ParamId,
    pub b: ParamId,
    pub u: ParamId,
}

impl AttnParams {
    pub fn init<T: Scalar, R: Rng>(store: &mut ParamStore<T>, prefix: &str, input: usize, dim: usize, rng: &mut R) -> Self {
        Self {
            w: store.add(format!("{prefix}.w"), xavier_uniform(input, dim, rng)),
            b: store.add(format!("{prefix}.b"), bias(dim)),
            u: store.add(format!("{prefix}.u"), xavier_uniform(dim, 1, rng)),
        }
    }

    pub fn lookup<T: Scalar>(store: &ParamStore<T>, prefix: &str) -> Option<Self> {
        let g = |n: &str| store.id_of(&format!("{prefix}.{n}"));
        Some(Self {
            w: g("w")?,
            b: g("b")?,
            u: g("u")?,
        })
    }

    /// Scores `tanh(h W + b) · u`, softmax within each segment, and returns
    /// `(pooled [n_segments, d], alpha [n, 1])`.
    pub fn attend<T: Scalar>(&self, tape: &mut Tape<'_, T>, h: Var, segs: &Segments) -> Result<(Var, Var), NumError> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let u = tape.param(self.u);
        let proj = tape.matmul(h, w)?;
        let proj = tape.add(proj, b)?;
        let proj = tape.tanh(proj);
        let scores = tape.matmul(proj, u)?;
        let alpha = tape.segment_softmax(scores, segs)?;
        let pooled = tape.segment_pool(alpha, h, segs)?;
        Ok((pooled, alpha))
    }
}

/// One post-norm transformer block.
#[derive(Clone, Copy, Debug)]
pub struct EncoderLayerParams {
    pub w_q: ParamId,
    pub b_q: ParamId,
    pub w_k: ParamId,
    pub b_k: ParamId,
    pub w_v: ParamId,
    pub b_v: ParamId,
    pub w_o: ParamId,
    pub b_o: ParamId,
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub ff1_w: ParamId,
    pub ff1_b: ParamId,
    pub ff2_w: ParamId,
    pub ff2_b: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
}

const ENCODER_NAMES: [&str; 16] = [
    "w_q", "b_q", "w_k", "b_k", "w_v", "b_v", "w_o", "b_o", "ln1_g", "ln1_b", "ff1_w", "ff1_b", "ff2_w", "ff2_b", "ln2_g",
    "ln2_b",
];

impl EncoderLayerParams {
    pub fn init<T: Scalar, R: Rng>(store: &mut ParamStore<T>, prefix: &str, d: usize, ff: usize, rng: &mut R) -> Self {
        let mut ids = Vec::with_capacity(ENCODER_NAMES.len());
        for name in ENCODER_NAMES {
            let t = match name {
                "w_q" | "w_k" | "w_v" | "w_o" => xavier_uniform(d, d, rng),
                "ff1_w" => xavier_uniform(d, ff, rng),
                "ff2_w" => xavier_uniform(ff, d, rng),
                "ff1_b" => bias(ff),
                "ln1_g" | "ln2_g" => Tensor::full(&[1, d], T::one()),
                _ => bias(d),
            };
            ids.push(store.add(format!("{prefix}.{name}"), t));
        }
        Self::from_ids(&ids)
    }

    fn from_ids(ids: &[ParamId]) -> Self {
        Self {
            w_q: ids[0],
            b_q: ids[1],
            w_k: ids[2],
            b_k: ids[3],
            w_v: ids[4],
            b_v: ids[5],
            w_o: ids[6],
            b_o: ids[7],
            ln1_g: ids[8],
            ln1_b: ids[9],
            ff1_w: ids[10],
            ff1_b: ids[11],
            ff2_w: ids[12],
            ff2_b: ids[13],
            ln2_g: ids[14],
            ln2_b: ids[15],
        }
    }

    pub fn lookup<T: Scalar>(store: &ParamStore<T>, prefix: &str) -> Option<Self> {
        let ids: Option<Vec<ParamId>> = ENCODER_NAMES.iter().map(|n| store.id_of(&format!("{prefix}.{n}"))).collect();
        Some(Self::from_ids(&ids?))
    }

    /// Self-attention restricted to each sentence segment, then a GELU
    /// feed-forward, each followed by a residual connection and layer norm.
    /// Returns the output and the attention node (for its cached weights).
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        x: Var,
        segs: &Segments,
        heads: usize,
        dropout: &mut Option<Dropout<'_>>,
    ) -> Result<(Var, Var), NumError> {
        let lin = |tape: &mut Tape<'_, T>, x: Var, w: ParamId, b: ParamId| -> Result<Var, NumError> {
            let w = tape.param(w);
            let b = tape.param(b);
            let y = tape.matmul(x, w)?;
            tape.add(y, b)
        };
        let q = lin(tape, x, self.w_q, self.b_q)?;
        let k = lin(tape, x, self.w_k, self.b_k)?;
        let v = lin(tape, x, self.w_v, self.b_v)?;
        let att = tape.segment_attention(q, k, v, segs, heads)?;
        let o = lin(tape, att, self.w_o, self.b_o)?;
        let o = apply_dropout(tape, o, dropout)?;
        let r = tape.add(x, o)?;
        let (g1, b1) = (tape.param(self.ln1_g), tape.param(self.ln1_b));
        let x1 = tape.layer_norm(r, g1, b1)?;
        let f = lin(tape, x1, self.ff1_w, self.ff1_b)?;
        let f = tape.gelu(f);
        let f = lin(tape, f, self.ff2_w, self.ff2_b)?;
        let f = apply_dropout(tape, f, dropout)?;
        let r2 = tape.add(x1, f)?;
        let (g2, b2) = (tape.param(self.ln2_g), tape.param(self.ln2_b));
        Ok((tape.layer_norm(r2, g2, b2)?, att))
    }
}

/// Inverted dropout driven by a caller-owned RNG.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut dyn rand::RngCore,
}

pub fn apply_dropout<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, dropout: &mut Option<Dropout<'_>>) -> Result<Var, NumError> {
    let Some(d) = dropout.as_mut() else { return Ok(x) };
    if d.rate <= 0.0 {
        return Ok(x);
    }
    let shape = tape.value(x).shape().to_vec();
    let keep = T::lit(1.0 / (1.0 - d.rate));
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| if d.rng.random_bool(d.rate) { T::zero() } else { keep })
        .collect();
    tape.mask(x, Tensor::new(shape, data)?)
}

pub fn embedding<T: Scalar, R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor<T> {
    normal_init(rows, cols, 0.05, rng)
}
