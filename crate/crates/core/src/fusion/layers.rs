use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{FusionError, Gradients, Graph, Result, Tensor2, Var};

pub const DEFAULT_PE_BASE: f64 = 10_000.0;
pub const LAYER_NORM_EPS: f64 = 1e-6;
/// Demo weights are drawn uniformly from `[-INIT_RANGE, INIT_RANGE]`.
pub const INIT_RANGE: f64 = 0.1;

/// Problem sizes for toy instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub d: usize,
    pub heads: usize,
    pub d_img: usize,
    /// text length
    pub m: usize,
    /// image patch count
    pub n: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            d: 32,
            heads: 4,
            d_img: 48,
            m: 6,
            n: 9,
        }
    }
}

impl Dims {
    pub fn d_k(&self) -> usize {
        self.d / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(FusionError::Heads {
                d: self.d,
                heads: self.heads,
                d_k: self.d_k(),
            });
        }
        if self.m == 0 {
            return Err(FusionError::EmptySequence);
        }
        Ok(())
    }
}

impl std::str::FromStr for Dims {
    type Err = String;

    /// `d,heads,d_img,m,n`
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let v: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| format!("bad dimension `{p}`: {e}")))
            .collect::<std::result::Result<_, _>>()?;
        let [d, heads, d_img, m, n] = v[..] else {
            return Err(format!("expected d,heads,dimg,m,n, got `{s}`"));
        };
        let dims = Dims { d, heads, d_img, m, n };
        dims.validate().map_err(|e| e.to_string())?;
        Ok(dims)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub d: usize,
    pub d_k: usize,
    pub heads: usize,
    pub q: Tensor2,
    pub k: Tensor2,
    pub v: Tensor2,
    pub w_t: Tensor2,
    pub w_i: Tensor2,
    /// `d_img x d` projection of image features into the text space.
    pub w_img: Tensor2,
    pub pe_base: f64,
}

fn expect_shape(op: &'static str, what: &str, t: &Tensor2, shape: (usize, usize)) -> Result<()> {
    if t.shape() != shape {
        return Err(FusionError::Shape {
            op,
            detail: format!("{what} is {:?}, expected {:?}", t.shape(), shape),
        });
    }
    Ok(())
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d != self.heads * self.d_k {
            return Err(FusionError::Heads {
                d: self.d,
                heads: self.heads,
                d_k: self.d_k,
            });
        }
        let dd = (self.d, self.d);
        for (name, t) in [("Q", &self.q), ("K", &self.k), ("V", &self.v), ("W_t", &self.w_t), ("W_i", &self.w_i)] {
            expect_shape("fusion params", name, t, dd)?;
        }
        if self.w_img.cols() != self.d {
            return Err(FusionError::Shape {
                op: "fusion params",
                detail: format!("W_img is {:?}, expected d_img x {}", self.w_img.shape(), self.d),
            });
        }
        if !(self.pe_base.is_finite() && self.pe_base > 0.0) {
            return Err(FusionError::NonFinite);
        }
        Ok(())
    }

    /// Seeded uniform initialization on `[-0.1, 0.1]`.
    pub fn random<R: Rng + ?Sized>(dims: &Dims, rng: &mut R) -> Self {
        let (d, r) = (dims.d, INIT_RANGE);
        Self {
            d,
            d_k: dims.d_k(),
            heads: dims.heads,
            q: Tensor2::random(d, d, -r, r, rng),
            k: Tensor2::random(d, d, -r, r, rng),
            v: Tensor2::random(d, d, -r, r, rng),
            w_t: Tensor2::random(d, d, -r, r, rng),
            w_i: Tensor2::random(d, d, -r, r, rng),
            w_img: Tensor2::random(dims.d_img, d, -r, r, rng),
            pe_base: DEFAULT_PE_BASE,
        }
    }

    pub fn bind(&self, g: &mut Graph) -> FusionVars {
        FusionVars {
            q: g.leaf(self.q.clone()),
            k: g.leaf(self.k.clone()),
            v: g.leaf(self.v.clone()),
            w_t: g.leaf(self.w_t.clone()),
            w_i: g.leaf(self.w_i.clone()),
            w_img: g.leaf(self.w_img.clone()),
            heads: self.heads,
        }
    }
}

/// [`FusionParams`] recorded on a graph.
#[derive(Debug, Clone, Copy)]
pub struct FusionVars {
    pub q: Var,
    pub k: Var,
    pub v: Var,
    pub w_t: Var,
    pub w_i: Var,
    pub w_img: Var,
    pub heads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionGradients {
    pub q: Tensor2,
    pub k: Tensor2,
    pub v: Tensor2,
    pub w_t: Tensor2,
    pub w_i: Tensor2,
    pub w_img: Tensor2,
}

impl FusionVars {
    pub fn gradients(&self, grads: &Gradients) -> Result<FusionGradients> {
        Ok(FusionGradients {
            q: grads.get(self.q)?,
            k: grads.get(self.k)?,
            v: grads.get(self.v)?,
            w_t: grads.get(self.w_t)?,
            w_i: grads.get(self.w_i)?,
            w_img: grads.get(self.w_img)?,
        })
    }
}

// ---------------------------------------------------------------- positional encoding

/// `P(k, 2i) = sin(k / base^(2i/d))`, `P(k, 2i+1) = cos(k / base^(2i/d))`.
pub fn positional_encoding(len: usize, d: usize, base: f64) -> Result<Tensor2> {
    if !d.is_multiple_of(2) {
        return Err(FusionError::OddDimension(d));
    }
    if len == 0 {
        return Err(FusionError::EmptySequence);
    }
    Ok(Tensor2::from_fn(len, d, |k, j| {
        let i = j / 2;
        let angle = k as f64 / base.powf(2.0 * i as f64 / d as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    }))
}

// ---------------------------------------------------------------- attention

/// Output of a (multi-head) attention layer on a graph.
#[derive(Debug, Clone)]
pub struct Attended {
    pub output: Var,
    /// Row-stochastic attention weights, one matrix per head.
    pub weights: Vec<Var>,
}

/// `softmax((queries Q)(keys_values K)^T / sqrt(d_k)) (keys_values V)` per head,
/// heads concatenated along columns. Heads use column slices of Q, K and V.
pub fn multi_head_attention(
    g: &mut Graph,
    queries: Var,
    keys_values: Var,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
) -> Attended {
    let d = g.value(q).expect("q on graph").cols();
    let d_k = d / heads;
    let qp = g.matmul(queries, q);
    let kp = g.matmul(keys_values, k);
    let vp = g.matmul(keys_values, v);
    let scale = 1.0 / (d_k as f64).sqrt();
    let mut outputs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (qp, kp, vp)
        } else {
            (
                g.slice_cols(qp, h * d_k, d_k),
                g.slice_cols(kp, h * d_k, d_k),
                g.slice_cols(vp, h * d_k, d_k),
            )
        };
        let kt = g.transpose(kh);
        let logits = g.matmul(qh, kt);
        let logits = g.scale(logits, scale);
        let w = g.softmax_rows(logits);
        outputs.push(g.matmul(w, vh));
        weights.push(w);
    }
    let output = if heads == 1 { outputs[0] } else { g.hconcat(&outputs) };
    Attended { output, weights }
}

/// Text states query image features: `H_text` (m x d), `H_img` (n x d).
pub fn selective_attention_on(g: &mut Graph, h_text: Var, h_img: Var, p: &FusionVars) -> Attended {
    multi_head_attention(g, h_text, h_img, p.q, p.k, p.v, p.heads)
}

/// Returns `(Enc_out, lambda)` with `lambda = sigmoid(H_text W_t + H_attn W_i)`
/// and `Enc_out = (1 - lambda) * H_text + lambda * H_attn` elementwise.
pub fn gated_fusion_on(g: &mut Graph, h_text: Var, h_attn: Var, w_t: Var, w_i: Var) -> (Var, Var) {
    let a = g.matmul(h_text, w_t);
    let b = g.matmul(h_attn, w_i);
    let z = g.add(a, b);
    let lambda = g.sigmoid(z);
    let keep = g.one_minus(lambda);
    let text_part = g.mul(keep, h_text);
    let image_part = g.mul(lambda, h_attn);
    (g.add(text_part, image_part), lambda)
}

pub fn project_visual_on(g: &mut Graph, x_img: Var, w_img: Var) -> Var {
    g.matmul(x_img, w_img)
}

/// Stacks `[x_text; x_img_proj]` as queries and attends over the text rows.
pub fn concat_fusion_attention_on(
    g: &mut Graph,
    x_text: Var,
    x_img_proj: Var,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
) -> Attended {
    let x_com = g.vconcat(x_text, x_img_proj);
    multi_head_attention(g, x_com, x_text, q, k, v, heads)
}

fn check_heads(p: &FusionParams) -> Result<()> {
    p.validate()
}

pub fn selective_attention(h_text: &Tensor2, h_img: &Tensor2, p: &FusionParams) -> Result<Tensor2> {
    check_heads(p)?;
    expect_cols("selective_attention", "H_text", h_text, p.d)?;
    expect_cols("selective_attention", "H_img", h_img, p.d)?;
    let mut g = Graph::new();
    let vars = p.bind(&mut g);
    let (t, i) = (g.leaf(h_text.clone()), g.leaf(h_img.clone()));
    let out = selective_attention_on(&mut g, t, i, &vars).output;
    Ok(g.value(out)?.clone())
}

/// Attention weights of every head, for inspection.
pub fn selective_attention_weights(h_text: &Tensor2, h_img: &Tensor2, p: &FusionParams) -> Result<Vec<Tensor2>> {
    check_heads(p)?;
    expect_cols("selective_attention", "H_text", h_text, p.d)?;
    expect_cols("selective_attention", "H_img", h_img, p.d)?;
    let mut g = Graph::new();
    let vars = p.bind(&mut g);
    let (t, i) = (g.leaf(h_text.clone()), g.leaf(h_img.clone()));
    let att = selective_attention_on(&mut g, t, i, &vars);
    att.weights.iter().map(|w| g.value(*w).cloned()).collect()
}

pub fn gated_fusion(h_text: &Tensor2, h_attn: &Tensor2, p: &FusionParams) -> Result<(Tensor2, Tensor2)> {
    if h_text.shape() != h_attn.shape() {
        return Err(FusionError::Shape {
            op: "gated_fusion",
            detail: format!("H_text {:?} vs H_attn {:?}", h_text.shape(), h_attn.shape()),
        });
    }
    expect_cols("gated_fusion", "H_text", h_text, p.d)?;
    expect_shape("gated_fusion", "W_t", &p.w_t, (p.d, p.d))?;
    expect_shape("gated_fusion", "W_i", &p.w_i, (p.d, p.d))?;
    let mut g = Graph::new();
    let (t, a) = (g.leaf(h_text.clone()), g.leaf(h_attn.clone()));
    let (wt, wi) = (g.leaf(p.w_t.clone()), g.leaf(p.w_i.clone()));
    let (enc, lambda) = gated_fusion_on(&mut g, t, a, wt, wi);
    Ok((g.value(enc)?.clone(), g.value(lambda)?.clone()))
}

pub fn project_visual(x_img: &Tensor2, w_img: &Tensor2) -> Result<Tensor2> {
    if x_img.cols() != w_img.rows() {
        return Err(FusionError::Shape {
            op: "project_visual",
            detail: format!("x_img {:?} vs W_img {:?}", x_img.shape(), w_img.shape()),
        });
    }
    Ok(x_img.matmul(w_img))
}

pub fn concat_fusion_attention(x_text: &Tensor2, x_img_proj: &Tensor2, p: &FusionParams) -> Result<Tensor2> {
    check_heads(p)?;
    expect_cols("concat_fusion_attention", "x_text", x_text, p.d)?;
    expect_cols("concat_fusion_attention", "x_img_proj", x_img_proj, p.d)?;
    if x_text.rows() == 0 {
        return Err(FusionError::EmptySequence);
    }
    let mut g = Graph::new();
    let vars = p.bind(&mut g);
    let (t, i) = (g.leaf(x_text.clone()), g.leaf(x_img_proj.clone()));
    let out = concat_fusion_attention_on(&mut g, t, i, vars.q, vars.k, vars.v, vars.heads).output;
    Ok(g.value(out)?.clone())
}

fn expect_cols(op: &'static str, what: &str, t: &Tensor2, cols: usize) -> Result<()> {
    if t.cols() != cols {
        return Err(FusionError::Shape {
            op,
            detail: format!("{what} has {} columns, expected {cols}", t.cols()),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------- encoder block

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    TextOnly,
    /// Self-attention, then selective attention over the image and gated fusion.
    Selective,
    /// Stacked text and image rows attend over the text rows.
    Concat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// Self-attention (and, in concat mode, the stacked-rows attention) Q, K, V.
    pub attn_q: Tensor2,
    pub attn_k: Tensor2,
    pub attn_v: Tensor2,
    pub fusion: FusionParams,
    pub ffn_w1: Tensor2,
    pub ffn_b1: Tensor2,
    pub ffn_w2: Tensor2,
    pub ffn_b2: Tensor2,
    pub ln1_gain: Tensor2,
    pub ln1_bias: Tensor2,
    pub ln2_gain: Tensor2,
    pub ln2_bias: Tensor2,
    pub ln_eps: f64,
}

impl EncoderParams {
    /// Seeded uniform weights; layer-norm scale 1 and shift 0. `d_ff` is the
    /// hidden width of the feed-forward sublayer.
    pub fn random<R: Rng + ?Sized>(dims: &Dims, d_ff: usize, rng: &mut R) -> Self {
        let (d, r) = (dims.d, INIT_RANGE);
        let fusion = FusionParams::random(dims, rng);
        Self {
            attn_q: Tensor2::random(d, d, -r, r, rng),
            attn_k: Tensor2::random(d, d, -r, r, rng),
            attn_v: Tensor2::random(d, d, -r, r, rng),
            fusion,
            ffn_w1: Tensor2::random(d, d_ff, -r, r, rng),
            ffn_b1: Tensor2::random(1, d_ff, -r, r, rng),
            ffn_w2: Tensor2::random(d_ff, d, -r, r, rng),
            ffn_b2: Tensor2::random(1, d, -r, r, rng),
            ln1_gain: Tensor2::filled(1, d, 1.0),
            ln1_bias: Tensor2::zeros(1, d),
            ln2_gain: Tensor2::filled(1, d, 1.0),
            ln2_bias: Tensor2::zeros(1, d),
            ln_eps: LAYER_NORM_EPS,
        }
    }

    /// All weights zero, layer norms at identity scale.
    pub fn zeros(dims: &Dims, d_ff: usize) -> Self {
        let d = dims.d;
        let z = |r, c| Tensor2::zeros(r, c);
        Self {
            attn_q: z(d, d),
            attn_k: z(d, d),
            attn_v: z(d, d),
            fusion: FusionParams {
                d,
                d_k: dims.d_k(),
                heads: dims.heads,
                q: z(d, d),
                k: z(d, d),
                v: z(d, d),
                w_t: z(d, d),
                w_i: z(d, d),
                w_img: z(dims.d_img, d),
                pe_base: DEFAULT_PE_BASE,
            },
            ffn_w1: z(d, d_ff),
            ffn_b1: z(1, d_ff),
            ffn_w2: z(d_ff, d),
            ffn_b2: z(1, d),
            ln1_gain: Tensor2::filled(1, d, 1.0),
            ln1_bias: z(1, d),
            ln2_gain: Tensor2::filled(1, d, 1.0),
            ln2_bias: z(1, d),
            ln_eps: LAYER_NORM_EPS,
        }
    }

    pub fn d(&self) -> usize {
        self.fusion.d
    }

    pub fn validate(&self) -> Result<()> {
        self.fusion.validate()?;
        let d = self.d();
        let d_ff = self.ffn_w1.cols();
        for (name, t, shape) in [
            ("attn Q", &self.attn_q, (d, d)),
            ("attn K", &self.attn_k, (d, d)),
            ("attn V", &self.attn_v, (d, d)),
            ("ffn W1", &self.ffn_w1, (d, d_ff)),
            ("ffn b1", &self.ffn_b1, (1, d_ff)),
            ("ffn W2", &self.ffn_w2, (d_ff, d)),
            ("ffn b2", &self.ffn_b2, (1, d)),
            ("ln1 gain", &self.ln1_gain, (1, d)),
            ("ln1 bias", &self.ln1_bias, (1, d)),
            ("ln2 gain", &self.ln2_gain, (1, d)),
            ("ln2 bias", &self.ln2_bias, (1, d)),
        ] {
            expect_shape("encoder params", name, t, shape)?;
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph) -> EncoderVars {
        EncoderVars {
            attn_q: g.leaf(self.attn_q.clone()),
            attn_k: g.leaf(self.attn_k.clone()),
            attn_v: g.leaf(self.attn_v.clone()),
            fusion: self.fusion.bind(g),
            ffn_w1: g.leaf(self.ffn_w1.clone()),
            ffn_b1: g.leaf(self.ffn_b1.clone()),
            ffn_w2: g.leaf(self.ffn_w2.clone()),
            ffn_b2: g.leaf(self.ffn_b2.clone()),
            ln1_gain: g.leaf(self.ln1_gain.clone()),
            ln1_bias: g.leaf(self.ln1_bias.clone()),
            ln2_gain: g.leaf(self.ln2_gain.clone()),
            ln2_bias: g.leaf(self.ln2_bias.clone()),
            ln_eps: self.ln_eps,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub attn_q: Var,
    pub attn_k: Var,
    pub attn_v: Var,
    pub fusion: FusionVars,
    pub ffn_w1: Var,
    pub ffn_b1: Var,
    pub ffn_w2: Var,
    pub ffn_b2: Var,
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
    pub ln_eps: f64,
}

impl EncoderVars {
    /// Every parameter leaf with a display name.
    pub fn named(&self) -> Vec<(&'static str, Var)> {
        vec![
            ("attn_q", self.attn_q),
            ("attn_k", self.attn_k),
            ("attn_v", self.attn_v),
            ("Q", self.fusion.q),
            ("K", self.fusion.k),
            ("V", self.fusion.v),
            ("W_t", self.fusion.w_t),
            ("W_i", self.fusion.w_i),
            ("W_img", self.fusion.w_img),
            ("ffn_w1", self.ffn_w1),
            ("ffn_b1", self.ffn_b1),
            ("ffn_w2", self.ffn_w2),
            ("ffn_b2", self.ffn_b2),
            ("ln1_gain", self.ln1_gain),
            ("ln1_bias", self.ln1_bias),
            ("ln2_gain", self.ln2_gain),
            ("ln2_bias", self.ln2_bias),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct BlockOutput {
    pub output: Var,
    /// Visual-importance gate (selective mode only).
    pub lambda: Option<Var>,
    pub attention: Vec<Var>,
}

fn add_norm(g: &mut Graph, x: Var, sub: Var, gain: Var, bias: Var, eps: f64) -> Var {
    let sum = g.add(x, sub);
    let n = g.layer_norm(sum, eps);
    let scaled = g.mul_row(n, gain);
    g.add_row(scaled, bias)
}

fn feed_forward(g: &mut Graph, x: Var, p: &EncoderVars) -> Var {
    let h = g.matmul(x, p.ffn_w1);
    let h = g.add_row(h, p.ffn_b1);
    let h = g.relu(h);
    let o = g.matmul(h, p.ffn_w2);
    g.add_row(o, p.ffn_b2)
}

/// One encoder layer: attention, add & norm, (selective mode: gated image
/// fusion), feed-forward, add & norm. In concat mode the output has one row
/// per text token followed by one row per image patch.
pub fn encoder_block_on(g: &mut Graph, x: Var, image: Option<Var>, p: &EncoderVars, mode: FusionMode) -> BlockOutput {
    let heads = p.fusion.heads;
    match mode {
        FusionMode::TextOnly | FusionMode::Selective => {
            let att = multi_head_attention(g, x, x, p.attn_q, p.attn_k, p.attn_v, heads);
            let h = add_norm(g, x, att.output, p.ln1_gain, p.ln1_bias, p.ln_eps);
            let mut attention = att.weights;
            let (fused, lambda) = match (mode, image) {
                (FusionMode::Selective, Some(img)) => {
                    let proj = project_visual_on(g, img, p.fusion.w_img);
                    let sel = selective_attention_on(g, h, proj, &p.fusion);
                    attention.extend(sel.weights);
                    let (enc, lambda) = gated_fusion_on(g, h, sel.output, p.fusion.w_t, p.fusion.w_i);
                    (enc, Some(lambda))
                }
                _ => (h, None),
            };
            let ff = feed_forward(g, fused, p);
            let output = add_norm(g, fused, ff, p.ln2_gain, p.ln2_bias, p.ln_eps);
            BlockOutput {
                output,
                lambda,
                attention,
            }
        }
        FusionMode::Concat => {
            let img = image.expect("concat mode needs an image");
            let proj = project_visual_on(g, img, p.fusion.w_img);
            let x_com = g.vconcat(x, proj);
            let att = multi_head_attention(g, x_com, x, p.attn_q, p.attn_k, p.attn_v, heads);
            let h = add_norm(g, x_com, att.output, p.ln1_gain, p.ln1_bias, p.ln_eps);
            let ff = feed_forward(g, h, p);
            let output = add_norm(g, h, ff, p.ln2_gain, p.ln2_bias, p.ln_eps);
            BlockOutput {
                output,
                lambda: None,
                attention: att.weights,
            }
        }
    }
}

fn check_block_inputs(x: &Tensor2, p: &EncoderParams, image: Option<&Tensor2>, mode: FusionMode) -> Result<()> {
    p.validate()?;
    if x.rows() == 0 {
        return Err(FusionError::EmptySequence);
    }
    expect_cols("encoder_block", "x", x, p.d())?;
    match (mode, image) {
        (FusionMode::TextOnly, Some(_)) => Err(FusionError::Mode("text-only mode takes no image".into())),
        (FusionMode::Selective | FusionMode::Concat, None) => {
            Err(FusionError::Mode(format!("{mode:?} mode needs image features")))
        }
        (_, Some(img)) => expect_cols("encoder_block", "image", img, p.fusion.w_img.rows()),
        (FusionMode::TextOnly, None) => Ok(()),
    }
}

pub fn encoder_block(x: &Tensor2, p: &EncoderParams, image: Option<&Tensor2>, mode: FusionMode) -> Result<Tensor2> {
    check_block_inputs(x, p, image, mode)?;
    let mut g = Graph::new();
    let vars = p.bind(&mut g);
    let xv = g.leaf(x.clone());
    let iv = image.map(|i| g.leaf(i.clone()));
    let out = encoder_block_on(&mut g, xv, iv, &vars, mode);
    Ok(g.value(out.output)?.clone())
}

/// A recorded encoder block, ready for [`Graph::backward`].
#[derive(Debug)]
pub struct RecordedBlock {
    pub graph: Graph,
    pub params: EncoderVars,
    pub input: Var,
    pub image: Option<Var>,
    pub out: BlockOutput,
}

pub fn record_encoder_block(
    x: &Tensor2,
    p: &EncoderParams,
    image: Option<&Tensor2>,
    mode: FusionMode,
) -> Result<RecordedBlock> {
    check_block_inputs(x, p, image, mode)?;
    let mut graph = Graph::new();
    let params = p.bind(&mut graph);
    let input = graph.leaf(x.clone());
    let image = image.map(|i| graph.leaf(i.clone()));
    let out = encoder_block_on(&mut graph, input, image, &params, mode);
    Ok(RecordedBlock {
        graph,
        params,
        input,
        image,
        out,
    })
}
