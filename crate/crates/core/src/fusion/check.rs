//! Invariant and finite-difference checks for the fusion layers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::*;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error.
pub const FD_FLOOR: f64 = 1e-6;
pub const SOFTMAX_TOLERANCE: f64 = 1e-9;
pub const COLLAPSE_TOLERANCE: f64 = 1e-10;
pub const CONVEXITY_DRAWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdOptions {
    pub h: f64,
    pub tolerance: f64,
    pub floor: f64,
    /// Check at most this many evenly spaced entries per tensor.
    pub max_per_tensor: Option<usize>,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            h: FD_STEP,
            tolerance: FD_TOLERANCE,
            floor: FD_FLOOR,
            max_per_tensor: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// `(tensor, flat index)` of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Entries whose `+h` and `-h` evaluations switch a `relu` on or off;
    /// central differences are not defined there and they are not scored.
    pub kinks: usize,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares reverse-mode gradients of `sum(U * f(inputs))` against central
/// differences, for a random upstream `U` drawn from `rng`.
pub fn finite_difference<F, R>(inputs: &[(String, Tensor2)], build: F, opts: &FdOptions, rng: &mut R) -> Result<FdReport>
where
    F: Fn(&mut Graph, &[Var]) -> Var,
    R: Rng + ?Sized,
{
    let run = |values: &[Tensor2]| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|v| g.leaf(v.clone())).collect();
        let out = build(&mut g, &vars);
        Ok((g, vars, out))
    };
    let mut values: Vec<Tensor2> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let (g, vars, out) = run(&values)?;
    let (rows, cols) = g.value(out)?.shape();
    let upstream = Tensor2::random(rows, cols, -1.0, 1.0, rng);
    let grads = g.backward(out, &upstream)?;
    let analytic: Vec<Tensor2> = vars.iter().map(|v| grads.get(*v)).collect::<Result<_>>()?;

    let forward = |values: &[Tensor2]| -> Result<(Tensor2, Vec<bool>)> {
        let (g, _, out) = run(values)?;
        Ok((g.value(out)?.clone(), g.relu_pattern()))
    };

    let mut report = FdReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        kinks: 0,
    };
    for (t, (name, _)) in inputs.iter().enumerate() {
        let len = values[t].data().len();
        let stride = match opts.max_per_tensor {
            Some(k) if k > 0 && len > k => len.div_ceil(k),
            _ => 1,
        };
        for idx in (0..len).step_by(stride) {
            let base = values[t].data()[idx];
            values[t].data_mut()[idx] = base + opts.h;
            let (plus, plus_pattern) = forward(&values)?;
            values[t].data_mut()[idx] = base - opts.h;
            let (minus, minus_pattern) = forward(&values)?;
            values[t].data_mut()[idx] = base;
            if plus_pattern != minus_pattern {
                report.kinks += 1;
                continue;
            }
            // difference before weighting, so the sum does not cancel
            let numeric = plus.sub(&minus).hadamard(&upstream).sum() / (2.0 * opts.h);
            let err = relative_error(analytic[t].data()[idx], numeric, opts.floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((name.clone(), idx));
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub value: f64,
    pub limit: f64,
    pub detail: String,
}

impl CheckRow {
    fn below(name: &str, value: f64, limit: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            passed: value < limit,
            value,
            limit,
            detail: detail.into(),
        }
    }

    pub fn tsv_line(&self) -> String {
        format!(
            "{}\t{}\t{:.3e}\t{:.0e}\t{}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.limit,
            self.detail
        )
    }
}

fn named(params: &EncoderParams) -> Vec<(String, Tensor2)> {
    let f = &params.fusion;
    [
        ("attn_q", &params.attn_q),
        ("attn_k", &params.attn_k),
        ("attn_v", &params.attn_v),
        ("Q", &f.q),
        ("K", &f.k),
        ("V", &f.v),
        ("W_t", &f.w_t),
        ("W_i", &f.w_i),
        ("W_img", &f.w_img),
        ("ffn_w1", &params.ffn_w1),
        ("ffn_b1", &params.ffn_b1),
        ("ffn_w2", &params.ffn_w2),
        ("ffn_b2", &params.ffn_b2),
        ("ln1_gain", &params.ln1_gain),
        ("ln1_bias", &params.ln1_bias),
        ("ln2_gain", &params.ln2_gain),
        ("ln2_bias", &params.ln2_bias),
    ]
    .into_iter()
    .map(|(n, t)| (n.to_string(), t.clone()))
    .collect()
}

fn vars_from(v: &[Var], heads: usize, eps: f64) -> EncoderVars {
    EncoderVars {
        attn_q: v[0],
        attn_k: v[1],
        attn_v: v[2],
        fusion: FusionVars {
            q: v[3],
            k: v[4],
            v: v[5],
            w_t: v[6],
            w_i: v[7],
            w_img: v[8],
            heads,
        },
        ffn_w1: v[9],
        ffn_b1: v[10],
        ffn_w2: v[11],
        ffn_b2: v[12],
        ln1_gain: v[13],
        ln1_bias: v[14],
        ln2_gain: v[15],
        ln2_bias: v[16],
        ln_eps: eps,
    }
}

/// Random encoder parameters at a generic point: weights scaled to
/// `1/sqrt(fan_in)`, layer-norm scales and shifts perturbed away from 1 and 0.
pub fn random_encoder<R: Rng + ?Sized>(dims: &Dims, rng: &mut R) -> EncoderParams {
    let mut p = EncoderParams::random(dims, 2 * dims.d, rng);
    let d = dims.d;
    for w in [
        &mut p.attn_q,
        &mut p.attn_k,
        &mut p.attn_v,
        &mut p.fusion.q,
        &mut p.fusion.k,
        &mut p.fusion.v,
        &mut p.fusion.w_t,
        &mut p.fusion.w_i,
        &mut p.fusion.w_img,
        &mut p.ffn_w1,
        &mut p.ffn_w2,
    ] {
        let r = 1.0 / (w.rows() as f64).sqrt();
        *w = Tensor2::random(w.rows(), w.cols(), -r, r, rng);
    }
    // sharper attention, away from the uniform regime
    for w in [&mut p.attn_q, &mut p.attn_k, &mut p.fusion.q, &mut p.fusion.k] {
        *w = w.scale(4.0);
    }
    p.ln1_gain = Tensor2::random(1, d, 0.8, 1.2, rng);
    p.ln1_bias = Tensor2::random(1, d, -0.1, 0.1, rng);
    p.ln2_gain = Tensor2::random(1, d, 0.8, 1.2, rng);
    p.ln2_bias = Tensor2::random(1, d, -0.1, 0.1, rng);
    p
}

/// Gradient check of one encoder block, including its inputs. Positional
/// encodings are added to the text input inside the recorded graph.
pub fn fd_encoder_block<R: Rng + ?Sized>(
    dims: &Dims,
    mode: FusionMode,
    opts: &FdOptions,
    rng: &mut R,
) -> Result<FdReport> {
    let params = random_encoder(dims, rng);
    let pe = positional_encoding(dims.m, dims.d, params.fusion.pe_base)?;
    let mut inputs = named(&params);
    inputs.push(("x".into(), Tensor2::random(dims.m, dims.d, -1.0, 1.0, rng)));
    if mode != FusionMode::TextOnly {
        inputs.push(("image".into(), Tensor2::random(dims.n, dims.d_img, -1.0, 1.0, rng)));
    }
    let (heads, eps) = (dims.heads, params.ln_eps);
    finite_difference(
        &inputs,
        |g, v| {
            let p = vars_from(v, heads, eps);
            let pe = g.leaf(pe.clone());
            let x = g.add(v[17], pe);
            encoder_block_on(g, x, v.get(18).copied(), &p, mode).output
        },
        opts,
        rng,
    )
}

fn fusion_inputs(p: &FusionParams) -> Vec<(String, Tensor2)> {
    vec![
        ("Q".into(), p.q.clone()),
        ("K".into(), p.k.clone()),
        ("V".into(), p.v.clone()),
    ]
}

pub fn fd_selective_attention<R: Rng + ?Sized>(dims: &Dims, opts: &FdOptions, rng: &mut R) -> Result<FdReport> {
    let p = FusionParams::random(dims, rng);
    let mut inputs = fusion_inputs(&p);
    inputs.push(("H_text".into(), Tensor2::random(dims.m, dims.d, -1.0, 1.0, rng)));
    inputs.push(("H_img".into(), Tensor2::random(dims.n.max(1), dims.d, -1.0, 1.0, rng)));
    let heads = dims.heads;
    finite_difference(
        &inputs,
        |g, v| multi_head_attention(g, v[3], v[4], v[0], v[1], v[2], heads).output,
        opts,
        rng,
    )
}

pub fn fd_concat_attention<R: Rng + ?Sized>(dims: &Dims, opts: &FdOptions, rng: &mut R) -> Result<FdReport> {
    let p = FusionParams::random(dims, rng);
    let mut inputs = fusion_inputs(&p);
    inputs.push(("x_text".into(), Tensor2::random(dims.m, dims.d, -1.0, 1.0, rng)));
    inputs.push(("x_img_proj".into(), Tensor2::random(dims.n.max(1), dims.d, -1.0, 1.0, rng)));
    let heads = dims.heads;
    finite_difference(
        &inputs,
        |g, v| concat_fusion_attention_on(g, v[3], v[4], v[0], v[1], v[2], heads).output,
        opts,
        rng,
    )
}

pub fn fd_gated_fusion<R: Rng + ?Sized>(dims: &Dims, opts: &FdOptions, rng: &mut R) -> Result<FdReport> {
    let d = dims.d;
    let inputs = vec![
        ("H_text".to_string(), Tensor2::random(dims.m, d, -1.0, 1.0, rng)),
        ("H_attn".to_string(), Tensor2::random(dims.m, d, -1.0, 1.0, rng)),
        ("W_t".to_string(), Tensor2::random(d, d, -1.0, 1.0, rng)),
        ("W_i".to_string(), Tensor2::random(d, d, -1.0, 1.0, rng)),
    ];
    // the objective sees both outputs
    finite_difference(
        &inputs,
        |g, v| {
            let (enc, lambda) = gated_fusion_on(g, v[0], v[1], v[2], v[3]);
            g.hconcat(&[enc, lambda])
        },
        opts,
        rng,
    )
}

pub fn fd_project_visual<R: Rng + ?Sized>(dims: &Dims, opts: &FdOptions, rng: &mut R) -> Result<FdReport> {
    let inputs = vec![
        ("x_img".to_string(), Tensor2::random(dims.n.max(1), dims.d_img, -1.0, 1.0, rng)),
        ("W_img".to_string(), Tensor2::random(dims.d_img, dims.d, -1.0, 1.0, rng)),
    ];
    finite_difference(&inputs, |g, v| project_visual_on(g, v[0], v[1]), opts, rng)
}

fn fd_row(name: &str, report: Result<FdReport>, opts: &FdOptions) -> CheckRow {
    match report {
        Ok(r) => {
            let worst = r.worst.as_ref().map_or(String::new(), |(t, i)| format!(", worst {t}[{i}]"));
            let kinks = if r.kinks > 0 {
                format!(", {} at relu kinks skipped", r.kinks)
            } else {
                String::new()
            };
            CheckRow::below(
                name,
                r.max_rel_error,
                opts.tolerance,
                format!("{} entries{worst}{kinks}", r.checked),
            )
        }
        Err(e) => CheckRow {
            name: name.into(),
            passed: false,
            value: f64::NAN,
            limit: opts.tolerance,
            detail: e.to_string(),
        },
    }
}

/// Gate saturation used by the collapse check: large positive layer-norm
/// shift and a strongly negative `W_t` with `W_i = 0`.
pub fn saturate_gate(params: &mut EncoderParams) {
    let d = params.d();
    params.ln1_bias = Tensor2::filled(1, d, 10.0);
    params.ln1_gain = Tensor2::filled(1, d, 1.0);
    params.fusion.w_t = Tensor2::identity(d).scale(-10.0);
    params.fusion.w_i = Tensor2::zeros(d, d);
}

/// Runs every invariant and gradient check on seeded instances of `dims`.
pub fn run_suite(seed: u64, dims: &Dims, opts: &FdOptions) -> Result<Vec<CheckRow>> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let (d, m, n) = (dims.d, dims.m, dims.n.max(1));
    let dims1 = Dims { n, ..*dims };

    // positional encoding
    let len = m + n;
    let pe = positional_encoding(len, d, DEFAULT_PE_BASE)?;
    let row0 = (0..d)
        .map(|j| (pe.get(0, j) - if j % 2 == 0 { 0.0 } else { 1.0 }).abs())
        .fold(0.0, f64::max);
    rows.push(CheckRow::below("pe_row_zero", row0, 1e-15, "row 0 is 0,1,0,1,..."));
    let mut pyth = 0.0f64;
    for k in 0..len {
        for i in 0..d / 2 {
            pyth = pyth.max((pe.get(k, 2 * i).powi(2) + pe.get(k, 2 * i + 1).powi(2) - 1.0).abs());
        }
    }
    rows.push(CheckRow::below("pe_unit_pairs", pyth, 1e-12, format!("{len}x{d}")));

    // attention weights
    let mut sum_err = 0.0f64;
    let mut out_of_range = 0usize;
    for _ in 0..100 {
        let p = FusionParams::random(&dims1, &mut rng);
        let ht = Tensor2::random(m, d, -2.0, 2.0, &mut rng);
        let hi = Tensor2::random(n, d, -2.0, 2.0, &mut rng);
        let mut g = Graph::new();
        let vars = p.bind(&mut g);
        let (t, i) = (g.leaf(ht), g.leaf(hi));
        let mut weights = selective_attention_on(&mut g, t, i, &vars).weights;
        weights.extend(concat_fusion_attention_on(&mut g, t, i, vars.q, vars.k, vars.v, vars.heads).weights);
        for w in weights {
            let w = g.value(w)?;
            out_of_range += w.data().iter().filter(|v| !(0.0..=1.0).contains(*v)).count();
            for r in 0..w.rows() {
                sum_err = sum_err.max((w.row(r).iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    rows.push(CheckRow::below("softmax_row_sums", sum_err, SOFTMAX_TOLERANCE, "100 draws, selective and concat"));
    rows.push(CheckRow::below(
        "attention_weights_in_unit_interval",
        out_of_range as f64,
        0.5,
        "count of weights outside [0,1]",
    ));

    // convex hull with one head
    let one_head = Dims { heads: 1, ..dims1 };
    let mut hull = 0.0f64;
    for _ in 0..100 {
        let p = FusionParams::random(&one_head, &mut rng);
        let ht = Tensor2::random(m, d, -2.0, 2.0, &mut rng);
        let hi = Tensor2::random(n, d, -2.0, 2.0, &mut rng);
        let out = selective_attention(&ht, &hi, &p)?;
        let vals = hi.matmul(&p.v);
        for c in 0..d {
            let lo = (0..n).map(|r| vals.get(r, c)).fold(f64::INFINITY, f64::min);
            let hi_ = (0..n).map(|r| vals.get(r, c)).fold(f64::NEG_INFINITY, f64::max);
            for r in 0..m {
                let v = out.get(r, c);
                hull = hull.max(lo - v).max(v - hi_);
            }
        }
    }
    rows.push(CheckRow::below("attention_convex_hull", hull, 1e-12, "heads=1, excess beyond [min,max]"));

    // permutation of image rows
    let p = FusionParams::random(&dims1, &mut rng);
    let ht = Tensor2::random(m, d, -1.0, 1.0, &mut rng);
    let hi = Tensor2::random(n, d, -1.0, 1.0, &mut rng);
    let reversed = Tensor2::from_fn(n, d, |r, c| hi.get(n - 1 - r, c));
    let perm = selective_attention(&ht, &hi, &p)?.max_abs_diff(&selective_attention(&ht, &reversed, &p)?);
    rows.push(CheckRow::below("image_permutation_invariance", perm, 1e-12, "reversed image rows"));

    // gate convexity on small instances
    let small = Dims {
        d: 4,
        heads: 1,
        d_img: 4,
        m: 3,
        n: 1,
    };
    let mut excess = 0.0f64;
    let mut lambda_bad = 0usize;
    for _ in 0..CONVEXITY_DRAWS {
        let mut p = FusionParams::random(&small, &mut rng);
        p.w_t = Tensor2::random(4, 4, -3.0, 3.0, &mut rng);
        p.w_i = Tensor2::random(4, 4, -3.0, 3.0, &mut rng);
        let ht = Tensor2::random(3, 4, -2.0, 2.0, &mut rng);
        let ha = Tensor2::random(3, 4, -2.0, 2.0, &mut rng);
        let (enc, lambda) = gated_fusion(&ht, &ha, &p)?;
        lambda_bad += lambda.data().iter().filter(|l| !(0.0..=1.0).contains(*l)).count();
        for ((e, a), b) in enc.data().iter().zip(ht.data()).zip(ha.data()) {
            excess = excess.max(a.min(*b) - e).max(e - a.max(*b));
        }
    }
    // floating-point rounding of (1-l)a + l b can step a few ulps outside
    rows.push(CheckRow::below(
        "gated_fusion_convexity",
        excess,
        1e-12,
        format!("{CONVEXITY_DRAWS} draws of 3x4"),
    ));
    rows.push(CheckRow::below("gate_in_unit_interval", lambda_bad as f64, 0.5, "count of gate values outside [0,1]"));

    // gate collapse
    let mut params = random_encoder(&dims1, &mut rng);
    saturate_gate(&mut params);
    let x = Tensor2::random(m, d, -1.0, 1.0, &mut rng);
    let img = Tensor2::random(n, dims.d_img, -1.0, 1.0, &mut rng);
    let text_only = encoder_block(&x, &params, None, FusionMode::TextOnly)?;
    let rec = record_encoder_block(&x, &params, Some(&img), FusionMode::Selective)?;
    let selective = rec.graph.value(rec.out.output)?;
    let lambda_max = rec
        .out
        .lambda
        .map(|l| rec.graph.value(l).map(|t| t.data().iter().cloned().fold(0.0, f64::max)))
        .transpose()?
        .unwrap_or(f64::NAN);
    rows.push(CheckRow::below(
        "gate_collapse_matches_text_only",
        selective.max_abs_diff(&text_only),
        COLLAPSE_TOLERANCE,
        format!("max gate {lambda_max:.1e}"),
    ));

    // gradient special cases
    let mut p = FusionParams::random(&dims1, &mut rng);
    p.w_t = Tensor2::zeros(d, d);
    p.w_i = Tensor2::zeros(d, d);
    let mut g = Graph::new();
    let (t, a) = (
        g.leaf(Tensor2::random(m, d, -1.0, 1.0, &mut rng)),
        g.leaf(Tensor2::random(m, d, -1.0, 1.0, &mut rng)),
    );
    let (wt, wi) = (g.leaf(p.w_t.clone()), g.leaf(p.w_i.clone()));
    let (enc, _) = gated_fusion_on(&mut g, t, a, wt, wi);
    let upstream = Tensor2::random(m, d, -1.0, 1.0, &mut rng);
    let grad = g.backward(enc, &upstream)?.get(t)?;
    rows.push(CheckRow::below(
        "gate_zero_weight_gradient",
        grad.max_abs_diff(&upstream.scale(0.5)),
        1e-15,
        "dEnc/dH_text = upstream/2",
    ));

    let rec = record_encoder_block(&x, &params, Some(&img), FusionMode::Selective)?;
    let (rows_out, cols_out) = rec.graph.value(rec.out.output)?.shape();
    let grads = rec.graph.backward(rec.out.output, &Tensor2::zeros(rows_out, cols_out))?;
    let mut nonzero = 0usize;
    for (_, v) in rec.params.named().into_iter().chain([("x", rec.input)]) {
        nonzero += grads.get(v)?.data().iter().filter(|g| **g != 0.0).count();
    }
    rows.push(CheckRow::below("zero_upstream_zero_gradients", nonzero as f64, 0.5, "count of nonzero entries"));

    // finite differences
    rows.push(fd_row("fd_selective_attention", fd_selective_attention(&dims1, opts, &mut rng), opts));
    rows.push(fd_row("fd_gated_fusion", fd_gated_fusion(&dims1, opts, &mut rng), opts));
    rows.push(fd_row("fd_project_visual", fd_project_visual(&dims1, opts, &mut rng), opts));
    rows.push(fd_row("fd_concat_fusion_attention", fd_concat_attention(&dims1, opts, &mut rng), opts));
    for (name, mode) in [
        ("fd_encoder_text_only", FusionMode::TextOnly),
        ("fd_encoder_selective", FusionMode::Selective),
        ("fd_encoder_concat", FusionMode::Concat),
    ] {
        rows.push(fd_row(name, fd_encoder_block(&dims1, mode, opts, &mut rng), opts));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let dims = Dims {
            d: 4,
            heads: 2,
            d_img: 8,
            m: 3,
            n: 4,
        };
        let rows = run_suite(7, &dims, &FdOptions::default()).unwrap();
        for r in &rows {
            assert!(r.passed, "{}", r.tsv_line());
        }
        assert_eq!(rows.len(), 18);
    }

    #[test]
    fn fd_agrees_on_relu() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inputs = vec![("x".to_string(), Tensor2::random(2, 2, 0.5, 1.0, &mut rng))];
        let good = finite_difference(&inputs, |g, v| g.relu(v[0]), &FdOptions::default(), &mut rng).unwrap();
        assert!(good.max_rel_error < 1e-8);
        assert_eq!((good.checked, good.kinks), (4, 0));

        let at_kink = vec![("x".to_string(), Tensor2::from_rows(&[&[1e-7, 0.5], &[-0.5, 0.7]]).unwrap())];
        let r = finite_difference(&at_kink, |g, v| g.relu(v[0]), &FdOptions::default(), &mut rng).unwrap();
        assert_eq!((r.checked, r.kinks), (3, 1));
    }

    #[test]
    fn fd_flags_missing_gradient_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inputs = vec![("x".to_string(), Tensor2::random(2, 3, -1.0, 1.0, &mut rng))];
        // the doubled copy enters as a constant, so backward misses it
        let r = finite_difference(
            &inputs,
            |g, v| {
                let copy = g.value(v[0]).unwrap().scale(2.0);
                let c = g.leaf(copy);
                g.add(v[0], c)
            },
            &FdOptions::default(),
            &mut rng,
        )
        .unwrap();
        assert!((r.max_rel_error - 2.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn subsampling_limits_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dims = Dims {
            d: 8,
            heads: 2,
            d_img: 8,
            m: 4,
            n: 3,
        };
        let opts = FdOptions {
            max_per_tensor: Some(4),
            ..FdOptions::default()
        };
        let r = fd_selective_attention(&dims, &opts, &mut rng).unwrap();
        assert!(r.checked <= 5 * 4);
        assert!(r.max_rel_error < FD_TOLERANCE);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0, FD_FLOOR), 0.0);
        assert!((relative_error(1e-9, 0.0, FD_FLOOR) - 1e-3).abs() < 1e-15);
        assert!((relative_error(2.0, 1.0, FD_FLOOR) - 0.5).abs() < 1e-15);
    }
}
