//! Central finite-difference checks of every backward rule and of a whole
//! tiny model.

use serde::Serialize;

use crate::autodiff::{Graph, OpKind, Var};
use crate::error::Result;
use crate::model::{DynamicTransformer, ModelConfig};
use crate::param::{init_normal, Param, Scaling};
use crate::rng;
use crate::tensor::{causal_mask, Tensor};

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor for the relative error. Central differences of an O(1)
/// loss carry about `ε/h ≈ 1e-11` of round-off per ulp, which dominates for
/// gradients that are exactly zero (key biases under softmax); below the
/// floor entries are compared absolutely at `1e-4 · 1e-5`.
pub const REL_FLOOR: f64 = 1e-5;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// The model used by the suite: `d_model = 8`, two layers.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 8,
        frame_dim: 4,
        d_model: 8,
        heads: 2,
        ffn_dim: 16,
        target_layers: 2,
        growth_parts: 1,
        max_seq_len: 16,
        literal_division: false,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub elements: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub tolerance: f64,
    pub fault: Option<String>,
    pub ops: Vec<CheckResult>,
    pub tensors: Vec<CheckResult>,
    /// First op check over tolerance, in dependency order.
    pub failing_op: Option<String>,
    pub worst_tensor: String,
    pub max_rel_err: f64,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn summary(&self) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        let mut s = format!(
            "gradcheck {status}: max relative error {:.3e} (tolerance {:.0e}), worst tensor {}",
            self.max_rel_err, self.tolerance, self.worst_tensor
        );
        if let Some(op) = &self.failing_op {
            s.push_str(&format!(", failing op {op}"));
        }
        s
    }
}

fn graph(fault: Option<OpKind>) -> Graph {
    fault.map_or_else(Graph::new, Graph::with_faulty_backward)
}

type Build = dyn Fn(&mut Graph, &[Var]) -> Result<Var>;

struct OpCase {
    kind: OpKind,
    shapes: Vec<Vec<usize>>,
    build: Box<Build>,
}

fn op_cases() -> Vec<OpCase> {
    fn case(
        kind: OpKind,
        shapes: &[&[usize]],
        build: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static,
    ) -> OpCase {
        OpCase {
            kind,
            shapes: shapes.iter().map(|s| s.to_vec()).collect(),
            build: Box::new(build),
        }
    }
    let mask = causal_mask(3);
    vec![
        case(OpKind::Sum, &[&[3, 4]], |g, v| Ok(g.sum(v[0]))),
        case(OpKind::Mul, &[&[3, 4], &[3, 4]], |g, v| g.mul(v[0], v[1])),
        case(OpKind::Scale, &[&[3, 4]], |g, v| Ok(g.scale(v[0], -1.7))),
        case(OpKind::Add, &[&[3, 4], &[3, 4]], |g, v| g.add(v[0], v[1])),
        case(OpKind::AddRow, &[&[3, 4], &[4]], |g, v| {
            g.add_row(v[0], v[1])
        }),
        case(OpKind::MatMul, &[&[3, 4], &[4, 2]], |g, v| {
            g.matmul(v[0], v[1])
        }),
        case(OpKind::Relu, &[&[3, 4]], |g, v| Ok(g.relu(v[0]))),
        case(OpKind::Softmax, &[&[3, 4]], |g, v| Ok(g.softmax(v[0]))),
        case(OpKind::LayerNorm, &[&[3, 4], &[4], &[4]], |g, v| {
            g.layer_norm(v[0], v[1], v[2])
        }),
        case(OpKind::SplitHeads, &[&[3, 4]], |g, v| {
            g.split_heads(v[0], 2)
        }),
        case(OpKind::MergeHeads, &[&[2, 3, 2]], |g, v| {
            g.merge_heads(v[0])
        }),
        case(
            OpKind::Attention,
            &[&[2, 3, 2], &[2, 3, 2], &[2, 3, 2]],
            move |g, v| g.attention(v[0], v[1], v[2], Some(&mask)),
        ),
        case(OpKind::Embedding, &[&[5, 3]], |g, v| {
            g.embedding(v[0], &[0, 2, 2, 4])
        }),
        case(OpKind::SquaredError, &[&[3, 4]], |g, v| {
            let target = Tensor::from_rows(&[
                &[0.1, -0.2, 0.3, 0.0],
                &[1.0, 0.5, -0.5, 0.2],
                &[0.0, 0.0, 0.7, -1.1],
            ]);
            g.squared_error(v[0], &target, 0.7)
        }),
    ]
}

/// `Σ out ⊙ R` for a fixed random `R`, or `out` itself when already scalar.
fn case_loss(
    c: &OpCase,
    params: &[Param],
    r_seed: u64,
    fault: Option<OpKind>,
) -> Result<(Graph, Var)> {
    let mut g = graph(fault);
    let vars: Vec<Var> = params
        .iter()
        .enumerate()
        .map(|(i, p)| g.param(i, p))
        .collect();
    let out = (c.build)(&mut g, &vars)?;
    let loss = if g.value(out).len() == 1 {
        out
    } else {
        let r = g.input(init_normal(g.value(out).shape(), r_seed));
        let prod = g.mul(out, r)?;
        g.sum(prod)
    };
    Ok((g, loss))
}

fn check_op(c: &OpCase, seed: u64, fault: Option<OpKind>) -> Result<CheckResult> {
    let case_seed = rng::derive_seed(seed, &[c.kind as u64]);
    let mut params: Vec<Param> = c
        .shapes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut t = init_normal(s, rng::derive_seed(case_seed, &[i as u64]));
            if c.kind == OpKind::Relu {
                // Keep inputs away from the kink.
                t = t.map(|x| if x.abs() < 0.05 { x + 0.1 } else { x });
            }
            Param::new(t, 1, Scaling::Plain)
        })
        .collect();
    let r_seed = rng::derive_seed(case_seed, &[u64::MAX]);
    let (g, loss) = case_loss(c, &params, r_seed, fault)?;
    let grads = g.backward(loss)?;
    let eval = |ps: &[Param]| -> Result<f64> {
        let (g, l) = case_loss(c, ps, r_seed, None)?;
        Ok(g.value(l).data()[0])
    };
    let mut worst = 0.0f64;
    let mut elements = 0;
    for i in 0..params.len() {
        let analytic = grads
            .get(i)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(params[i].raw.shape()));
        for j in 0..params[i].len() {
            let x = params[i].raw.data()[j];
            params[i].raw.data_mut()[j] = x + FD_STEP;
            let up = eval(&params)?;
            params[i].raw.data_mut()[j] = x - FD_STEP;
            let down = eval(&params)?;
            params[i].raw.data_mut()[j] = x;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_error(analytic.data()[j], numeric));
            elements += 1;
        }
    }
    Ok(CheckResult {
        name: c.kind.name().to_string(),
        elements,
        max_rel_err: worst,
    })
}

/// Checks every parameter tensor of a tiny two-layer model against central
/// differences of the teacher-forced MSE.
pub fn check_model(seed: u64, fault: Option<OpKind>) -> Result<Vec<CheckResult>> {
    let config = tiny_config();
    let mut model = DynamicTransformer::new(config.clone(), seed)?;
    // Zero biases meet the zero start frame exactly at the ReLU kink; move
    // every tensor off its initial symmetry first.
    for (i, p) in model.params_mut().iter_mut().enumerate() {
        let noise = init_normal(
            p.raw.shape(),
            rng::derive_seed(seed, &[rng::STREAM_PARAM, i as u64]),
        );
        p.raw.axpy(0.1, &noise);
    }
    let mut r = rng::stream(seed, &[rng::STREAM_SAMPLE]);
    let tokens: Vec<u32> = (0..3)
        .map(|_| (rand::Rng::gen_range(&mut r, 0..config.vocab_size)) as u32)
        .collect();
    let target = init_normal(
        &[6, config.frame_dim],
        rng::derive_seed(seed, &[rng::STREAM_SAMPLE, 1]),
    );

    model.zero_grads();
    let mut g = graph(fault);
    let pred = model.forward_graph(&mut g, &tokens, &target)?;
    let loss = g.mse(pred, &target)?;
    g.backward(loss)?.accumulate_into(model.params_mut());
    let analytic: Vec<Tensor> = model.params().iter().map(|p| p.grad.clone()).collect();

    let batch_loss = |m: &DynamicTransformer| m.evaluate(&[(tokens.as_slice(), &target)]);
    let mut out = Vec::with_capacity(analytic.len());
    for (i, a) in analytic.iter().enumerate() {
        let mut worst = 0.0f64;
        for j in 0..a.len() {
            let x = model.params()[i].raw.data()[j];
            model.params_mut()[i].raw.data_mut()[j] = x + FD_STEP;
            let up = batch_loss(&model)?;
            model.params_mut()[i].raw.data_mut()[j] = x - FD_STEP;
            let down = batch_loss(&model)?;
            model.params_mut()[i].raw.data_mut()[j] = x;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_error(a.data()[j], numeric));
        }
        out.push(CheckResult {
            name: model.param_names()[i].clone(),
            elements: a.len(),
            max_rel_err: worst,
        });
    }
    Ok(out)
}

/// Runs the op-level and model-level suites. `fault` corrupts one backward
/// rule so the suite can be seen to fail.
pub fn run(seed: u64, fault: Option<OpKind>) -> Result<GradcheckReport> {
    let ops = op_cases()
        .iter()
        .map(|c| check_op(c, seed, fault))
        .collect::<Result<Vec<_>>>()?;
    let tensors = check_model(seed, fault)?;
    let worst = tensors
        .iter()
        .chain(&ops)
        .fold(0.0f64, |w, c| w.max(c.max_rel_err));
    let worst_tensor = tensors
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .map(|c| c.name.clone())
        .unwrap_or_default();
    let failing_op = ops
        .iter()
        .find(|c| c.max_rel_err.is_nan() || c.max_rel_err >= GRADCHECK_TOLERANCE)
        .map(|c| c.name.clone());
    Ok(GradcheckReport {
        seed,
        tolerance: GRADCHECK_TOLERANCE,
        fault: fault.map(|k| k.name().to_string()),
        passed: worst < GRADCHECK_TOLERANCE,
        ops,
        tensors,
        failing_op,
        worst_tensor,
        max_rel_err: worst,
    })
}
