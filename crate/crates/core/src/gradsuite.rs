//! The gradient-check battery behind the `grad-check` command: every tape
//! primitive on several shapes, then the full training loss of a small
//! model for both encoders with copy and copy loss switched on and off.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decoder::{batch_loss, Example};
use crate::model::{Activation, EncoderKind, Model, ModelConfig, ModelError};
use crate::numerics::{
    grad_check, grad_check_params, NumericsError, Tape, Tensor, Var, DEFAULT_EPS,
};
use crate::record::{Entity, KnowledgeRecord};
use crate::tokenizer::SubwordVocab;

/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

type Primitive = fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var, NumericsError>;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("shape matches data")
}

/// Fixed non-uniform weights, so that every output coordinate contributes
/// differently to the scalar being checked.
fn weighted(tape: &mut Tape<'_, f64>, v: Var) -> Result<Var, NumericsError> {
    let n = tape.value(v).len();
    let w = (0..n)
        .map(|i| 0.3 + ((i * 7919) % 13) as f64 / 10.0)
        .collect();
    tape.weighted_sum(v, w)
}

fn same_shape_cases() -> Vec<(&'static str, Primitive, usize)> {
    vec![
        (
            "matmul",
            |t, v| {
                let w = t.transpose(v[1])?;
                let m = t.matmul(v[0], w)?;
                weighted(t, m)
            },
            2,
        ),
        (
            "matmul_nt",
            |t, v| {
                let m = t.matmul_nt(v[0], v[1])?;
                weighted(t, m)
            },
            2,
        ),
        (
            "add",
            |t, v| {
                let m = t.add(v[0], v[1])?;
                weighted(t, m)
            },
            2,
        ),
        (
            "mul",
            |t, v| {
                let m = t.mul(v[0], v[1])?;
                weighted(t, m)
            },
            2,
        ),
        (
            "affine",
            |t, v| {
                let m = t.affine(v[0], -1.5, 0.25);
                weighted(t, m)
            },
            1,
        ),
        (
            "scale",
            |t, v| {
                let m = t.scale(v[0], 0.7);
                weighted(t, m)
            },
            1,
        ),
        (
            "sigmoid",
            |t, v| {
                let m = t.sigmoid(v[0]);
                weighted(t, m)
            },
            1,
        ),
        (
            "gelu",
            |t, v| {
                let m = t.gelu(v[0]);
                weighted(t, m)
            },
            1,
        ),
        (
            "softmax",
            |t, v| {
                let m = t.softmax(v[0]);
                weighted(t, m)
            },
            1,
        ),
        (
            "layer_norm",
            |t, v| {
                let m = t.layer_norm(v[0]);
                weighted(t, m)
            },
            1,
        ),
        (
            "ln",
            |t, v| {
                let s = t.sigmoid(v[0]);
                let m = t.ln(s);
                weighted(t, m)
            },
            1,
        ),
        (
            "concat_cols",
            |t, v| {
                let m = t.concat_cols(&[v[0], v[1], v[0]])?;
                weighted(t, m)
            },
            2,
        ),
        (
            "concat_rows",
            |t, v| {
                let m = t.concat_rows(&[v[1], v[0]])?;
                weighted(t, m)
            },
            2,
        ),
        (
            "slice_cols",
            |t, v| {
                let c = t.value(v[0]).cols();
                let m = t.slice_cols(v[0], c / 2, c - c / 2)?;
                weighted(t, m)
            },
            1,
        ),
        (
            "row_sum",
            |t, v| {
                let m = t.row_sum(v[0]);
                weighted(t, m)
            },
            1,
        ),
        (
            "sum",
            |t, v| {
                let s = t.sigmoid(v[0]);
                Ok(t.sum(s))
            },
            1,
        ),
        (
            "mean",
            |t, v| {
                let s = t.gelu(v[0]);
                Ok(t.mean(s))
            },
            1,
        ),
        (
            "transpose",
            |t, v| {
                let m = t.transpose(v[0])?;
                weighted(t, m)
            },
            1,
        ),
        (
            "masked_fill",
            |t, v| {
                let n = t.value(v[0]).len();
                let mask = (0..n).map(|i| i % 3 == 1).collect();
                let m = t.masked_fill(v[0], mask, -3.0)?;
                weighted(t, m)
            },
            1,
        ),
        (
            "row_where",
            |t, v| {
                let r = t.value(v[0]).rows();
                let m = t.row_where((0..r).map(|i| i % 2 == 0).collect(), v[0], v[1])?;
                weighted(t, m)
            },
            2,
        ),
        (
            "gather",
            |t, v| {
                let r = t.value(v[0]).rows();
                let ids: Vec<usize> = (0..5).map(|i| (i * 3) % r).collect();
                let m = t.gather(v[0], &ids)?;
                weighted(t, m)
            },
            1,
        ),
        (
            "pick",
            |t, v| {
                let (r, c) = (t.value(v[0]).rows(), t.value(v[0]).cols());
                let idx: Vec<usize> = (0..r).map(|i| (i * 2 + 1) % c).collect();
                let m = t.pick(v[0], &idx)?;
                weighted(t, m)
            },
            1,
        ),
        (
            "scatter_cols",
            |t, v| {
                let c = t.value(v[0]).cols();
                let ids: Vec<usize> = (0..c).map(|i| (i * 5) % 3).collect();
                let m = t.scatter_cols(v[0], &ids, 3)?;
                weighted(t, m)
            },
            1,
        ),
        (
            "cross_entropy",
            |t, v| {
                let (r, c) = (t.value(v[0]).rows(), t.value(v[0]).cols());
                let targets: Vec<usize> = (0..r).map(|i| (i + 2) % c).collect();
                let ignore = if r > 1 { Some(targets[1]) } else { None };
                t.cross_entropy(v[0], &targets, ignore)
            },
            1,
        ),
        (
            "cross_entropy_sum",
            |t, v| {
                let (r, c) = (t.value(v[0]).rows(), t.value(v[0]).cols());
                let targets: Vec<usize> = (0..r).map(|i| (i * 3 + 1) % c).collect();
                t.cross_entropy_sum(v[0], &targets, None)
            },
            1,
        ),
    ]
}

/// Every tape primitive on shapes 1×1, 1×5, 4×1 and 3×4, one result per
/// primitive holding the worst error over the shapes.
pub fn primitive_checks(seed: u64) -> Result<Vec<CheckResult>, NumericsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = [(1usize, 1usize), (1, 5), (4, 1), (3, 4)];
    let mut out = Vec::new();
    for (name, f, arity) in same_shape_cases() {
        let mut worst = 0.0f64;
        for &(rows, cols) in &shapes {
            let inputs: Vec<Tensor<f64>> = (0..arity)
                .map(|_| random_tensor(&mut rng, &[rows, cols]))
                .collect();
            worst = worst.max(grad_check(f, &inputs, DEFAULT_EPS)?);
        }
        out.push(CheckResult {
            name: name.to_string(),
            max_rel_error: worst,
        });
    }
    let broadcast: [(&str, Primitive, bool); 3] = [
        (
            "add_row",
            |t, v| {
                let m = t.add_row(v[0], v[1])?;
                weighted(t, m)
            },
            true,
        ),
        (
            "mul_row",
            |t, v| {
                let m = t.mul_row(v[0], v[1])?;
                weighted(t, m)
            },
            true,
        ),
        (
            "mul_col",
            |t, v| {
                let m = t.mul_col(v[0], v[1])?;
                weighted(t, m)
            },
            false,
        ),
    ];
    for (name, f, by_row) in broadcast {
        let mut worst = 0.0f64;
        for &(rows, cols) in &shapes {
            let x = random_tensor(&mut rng, &[rows, cols]);
            let v = random_tensor(&mut rng, &[if by_row { cols } else { rows }]);
            worst = worst.max(grad_check(f, &[x, v], DEFAULT_EPS)?);
        }
        out.push(CheckResult {
            name: name.to_string(),
            max_rel_error: worst,
        });
    }
    // relu is checked away from its kink, where it is differentiable
    let data: Vec<f64> = (0..12)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    let x = Tensor::from_rows(3, 4, data)?;
    let relu: Primitive = |t, v| {
        let m = t.relu(v[0]);
        weighted(t, m)
    };
    out.push(CheckResult {
        name: "relu".to_string(),
        max_rel_error: grad_check(relu, &[x], DEFAULT_EPS)?,
    });
    Ok(out)
}

fn record(pairs: &[(&str, &[(&str, &str)])]) -> KnowledgeRecord {
    let entities = pairs
        .iter()
        .map(|(s, ts)| {
            let mut e = Entity::new(*s);
            for (p, o) in ts.iter() {
                e.push(*p, *o);
            }
            e
        })
        .collect();
    KnowledgeRecord {
        id: "r".to_string(),
        entities,
    }
}

/// Replaces the small initial weights by uniform values in ±0.6 (gains in
/// 1 ± 0.3) so that no gradient is too small to compare.
fn widen(model: &mut Model<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let id = model.params.find(&name).expect("name comes from the set");
        let gain = name.ends_with(".gain");
        for v in model.params.get_mut(id).data_mut() {
            *v = if gain {
                1.0 + rng.random_range(-0.3..0.3)
            } else {
                rng.random_range(-0.6..0.6)
            };
        }
    }
}

fn to_numerics(e: ModelError) -> NumericsError {
    match e {
        ModelError::Numerics(n) => n,
        other => NumericsError::ShapeMismatch {
            op: "batch_loss",
            detail: format!("{other}"),
        },
    }
}

/// Full-loss check over every parameter of a width-4 model on a two-pair
/// batch with a byte vocabulary.
pub fn loss_check(
    kind: EncoderKind,
    copy: bool,
    copy_loss: bool,
    seed: u64,
) -> Result<CheckResult, ModelError> {
    let mut c = ModelConfig::desk(kind, 300);
    c.hidden = 4;
    c.heads = 2;
    c.ffn = 6;
    c.layers = 1;
    c.decoder_layers = 1;
    c.copy = copy;
    c.copy_loss = copy_loss;
    c.activation = Activation::Gelu;
    c.caps.max_target_tokens = 8;
    let mut model = Model::<f64>::new(c, seed)?;
    widen(&mut model, seed.wrapping_add(18));
    let vocab = SubwordVocab::bytes_only();
    let batch = vec![
        Example::new(
            &record(&[("ab", &[("c", "da")])]),
            "ab c",
            &vocab,
            &model.config,
        )?,
        Example::new(
            &record(&[("b", &[("a", "c")]), ("d", &[("e", "b")])]),
            "d e",
            &vocab,
            &model.config,
        )?,
    ];
    let report = grad_check_params(&model.params, DEFAULT_EPS, |tape| {
        batch_loss(tape, &model, &batch).map_err(to_numerics)
    })?;
    let enc = match kind {
        EncoderKind::Graph => "graph",
        EncoderKind::Sequence => "seq",
    };
    let on = |b: bool| if b { "on" } else { "off" };
    Ok(CheckResult {
        name: format!("loss[{enc} copy={} copy-loss={}]", on(copy), on(copy_loss)),
        max_rel_error: report.max_rel_error,
    })
}

/// Both encoders × copy on/off × copy loss on/off.
pub fn loss_checks(seed: u64) -> Result<Vec<CheckResult>, ModelError> {
    let mut out = Vec::new();
    for kind in [EncoderKind::Graph, EncoderKind::Sequence] {
        for (copy, copy_loss) in [(true, true), (true, false), (false, true), (false, false)] {
            out.push(loss_check(kind, copy, copy_loss, seed)?);
        }
    }
    Ok(out)
}

pub fn run_all(seed: u64) -> Result<Vec<CheckResult>, ModelError> {
    let mut out = primitive_checks(seed)?;
    out.extend(loss_checks(seed)?);
    Ok(out)
}
