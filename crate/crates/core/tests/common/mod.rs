//! Fixtures shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use cpiri::codec::{CodecParams, PatchConfig};
use cpiri::data::NormalizationStats;
use cpiri::numerics::{
    finite_diff_gradcheck, DropoutStream, GradcheckReport, Graph, Mode, Parameterized, Tensor, Var,
};
use cpiri::pipeline::CpiriModel;
use cpiri::spatial::SpatialConfig;
use cpiri::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;

pub fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero so that `|x|` is differentiable at every probe.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    random(shape, seed).map(|v| if v >= 0.0 { v + 0.2 } else { v - 0.2 })
}

/// Reduces any output to a scalar with fixed, non-uniform weights so every entry matters.
fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let w = random(g.value(y).shape(), seed ^ 0xabc);
    let wv = g.input(w);
    let prod = g.mul(y, wv)?;
    Ok(g.sum(prod))
}

type Forward = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;
pub type Case = (String, Vec<(String, Tensor)>, Forward);

fn case(name: &str, params: Vec<Tensor>, f: Forward) -> Case {
    let named = params
        .into_iter()
        .enumerate()
        .map(|(i, t)| (format!("{name}.{i}"), t))
        .collect();
    (name.to_string(), named, f)
}

/// One gradient check per differentiable graph primitive.
pub fn primitive_cases() -> Vec<Case> {
    vec![
        case(
            "matmul",
            vec![random(&[3, 4], 1), random(&[4, 2], 2)],
            Box::new(|g, p| {
                let y = g.matmul(p[0], p[1])?;
                weighted_sum(g, y, 3)
            }),
        ),
        case(
            "transpose",
            vec![random(&[3, 2], 4)],
            Box::new(|g, p| {
                let y = g.transpose(p[0])?;
                weighted_sum(g, y, 5)
            }),
        ),
        case(
            "add",
            vec![random(&[2, 3], 6), random(&[2, 3], 7)],
            Box::new(|g, p| {
                let y = g.add(p[0], p[1])?;
                let y = g.mul(y, y)?;
                weighted_sum(g, y, 8)
            }),
        ),
        case(
            "sub",
            vec![random(&[2, 3], 9), random(&[2, 3], 10)],
            Box::new(|g, p| {
                let y = g.sub(p[0], p[1])?;
                let y = g.mul(y, y)?;
                weighted_sum(g, y, 11)
            }),
        ),
        case(
            "mul",
            vec![random(&[3, 3], 12), random(&[3, 3], 13)],
            Box::new(|g, p| {
                let y = g.mul(p[0], p[1])?;
                weighted_sum(g, y, 14)
            }),
        ),
        case(
            "add_row",
            vec![random(&[4, 3], 15), random(&[1, 3], 16)],
            Box::new(|g, p| {
                let y = g.add_row(p[0], p[1])?;
                let y = g.mul(y, y)?;
                weighted_sum(g, y, 17)
            }),
        ),
        case(
            "scale",
            vec![random(&[2, 2], 18)],
            Box::new(|g, p| {
                let y = g.scale(p[0], -1.7);
                let y = g.mul(y, y)?;
                weighted_sum(g, y, 19)
            }),
        ),
        case(
            "gelu",
            vec![random(&[3, 4], 20).map(|v| 3.0 * v)],
            Box::new(|g, p| {
                let y = g.gelu(p[0]);
                weighted_sum(g, y, 21)
            }),
        ),
        case(
            "abs",
            vec![away_from_zero(&[3, 3], 22)],
            Box::new(|g, p| {
                let y = g.abs(p[0]);
                weighted_sum(g, y, 23)
            }),
        ),
        case(
            "softmax_rows",
            vec![random(&[3, 5], 24).map(|v| 2.0 * v)],
            Box::new(|g, p| {
                let y = g.softmax_rows(p[0])?;
                weighted_sum(g, y, 25)
            }),
        ),
        case(
            "layer_norm",
            vec![
                random(&[3, 6], 26),
                random(&[1, 6], 27),
                random(&[1, 6], 28),
            ],
            Box::new(|g, p| {
                let y = g.layer_norm(p[0], p[1], p[2], 1e-5)?;
                weighted_sum(g, y, 29)
            }),
        ),
        case(
            "slice_cols",
            vec![random(&[3, 6], 30)],
            Box::new(|g, p| {
                let y = g.slice_cols(p[0], 2, 3)?;
                weighted_sum(g, y, 31)
            }),
        ),
        case(
            "concat_cols",
            vec![random(&[2, 3], 32), random(&[2, 1], 33)],
            Box::new(|g, p| {
                let y = g.concat_cols(&[p[0], p[1], p[0]])?;
                weighted_sum(g, y, 34)
            }),
        ),
        case(
            "concat_rows",
            vec![random(&[2, 3], 35), random(&[1, 3], 36)],
            Box::new(|g, p| {
                let y = g.concat_rows(&[p[1], p[0]])?;
                weighted_sum(g, y, 37)
            }),
        ),
        case(
            "select_row",
            vec![random(&[4, 3], 38)],
            Box::new(|g, p| {
                let y = g.select_row(p[0], 2)?;
                let y = g.mul(y, y)?;
                weighted_sum(g, y, 39)
            }),
        ),
        case(
            "mean_rows",
            vec![random(&[5, 3], 40)],
            Box::new(|g, p| {
                let y = g.mean_rows(p[0])?;
                let y = g.mul(y, y)?;
                weighted_sum(g, y, 41)
            }),
        ),
        case(
            "sum",
            vec![random(&[3, 3], 42)],
            Box::new(|g, p| {
                let y = g.mul(p[0], p[0])?;
                Ok(g.sum(y))
            }),
        ),
        case(
            "mean",
            vec![random(&[3, 3], 43)],
            Box::new(|g, p| {
                let y = g.mul(p[0], p[0])?;
                Ok(g.mean(y))
            }),
        ),
        case(
            "mae",
            vec![random(&[3, 4], 44)],
            Box::new(|g, p| {
                let target = g.input(random(&[3, 4], 44).map(|v| v + 0.3));
                g.mae(p[0], target)
            }),
        ),
        case(
            "dropout",
            vec![random(&[4, 5], 45)],
            Box::new(|g, p| {
                let mut stream = DropoutStream::new(46);
                let y = g.dropout(p[0], 0.3, &mut stream)?;
                weighted_sum(g, y, 47)
            }),
        ),
    ]
}

pub fn run_primitive_checks() -> Result<Vec<(String, GradcheckReport)>> {
    primitive_cases()
        .into_iter()
        .map(|(name, params, f)| {
            Ok((
                name,
                finite_diff_gradcheck(f, &params, GRAD_STEP, GRAD_TOL)?,
            ))
        })
        .collect()
}

pub fn tiny_patch() -> PatchConfig {
    PatchConfig {
        patch_len: 4,
        input_len: 16,
        horizon: 4,
        hidden_dim: 8,
        n_layers: 1,
        n_heads: 2,
    }
}

pub fn tiny_model(channels: usize, seed: u64) -> CpiriModel {
    let codec = CodecParams::init(&tiny_patch(), seed).expect("codec");
    let spatial = SpatialConfig {
        dim: 8,
        n_heads: 2,
        ..SpatialConfig::default()
    };
    CpiriModel::new(
        codec,
        &spatial,
        NormalizationStats::identity(channels),
        seed + 1,
    )
    .expect("model")
}

pub fn param_count(m: &dyn Parameterized) -> usize {
    let mut n = 0;
    m.visit_params(&mut |_, t| n += t.len());
    n
}

/// Trainable parameters of `model` checked along the full training path: frozen encode,
/// spatial block with dropout, frozen decode, MAE against a target.
pub fn full_path_check(
    model: &CpiriModel,
    x: &Tensor,
    target: &Tensor,
    mode: Mode,
) -> Result<GradcheckReport> {
    let mut names = Vec::new();
    let mut values = Vec::new();
    model.visit_params(&mut |n, t| {
        if t.requires_grad() {
            names.push(n.to_string());
            values.push((n.to_string(), t.clone()));
        }
    });
    let rows = model.encode(x)?;
    let target = target.transpose()?;
    finite_diff_gradcheck(
        |g, p| {
            let mut m = model.clone();
            m.visit_params_mut(&mut |n, t| {
                if let Some(i) = names.iter().position(|k| k == n) {
                    *t = g.value(p[i]).clone().with_requires_grad(true);
                }
            });
            let b = m.bind(g);
            let h = g.input(rows.clone());
            let pred = m.head_graph(g, &b, h, mode)?;
            let t = g.input(target.clone());
            g.mae(pred, t)
        },
        &values,
        GRAD_STEP,
        GRAD_TOL,
    )
}

pub struct MetricFixture {
    pub name: &'static str,
    pub y: Tensor,
    pub yhat: Tensor,
    pub wape: f64,
    pub mae: f64,
}

fn fixture(
    name: &'static str,
    rows: usize,
    cols: usize,
    y: &[f64],
    yhat: &[f64],
    wape: f64,
    mae: f64,
) -> MetricFixture {
    MetricFixture {
        name,
        y: Tensor::matrix(rows, cols, y.to_vec()).unwrap(),
        yhat: Tensor::matrix(rows, cols, yhat.to_vec()).unwrap(),
        wape,
        mae,
    }
}

/// Worked by hand: WAPE = 100 · Σ|err| / (Σ|y| + 1e-8 · mean|y|), or 1e-8 when y ≡ 0.
pub fn metric_fixtures() -> Vec<MetricFixture> {
    vec![
        fixture(
            "perfect",
            2,
            2,
            &[1.0, 2.0, 3.0, 4.0],
            &[1.0, 2.0, 3.0, 4.0],
            0.0,
            0.0,
        ),
        fixture(
            "one miss",
            1,
            4,
            &[1.0, 2.0, 3.0, 4.0],
            &[2.0, 2.0, 3.0, 4.0],
            100.0 * 1.0 / (10.0 + 1e-8 * 2.5),
            0.25,
        ),
        fixture(
            "zero forecast",
            2,
            2,
            &[2.0, -2.0, 4.0, -4.0],
            &[0.0; 4],
            100.0 * 12.0 / (12.0 + 1e-8 * 3.0),
            3.0,
        ),
        fixture(
            "negative targets",
            1,
            2,
            &[-1.0, -3.0],
            &[1.0, -1.0],
            100.0 * 4.0 / (4.0 + 1e-8 * 2.0),
            2.0,
        ),
        fixture(
            "all-zero targets",
            1,
            3,
            &[0.0; 3],
            &[1.0, 1.0, 1.0],
            100.0 * 3.0 / 1e-8,
            1.0,
        ),
        fixture(
            "single channel",
            3,
            1,
            &[0.5, 1.5, 2.0],
            &[1.0, 1.0, 1.0],
            100.0 * 2.0 / (4.0 + 1e-8 * (4.0 / 3.0)),
            2.0 / 3.0,
        ),
        fixture(
            "mixed errors",
            2,
            3,
            &[10.0, 20.0, 30.0, 40.0, 50.0, 60.0],
            &[11.0, 18.0, 30.0, 40.0, 55.0, 54.0],
            100.0 * 14.0 / (210.0 + 1e-8 * 35.0),
            14.0 / 6.0,
        ),
        fixture(
            "uniform bias",
            2,
            2,
            &[1.0; 4],
            &[2.0; 4],
            100.0 * 4.0 / (4.0 + 1e-8 * 1.0),
            1.0,
        ),
        fixture(
            "fractions",
            1,
            2,
            &[0.25, -0.75],
            &[0.0, 0.25],
            100.0 * 1.25 / (1.0 + 1e-8 * 0.5),
            0.625,
        ),
        fixture(
            "large scale",
            1,
            2,
            &[1000.0, 3000.0],
            &[1100.0, 2900.0],
            100.0 * 200.0 / (4000.0 + 1e-8 * 2000.0),
            100.0,
        ),
        fixture(
            "sign flip",
            1,
            1,
            &[5.0],
            &[-5.0],
            100.0 * 10.0 / (5.0 + 1e-8 * 5.0),
            10.0,
        ),
    ]
}
