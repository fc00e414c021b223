//! Central finite differences against reverse-mode gradients on a small attention layer.

use cpiri::numerics::{finite_diff_gradcheck, Tensor};

fn main() -> cpiri::Result<()> {
    let t = |r: usize, c: usize, k: f64| {
        Tensor::from_fn(vec![r, c], move |i| ((i as f64 + 1.0) * k).sin())
    };
    let params = vec![
        ("x".to_string(), t(4, 6, 0.7)),
        ("wq".to_string(), t(6, 6, 1.3)),
        ("wk".to_string(), t(6, 6, 0.4)),
        ("gain".to_string(), t(1, 6, 2.1)),
        ("bias".to_string(), t(1, 6, 0.9)),
    ];
    let target = t(4, 6, 0.15);

    let report = finite_diff_gradcheck(
        |g, p| {
            let x = g.layer_norm(p[0], p[3], p[4], 1e-5)?;
            let q = g.matmul(x, p[1])?;
            let k = g.matmul(x, p[2])?;
            let kt = g.transpose(k)?;
            let scores = g.matmul(q, kt)?;
            let scores = g.scale(scores, 1.0 / 6f64.sqrt());
            let attn = g.softmax_rows(scores)?;
            let mixed = g.matmul(attn, x)?;
            let out = g.gelu(mixed);
            let target = g.input(target.clone());
            g.mae(out, target)
        },
        &params,
        1e-5,
        1e-4,
    )?;
    for (name, err) in &report.per_param {
        println!("{name:<5} max relative error {err:.2e}");
    }
    println!(
        "{}",
        if report.passed() {
            "gradients agree"
        } else {
            "gradients disagree"
        }
    );
    Ok(())
}
