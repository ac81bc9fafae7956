//! Central finite differences against the analytic softmax-regression
//! gradient.

use dermcascade::classifier::{LogisticRegression, SparseVec};
use rand::Rng;

pub struct Instance {
    pub model: LogisticRegression,
    pub xs: Vec<SparseVec>,
    pub ys: Vec<usize>,
    pub l2: f64,
}

pub fn random_instance(rng: &mut impl Rng) -> Instance {
    let n_classes = rng.random_range(2..=6);
    let n_features = rng.random_range(1..=10);
    let mut model = LogisticRegression::zeros(n_classes, n_features);
    model.weights.iter_mut().for_each(|w| *w = rng.random_range(-1.5..1.5));
    model.bias.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
    let n = rng.random_range(1..=12);
    let mut xs = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x = Vec::new();
        for j in 0..n_features {
            if rng.random_bool(0.6) {
                x.push((j, rng.random_range(-2.0..2.0)));
            }
        }
        xs.push(x);
    }
    let ys = (0..n).map(|_| rng.random_range(0..n_classes)).collect();
    let l2 = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..0.5) };
    Instance { model, xs, ys, l2 }
}

/// Mean cross-entropy plus `l2/2 ‖W‖²`, written out from the definition.
pub fn reference_loss(m: &LogisticRegression, xs: &[SparseVec], ys: &[usize], l2: f64) -> f64 {
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let mut dense = vec![0.0; m.n_features];
        for &(j, v) in x {
            dense[j] += v;
        }
        let z: Vec<f64> = (0..m.n_classes)
            .map(|c| m.bias[c] + (0..m.n_features).map(|j| m.weights[c * m.n_features + j] * dense[j]).sum::<f64>())
            .collect();
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += log_norm - z[y];
    }
    total / xs.len() as f64 + 0.5 * l2 * m.weights.iter().map(|w| w * w).sum::<f64>()
}

/// `‖analytic − numeric‖ / (‖analytic‖ + ‖numeric‖)` over all weights and
/// biases.
pub fn relative_error(inst: &Instance) -> f64 {
    let h = 1e-5;
    let analytic = inst.model.loss_and_gradient(&inst.xs, &inst.ys, inst.l2);
    let loss_at = |m: &LogisticRegression| reference_loss(m, &inst.xs, &inst.ys, inst.l2);
    let mut numeric = Vec::new();
    for i in 0..inst.model.weights.len() {
        let mut plus = inst.model.clone();
        let mut minus = inst.model.clone();
        plus.weights[i] += h;
        minus.weights[i] -= h;
        numeric.push((loss_at(&plus) - loss_at(&minus)) / (2.0 * h));
    }
    for i in 0..inst.model.bias.len() {
        let mut plus = inst.model.clone();
        let mut minus = inst.model.clone();
        plus.bias[i] += h;
        minus.bias[i] -= h;
        numeric.push((loss_at(&plus) - loss_at(&minus)) / (2.0 * h));
    }
    let exact: Vec<f64> = analytic.weights.iter().chain(&analytic.bias).copied().collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = exact.iter().zip(&numeric).map(|(a, b)| a - b).collect();
    norm(&diff) / (norm(&exact) + norm(&numeric)).max(1e-12)
}
