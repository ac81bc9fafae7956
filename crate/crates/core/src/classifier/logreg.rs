//! Multinomial logistic regression trained with mini-batch SGD.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::tfidf::SparseVec;
use super::Hyperparams;
use crate::error::{Error, Result};
use crate::seed;

/// Weights are stored row-major, one row of `n_features` per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub n_classes: usize,
    pub n_features: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Mean cross-entropy plus `l2 / 2 * ||W||^2` (bias unregularized) and its
/// gradient with respect to weights and bias.
#[derive(Debug, Clone)]
pub struct LossGradient {
    pub loss: f64,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

impl LogisticRegression {
    pub fn zeros(n_classes: usize, n_features: usize) -> Self {
        LogisticRegression {
            n_classes,
            n_features,
            weights: vec![0.0; n_classes * n_features],
            bias: vec![0.0; n_classes],
        }
    }

    pub fn logits(&self, x: &SparseVec) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (c, zc) in z.iter_mut().enumerate() {
            let row = &self.weights[c * self.n_features..(c + 1) * self.n_features];
            *zc += x.iter().map(|&(f, v)| row[f] * v).sum::<f64>();
        }
        z
    }

    pub fn predict_proba(&self, x: &SparseVec) -> Vec<f64> {
        let mut z = self.logits(x);
        softmax_in_place(&mut z);
        z
    }

    /// `p - onehot(y)` together with the example's cross-entropy.
    fn residual(&self, x: &SparseVec, y: usize) -> (Vec<f64>, f64) {
        let z = self.logits(x);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = lse - z[y];
        let mut g: Vec<f64> = z.iter().map(|v| (v - lse).exp()).collect();
        g[y] -= 1.0;
        (g, loss)
    }

    pub fn loss_and_gradient(&self, xs: &[SparseVec], ys: &[usize], l2: f64) -> LossGradient {
        assert_eq!(xs.len(), ys.len());
        let n = xs.len().max(1) as f64;
        let mut out = LossGradient {
            loss: 0.0,
            weights: self.weights.iter().map(|w| l2 * w).collect(),
            bias: vec![0.0; self.n_classes],
        };
        out.loss = 0.5 * l2 * self.weights.iter().map(|w| w * w).sum::<f64>();
        for (x, &y) in xs.iter().zip(ys) {
            let (g, loss) = self.residual(x, y);
            out.loss += loss / n;
            for (c, gc) in g.iter().enumerate() {
                out.bias[c] += gc / n;
                let row = &mut out.weights[c * self.n_features..(c + 1) * self.n_features];
                for &(f, v) in x {
                    row[f] += gc * v / n;
                }
            }
        }
        out
    }

    pub fn loss(&self, xs: &[SparseVec], ys: &[usize], l2: f64) -> f64 {
        let n = xs.len().max(1) as f64;
        let data: f64 = xs.iter().zip(ys).map(|(x, &y)| self.residual(x, y).1).sum();
        data / n + 0.5 * l2 * self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// One SGD step on a batch. Residuals are all computed at the current
    /// weights before any update, so this equals a step along
    /// [`loss_and_gradient`](Self::loss_and_gradient) for the batch.
    fn step(&mut self, xs: &[&SparseVec], ys: &[usize], lr: f64, l2: f64) {
        let n = xs.len() as f64;
        let residuals: Vec<Vec<f64>> = xs.iter().zip(ys).map(|(x, &y)| self.residual(x, y).0).collect();
        if l2 > 0.0 {
            let decay = 1.0 - lr * l2;
            self.weights.iter_mut().for_each(|w| *w *= decay);
        }
        for (x, g) in xs.iter().zip(&residuals) {
            for (c, gc) in g.iter().enumerate() {
                let scale = lr * gc / n;
                self.bias[c] -= scale;
                let row = &mut self.weights[c * self.n_features..(c + 1) * self.n_features];
                for &(f, v) in x.iter() {
                    row[f] -= scale * v;
                }
            }
        }
    }

    /// Train from zero weights. Batches are drawn from a per-epoch shuffle
    /// seeded from `hp.seed`; identical inputs give bitwise-identical weights.
    pub fn fit(
        xs: &[SparseVec],
        ys: &[usize],
        n_classes: usize,
        n_features: usize,
        hp: &Hyperparams,
        mut on_epoch: impl FnMut(usize, &LogisticRegression),
    ) -> Result<Self> {
        hp.validate()?;
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::validation("training requires equal, nonzero numbers of inputs and labels"));
        }
        if let Some(&y) = ys.iter().find(|&&y| y >= n_classes) {
            return Err(Error::validation(format!("label index {y} out of range for {n_classes} classes")));
        }
        let mut model = LogisticRegression::zeros(n_classes, n_features);
        let mut rng = seed::named_rng(hp.seed, "logreg/shuffle");
        let mut order: Vec<usize> = (0..xs.len()).collect();
        for epoch in 0..hp.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(hp.batch_size) {
                let bx: Vec<&SparseVec> = batch.iter().map(|&i| &xs[i]).collect();
                let by: Vec<usize> = batch.iter().map(|&i| ys[i]).collect();
                model.step(&bx, &by, hp.learning_rate, hp.l2);
            }
            on_epoch(epoch, &model);
        }
        Ok(model)
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.weights.len() != self.n_classes * self.n_features || self.bias.len() != self.n_classes {
            return Err(Error::validation("model parameter shapes do not match class and feature counts"));
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(Error::validation("model parameters contain non-finite values"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_problem(seed: u64, n: usize, classes: usize, features: usize) -> (Vec<SparseVec>, Vec<usize>) {
        let mut rng = crate::seed::rng(seed);
        let xs = (0..n)
            .map(|_| {
                let mut x = SparseVec::new();
                for f in 0..features {
                    if rng.random_bool(0.5) {
                        x.push((f, rng.random_range(-1.0..1.0)));
                    }
                }
                x
            })
            .collect();
        let ys = (0..n).map(|_| rng.random_range(0..classes)).collect();
        (xs, ys)
    }

    #[test]
    fn zero_model_is_uniform() {
        let model = LogisticRegression::zeros(4, 3);
        let p = model.predict_proba(&vec![(0, 1.0)]);
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn softmax_handles_large_logits() {
        let mut z = vec![1000.0, 1000.0, -1000.0];
        softmax_in_place(&mut z);
        assert!((z[0] - 0.5).abs() < 1e-12 && z[2] == 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (xs, ys) = random_problem(3, 12, 3, 5);
        let mut rng = crate::seed::rng(4);
        let mut model = LogisticRegression::zeros(3, 5);
        model.weights.iter_mut().for_each(|w| *w = rng.random_range(-0.5..0.5));
        model.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        let l2 = 0.1;
        let grad = model.loss_and_gradient(&xs, &ys, l2);
        assert!((grad.loss - model.loss(&xs, &ys, l2)).abs() < 1e-12);
        let h = 1e-6;
        for i in 0..model.weights.len() {
            let mut plus = model.clone();
            plus.weights[i] += h;
            let mut minus = model.clone();
            minus.weights[i] -= h;
            let fd = (plus.loss(&xs, &ys, l2) - minus.loss(&xs, &ys, l2)) / (2.0 * h);
            assert!((fd - grad.weights[i]).abs() < 1e-7, "w{i}: {fd} vs {}", grad.weights[i]);
        }
    }

    #[test]
    fn full_batch_loss_does_not_increase() {
        let (xs, ys) = random_problem(9, 40, 4, 6);
        let hp = Hyperparams {
            batch_size: 40,
            learning_rate: 0.5,
            epochs: 30,
            ..Hyperparams::default()
        };
        let mut losses = Vec::new();
        LogisticRegression::fit(&xs, &ys, 4, 6, &hp, |_, m| losses.push(m.loss(&xs, &ys, 0.0))).unwrap();
        let start = LogisticRegression::zeros(4, 6).loss(&xs, &ys, 0.0);
        let mut prev = start;
        for loss in losses {
            assert!(loss <= prev + 1e-12, "{loss} > {prev}");
            prev = loss;
        }
        assert!(prev < start);
    }

    #[test]
    fn training_is_deterministic() {
        let (xs, ys) = random_problem(5, 50, 3, 8);
        let hp = Hyperparams {
            batch_size: 7,
            learning_rate: 0.3,
            ..Hyperparams::default()
        };
        let a = LogisticRegression::fit(&xs, &ys, 3, 8, &hp, |_, _| ()).unwrap();
        let b = LogisticRegression::fit(&xs, &ys, 3, 8, &hp, |_, _| ()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_inputs_rejected() {
        let hp = Hyperparams::default();
        assert!(LogisticRegression::fit(&[], &[], 2, 2, &hp, |_, _| ()).is_err());
        assert!(LogisticRegression::fit(&[vec![]], &[2], 2, 2, &hp, |_, _| ()).is_err());
    }
}
