//! Small linear models used by the classifier-based metrics: L2-regularized
//! multinomial logistic regression fitted with L-BFGS, one-vs-rest ROC AUC,
//! and univariate least-squares R².

use std::collections::VecDeque;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

/// Minimizes `f` (returning value and writing the gradient) from `x0`.
pub fn lbfgs<F>(mut f: F, x0: Vec<f64>, max_iter: usize, grad_tol: f64) -> Vec<f64>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    const MEMORY: usize = 10;
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(MEMORY);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    for _ in 0..max_iter {
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < grad_tol {
            break;
        }
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot(s, &d);
            for (di, yi) in d.iter_mut().zip(y) {
                *di -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|v| *v *= gamma);
        } else {
            let norm = dot(&g, &g).sqrt().max(1e-12);
            d.iter_mut().for_each(|v| *v /= norm);
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            for (di, si) in d.iter_mut().zip(s) {
                *di += (a - b) * si;
            }
        }
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
            history.clear();
        }
        // backtracking Armijo search
        let mut step = 1.0;
        let mut x_new = vec![0.0; n];
        let mut g_new = vec![0.0; n];
        let mut accepted = false;
        for _ in 0..40 {
            for i in 0..n {
                x_new[i] = x[i] + step * d[i];
            }
            let f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= fx + 1e-4 * step * slope {
                let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
                let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 {
                    if history.len() == MEMORY {
                        history.pop_front();
                    }
                    history.push_back((s, y, 1.0 / sy));
                }
                let decrease = fx - f_new;
                std::mem::swap(&mut x, &mut x_new);
                std::mem::swap(&mut g, &mut g_new);
                fx = f_new;
                accepted = true;
                if decrease.abs() <= 1e-12 * fx.abs().max(1.0) {
                    return x;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    x
}

/// Column standardization fitted on training rows.
#[derive(Debug, Clone)]
struct Standardizer {
    mean: Array1<f64>,
    scale: Array1<f64>,
}

impl Standardizer {
    fn fit(x: ArrayView2<'_, f64>) -> Self {
        let mean = x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()));
        let scale = x
            .std_axis(Axis(0), 0.0)
            .mapv(|s| if s > 1e-12 { s } else { 1.0 });
        Standardizer { mean, scale }
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        (&x - &self.mean) / &self.scale
    }
}

/// Multinomial logistic regression with an L2 penalty `||W||² / (2C)` on the
/// weights (not the intercepts), on standardized features.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    std: Standardizer,
    /// `[classes × features]`.
    weights: Array2<f64>,
    bias: Array1<f64>,
}

impl LogisticRegression {
    /// `y` holds class ids in `0..n_classes`.
    pub fn fit(x: ArrayView2<'_, f64>, y: &[usize], n_classes: usize, c: f64) -> Self {
        let std = Standardizer::fit(x);
        let xs = std.apply(x);
        let (n, d) = xs.dim();
        let k = n_classes.max(1);
        let inv_n = 1.0 / n.max(1) as f64;
        let l2 = 1.0 / (2.0 * c * n.max(1) as f64);
        let objective = |theta: &[f64], grad: &mut [f64]| -> f64 {
            let w = ArrayView2::from_shape((k, d), &theta[..k * d]).expect("shape");
            let b = ArrayView1::from(&theta[k * d..]);
            let mut logits = xs.dot(&w.t());
            logits += &b;
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut loss = 0.0;
            let mut resid = Array2::<f64>::zeros((n, k));
            for (i, row) in logits.rows().into_iter().enumerate() {
                let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
                let z: f64 = row.iter().map(|&v| (v - m).exp()).sum();
                let lse = m + z.ln();
                loss += lse - row[y[i]];
                for j in 0..k {
                    resid[[i, j]] = (row[j] - lse).exp();
                }
                resid[[i, y[i]]] -= 1.0;
            }
            let gw = resid.t().dot(&xs);
            let gb = resid.sum_axis(Axis(0));
            let mut penalty = 0.0;
            for j in 0..k {
                for f in 0..d {
                    let wv = w[[j, f]];
                    penalty += wv * wv;
                    grad[j * d + f] = gw[[j, f]] * inv_n + 2.0 * l2 * wv;
                }
                grad[k * d + j] = gb[j] * inv_n;
            }
            loss * inv_n + l2 * penalty
        };
        let theta = lbfgs(objective, vec![0.0; k * d + k], 500, 1e-6);
        let weights = Array2::from_shape_vec((k, d), theta[..k * d].to_vec()).expect("shape");
        let bias = Array1::from(theta[k * d..].to_vec());
        LogisticRegression { std, weights, bias }
    }

    /// `[rows × classes]` class probabilities.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut logits = self.std.apply(x).dot(&self.weights.t());
        logits += &self.bias;
        for mut row in logits.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            row.mapv_inplace(|v| (v - m).exp());
            let s = row.sum();
            row /= s;
        }
        logits
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Vec<usize> {
        self.predict_proba(x)
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (j, &p)| {
                        if p > best.1 {
                            (j, p)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect()
    }
}

/// Area under the ROC curve via the rank statistic, with tied scores sharing
/// their average rank. `None` if either class is absent.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if positive[idx] {
                rank_sum += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// R² of the least-squares line predicting `y` from `x`; 0 when either is constant.
pub fn r_squared(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.sum() / n, y.sum() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y.iter()) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 1e-12 * n || syy <= 0.0 {
        return 0.0;
    }
    (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn lbfgs_rosenbrock() {
        let x = lbfgs(
            |p, g| {
                let (a, b) = (p[0], p[1]);
                g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
                g[1] = 200.0 * (b - a * a);
                (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
            },
            vec![-1.2, 1.0],
            1000,
            1e-10,
        );
        assert!((x[0] - 1.0).abs() < 1e-4 && (x[1] - 1.0).abs() < 1e-4, "{x:?}");
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        // fit a tiny problem, then compare accuracy on separable data
        let x = array![[0.0, 1.0], [1.0, 0.0], [2.0, 2.0], [3.0, 1.0], [0.5, 0.2], [2.5, 2.5]];
        let y = [0, 0, 1, 1, 0, 1];
        let m = LogisticRegression::fit(x.view(), &y, 2, 1.0);
        assert_eq!(m.predict(x.view()), y.to_vec());
        let p = m.predict_proba(x.view());
        for r in p.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ordinal_feature_is_separable() {
        // one scalar feature taking values 0..8, class = value
        let x = Array2::from_shape_fn((400, 1), |(i, _)| (i % 8) as f64);
        let y: Vec<usize> = (0..400).map(|i| i % 8).collect();
        let m = LogisticRegression::fit(x.view(), &y, 8, 1.0);
        let p = m.predict_proba(x.view());
        for c in 0..8 {
            let scores: Vec<f64> = p.column(c).to_vec();
            let pos: Vec<bool> = y.iter().map(|&v| v == c).collect();
            assert!(roc_auc(&scores, &pos).unwrap() > 0.99, "class {c}");
        }
    }

    #[test]
    fn auc_cases() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]), Some(1.0));
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &[false, false, true, true]), Some(0.0));
        assert_eq!(roc_auc(&[0.5; 4], &[false, true, false, true]), Some(0.5));
        assert_eq!(roc_auc(&[0.5, 0.6], &[true, true]), None);
    }

    #[test]
    fn r2_cases() {
        let x = array![0.0, 1.0, 2.0, 3.0];
        assert!((r_squared(x.view(), (&x * 2.0 + 1.0).view()) - 1.0).abs() < 1e-12);
        assert_eq!(r_squared(array![1.0, 1.0, 1.0].view(), array![0.0, 1.0, 2.0].view()), 0.0);
        let r = r_squared(array![0.0, 1.0, 0.0, 1.0].view(), array![0.0, 0.0, 1.0, 1.0].view());
        assert!(r.abs() < 1e-12);
    }
}
