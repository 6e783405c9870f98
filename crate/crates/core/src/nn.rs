//! Small dense building blocks with hand-written backward passes.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub fn elu_grad(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        x.exp()
    }
}

/// Row-wise softmax in place.
pub fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

/// Glorot-uniform `rows × cols` matrix.
pub fn xavier<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

/// `tanh` hidden layer followed by a linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct TwoLayer {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

pub struct TwoLayerPass {
    pub hidden: Array2<f64>,
    pub out: Array2<f64>,
}

#[derive(Clone, Debug)]
pub struct TwoLayerGrad {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl TwoLayerGrad {
    pub fn scale(&mut self, s: f64) {
        self.w1 *= s;
        self.b1 *= s;
        self.w2 *= s;
        self.b2 *= s;
    }

    pub fn add(&mut self, other: &TwoLayerGrad) {
        self.w1 += &other.w1;
        self.b1 += &other.b1;
        self.w2 += &other.w2;
        self.b2 += &other.b2;
    }

    pub fn slices(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice().unwrap(),
            self.b1.as_slice().unwrap(),
            self.w2.as_slice().unwrap(),
            self.b2.as_slice().unwrap(),
        ]
    }
}

impl TwoLayer {
    pub fn new<R: Rng>(rng: &mut R, input: usize, hidden: usize, output: usize) -> Self {
        Self {
            w1: xavier(rng, hidden, input),
            b1: Array1::zeros(hidden),
            w2: xavier(rng, output, hidden),
            b2: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn forward(&self, x: &Array2<f64>) -> TwoLayerPass {
        let mut hidden = x.dot(&self.w1.t()) + &self.b1;
        hidden.mapv_inplace(f64::tanh);
        let out = hidden.dot(&self.w2.t()) + &self.b2;
        TwoLayerPass { hidden, out }
    }

    /// Returns parameter gradients and the gradient with respect to `x`.
    pub fn backward(
        &self,
        x: &Array2<f64>,
        pass: &TwoLayerPass,
        d_out: &Array2<f64>,
    ) -> (TwoLayerGrad, Array2<f64>) {
        let w2 = d_out.t().dot(&pass.hidden);
        let b2 = d_out.sum_axis(Axis(0));
        let mut d_hidden = d_out.dot(&self.w2);
        ndarray::Zip::from(&mut d_hidden)
            .and(&pass.hidden)
            .for_each(|d, &h| *d *= 1.0 - h * h);
        let w1 = d_hidden.t().dot(x);
        let b1 = d_hidden.sum_axis(Axis(0));
        let d_x = d_hidden.dot(&self.w1);
        (TwoLayerGrad { w1, b1, w2, b2 }, d_x)
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.w1.as_slice_mut().unwrap(),
            self.b1.as_slice_mut().unwrap(),
            self.w2.as_slice_mut().unwrap(),
            self.b2.as_slice_mut().unwrap(),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).all(|v| v.is_finite())
    }
}

/// Adam over a fixed list of parameter slices.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (slot, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Area under the ROC curve via the rank-sum statistic; ties count one half.
/// Returns `None` unless both classes are present.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
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
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Some(u / (pos * neg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stable_scalar_functions() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert_eq!(leaky_relu(-1.0, 0.2), -0.2);
        assert_eq!(elu(0.0), 0.0);
    }

    #[test]
    fn auc_matches_pair_counting() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.4];
        let labels = [false, false, true, true, true];
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        wins += 1.0;
                    } else if scores[i] == scores[j] {
                        wins += 0.5;
                    }
                }
            }
        }
        assert!((auc(&scores, &labels).unwrap() - wins / pairs).abs() < 1e-15);
        assert!(auc(&[0.1], &[true]).is_none());
    }

    #[test]
    fn two_layer_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = TwoLayer::new(&mut rng, 3, 4, 2);
        let x = xavier(&mut rng, 5, 3);
        let target = xavier(&mut rng, 5, 2);
        let loss = |n: &TwoLayer| -> f64 {
            let p = n.forward(&x);
            (&p.out - &target).mapv(|v| v * v).sum() * 0.5
        };
        let pass = net.forward(&x);
        let d_out = &pass.out - &target;
        let (grad, _) = net.backward(&x, &pass, &d_out);
        let h = 1e-6;
        for slot in 0..4 {
            let n_entries = net.clone().slices_mut()[slot].len();
            for i in 0..n_entries {
                let mut plus = net.clone();
                plus.slices_mut()[slot][i] += h;
                let mut minus = net.clone();
                minus.slices_mut()[slot][i] -= h;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let analytic = grad.slices()[slot][i];
                assert!((numeric - analytic).abs() < 1e-7, "slot {slot} #{i}");
            }
        }
    }
}
