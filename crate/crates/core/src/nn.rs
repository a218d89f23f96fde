//! Small fully connected networks with manual backpropagation and Adam.
//!
//! Parameters live in one flat `f32` buffer, layer by layer, each layer
//! storing its `in × out` weight matrix (row-major) followed by its bias.

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;

/// ReLU multilayer perceptron with a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f32>,
}

/// Activations recorded by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    acts: Vec<Array2<f32>>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f32> {
        self.acts.last().expect("tape holds the input at least")
    }
}

fn n_params(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Uniform ±1/√fan_in initialization for weights and biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|s| *s > 0));
        let mut params = Vec::with_capacity(n_params(sizes));
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f32).sqrt();
            for _ in 0..w[0] * w[1] + w[1] {
                params.push(rng.random_range(-bound..bound));
            }
        }
        Mlp { sizes: sizes.to_vec(), params }
    }

    pub fn from_params(sizes: &[usize], params: Vec<f32>) -> Option<Self> {
        (sizes.len() >= 2 && params.len() == n_params(sizes))
            .then(|| Mlp { sizes: sizes.to_vec(), params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    fn offsets(&self, layer: usize) -> (usize, usize, usize) {
        let start: usize = self.sizes[..layer + 1].windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let (i, o) = (self.sizes[layer], self.sizes[layer + 1]);
        (start, start + i * o, start + i * o + o)
    }

    fn layer(&self, l: usize) -> (ArrayView2<'_, f32>, ArrayView1<'_, f32>) {
        let (a, b, c) = self.offsets(l);
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        (
            ArrayView2::from_shape((i, o), &self.params[a..b]).expect("shape"),
            ArrayView1::from(&self.params[b..c]),
        )
    }

    pub fn forward(&self, x: ArrayView2<'_, f32>) -> Tape {
        let n_layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_owned());
        for l in 0..n_layers {
            let (w, b) = self.layer(l);
            let mut z = acts[l].dot(&w);
            z += &b;
            if l + 1 < n_layers {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        Tape { acts }
    }

    pub fn predict(&self, x: ArrayView2<'_, f32>) -> Array2<f32> {
        self.forward(x).acts.pop().expect("output")
    }

    /// Accumulates parameter gradients of `Σ grad_out ⊙ output` into `grads`
    /// and returns the gradient with respect to the input.
    pub fn backward(&self, tape: &Tape, grad_out: Array2<f32>, grads: &mut [f32]) -> Array2<f32> {
        assert_eq!(grads.len(), self.params.len());
        let n_layers = self.sizes.len() - 1;
        let mut g = grad_out;
        for l in (0..n_layers).rev() {
            if l + 1 < n_layers {
                let a = &tape.acts[l + 1];
                g.zip_mut_with(a, |gv, av| {
                    if *av <= 0.0 {
                        *gv = 0.0;
                    }
                });
            }
            let (a, b, c) = self.offsets(l);
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let input = &tape.acts[l];
            {
                let (gw, gb) = grads[a..c].split_at_mut(b - a);
                let mut gw = ArrayViewMut2::from_shape((i, o), gw).expect("shape");
                gw += &input.t().dot(&g);
                let mut gb = ArrayViewMut1::from(gb);
                gb += &g.sum_axis(Axis(0));
            }
            let (w, _) = self.layer(l);
            g = g.dot(&w.t());
        }
        g
    }

    /// Polyak averaging: self ← (1 − tau)·self + tau·source.
    pub fn soft_update(&mut self, source: &Mlp, tau: f32) {
        for (t, s) in self.params.iter_mut().zip(&source.params) {
            *t += tau * (s - *t);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// Adam optimizer state for one flat parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f32) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new(&[3, 5, 4, 2], &mut rng);
        let x = array![[0.3f32, -0.7, 1.1], [0.9, 0.2, -0.4]];
        let wts = array![[1.0f32, -2.0], [0.5, 0.25]];
        let loss = |n: &Mlp, x: &Array2<f32>| (n.predict(x.view()) * &wts).sum() as f64;
        let tape = net.forward(x.view());
        let mut grads = vec![0.0; net.params().len()];
        let gx = net.backward(&tape, wts.clone(), &mut grads);
        let h = 1e-3f32;
        for k in (0..net.params().len()).step_by(3) {
            let mut plus = net.clone();
            plus.params_mut()[k] += h;
            let mut minus = net.clone();
            minus.params_mut()[k] -= h;
            let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * h as f64);
            assert!((fd - grads[k] as f64).abs() < 2e-2, "param {k}: {fd} vs {}", grads[k]);
        }
        for r in 0..2 {
            for c in 0..3 {
                let mut xp = x.clone();
                xp[[r, c]] += h;
                let mut xm = x.clone();
                xm[[r, c]] -= h;
                let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * h as f64);
                assert!((fd - gx[[r, c]] as f64).abs() < 2e-2);
            }
        }
    }

    #[test]
    fn adam_fits_linear_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Mlp::new(&[2, 16, 1], &mut rng);
        let mut opt = Adam::new(net.params().len(), 1e-2);
        let x = array![[0.0f32, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, -0.5]];
        let y = x.map_axis(Axis(1), |r| 2.0 * r[0] - r[1] + 0.5).insert_axis(Axis(1));
        let mut last = f32::INFINITY;
        for _ in 0..2000 {
            let tape = net.forward(x.view());
            let err = tape.output() - &y;
            last = err.mapv(|e| e * e).mean().unwrap();
            let mut grads = vec![0.0; net.params().len()];
            net.backward(&tape, err * (2.0 / x.nrows() as f32), &mut grads);
            opt.step(net.params_mut(), &grads);
        }
        assert!(last < 1e-3, "{last}");
    }

    #[test]
    fn soft_update_interpolates() {
        let a = Mlp::from_params(&[1, 1], vec![0.0, 0.0]).unwrap();
        let b = Mlp::from_params(&[1, 1], vec![1.0, 2.0]).unwrap();
        let mut t = a.clone();
        t.soft_update(&b, 0.25);
        assert_eq!(t.params(), &[0.25, 0.5]);
        assert!(Mlp::from_params(&[2, 2], vec![0.0]).is_none());
    }
}
