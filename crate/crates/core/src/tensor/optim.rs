//! Parameter update rules.

use super::Tensor;

/// Adam with bias-corrected moments.
pub struct Adam {
    params: Vec<Tensor>,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(params: Vec<Tensor>, lr: f32, beta1: f32, beta2: f32) -> Self {
        let m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Self {
            params,
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m,
            v,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(Tensor::zero_grad);
    }

    pub fn step(&mut self) {
        self.step += 1;
        let bc1 = 1.0 - (self.beta1 as f64).powi(self.step as i32);
        let bc2 = 1.0 - (self.beta2 as f64).powi(self.step as i32);
        let step_size = (self.lr as f64 / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        for ((p, m), v) in self.params.iter().zip(&mut self.m).zip(&mut self.v) {
            if !p.has_grad() {
                continue;
            }
            let g = p.grad();
            p.update_data(|data| {
                for i in 0..data.len() {
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                    data[i] -= step_size * m[i] / (v[i].sqrt() / bc2_sqrt + self.eps);
                }
            });
        }
    }

    /// First and second moment buffers, in parameter order.
    pub fn moments(&self) -> (&[Vec<f32>], &[Vec<f32>]) {
        (&self.m, &self.v)
    }

    pub fn restore(&mut self, step: u64, m: Vec<Vec<f32>>, v: Vec<Vec<f32>>) {
        assert_eq!(m.len(), self.params.len());
        assert_eq!(v.len(), self.params.len());
        self.step = step;
        self.m = m;
        self.v = v;
    }
}

/// SGD with momentum and L2 weight decay (decay added to the gradient).
pub struct Sgd {
    params: Vec<Tensor>,
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    buf: Vec<Option<Vec<f32>>>,
}

impl Sgd {
    pub fn new(params: Vec<Tensor>, lr: f32, momentum: f32, weight_decay: f32) -> Self {
        let buf = vec![None; params.len()];
        Self {
            params,
            lr,
            momentum,
            weight_decay,
            buf,
        }
    }

    pub fn zero_grad(&self) {
        self.params.iter().for_each(Tensor::zero_grad);
    }

    pub fn step(&mut self) {
        for (p, buf) in self.params.iter().zip(&mut self.buf) {
            if !p.has_grad() {
                continue;
            }
            let mut g = p.grad();
            {
                let data = p.data();
                for (g, w) in g.iter_mut().zip(data.iter()) {
                    *g += self.weight_decay * w;
                }
            }
            let velocity = match buf {
                Some(b) => {
                    for (b, g) in b.iter_mut().zip(&g) {
                        *b = self.momentum * *b + g;
                    }
                    b
                }
                None => buf.insert(g),
            };
            let lr = self.lr;
            p.update_data(|data| {
                for (w, v) in data.iter_mut().zip(velocity.iter()) {
                    *w -= lr * v;
                }
            });
        }
    }
}

/// `base * (1 - iter / max_iter)^power`.
pub fn poly_lr(base: f32, iter: usize, max_iter: usize, power: f32) -> f32 {
    if max_iter == 0 {
        return base;
    }
    let frac = 1.0 - (iter as f64 / max_iter as f64).min(1.0);
    (base as f64 * frac.powf(power as f64)) as f32
}
