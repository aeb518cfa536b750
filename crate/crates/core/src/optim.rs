//! First-order optimizers operating on flat parameter lists.

use crate::numerics::Tensor;

/// SGD with Nesterov momentum and L2 weight decay (PyTorch update rule):
///
/// ```text
/// g  = grad + wd * p
/// v  = mu * v + g
/// p -= lr * (g + mu * v)
/// ```
#[derive(Clone, Debug)]
pub struct NesterovSgd {
    momentum: f64,
    weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl NesterovSgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        NesterovSgd {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step<'a>(&mut self, lr: f64, params: impl IntoIterator<Item = (&'a mut Tensor, &'a Tensor)>) {
        for (k, (p, g)) in params.into_iter().enumerate() {
            if self.velocity.len() <= k {
                self.velocity.push(vec![0.0; p.len()]);
            }
            let v = &mut self.velocity[k];
            for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                let d = gv + self.weight_decay * *pv;
                *vv = self.momentum * *vv + d;
                *pv -= lr * (d + self.momentum * *vv);
            }
        }
    }
}

/// Step schedule: `lr` until 80% of the epochs, then `0.1·lr`, then `0.01·lr`
/// from 90%.
pub fn step_lr(initial: f64, epoch: usize, epochs: usize) -> f64 {
    let milestone = |frac: f64| ((frac * epochs as f64).floor() as usize).max(1);
    if epoch >= milestone(0.9) {
        initial * 0.01
    } else if epoch >= milestone(0.8) {
        initial * 0.1
    } else {
        initial
    }
}

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
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = (&'a mut Tensor, &'a Tensor)>) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (k, (p, g)) in params.into_iter().enumerate() {
            if self.m.len() <= k {
                self.m.push(vec![0.0; p.len()]);
                self.v.push(vec![0.0; p.len()]);
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                let gv = g.data()[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gv;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gv * gv;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p.data_mut()[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}
