use crate::encoder::EncoderParams;

/// Adam with bias correction and no weight decay.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: EncoderParams,
    v: EncoderParams,
    t: u32,
}

impl Adam {
    pub fn new(like: &EncoderParams) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: EncoderParams::zeros(like.config),
            v: EncoderParams::zeros(like.config),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut EncoderParams, grads: &EncoderParams, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let grads = grads.named_tensors();
        let tensors = params.tensors_mut().into_iter().zip(self.m.tensors_mut()).zip(self.v.tensors_mut());
        for (((p, m), v), (_, g)) in tensors.zip(grads) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

/// Linear warmup to `peak` over `warmup` steps, then linear decay to 0 at
/// `total`. Steps are 1-based.
pub fn learning_rate(step: usize, total: usize, warmup: usize, peak: f64) -> f64 {
    if warmup > 0 && step <= warmup {
        peak * step as f64 / warmup as f64
    } else if total <= warmup {
        peak
    } else {
        peak * (total - step.min(total)) as f64 / (total - warmup) as f64
    }
}
