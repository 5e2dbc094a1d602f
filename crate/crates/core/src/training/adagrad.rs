use crate::model::ParamStore;
use crate::tensor::Scalar;

pub const ADAGRAD_EPSILON: f64 = 1e-8;

/// AdaGrad with a per-epoch multiplicative learning-rate decay.
#[derive(Debug, Clone)]
pub struct Adagrad<T> {
    accumulators: ParamStore<T>,
    lr: f64,
    lr_decay: f64,
}

impl<T: Scalar> Adagrad<T> {
    pub fn new(params: &ParamStore<T>, lr: f64, lr_decay: f64) -> Self {
        Self {
            accumulators: params.zeros_like(),
            lr,
            lr_decay,
        }
    }

    /// Learning rate for a 0-based epoch: `lr * decay^epoch`.
    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi(epoch as i32)
    }

    pub fn accumulators(&self) -> &ParamStore<T> {
        &self.accumulators
    }

    /// `acc += g^2; p -= lr_e * g / (sqrt(acc) + eps)`. A non-finite
    /// gradient leaves everything untouched and returns its parameter name.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &ParamStore<T>, epoch: usize) -> Result<(), String> {
        if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
            return Err(name.to_owned());
        }
        let lr = T::from_f64_lossy(self.lr_for_epoch(epoch));
        let eps = T::from_f64_lossy(ADAGRAD_EPSILON);
        for ((name, p), (_, acc)) in params.iter_mut().zip(self.accumulators.iter_mut()) {
            let Some(g) = grads.get(name) else { continue };
            for ((pv, av), &gv) in p.data_mut().iter_mut().zip(acc.data_mut()).zip(g.data()) {
                if gv == T::zero() {
                    continue;
                }
                *av += gv * gv;
                *pv -= lr * gv / (av.sqrt() + eps);
            }
        }
        Ok(())
    }
}
