use crate::error::{Error, Result};
use crate::imaging::{Image, Mask, RealImage};
use crate::neural::Tensor;
use crate::pairgen::TrainingPair;

/// Weighted masked squared error `mean_mask (weight * pred - target)^2`.
///
/// The C2C objective is this loss with `weight = S'_label` and
/// `target = S_J * I'_label`; plain masked MSE uses `weight = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTarget {
    pub weight: RealImage,
    pub target: RealImage,
    pub mask: Mask,
}

impl LossTarget {
    pub fn new(weight: RealImage, target: RealImage, mask: Mask) -> Result<Self> {
        weight.ensure_same_dims(&target)?;
        if mask.dims() != weight.dims() {
            return Err(Error::dims(weight.dims(), mask.dims()));
        }
        Ok(Self {
            weight,
            target,
            mask,
        })
    }

    /// Unit weight against `label`.
    pub fn mse(label: RealImage, mask: Mask) -> Result<Self> {
        let ones = Image::filled(label.height(), label.width(), 1.0)?;
        Self::new(ones, label, mask)
    }

    /// C2C target in the pair's original units.
    pub fn from_pair(pair: &TrainingPair) -> Result<Self> {
        let target = pair.sens_input.zip_map(&pair.label, |s, l| s * l)?;
        Self::new(pair.sens_label.clone(), target, pair.mask.clone())
    }

    pub fn dims(&self) -> (usize, usize) {
        self.weight.dims()
    }

    /// Loss and gradient with respect to `prediction`; zero gradient off-mask.
    pub fn evaluate(&self, prediction: &[f64]) -> Result<(f64, Vec<f64>)> {
        if prediction.len() != self.weight.len() {
            return Err(Error::dims(self.weight.len(), prediction.len()));
        }
        let count = self.mask.count() as f64;
        let (w, t, m) = (self.weight.data(), self.target.data(), self.mask.data());
        let mut loss = 0.0;
        let mut grad = vec![0.0; prediction.len()];
        for v in 0..prediction.len() {
            if m[v] {
                let r = w[v] * prediction[v] - t[v];
                loss += r * r;
                grad[v] = 2.0 * w[v] * r / count;
            }
        }
        Ok((loss / count, grad))
    }
}

/// `mean_mask (S'_label * pred - S_J * I'_label)^2` and its gradient.
pub fn c2c_loss(prediction: &RealImage, pair: &TrainingPair) -> Result<(f64, RealImage)> {
    prediction.ensure_same_dims(&pair.label)?;
    let (loss, grad) = LossTarget::from_pair(pair)?.evaluate(prediction.data())?;
    Ok((
        loss,
        Image::from_vec(prediction.height(), prediction.width(), grad)?,
    ))
}

/// `mean_mask (pred - label)^2` and its gradient.
pub fn masked_mse(
    prediction: &RealImage,
    label: &RealImage,
    mask: &Mask,
) -> Result<(f64, RealImage)> {
    prediction.ensure_same_dims(label)?;
    let (loss, grad) = LossTarget::mse(label.clone(), mask.clone())?.evaluate(prediction.data())?;
    Ok((
        loss,
        Image::from_vec(prediction.height(), prediction.width(), grad)?,
    ))
}

/// Mean of the per-sample losses over a single-channel batch.
pub fn batch_loss(prediction: &Tensor, targets: &[LossTarget]) -> Result<(f64, Tensor)> {
    let (n, c, h, w) = prediction.shape();
    if c != 1 || n != targets.len() {
        return Err(Error::dims((targets.len(), 1), (n, c)));
    }
    let mut grad = Tensor::zeros(n, 1, h, w)?;
    let mut total = 0.0;
    for (s, t) in targets.iter().enumerate() {
        if t.dims() != (h, w) {
            return Err(Error::dims((h, w), t.dims()));
        }
        let (l, g) = t.evaluate(prediction.sample(s))?;
        total += l;
        for (d, gv) in grad.sample_mut(s).iter_mut().zip(g) {
            *d = gv / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}
