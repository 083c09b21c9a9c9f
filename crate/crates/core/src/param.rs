//! Trainable parameters with runtime (equalized) weight scaling.
//!
//! Raw weights are drawn at unit scale and the He constant `sqrt(2 / fan_in)`
//! is applied on every forward pass. Gradients and optimizer moments are kept
//! with respect to the raw tensor.

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// `sqrt(2 / fan_in)`.
pub fn he_scale(fan_in: usize) -> Result<f64> {
    if fan_in == 0 {
        return Err(Error::Contract("he_scale requires fan_in >= 1".into()));
    }
    Ok((2.0 / fan_in as f64).sqrt())
}

/// I.i.d. standard normal tensor from the stream keyed by `seed`.
pub fn init_normal(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng::stream(seed, &[rng::STREAM_PARAM]);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng::standard_normal(&mut r)).collect();
    Tensor::new(shape.to_vec(), data).expect("init shape")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scaling {
    /// Used as stored.
    Plain,
    /// `effective = raw * sqrt(2 / fan_in)`.
    Equalized,
    /// `effective = raw / sqrt(2 / fan_in)`: the literal `w / z` reading,
    /// kept behind `scaling.literal_division`.
    EqualizedDivide,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub raw: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
    /// Adam updates applied since the moments were last zeroed.
    pub step: u64,
    pub fan_in: usize,
    pub scaling: Scaling,
}

impl Param {
    pub fn new(raw: Tensor, fan_in: usize, scaling: Scaling) -> Self {
        let zeros = Tensor::zeros(raw.shape());
        Self {
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            step: 0,
            raw,
            fan_in: fan_in.max(1),
            scaling,
        }
    }

    /// `d effective / d raw`.
    pub fn multiplier(&self) -> f64 {
        let he = (2.0 / self.fan_in as f64).sqrt();
        match self.scaling {
            Scaling::Plain => 1.0,
            Scaling::Equalized => he,
            Scaling::EqualizedDivide => 1.0 / he,
        }
    }

    pub fn effective(&self) -> Tensor {
        match self.scaling {
            Scaling::Plain => self.raw.clone(),
            _ => {
                let k = self.multiplier();
                self.raw.map(|x| x * k)
            }
        }
    }

    /// Adds a gradient taken with respect to the effective weight.
    pub fn accumulate_effective_grad(&mut self, g: &Tensor) {
        let k = self.multiplier();
        self.grad.axpy(k, g);
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn reset_moments(&mut self) {
        self.m.fill(0.0);
        self.v.fill(0.0);
        self.step = 0;
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn he_scale_values() {
        assert_eq!(he_scale(2).unwrap(), 1.0);
        assert_eq!(he_scale(512).unwrap(), 0.0625);
        assert_eq!(he_scale(8).unwrap(), 0.5);
        assert!(matches!(he_scale(0), Err(Error::Contract(_))));
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = init_normal(&[4, 5], 3);
        assert!(a.bits_eq(&init_normal(&[4, 5], 3)));
        assert!(!a.bits_eq(&init_normal(&[4, 5], 4)));
    }

    #[test]
    fn init_moments_match_standard_normal() {
        let t = init_normal(&[100_000], 11);
        let n = t.len() as f64;
        let mean = t.sum() / n;
        let std = (t.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((0.98..=1.02).contains(&std), "std {std}");
    }

    #[test]
    fn equalized_effective_std_tracks_he_constant() {
        for (fan_in, seed) in [(16usize, 1u64), (64, 2), (256, 3)] {
            let p = Param::new(init_normal(&[20_000], seed), fan_in, Scaling::Equalized);
            let eff = p.effective();
            let n = eff.len() as f64;
            let mean = eff.sum() / n;
            let std = (eff.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            let want = he_scale(fan_in).unwrap();
            assert!(
                (std / want - 1.0).abs() < 0.05,
                "fan_in {fan_in}: {std} vs {want}"
            );
        }
    }

    #[test]
    fn raw_gradient_is_chain_ruled() {
        let mut p = Param::new(Tensor::full(&[2], 1.0), 8, Scaling::Equalized);
        p.accumulate_effective_grad(&Tensor::full(&[2], 2.0));
        assert_eq!(p.grad.data(), &[1.0, 1.0]);
        let mut q = Param::new(Tensor::full(&[1], 1.0), 8, Scaling::EqualizedDivide);
        q.accumulate_effective_grad(&Tensor::full(&[1], 1.0));
        assert_eq!(q.grad.data(), &[2.0]);
        assert_eq!(q.effective().data(), &[2.0]);
    }
}
