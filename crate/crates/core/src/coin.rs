//! Bernoulli reference model: Pr(outcome 1 | x) = x[0] with a uniform prior
//! on [0, 1]. Optional extra parameters are drawn from the same prior but
//! never touch the likelihood, which makes nested variants for
//! information-criterion checks.

use rand::prelude::*;

use crate::smc::{Estimate, Model, SmcError};

pub struct CoinModel {
    dimension: usize,
    name: String,
}

impl CoinModel {
    pub fn new() -> Self {
        Self::with_inert_params(0)
    }

    /// A coin with `extra` additional parameters that carry prior mass but no
    /// likelihood influence.
    pub fn with_inert_params(extra: usize) -> Self {
        let name = if extra == 0 { "coin".to_string() } else { format!("coin+{extra}") };
        Self { dimension: 1 + extra, name }
    }
}

impl Default for CoinModel {
    fn default() -> Self {
        Self::new()
    }
}

impl Model<u8, ()> for CoinModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn sample_prior(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        (0..self.dimension).map(|_| rng.gen::<f64>()).collect()
    }

    fn log_likelihood(&self, outcome: &u8, _context: &(), params: &[f64]) -> f64 {
        debug_assert!(*outcome <= 1);
        let x = params[0];
        if !(0.0..=1.0).contains(&x) {
            return f64::NEG_INFINITY;
        }
        if *outcome == 1 {
            x.ln()
        } else {
            (1.0 - x).ln()
        }
    }

    fn estimate(&self, params: &[f64]) -> Result<Estimate, SmcError> {
        Ok(Estimate::Scalar(params[0]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn likelihood_is_the_bias() {
        let coin = CoinModel::new();
        assert_eq!(coin.likelihood(&1, &(), &[0.25]), 0.25);
        assert_eq!(coin.likelihood(&0, &(), &[0.25]), 0.75);
        assert_eq!(coin.log_likelihood(&1, &(), &[0.0]), f64::NEG_INFINITY);
        assert_eq!(coin.log_likelihood(&1, &(), &[1.5]), f64::NEG_INFINITY);
    }

    #[test]
    fn inert_params_change_nothing_but_dimension() {
        let simple = CoinModel::new();
        let padded = CoinModel::with_inert_params(1);
        assert_eq!(simple.dimension(), 1);
        assert_eq!(padded.dimension(), 2);
        assert_eq!(
            simple.log_likelihood(&1, &(), &[0.6]),
            padded.log_likelihood(&1, &(), &[0.6, 0.123])
        );
        let mut rng = substream(0, &[0]);
        let draw = padded.sample_prior(&mut rng);
        assert_eq!(draw.len(), 2);
        assert!(draw.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
