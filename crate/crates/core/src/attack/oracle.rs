use super::AttackError;
use crate::nn::{Network, NetworkRole};
use crate::tensor::{RngState, Tensor};
use crate::train::sample_generator;

/// Query access to a target generator: records in, nothing else out.
pub trait Sampler {
    fn record_shape(&self) -> &[usize];
    fn sample(&mut self, count: usize) -> Result<Tensor, AttackError>;
    /// Records drawn so far.
    fn queries(&self) -> u64;
}

/// A generator behind a [`Sampler`]. The latent noise comes from the
/// oracle's own stream, which the attacker neither sees nor controls.
pub struct GeneratorSampler {
    net: Network,
    shape: Vec<usize>,
    rng: RngState,
    queries: u64,
}

impl GeneratorSampler {
    pub fn new(generator: Network, seed: u64) -> Result<Self, AttackError> {
        if generator.spec.role != NetworkRole::Generator {
            return Err(AttackError::UnsupportedTarget(format!("expected a generator, got a {:?}", generator.spec.role)));
        }
        let shape = generator.spec.output_shape()?;
        Ok(Self { net: generator, shape, rng: RngState::new(seed), queries: 0 })
    }
}

impl Sampler for GeneratorSampler {
    fn record_shape(&self) -> &[usize] {
        &self.shape
    }

    fn sample(&mut self, count: usize) -> Result<Tensor, AttackError> {
        let t = sample_generator(&self.net, count, &mut self.rng).map_err(|e| AttackError::Query(e.to_string()))?;
        self.queries += count as u64;
        Ok(t)
    }

    fn queries(&self) -> u64 {
        self.queries
    }
}
