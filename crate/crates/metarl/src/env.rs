use crate::{MetaRlError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    /// Sensing objective behind the reward, when the environment has one.
    pub crlb: Option<f64>,
    pub rate_violations: Option<usize>,
}

pub trait Environment {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Steps per episode.
    fn horizon(&self) -> usize;
    fn reset(&mut self) -> Result<Vec<f64>>;
    fn step(&mut self, action: &[f64]) -> Result<Step>;
}

/// One-step bandit with reward `−(a − target)²` and a constant state.
#[derive(Debug, Clone)]
pub struct ToyEnv {
    pub target: f64,
}

impl ToyEnv {
    pub fn new(target: f64) -> Self {
        Self { target }
    }
}

impl Default for ToyEnv {
    fn default() -> Self {
        Self::new(0.5)
    }
}

impl Environment for ToyEnv {
    fn state_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn horizon(&self) -> usize {
        1
    }
    fn reset(&mut self) -> Result<Vec<f64>> {
        Ok(vec![1.0])
    }
    fn step(&mut self, action: &[f64]) -> Result<Step> {
        let a = *action.first().ok_or_else(|| MetaRlError::Config("empty action".into()))?;
        Ok(Step {
            next_state: vec![1.0],
            reward: -(a - self.target).powi(2),
            terminal: true,
            crlb: None,
            rate_violations: None,
        })
    }
}
