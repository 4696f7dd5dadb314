use serde::Serialize;
use thiserror::Error;

use crate::variants::{PlanError, VariantSpec};

/// Default number of synthetic transactions carried by each logical block.
pub const DEFAULT_TXS_PER_BLOCK: usize = 8;

pub const DEFAULT_DIFFICULTY: u32 = 8;

pub const DEFAULT_VERIFY_EVERY: u64 = 100;

/// Parameters of one simulation run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimParams {
    pub variant: VariantSpec,
    /// Blockheight threshold K.
    pub threshold: u64,
    pub difficulty: u32,
    /// Extend retention transitively along AOG links.
    pub cascading_retention: bool,
    pub txs_per_block: usize,
    /// Run `verify_chain` every this many events; 0 disables periodic checks.
    pub verify_every: u64,
    /// Echo of the workload seed, carried into result rows.
    pub seed: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamsError {
    #[error(transparent)]
    Variant(#[from] PlanError),
    #[error("difficulty {0} is outside the supported range 0..=32")]
    Difficulty(u32),
}

impl SimParams {
    pub fn new(variant: VariantSpec, threshold: u64) -> Self {
        SimParams {
            variant,
            threshold,
            difficulty: DEFAULT_DIFFICULTY,
            cascading_retention: false,
            txs_per_block: DEFAULT_TXS_PER_BLOCK,
            verify_every: DEFAULT_VERIFY_EVERY,
            seed: 0,
        }
    }

    pub fn with_difficulty(mut self, bits: u32) -> Self {
        self.difficulty = bits;
        self
    }

    pub fn with_verify_every(mut self, every: u64) -> Self {
        self.verify_every = every;
        self
    }

    pub fn with_cascading_retention(mut self, on: bool) -> Self {
        self.cascading_retention = on;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        self.variant.validate()?;
        if self.difficulty > 32 {
            return Err(ParamsError::Difficulty(self.difficulty));
        }
        Ok(())
    }
}

impl Default for SimParams {
    fn default() -> Self {
        Self::new(VariantSpec::plain(), 50)
    }
}
