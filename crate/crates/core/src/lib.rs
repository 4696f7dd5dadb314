//! Simulator and library for blockchains of finite-lifetime blocks.
//!
//! Blocks are linked by an expiration-ordering graph (EOG), so a parent
//! always outlives its children, plus arrival-ordering (AOG) edges that add
//! height while the EOG parent is shallow. AOG referents are retained past
//! their expiration until the referrer expires; that retention is the
//! storage cost the p- and s-variants trade against extra mined units.
//!
//! Modules:
//! - [`chain`]: the block DAG, insertion, expiration and deletion
//! - [`variants`]: block expansion plans
//! - [`crypto`]: headers, merkle roots, proof of work, chain verification
//! - [`metrics`]: retention cost, height averages, nonce counts
//! - [`workload`]: lifetime traces
//! - [`sim`]: event loop and sweeps

pub mod chain;
pub mod crypto;
pub mod metrics;
pub mod params;
pub mod sim;
pub mod variants;
pub mod workload;

pub use chain::{BlockGroup, BlockId, BlockUnit, ChainError, ChainState, InsertReport};
pub use crypto::{verify_chain, BlockHash, BlockHeader, FailureKind, VerificationReport};
pub use metrics::{RetentionLedger, RunResult};
pub use params::SimParams;
pub use sim::{run, sweep, Runner, SimError, SweepTable};
pub use variants::{plan_block, BlockPlan, UnitKind, VariantKind, VariantSpec};
pub use workload::{sample_trace, ArrivalModel, LifetimeTrace, MixtureSpec, TraceRecord};
