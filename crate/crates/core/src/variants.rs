//! Block expansion policy for plain, p- and s-variant chains.
//!
//! A logical block inserted under a shallow EOG parent (height ≤ K) is
//! expanded into `mu` mined units: `mu` equal-weight sub-blocks for the
//! s-variant, or one regular block topped by `mu - 1` lightweight blocks for
//! the p-variant. Under a deep parent it is always a single regular unit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default LWB weight relative to a regular block.
pub const DEFAULT_LWB_WEIGHT: f64 = 0.01;

/// Default number of empty transactions carried by an LWB.
pub const DEFAULT_LWB_TXS: usize = 10;

pub type Transaction = Vec<u8>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantKind {
    Plain,
    #[serde(rename = "p")]
    PVariant,
    #[serde(rename = "s")]
    SVariant,
}

impl VariantKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            VariantKind::Plain => "plain",
            VariantKind::PVariant => "p",
            VariantKind::SVariant => "s",
        }
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantKind {
    type Err = PlanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" => Ok(VariantKind::Plain),
            "p" => Ok(VariantKind::PVariant),
            "s" => Ok(VariantKind::SVariant),
            other => Err(PlanError::UnknownVariant(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum UnitKind {
    Genesis,
    Regular,
    SubBlock,
    Lwb,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("block expansion factor must be at least 1, got {0}")]
    ZeroExpansion(u32),
    #[error("plain variant requires mu = 1, got {0}")]
    PlainWithExpansion(u32),
    #[error("lwb weight must lie in (0, 1], got {0}")]
    LwbWeight(f64),
    #[error("unknown variant {0:?} (expected plain, p or s)")]
    UnknownVariant(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VariantSpec {
    pub kind: VariantKind,
    pub mu: u32,
    pub lwb_weight: f64,
    pub lwb_txs: usize,
}

impl VariantSpec {
    pub fn plain() -> Self {
        VariantSpec {
            kind: VariantKind::Plain,
            mu: 1,
            lwb_weight: DEFAULT_LWB_WEIGHT,
            lwb_txs: DEFAULT_LWB_TXS,
        }
    }

    pub fn new(kind: VariantKind, mu: u32) -> Self {
        VariantSpec {
            kind,
            mu,
            ..Self::plain()
        }
    }

    pub fn with_lwb_weight(mut self, lambda: f64) -> Self {
        self.lwb_weight = lambda;
        self
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.mu < 1 {
            return Err(PlanError::ZeroExpansion(self.mu));
        }
        if self.kind == VariantKind::Plain && self.mu != 1 {
            return Err(PlanError::PlainWithExpansion(self.mu));
        }
        if !(self.lwb_weight > 0.0 && self.lwb_weight <= 1.0) {
            return Err(PlanError::LwbWeight(self.lwb_weight));
        }
        Ok(())
    }

    /// Storage weight of a fully expanded group.
    pub fn expanded_weight(&self) -> f64 {
        match self.kind {
            VariantKind::Plain | VariantKind::SVariant => 1.0,
            VariantKind::PVariant => 1.0 + f64::from(self.mu - 1) * self.lwb_weight,
        }
    }
}

impl Default for VariantSpec {
    fn default() -> Self {
        Self::plain()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlannedUnit {
    pub kind: UnitKind,
    pub weight: f64,
    pub payload: Vec<Transaction>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockPlan {
    /// Units in chaining order, base first.
    pub units: Vec<PlannedUnit>,
    pub aog_edge: bool,
    /// Group storage weight; exact rather than a float sum of unit weights.
    pub total_weight: f64,
}

impl BlockPlan {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Height the group adds above its base anchor.
    pub fn height_contribution(&self) -> u64 {
        self.units.len() as u64
    }
}

/// Builds the unit plan for a logical block whose EOG parent sits at
/// `parent_height`.
pub fn plan_block(
    variant: &VariantSpec,
    parent_height: u64,
    threshold: u64,
    payload: Vec<Transaction>,
) -> Result<BlockPlan, PlanError> {
    variant.validate()?;
    if parent_height > threshold {
        return Ok(BlockPlan {
            units: vec![PlannedUnit {
                kind: UnitKind::Regular,
                weight: 1.0,
                payload,
            }],
            aog_edge: false,
            total_weight: 1.0,
        });
    }
    let mu = variant.mu as usize;
    let units = match variant.kind {
        VariantKind::Plain => vec![PlannedUnit {
            kind: UnitKind::Regular,
            weight: 1.0,
            payload,
        }],
        VariantKind::SVariant if mu == 1 => vec![PlannedUnit {
            kind: UnitKind::Regular,
            weight: 1.0,
            payload,
        }],
        VariantKind::SVariant => {
            let mut shares: Vec<Vec<Transaction>> = vec![Vec::new(); mu];
            for (i, tx) in payload.into_iter().enumerate() {
                shares[i % mu].push(tx);
            }
            shares
                .into_iter()
                .map(|share| PlannedUnit {
                    kind: UnitKind::SubBlock,
                    weight: 1.0 / mu as f64,
                    payload: share,
                })
                .collect()
        }
        VariantKind::PVariant => {
            let mut units = Vec::with_capacity(mu);
            units.push(PlannedUnit {
                kind: UnitKind::Regular,
                weight: 1.0,
                payload,
            });
            units.extend((1..mu).map(|_| PlannedUnit {
                kind: UnitKind::Lwb,
                weight: variant.lwb_weight,
                payload: vec![Vec::new(); variant.lwb_txs],
            }));
            units
        }
    };
    Ok(BlockPlan {
        units,
        aog_edge: true,
        total_weight: variant.expanded_weight(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn txs(n: usize) -> Vec<Transaction> {
        (0..n).map(|i| vec![i as u8; 3]).collect()
    }

    #[test]
    fn plain_under_shallow_parent() {
        let plan = plan_block(&VariantSpec::plain(), 3, 10, txs(4)).unwrap();
        assert_eq!(plan.units.len(), 1);
        assert_eq!(plan.units[0].kind, UnitKind::Regular);
        assert!(plan.aog_edge);
    }

    #[test]
    fn s_variant_two_halves() {
        let v = VariantSpec::new(VariantKind::SVariant, 2);
        let plan = plan_block(&v, 5, 5, txs(4)).unwrap();
        let kinds: Vec<_> = plan.units.iter().map(|u| (u.kind, u.weight)).collect();
        assert_eq!(
            kinds,
            vec![(UnitKind::SubBlock, 0.5), (UnitKind::SubBlock, 0.5)]
        );
        assert!(plan.aog_edge);
        assert_eq!(plan.units[0].payload, vec![vec![0; 3], vec![2; 3]]);
    }

    #[test]
    fn p_variant_deep_parent_is_regular() {
        let v = VariantSpec::new(VariantKind::PVariant, 100);
        let plan = plan_block(&v, 11, 10, txs(2)).unwrap();
        assert_eq!(plan.units.len(), 1);
        assert_eq!(plan.units[0].kind, UnitKind::Regular);
        assert!(!plan.aog_edge);
    }

    #[test]
    fn p_variant_layout_regular_base_then_lwbs() {
        let v = VariantSpec::new(VariantKind::PVariant, 4);
        let plan = plan_block(&v, 0, 0, txs(2)).unwrap();
        assert_eq!(plan.units[0].kind, UnitKind::Regular);
        assert!(plan.units[1..].iter().all(|u| u.kind == UnitKind::Lwb
            && u.payload.len() == DEFAULT_LWB_TXS
            && u.payload.iter().all(Vec::is_empty)));
        assert!((plan.total_weight - 1.03).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert_eq!(
            plan_block(&VariantSpec::new(VariantKind::SVariant, 0), 0, 0, vec![]),
            Err(PlanError::ZeroExpansion(0))
        );
        assert_eq!(
            VariantSpec::new(VariantKind::Plain, 3).validate(),
            Err(PlanError::PlainWithExpansion(3))
        );
        assert!(VariantSpec::new(VariantKind::PVariant, 2)
            .with_lwb_weight(0.0)
            .validate()
            .is_err());
    }

    proptest! {
        #[test]
        fn plan_weight_and_height(
            kind in prop_oneof![Just(VariantKind::PVariant), Just(VariantKind::SVariant)],
            mu in 1u32..300,
            lambda in 0.001f64..1.0,
            parent in 0u64..100,
            k in 0u64..100,
            n_tx in 0usize..40,
        ) {
            let v = VariantSpec::new(kind, mu).with_lwb_weight(lambda);
            let payload = txs(n_tx);
            let plan = plan_block(&v, parent, k, payload.clone()).unwrap();
            let summed: f64 = plan.units.iter().map(|u| u.weight).sum();
            prop_assert!((summed - plan.total_weight).abs() < 1e-9);
            if parent <= k {
                prop_assert_eq!(plan.height_contribution(), u64::from(mu));
                let expected = match kind {
                    VariantKind::PVariant => 1.0 + f64::from(mu - 1) * lambda,
                    _ => 1.0,
                };
                prop_assert_eq!(plan.total_weight, expected);
            } else {
                prop_assert_eq!(plan.height_contribution(), 1);
            }
            // payload bytes conserved for the transaction-carrying units
            let carried: Vec<Transaction> = plan.units.iter()
                .filter(|u| u.kind != UnitKind::Lwb)
                .flat_map(|u| u.payload.clone())
                .collect();
            let mut sorted = carried.clone();
            sorted.sort();
            let mut want = payload;
            want.sort();
            prop_assert_eq!(sorted, want);
            // pure
            prop_assert_eq!(plan_block(&v, parent, k, txs(n_tx)).unwrap(), plan);
        }
    }
}
