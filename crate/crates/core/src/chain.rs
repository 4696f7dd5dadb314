//! The finite-lifetime block DAG.
//!
//! Every logical block gets an EOG parent: the live group head with the
//! earliest expiration strictly later than the new block's, or genesis when
//! no such group exists. When that parent is shallow (height ≤ K) the block
//! is expanded per the variant and linked by an AOG edge to the previously
//! inserted group, whose deletion is pushed back to the new block's
//! expiration so the hash pointer stays verifiable.
//!
//! Groups move through three states: live (in the expiration index and
//! eligible as EOG parents), expired but retained, and deleted.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Bound;

use ordered_float::OrderedFloat;
use serde::Serialize;
use thiserror::Error;

use crate::crypto::{self, BlockHash, BlockHeader, MineError};
use crate::params::SimParams;
use crate::variants::{plan_block, PlanError, Transaction, UnitKind};

pub type SimTime = f64;

type TimeKey = (OrderedFloat<f64>, u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct BlockId {
    /// Logical block index; genesis is 0.
    pub index: u64,
    /// Position of the unit inside its group.
    pub unit_ordinal: u32,
}

impl BlockId {
    pub const GENESIS: BlockId = BlockId {
        index: 0,
        unit_ordinal: 0,
    };

    pub fn new(index: u64, unit_ordinal: u32) -> Self {
        BlockId {
            index,
            unit_ordinal,
        }
    }

    pub fn is_genesis(&self) -> bool {
        *self == Self::GENESIS
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b{}.{}", self.index, self.unit_ordinal)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockUnit {
    pub id: BlockId,
    pub kind: UnitKind,
    pub creation: SimTime,
    pub expiration: SimTime,
    /// EOG parent for a base unit, the previous unit of the group otherwise.
    pub eog_parent: BlockId,
    pub aog_prev: Option<BlockId>,
    pub height: u64,
    pub weight: f64,
    pub hash: BlockHash,
    pub header: BlockHeader,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockGroup {
    pub base_index: u64,
    pub units: Vec<BlockId>,
    pub head: BlockId,
    pub expiration: SimTime,
    pub deletion: SimTime,
    /// Exact storage weight of the whole group.
    pub weight: f64,
    pub aog_prev: Option<BlockId>,
}

impl BlockGroup {
    pub fn base(&self) -> BlockId {
        self.units[0]
    }

    pub fn retention(&self) -> f64 {
        self.deletion - self.expiration
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RetentionExtension {
    pub group: u64,
    pub from: SimTime,
    pub to: SimTime,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InsertReport {
    pub group: u64,
    pub units: Vec<BlockId>,
    pub eog_parent: BlockId,
    pub aog_prev: Option<BlockId>,
    /// (child, referent) pairs: cross-group EOG, AOG and intra-group links.
    pub edges: Vec<(BlockId, BlockId)>,
    pub extensions: Vec<RetentionExtension>,
    pub pow_solves: u64,
    pub pow_trials: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("lifetime must be positive and finite, got {0}")]
    InvalidLifetime(f64),
    #[error("insertion at {time} precedes pending event at {pending}")]
    EventOrder { time: SimTime, pending: SimTime },
    #[error("unknown or deleted block {0}")]
    UnknownBlock(BlockId),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Mine(#[from] MineError),
}

/// Running mean/max of block heights over live groups, each logical block
/// counted once at its head height.
#[derive(Clone, Debug, Default)]
struct HeightTally {
    sum: u128,
    count: u64,
    by_height: BTreeMap<u64, u64>,
}

impl HeightTally {
    fn add(&mut self, height: u64) {
        self.sum += u128::from(height);
        self.count += 1;
        *self.by_height.entry(height).or_default() += 1;
    }

    fn remove(&mut self, height: u64) {
        self.sum -= u128::from(height);
        self.count -= 1;
        let slot = self.by_height.get_mut(&height).expect("height tallied");
        *slot -= 1;
        if *slot == 0 {
            self.by_height.remove(&height);
        }
    }
}

#[derive(Clone, Debug)]
pub struct ChainState {
    params: SimParams,
    units: BTreeMap<BlockId, BlockUnit>,
    groups: BTreeMap<u64, BlockGroup>,
    expiration_index: BTreeSet<TimeKey>,
    deletion_queue: BTreeSet<TimeKey>,
    last_inserted_head: BlockId,
    clock: SimTime,
    next_index: u64,
    tally: HeightTally,
    pow_solves: u64,
    pow_trials: u64,
}

impl ChainState {
    /// Creates a chain holding only the genesis unit.
    pub fn new(params: SimParams) -> Result<Self, ChainError> {
        params.variant.validate()?;
        let solved = crypto::mine(&BlockHeader::default(), 0)?;
        let genesis = BlockUnit {
            id: BlockId::GENESIS,
            kind: UnitKind::Genesis,
            creation: f64::NEG_INFINITY,
            expiration: f64::INFINITY,
            eog_parent: BlockId::GENESIS,
            aog_prev: None,
            height: 0,
            weight: 1.0,
            hash: solved.hash,
            header: solved.header,
        };
        let mut tally = HeightTally::default();
        tally.add(0);
        Ok(ChainState {
            params,
            units: BTreeMap::from([(BlockId::GENESIS, genesis)]),
            groups: BTreeMap::new(),
            expiration_index: BTreeSet::new(),
            deletion_queue: BTreeSet::new(),
            last_inserted_head: BlockId::GENESIS,
            clock: f64::NEG_INFINITY,
            next_index: 1,
            tally,
            pow_solves: 1,
            pow_trials: solved.trials,
        })
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn clock(&self) -> SimTime {
        self.clock
    }

    pub fn last_inserted_head(&self) -> BlockId {
        self.last_inserted_head
    }

    pub fn unit(&self, id: BlockId) -> Option<&BlockUnit> {
        self.units.get(&id)
    }

    pub fn units(&self) -> impl Iterator<Item = &BlockUnit> {
        self.units.values()
    }

    pub fn group(&self, base_index: u64) -> Option<&BlockGroup> {
        self.groups.get(&base_index)
    }

    pub fn groups(&self) -> impl Iterator<Item = &BlockGroup> {
        self.groups.values()
    }

    pub fn alive_units(&self) -> usize {
        self.units.len()
    }

    /// Heads of live (non-expired) groups in (expiration, arrival) order.
    pub fn live_heads(&self) -> impl Iterator<Item = (SimTime, BlockId)> + '_ {
        self.expiration_index
            .iter()
            .map(|&(e, idx)| (e.0, self.groups[&idx].head))
    }

    /// Proof-of-work solves so far, genesis included.
    pub fn pow_solves(&self) -> u64 {
        self.pow_solves
    }

    pub fn pow_trials(&self) -> u64 {
        self.pow_trials
    }

    pub fn genesis_hash(&self) -> BlockHash {
        self.units[&BlockId::GENESIS].hash
    }

    /// Mean and max blockheight over live logical blocks (genesis included).
    pub fn height_stats(&self) -> (f64, u64) {
        let mean = self.tally.sum as f64 / self.tally.count as f64;
        let max = self
            .tally
            .by_height
            .keys()
            .next_back()
            .copied()
            .unwrap_or(0);
        (mean, max)
    }

    /// Earliest pending expiration or deletion.
    pub fn next_due(&self) -> Option<SimTime> {
        let e = self.expiration_index.first().map(|k| k.0 .0);
        let d = self.deletion_queue.first().map(|k| k.0 .0);
        match (e, d) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    pub fn height_of(&self, id: BlockId) -> Result<u64, ChainError> {
        self.units
            .get(&id)
            .map(|u| u.height)
            .ok_or(ChainError::UnknownBlock(id))
    }

    /// Head of the live group with the earliest expiration strictly later
    /// than `expiration`; ties go to the earlier arrival. Falls back to genesis.
    pub fn select_eog_parent(&self, expiration: SimTime) -> BlockId {
        let after = (OrderedFloat(expiration), u64::MAX);
        self.expiration_index
            .range((Bound::Excluded(after), Bound::Unbounded))
            .next()
            .map(|(_, idx)| self.groups[idx].head)
            .unwrap_or(BlockId::GENESIS)
    }

    /// Synthetic, deterministic transaction list for a logical block.
    fn payload_for(&self, index: u64) -> Vec<Transaction> {
        (0..self.params.txs_per_block as u64)
            .map(|j| [index.to_le_bytes(), j.to_le_bytes()].concat())
            .collect()
    }

    pub fn insert_block(
        &mut self,
        time: SimTime,
        lifetime: f64,
    ) -> Result<InsertReport, ChainError> {
        if !(lifetime > 0.0 && lifetime.is_finite()) {
            return Err(ChainError::InvalidLifetime(lifetime));
        }
        if time < self.clock {
            return Err(ChainError::EventOrder {
                time,
                pending: self.clock,
            });
        }
        if let Some(due) = self.next_due().filter(|&due| due <= time) {
            return Err(ChainError::EventOrder { time, pending: due });
        }

        let expiration = time + lifetime;
        let index = self.next_index;
        let parent = self.select_eog_parent(expiration);
        let parent_unit = &self.units[&parent];
        let parent_height = parent_unit.height;
        let parent_hash = parent_unit.hash;
        let threshold = self.params.threshold;

        let payload = self.payload_for(index);
        let plan = plan_block(&self.params.variant, parent_height, threshold, payload)?;

        // Under genesis the threshold test falls through to the predecessor:
        // linking a deep predecessor would retain it without adding depth.
        let prev = self
            .units
            .get(&self.last_inserted_head)
            .filter(|_| plan.aog_edge)
            .filter(|p| !parent.is_genesis() || p.height <= threshold)
            .map(|p| (p.id, p.height, p.hash));

        let base_height = 1 + parent_height.max(prev.map_or(0, |(_, h, _)| h));
        let timestamp = crypto::timestamp_ms(time);
        let difficulty = self.params.difficulty;

        let mut report = InsertReport {
            group: index,
            units: Vec::with_capacity(plan.len()),
            eog_parent: parent,
            aog_prev: prev.map(|(id, _, _)| id),
            edges: Vec::with_capacity(plan.len() + 1),
            extensions: Vec::new(),
            pow_solves: 0,
            pow_trials: 0,
        };

        let mut below = (parent, parent_hash);
        for (ordinal, planned) in plan.units.into_iter().enumerate() {
            let id = BlockId::new(index, ordinal as u32);
            let aog_prev = if ordinal == 0 { report.aog_prev } else { None };
            let template = BlockHeader {
                prev_hash: match (ordinal, prev) {
                    (0, Some((_, _, h))) => h,
                    _ => BlockHash::ZERO,
                },
                parent_hash: below.1,
                merkle_root: crypto::merkle_root(&planned.payload),
                timestamp,
                difficulty_bits: difficulty,
                nonce: 0,
            };
            let solved = crypto::mine(&template, difficulty)?;
            report.pow_solves += 1;
            report.pow_trials += solved.trials;
            report.edges.push((id, below.0));
            if let Some(p) = aog_prev {
                report.edges.push((id, p));
            }
            let height = base_height + ordinal as u64;
            self.units.insert(
                id,
                BlockUnit {
                    id,
                    kind: planned.kind,
                    creation: time,
                    expiration,
                    eog_parent: below.0,
                    aog_prev,
                    height,
                    weight: planned.weight,
                    hash: solved.hash,
                    header: solved.header,
                },
            );
            report.units.push(id);
            below = (id, solved.hash);
        }

        let head = below.0;
        self.tally.add(self.units[&head].height);
        self.groups.insert(
            index,
            BlockGroup {
                base_index: index,
                units: report.units.clone(),
                head,
                expiration,
                deletion: expiration,
                weight: plan.total_weight,
                aog_prev: report.aog_prev,
            },
        );
        self.expiration_index
            .insert((OrderedFloat(expiration), index));
        self.deletion_queue
            .insert((OrderedFloat(expiration), index));

        if let Some((prev_id, _, _)) = prev {
            self.extend_retention(prev_id.index, expiration, &mut report.extensions);
        }

        self.pow_solves += report.pow_solves;
        self.pow_trials += report.pow_trials;
        self.last_inserted_head = head;
        self.next_index += 1;
        self.clock = time;
        Ok(report)
    }

    fn extend_retention(
        &mut self,
        mut index: u64,
        until: SimTime,
        log: &mut Vec<RetentionExtension>,
    ) {
        loop {
            let Some(group) = self.groups.get_mut(&index) else {
                return;
            };
            if group.deletion >= until {
                return;
            }
            self.deletion_queue
                .remove(&(OrderedFloat(group.deletion), index));
            log.push(RetentionExtension {
                group: index,
                from: group.deletion,
                to: until,
            });
            group.deletion = until;
            self.deletion_queue.insert((OrderedFloat(until), index));
            if !self.params.cascading_retention {
                return;
            }
            match group.aog_prev {
                Some(p) if !p.is_genesis() => index = p.index,
                _ => return,
            }
        }
    }

    /// Expires every group due by `now` and deletes every group whose
    /// (possibly extended) deletion time has passed. Returns the deleted groups.
    pub fn expire_and_delete(&mut self, now: SimTime) -> Vec<BlockGroup> {
        while let Some(&(e, idx)) = self.expiration_index.first() {
            if e.0 > now {
                break;
            }
            self.expiration_index.pop_first();
            let head = self.groups[&idx].head;
            self.tally.remove(self.units[&head].height);
        }
        let mut deleted = Vec::new();
        while let Some(&(d, idx)) = self.deletion_queue.first() {
            if d.0 > now {
                break;
            }
            self.deletion_queue.pop_first();
            let group = self.groups.remove(&idx).expect("queued group exists");
            for id in &group.units {
                self.units.remove(id);
            }
            deleted.push(group);
        }
        if now > self.clock {
            self.clock = now;
        }
        deleted
    }

    /// Fault injection: removes a group immediately, ignoring its retention.
    pub fn force_delete_group(&mut self, base_index: u64) -> Option<BlockGroup> {
        let group = self.groups.remove(&base_index)?;
        let exp_key = (OrderedFloat(group.expiration), base_index);
        if self.expiration_index.remove(&exp_key) {
            self.tally.remove(self.units[&group.head].height);
        }
        self.deletion_queue
            .remove(&(OrderedFloat(group.deletion), base_index));
        for id in &group.units {
            self.units.remove(id);
        }
        Some(group)
    }

    /// Fault injection: flips the lowest bit of one merkle-root byte of a stored header.
    pub fn corrupt_unit(&mut self, id: BlockId, byte: usize) -> bool {
        match self.units.get_mut(&id) {
            Some(unit) => {
                unit.header.merkle_root.0[byte % crypto::HASH_LEN] ^= 1;
                true
            }
            None => false,
        }
    }

    /// Structural audit of the chain invariants. Returns one line per violation.
    pub fn audit(&self) -> Vec<String> {
        let mut out = Vec::new();
        let now = self.clock;
        let mut connected = std::collections::HashSet::new();
        for unit in self.units.values() {
            if unit.id.is_genesis() {
                if unit.height != 0 {
                    out.push("genesis height is not 0".into());
                }
                continue;
            }
            let live = unit.expiration > now;
            let group = match self.groups.get(&unit.id.index) {
                Some(g) => g,
                None => {
                    out.push(format!("{} has no group", unit.id));
                    continue;
                }
            };
            if group.deletion < group.expiration {
                out.push(format!("{} deleted before expiring", unit.id));
            }
            let parent = self.units.get(&unit.eog_parent);
            let prev = unit.aog_prev.map(|p| self.units.get(&p));
            if live {
                match parent {
                    None => out.push(format!("{} lost eog parent {}", unit.id, unit.eog_parent)),
                    Some(p) => {
                        let cross = p.id.index != unit.id.index;
                        if cross && p.expiration <= unit.expiration {
                            out.push(format!("{} parent {} expires no later", unit.id, p.id));
                        }
                    }
                }
                if let Some(None) = prev {
                    out.push(format!("{} lost aog referent", unit.id));
                }
                // ids ascend along eog links, so parents are visited first
                if unit.eog_parent >= unit.id {
                    out.push(format!("{} eog link does not point backwards", unit.id));
                } else if !unit.eog_parent.is_genesis() && !connected.contains(&unit.eog_parent) {
                    out.push(format!("{} disconnected from genesis", unit.id));
                } else {
                    connected.insert(unit.id);
                }
            }
            if let Some(p) = parent {
                // an expired unit may have outlived its aog referent
                let prev_h = match prev {
                    Some(Some(q)) => Some(q.height),
                    Some(None) => None,
                    None => Some(0),
                };
                let base_ok = prev_h.is_none_or(|h| unit.height == 1 + p.height.max(h));
                if unit.id.unit_ordinal == 0 && !base_ok {
                    out.push(format!("{} height {} inconsistent", unit.id, unit.height));
                }
                if unit.id.unit_ordinal > 0 && unit.height != p.height + 1 {
                    out.push(format!(
                        "{} intra-group height {} inconsistent",
                        unit.id, unit.height
                    ));
                }
            }
        }
        let indexed: BTreeSet<u64> = self.expiration_index.iter().map(|k| k.1).collect();
        let live: BTreeSet<u64> = self
            .groups
            .values()
            .filter(|g| g.expiration > now)
            .map(|g| g.base_index)
            .collect();
        if indexed != live {
            out.push("expiration index does not match live groups".into());
        }
        out
    }
}
