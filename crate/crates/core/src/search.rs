//! Cut-point search, the exhaustive per-block oracle and the minimum-buffer
//! search.

use rayon::prelude::*;
use serde::Serialize;

use crate::alloc::{assign_buffers_forcing, BufferAssignment};
use crate::cost::{baseline_dram, dram_feature_access, required_buffer_sizes, BufferRequirements};
use crate::error::{Error, Result};
use crate::hw::HwConfig;
use crate::policy::{ReusePolicy, Scheme};
use crate::schedule::Schedule;
use crate::sim::simulate_network;

/// Largest block count the exhaustive oracle accepts.
pub const ORACLE_MAX_BLOCKS: usize = 14;

/// Everything computed for one candidate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub policy: Option<ReusePolicy>,
    /// Per-block schemes after liveness forcing.
    pub schemes: Vec<Scheme>,
    /// Blocks demoted to row reuse by the allocator.
    pub forced: Vec<usize>,
    pub requirements: BufferRequirements,
    pub dram_features: u64,
    pub dram_total: u64,
    pub cycles: u64,
    pub gops: f64,
    pub feasible: bool,
}

impl Evaluation {
    fn key(&self) -> (u64, u64, u64) {
        (self.cycles, self.dram_total, self.requirements.sram_total)
    }
}

pub fn evaluate_schemes(s: &Schedule, block_schemes: &[Scheme], hw: &HwConfig) -> Result<(Evaluation, BufferAssignment)> {
    let (a, schemes, forced) = assign_buffers_forcing(s, block_schemes, hw)?;
    let requirements = required_buffer_sizes(s, &schemes, &a, hw)?;
    let lat = simulate_network(s, &a, hw)?;
    let dram_features = dram_feature_access(s, &schemes, hw);
    let dram_total = dram_features + s.graph.total_weight_bytes(hw.act_bytes());
    let feasible = requirements.bram18k_total < hw.bram_budget as u64
        && hw.n_mac <= hw.mac_budget
        && dram_total <= baseline_dram(s, hw);
    Ok((
        Evaluation {
            policy: None,
            schemes,
            forced,
            requirements,
            dram_features,
            dram_total,
            cycles: lat.cycles,
            gops: lat.gops,
            feasible,
        },
        a,
    ))
}

pub fn evaluate(s: &Schedule, policy: &ReusePolicy, hw: &HwConfig) -> Result<Evaluation> {
    let schemes = s.block_schemes(policy)?;
    let (mut e, _) = evaluate_schemes(s, &schemes, hw)?;
    e.policy = Some(policy.clone());
    Ok(e)
}

/// Evaluates every cut-point tuple, in enumeration order.
pub fn sweep_cut_points(s: &Schedule, hw: &HwConfig) -> Result<Vec<Evaluation>> {
    hw.validate()?;
    ReusePolicy::enumerate(&s.plan).par_iter().map(|p| evaluate(s, p, hw)).collect()
}

fn infeasible(cands: &[Evaluation], hw: &HwConfig) -> Error {
    if hw.n_mac > hw.mac_budget {
        return Error::Infeasible { constraint: "mac_budget".into(), best: hw.n_mac as u64, limit: hw.mac_budget as u64 };
    }
    let best = cands.iter().map(|e| e.requirements.bram18k_total).min().unwrap_or(0);
    Error::Infeasible { constraint: "bram18k".into(), best, limit: hw.bram_budget as u64 }
}

fn pick_best(cands: Vec<Evaluation>, hw: &HwConfig) -> Result<Evaluation> {
    let mut best: Option<&Evaluation> = None;
    for e in cands.iter().filter(|e| e.feasible) {
        // candidates arrive in lexicographic order, so the first minimum wins ties
        if best.is_none_or(|b| e.key() < b.key()) {
            best = Some(e);
        }
    }
    match best {
        Some(b) => Ok(b.clone()),
        None => Err(infeasible(&cands, hw)),
    }
}

/// Minimum-latency feasible cut-point tuple; ties go to less DRAM traffic,
/// then smaller SRAM, then the lexicographically smallest tuple.
pub fn search_cut_points(s: &Schedule, hw: &HwConfig) -> Result<Evaluation> {
    pick_best(sweep_cut_points(s, hw)?, hw)
}

/// All `2^N` per-block scheme vectors in ascending binary order (bit b set = block b frame).
pub fn all_block_schemes(n: usize) -> Vec<Vec<Scheme>> {
    (0..1u32 << n)
        .map(|m| (0..n).map(|b| if m >> (n - 1 - b) & 1 == 1 { Scheme::Frame } else { Scheme::Row }).collect())
        .collect()
}

/// Global optimum over unrestricted per-block assignments.
pub fn exhaustive_policy_oracle(s: &Schedule, hw: &HwConfig) -> Result<Evaluation> {
    hw.validate()?;
    let n = s.blocks.len();
    if n > ORACLE_MAX_BLOCKS {
        return Err(Error::TooManyBlocks(n, ORACLE_MAX_BLOCKS));
    }
    let cands: Vec<Evaluation> = all_block_schemes(n)
        .par_iter()
        .map(|sch| evaluate_schemes(s, sch, hw).map(|(e, _)| e))
        .collect::<Result<_>>()?;
    pick_best(cands, hw)
}

/// Smallest `sram_total` over all cut-point tuples (row reuse everywhere is
/// always a candidate, so this never fails on a valid graph).
pub fn minimum_buffer_search(s: &Schedule, hw: &HwConfig) -> Result<Evaluation> {
    let cands = sweep_cut_points(s, hw)?;
    let baseline = baseline_dram(s, hw);
    let mut best: Option<&Evaluation> = None;
    for e in cands.iter().filter(|e| e.dram_total <= baseline) {
        if best.is_none_or(|b| e.requirements.sram_total < b.requirements.sram_total) {
            best = Some(e);
        }
    }
    best.cloned().ok_or_else(|| Error::InvalidArgument("no candidate meets the DRAM constraints".into()))
}
