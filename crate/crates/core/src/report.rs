//! Machine-readable reports: cost summaries (JSON and text), sweep curves
//! and per-group allocation dumps (CSV).

use std::fmt::Write;

use serde::Serialize;

use crate::alloc::{BufferAssignment, Loc};
use crate::cost::{baseline_dram, dsp_efficiency, off_chip_reduction, BufferRequirements, MB};
use crate::hw::HwConfig;
use crate::policy::Scheme;
use crate::schedule::Schedule;
use crate::search::Evaluation;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub model: String,
    pub input: [u32; 3],
    pub groups: usize,
    pub blocks: usize,
    pub cut_points: Option<Vec<usize>>,
    /// One character per block: `R` row reuse, `F` frame reuse.
    pub schemes: String,
    pub forced_row_blocks: Vec<usize>,
    pub dram_feature_bytes: u64,
    pub dram_weight_bytes: u64,
    pub dram_total_bytes: u64,
    pub baseline_dram_bytes: u64,
    pub off_chip_reduction_pct: f64,
    pub requirements: BufferRequirements,
    pub cycles: u64,
    pub latency_ms: f64,
    pub gops: f64,
    pub dsp_efficiency_pct: f64,
    pub feasible: bool,
}

pub fn scheme_string(schemes: &[Scheme]) -> String {
    schemes.iter().map(|s| if *s == Scheme::Frame { 'F' } else { 'R' }).collect()
}

pub fn cost_report(s: &Schedule, e: &Evaluation, hw: &HwConfig) -> CostReport {
    let g = &s.graph;
    let baseline = baseline_dram(s, hw);
    CostReport {
        model: g.name.clone(),
        input: [g.input_w, g.input_h, g.input_c],
        groups: s.groups.len(),
        blocks: s.blocks.len(),
        cut_points: e.policy.as_ref().map(|p| p.cut_points.clone()),
        schemes: scheme_string(&e.schemes),
        forced_row_blocks: e.forced.clone(),
        dram_feature_bytes: e.dram_features,
        dram_weight_bytes: e.dram_total - e.dram_features,
        dram_total_bytes: e.dram_total,
        baseline_dram_bytes: baseline,
        off_chip_reduction_pct: off_chip_reduction(e.dram_total, baseline) * 100.0,
        requirements: e.requirements.clone(),
        cycles: e.cycles,
        latency_ms: e.cycles as f64 / hw.freq_hz * 1e3,
        gops: e.gops,
        dsp_efficiency_pct: dsp_efficiency(e.gops, hw) * 100.0,
        feasible: e.feasible,
    }
}

fn mb(b: u64) -> f64 {
    b as f64 / MB
}

impl CostReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_text(&self) -> String {
        let r = &self.requirements;
        let mut t = String::new();
        let _ = writeln!(t, "model            {} ({}x{}x{})", self.model, self.input[0], self.input[1], self.input[2]);
        let _ = writeln!(t, "groups/blocks    {} / {}", self.groups, self.blocks);
        let _ = writeln!(t, "cut points       {:?}", self.cut_points.clone().unwrap_or_default());
        let _ = writeln!(t, "schemes          {}", self.schemes);
        if !self.forced_row_blocks.is_empty() {
            let _ = writeln!(t, "forced to row    {:?}", self.forced_row_blocks);
        }
        let _ = writeln!(t, "dram features    {:.3} MB", mb(self.dram_feature_bytes));
        let _ = writeln!(t, "dram weights     {:.3} MB", mb(self.dram_weight_bytes));
        let _ = writeln!(t, "dram total       {:.3} MB (baseline {:.3} MB, reduction {:.2}%)", mb(self.dram_total_bytes), mb(self.baseline_dram_bytes), self.off_chip_reduction_pct);
        let _ = writeln!(
            t,
            "sram total       {:.3} MB (buff {:?}, weight {}, row {}, out {}, write {})",
            mb(r.sram_total),
            r.buff,
            r.weight_buff,
            r.row_buff,
            r.out_buff,
            r.write_buff
        );
        let _ = writeln!(t, "bram18k          {}", r.bram18k_total);
        let _ = writeln!(t, "cycles           {} ({:.3} ms)", self.cycles, self.latency_ms);
        let _ = writeln!(t, "throughput       {:.1} GOPS, DSP efficiency {:.1}%", self.gops, self.dsp_efficiency_pct);
        let _ = writeln!(t, "feasible         {}", self.feasible);
        t
    }
}

/// One row per candidate, in enumeration order.
pub fn sweep_csv(evals: &[Evaluation]) -> String {
    let mut t = String::from("index,cut_points,schemes,feasible,cycles,dram_feature_bytes,dram_total_bytes,sram_total_bytes,bram18k\n");
    for (i, e) in evals.iter().enumerate() {
        let cps = e.policy.as_ref().map(|p| p.cut_points.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" "));
        let _ = writeln!(
            t,
            "{i},{},{},{},{},{},{},{},{}",
            cps.unwrap_or_default(),
            scheme_string(&e.schemes),
            e.feasible,
            e.cycles,
            e.dram_features,
            e.dram_total,
            e.requirements.sram_total,
            e.requirements.bram18k_total
        );
    }
    t
}

fn loc_str(l: Loc) -> String {
    match l {
        Loc::OffChip => "dram".into(),
        Loc::Buffer { id, offset: 0 } => format!("b{id}"),
        Loc::Buffer { id, offset } => format!("b{id}+{offset}"),
    }
}

/// Per-group allocation dump.
pub fn assignment_csv(s: &Schedule, a: &BufferAssignment) -> String {
    let mut t = String::from("group,layers,head,scheme,input,output,shortcut,stage_input,stage_shortcut,spill\n");
    for (g, ga) in a.groups.iter().enumerate() {
        let grp = &s.groups[g];
        let names: Vec<&str> = grp.layers.iter().map(|&l| s.graph.layers[l].name.as_str()).collect();
        let _ = writeln!(
            t,
            "{g},{},{},{},{},{},{},{},{},{}",
            names.join(" "),
            grp.head(&s.graph).kind.as_str(),
            ga.scheme.as_str(),
            loc_str(ga.input),
            loc_str(ga.output),
            ga.shortcut.map(loc_str).unwrap_or_default(),
            ga.stage_input,
            ga.stage_shortcut,
            ga.spill
        );
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_network;
    use crate::search::search_cut_points;
    use crate::alloc::assign_buffers;

    fn sched() -> Schedule {
        let g = parse_network(
            r#"{"name":"t","input":{"w":16,"h":16,"c":3},"layers":[{"kind":"conv","out_c":8,"kernel":3},{"kind":"conv","out_c":8,"kernel":3,"stride":2}]}"#,
        )
        .unwrap();
        Schedule::new(g).unwrap()
    }

    #[test]
    fn report_fields_are_consistent() {
        let s = sched();
        let hw = HwConfig::default();
        let e = search_cut_points(&s, &hw).unwrap();
        let r = cost_report(&s, &e, &hw);
        assert_eq!(r.dram_feature_bytes + r.dram_weight_bytes, r.dram_total_bytes);
        assert_eq!(r.schemes.len(), s.blocks.len());
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["model"], "t");
        assert!(r.to_text().contains("reduction"));
    }

    #[test]
    fn csv_shapes() {
        let s = sched();
        let hw = HwConfig::default();
        let a = assign_buffers(&s, &[Scheme::Frame, Scheme::Frame], &hw).unwrap();
        let csv = assignment_csv(&s, &a);
        assert_eq!(csv.lines().count(), 1 + s.groups.len());
        assert!(csv.lines().nth(1).unwrap().contains(",frame,"));
        let sw = sweep_csv(&crate::search::sweep_cut_points(&s, &hw).unwrap());
        assert_eq!(sw.lines().count(), 1 + s.plan.segments[0].depth() + 1);
    }
}
