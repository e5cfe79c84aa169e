//! Reuse-aware static allocation of group tensors onto three on-chip buffers.
//!
//! Frame-reuse groups keep their tensors in buffers `{0, 1, 2}`; row-reuse
//! groups stream features through DRAM. Tensors that cross into row-reuse
//! groups, long-path concat/route sources and network outputs live off-chip;
//! a frame-reuse consumer of such a tensor stages it into a buffer. Vector
//! tensors of a squeeze-excitation branch stay on-chip in both schemes, in an
//! offset region of the buffer holding the block input.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::SeRole;
use crate::hw::HwConfig;
use crate::policy::Scheme;
use crate::schedule::{Schedule, TensorRef};

pub const NUM_BUFFERS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Loc {
    OffChip,
    Buffer { id: u8, offset: u64 },
}

impl Loc {
    pub fn buffer_id(self) -> Option<u8> {
        match self {
            Loc::Buffer { id, .. } => Some(id),
            Loc::OffChip => None,
        }
    }

    pub fn offset(self) -> u64 {
        match self {
            Loc::Buffer { offset, .. } => offset,
            Loc::OffChip => 0,
        }
    }
}

/// Allocation for one node group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupAlloc {
    pub group: usize,
    pub scheme: Scheme,
    pub input: Loc,
    pub output: Loc,
    pub shortcut: Option<Loc>,
    /// Concat sources after the first (the first is `input`).
    pub concat: Vec<Loc>,
    /// The input is loaded from DRAM into `input` before the group runs.
    pub stage_input: bool,
    pub stage_shortcut: bool,
    /// A frame-reuse output kept on-chip is also written off-chip.
    pub spill: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BufferAssignment {
    pub groups: Vec<GroupAlloc>,
    /// Per SE branch: (block id, buffer holding the vector region, byte offset).
    pub se_offsets: Vec<(usize, u8, u64)>,
}

impl BufferAssignment {
    pub fn buffers_used(&self, groups: std::ops::Range<usize>) -> Vec<u8> {
        let mut ids: Vec<u8> = groups
            .flat_map(|g| {
                let a = &self.groups[g];
                [Some(a.input), Some(a.output), a.shortcut]
            })
            .flatten()
            .filter_map(Loc::buffer_id)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

pub(crate) fn round_up(v: u64, to: u64) -> u64 {
    if to == 0 {
        v
    } else {
        v.div_ceil(to) * to
    }
}

/// Where each group's output lives.
pub(crate) fn output_homes(s: &Schedule, schemes: &[Scheme]) -> Vec<Home> {
    s.groups
        .iter()
        .enumerate()
        .map(|(g, grp)| {
            let io = &s.io[g];
            if grp.se_role.is_vector() {
                Home::Vector
            } else if schemes[g] == Scheme::Row {
                Home::OffChip
            } else if io.long_path || io.terminal || io.consumers.iter().any(|&c| schemes[c] == Scheme::Row) {
                if io.consumers.iter().any(|&c| schemes[c] == Scheme::Frame && !is_concat(s, c)) {
                    Home::Both
                } else {
                    Home::OffChip
                }
            } else {
                Home::OnChip
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Home {
    OnChip,
    OffChip,
    /// On-chip for frame-reuse readers and written off-chip for the rest.
    Both,
    Vector,
}

impl Home {
    pub(crate) fn off_chip(self) -> bool {
        matches!(self, Home::OffChip | Home::Both)
    }
}

pub(crate) fn is_concat(s: &Schedule, g: usize) -> bool {
    s.groups[g].head(&s.graph).kind == crate::graph::LayerKind::Concat
}

/// Last frame-reuse group that reads `t` from a buffer (concats stream
/// off-chip sources directly), if any.
pub(crate) fn last_frame_use(s: &Schedule, schemes: &[Scheme], t: TensorRef) -> Option<usize> {
    consumers_of(s, t).iter().copied().filter(|&c| schemes[c] == Scheme::Frame && !is_concat(s, c)).max()
}

pub(crate) fn consumers_of(s: &Schedule, t: TensorRef) -> &[usize] {
    match t {
        TensorRef::Input => &s.input_consumers,
        TensorRef::Group(p) => &s.io[p].consumers,
    }
}

fn last_use(s: &Schedule, t: TensorRef) -> usize {
    match t {
        TensorRef::Input => s.input_consumers.iter().copied().max().unwrap_or(0),
        TensorRef::Group(p) => s.io[p].consumers.iter().copied().max().unwrap_or(p),
    }
}

#[derive(Debug, Clone, Copy)]
struct Region {
    tensor: TensorRef,
    offset: u64,
    len: u64,
    until: usize,
}

#[derive(Debug, Default)]
struct Buffers {
    slots: [Vec<Region>; NUM_BUFFERS],
}

impl Buffers {
    fn find(&self, t: TensorRef) -> Option<Loc> {
        for (id, regs) in self.slots.iter().enumerate() {
            if let Some(r) = regs.iter().find(|r| r.tensor == t) {
                return Some(Loc::Buffer { id: id as u8, offset: r.offset });
            }
        }
        None
    }

    fn fits(&self, id: usize, offset: u64, len: u64, reclaim: Option<TensorRef>) -> bool {
        self.slots[id]
            .iter()
            .filter(|r| Some(r.tensor) != reclaim)
            .all(|r| offset + len <= r.offset || r.offset + r.len <= offset)
    }

    fn place(&mut self, id: usize, region: Region) {
        self.slots[id].push(region);
    }

    fn release(&mut self, t: TensorRef) {
        for regs in self.slots.iter_mut() {
            regs.retain(|r| r.tensor != t);
        }
    }

    fn expire(&mut self, g: usize) {
        for regs in self.slots.iter_mut() {
            regs.retain(|r| r.until > g);
        }
    }

    fn holds_only(&self, id: usize, t: TensorRef) -> bool {
        self.slots[id].iter().any(|r| r.tensor == t)
    }
}

/// Statically assigns buffers for the given per-block schemes.
///
/// Fails with [`Error::InfeasibleLiveness`] naming the first frame-reuse block
/// whose live tensors do not fit in three buffers.
pub fn assign_buffers(s: &Schedule, block_schemes: &[Scheme], hw: &HwConfig) -> Result<BufferAssignment> {
    let schemes = s.group_schemes(block_schemes);
    let homes = output_homes(s, &schemes);
    let ab = hw.act_bytes();
    let bank = hw.bank_row_bytes();
    let mut bufs = Buffers::default();
    let mut out = Vec::with_capacity(s.groups.len());
    let mut se_offsets = Vec::new();
    // Next free byte of the current SE vector region.
    let mut se_cursor: Option<(u8, u64)> = None;

    for (g, grp) in s.groups.iter().enumerate() {
        let io = &s.io[g];
        let scheme = schemes[g];
        let block = s.block_of_group[g];
        let infeasible = || Error::InfeasibleLiveness { block, group: g };
        let out_bytes = s.tensor_size(TensorRef::Group(g)) * ab;

        // SE vector tensors: placed into the vector region in either scheme.
        if grp.se_role.is_vector() {
            if grp.se_role == SeRole::SeGap {
                let entry = block_entry(s, block);
                let entry_loc = entry.and_then(|t| bufs.find(t));
                let (id, base) = match (entry, entry_loc, scheme) {
                    (Some(t), Some(Loc::Buffer { id, .. }), Scheme::Frame) => {
                        (id, round_up(s.tensor_size(t) * ab, bank))
                    }
                    _ => {
                        let base = match (entry, scheme) {
                            (Some(t), Scheme::Frame) => round_up(s.tensor_size(t) * ab, bank),
                            _ => 0,
                        };
                        let need = se_region_bytes(s, g, ab, bank);
                        let id = (0..NUM_BUFFERS).find(|&i| bufs.fits(i, base, need, None)).ok_or_else(infeasible)?;
                        (id as u8, base)
                    }
                };
                se_offsets.push((block, id, base));
                se_cursor = Some((id, base));
            }
            let (id, off) = se_cursor.ok_or_else(|| Error::MalformedGraph(format!("SE group {g} without pooling")))?;
            let input = match io.input {
                t if s.groups.get(tensor_group(t)).is_some_and(|p| p.se_role.is_vector()) => {
                    bufs.find(t).ok_or_else(infeasible)?
                }
                t => match (scheme, bufs.find(t)) {
                    (Scheme::Frame, Some(loc)) => loc,
                    _ => Loc::OffChip,
                },
            };
            let output = Loc::Buffer { id, offset: off };
            bufs.place(
                id as usize,
                Region { tensor: TensorRef::Group(g), offset: off, len: out_bytes, until: last_use(s, TensorRef::Group(g)) },
            );
            se_cursor = Some((id, off + round_up(out_bytes, bank)));
            out.push(GroupAlloc {
                group: g,
                scheme,
                input,
                output,
                shortcut: None,
                concat: Vec::new(),
                stage_input: false,
                stage_shortcut: false,
                spill: false,
            });
            bufs.expire(g);
            continue;
        }

        if scheme == Scheme::Row {
            let shortcut = io.shortcut.map(|t| match bufs.find(t) {
                Some(loc) if is_vector(s, t) => loc,
                _ => Loc::OffChip,
            });
            out.push(GroupAlloc {
                group: g,
                scheme,
                input: Loc::OffChip,
                output: Loc::OffChip,
                shortcut,
                concat: vec![Loc::OffChip; io.concat_srcs.len().saturating_sub(1)],
                stage_input: false,
                stage_shortcut: false,
                spill: false,
            });
            bufs.expire(g);
            continue;
        }

        // Frame reuse. Concats copy on-chip sources and stream off-chip ones.
        let (input, stage_input) = if is_concat(s, g) {
            (bufs.find(io.input).filter(|_| !tensor_off_chip(&homes, io.input)).unwrap_or(Loc::OffChip), false)
        } else {
            resident_or_stage(s, &schemes, &mut bufs, io.input, ab, None).ok_or_else(infeasible)?
        };
        let (shortcut, stage_shortcut) = match io.shortcut {
            Some(t) if is_vector(s, t) => (Some(bufs.find(t).ok_or_else(infeasible)?), false),
            Some(t) => {
                let (loc, st) =
                    resident_or_stage(s, &schemes, &mut bufs, t, ab, input.buffer_id()).ok_or_else(infeasible)?;
                (Some(loc), st)
            }
            None => (None, false),
        };

        let output = if matches!(homes[g], Home::OnChip | Home::Both) {
            let in_id = input.buffer_id().map(usize::from);
            let in_place = io
                .shortcut
                .filter(|&t| !is_vector(s, t) && last_use(s, t) <= g && io.input != t);
            let pick = (0..NUM_BUFFERS)
                .filter(|&i| Some(i) != in_id)
                .find(|&i| bufs.fits(i, 0, out_bytes, None))
                .or_else(|| {
                    let t = in_place?;
                    (0..NUM_BUFFERS)
                        .filter(|&i| Some(i) != in_id)
                        .find(|&i| bufs.holds_only(i, t) && bufs.fits(i, 0, out_bytes, Some(t)))
                })
                .ok_or_else(infeasible)?;
            if let Some(t) = in_place {
                if bufs.holds_only(pick, t) {
                    bufs.release(t);
                }
            }
            let until = if homes[g] == Home::Both {
                last_frame_use(s, &schemes, TensorRef::Group(g)).unwrap_or(g)
            } else {
                last_use(s, TensorRef::Group(g))
            };
            bufs.place(pick, Region { tensor: TensorRef::Group(g), offset: 0, len: out_bytes, until });
            Loc::Buffer { id: pick as u8, offset: 0 }
        } else {
            Loc::OffChip
        };
        let spill = homes[g] == Home::Both;
        let concat = io
            .concat_srcs
            .iter()
            .skip(1)
            .map(|&(t, _)| bufs.find(t).filter(|_| !tensor_off_chip(&homes, t)).unwrap_or(Loc::OffChip))
            .collect();
        out.push(GroupAlloc { group: g, scheme, input, output, shortcut, concat, stage_input, stage_shortcut, spill });
        bufs.expire(g);
    }
    Ok(BufferAssignment { groups: out, se_offsets })
}

/// The network input and off-chip-homed group outputs are readable from DRAM.
pub(crate) fn tensor_off_chip(homes: &[Home], t: TensorRef) -> bool {
    match t {
        TensorRef::Input => true,
        TensorRef::Group(p) => homes[p].off_chip(),
    }
}

fn tensor_group(t: TensorRef) -> usize {
    match t {
        TensorRef::Input => usize::MAX,
        TensorRef::Group(g) => g,
    }
}

fn is_vector(s: &Schedule, t: TensorRef) -> bool {
    s.groups.get(tensor_group(t)).is_some_and(|p| p.se_role.is_vector())
}

/// Bytes needed by the SE vector chain starting at the pooling group `g`.
fn se_region_bytes(s: &Schedule, g: usize, ab: u64, bank: u64) -> u64 {
    (g..s.groups.len())
        .take_while(|&i| s.groups[i].se_role.is_vector())
        .map(|i| round_up(s.tensor_size(TensorRef::Group(i)) * ab, bank))
        .sum()
}

/// Tensor entering a block: the input of its first group.
pub(crate) fn block_entry(s: &Schedule, block: usize) -> Option<TensorRef> {
    let b = &s.blocks[block];
    Some(s.io[b.start].input)
}

fn resident_or_stage(
    s: &Schedule,
    schemes: &[Scheme],
    bufs: &mut Buffers,
    t: TensorRef,
    ab: u64,
    avoid: Option<u8>,
) -> Option<(Loc, bool)> {
    if let Some(loc) = bufs.find(t) {
        return Some((loc, false));
    }
    let len = s.tensor_size(t) * ab;
    let until = last_frame_use(s, schemes, t).unwrap_or(0);
    let id = (0..NUM_BUFFERS).filter(|&i| Some(i as u8) != avoid).find(|&i| bufs.fits(i, 0, len, None))?;
    bufs.place(id, Region { tensor: t, offset: 0, len, until });
    Some((Loc::Buffer { id: id as u8, offset: 0 }, true))
}

/// Assigns buffers, demoting to row reuse any block whose frame-reuse
/// liveness does not fit. Returns the effective per-block schemes.
pub fn assign_buffers_forcing(
    s: &Schedule,
    block_schemes: &[Scheme],
    hw: &HwConfig,
) -> Result<(BufferAssignment, Vec<Scheme>, Vec<usize>)> {
    let mut schemes = block_schemes.to_vec();
    let mut forced = Vec::new();
    loop {
        match assign_buffers(s, &schemes, hw) {
            Ok(a) => return Ok((a, schemes, forced)),
            Err(Error::InfeasibleLiveness { block, .. }) if schemes[block] == Scheme::Frame => {
                schemes[block] = Scheme::Row;
                forced.push(block);
            }
            Err(e) => return Err(e),
        }
    }
}

/// One problem found by [`validate_assignment`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub group: usize,
    pub layer: usize,
    pub buffer: Option<u8>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    /// Peak occupied bytes per buffer.
    pub peak: [u64; NUM_BUFFERS],
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Replays the assignment against a three-slot memory and reports every
/// invariant violation. Never aborts.
pub fn validate_assignment(
    a: &BufferAssignment,
    s: &Schedule,
    block_schemes: &[Scheme],
    hw: &HwConfig,
) -> ValidationReport {
    let schemes = s.group_schemes(block_schemes);
    let homes = output_homes(s, &schemes);
    let ab = hw.act_bytes();
    let mut violations = Vec::new();
    let mut peak = [0u64; NUM_BUFFERS];
    let mut bufs = Buffers::default();
    let mut offchip: Vec<bool> = vec![false; s.groups.len()];

    if a.groups.len() != s.groups.len() {
        violations.push(Violation {
            group: 0,
            layer: 0,
            buffer: None,
            message: format!("{} allocations for {} groups", a.groups.len(), s.groups.len()),
        });
        return ValidationReport { violations, peak };
    }

    for (g, ga) in a.groups.iter().enumerate() {
        let io = &s.io[g];
        let layer = s.groups[g].layers[0];
        let mut v = |buffer: Option<u8>, message: String| {
            violations.push(Violation { group: g, layer, buffer, message });
        };
        if ga.scheme != schemes[g] {
            v(None, format!("scheme {:?} disagrees with policy {:?}", ga.scheme, schemes[g]));
        }
        let vector = s.groups[g].se_role.is_vector();

        // alloc_in != alloc_out for frame groups (region overlap for vector groups)
        if let (Loc::Buffer { id: i, offset: io_off }, Loc::Buffer { id: o, offset: oo }) = (ga.input, ga.output) {
            let clash = if vector { i == o && io_off == oo } else { i == o };
            if clash {
                v(Some(o), "input and output share a buffer".into());
            }
        }
        if ga.scheme == Scheme::Frame && !vector {
            if ga.input == Loc::OffChip && !(is_concat(s, g) && tensor_off_chip(&homes, io.input)) {
                v(None, "frame-reuse input not in a buffer".into());
            }
            if matches!(homes[g], Home::OnChip | Home::Both) && ga.output == Loc::OffChip {
                v(None, "on-chip tensor assigned off-chip".into());
            }
        }
        if ga.scheme == Scheme::Row && !vector && (ga.output != Loc::OffChip || ga.input != Loc::OffChip) {
            v(ga.output.buffer_id(), "row-reuse features must stream off-chip".into());
        }
        if (io.long_path || io.terminal) && ga.output != Loc::OffChip && !ga.spill && !vector {
            v(ga.output.buffer_id(), "long-path or terminal output must be off-chip".into());
        }

        // reads
        let mut reads = vec![(io.input, ga.input, ga.stage_input)];
        if let (Some(t), Some(loc)) = (io.shortcut, ga.shortcut) {
            reads.push((t, loc, ga.stage_shortcut));
        } else if io.shortcut.is_some() != ga.shortcut.is_some() {
            v(None, "shortcut allocation missing or spurious".into());
        }
        for (t, loc, staged) in reads {
            match loc {
                Loc::Buffer { id, offset } => {
                    if staged {
                        let resident_off = match t {
                            TensorRef::Input => true,
                            TensorRef::Group(p) => offchip[p],
                        };
                        if !resident_off {
                            v(Some(id), format!("staging {t:?} that was never written off-chip"));
                        }
                        let len = s.tensor_size(t) * ab;
                        if !bufs.fits(id as usize, offset, len, None) {
                            v(Some(id), format!("staging {t:?} overwrites live data"));
                        }
                        bufs.release(t);
                        let until = last_frame_use(s, &schemes, t).unwrap_or(g);
                        bufs.place(id as usize, Region { tensor: t, offset, len, until });
                    } else {
                        let here = bufs.slots[id as usize].iter().any(|r| r.tensor == t && r.offset == offset);
                        if !here {
                            v(Some(id), format!("read of {t:?} before it was written to buffer {id}"));
                        }
                    }
                }
                Loc::OffChip => {
                    let ok = match t {
                        TensorRef::Input => true,
                        TensorRef::Group(p) => offchip[p],
                    };
                    if !ok {
                        v(None, format!("off-chip read of {t:?} that was never written off-chip"));
                    }
                }
            }
        }

        // write
        let t_out = TensorRef::Group(g);
        match ga.output {
            Loc::Buffer { id, offset } => {
                let len = s.tensor_size(t_out) * ab;
                let in_place = io.shortcut.filter(|&t| last_use(s, t) <= g);
                let live_clash = bufs.slots[id as usize].iter().any(|r| {
                    Some(r.tensor) != in_place
                        && r.tensor != io.input
                        && !(offset + len <= r.offset || r.offset + r.len <= offset)
                }) || bufs.slots[id as usize].iter().any(|r| {
                    r.tensor == io.input && r.until > g && !(offset + len <= r.offset || r.offset + r.len <= offset)
                });
                if live_clash {
                    v(Some(id), format!("write over live data in buffer {id}"));
                }
                if let Some(t) = in_place {
                    if bufs.slots[id as usize].iter().any(|r| r.tensor == t) {
                        bufs.release(t);
                    }
                }
                let until = if ga.spill { last_frame_use(s, &schemes, t_out).unwrap_or(g) } else { last_use(s, t_out) };
                bufs.place(id as usize, Region { tensor: t_out, offset, len, until });
                offchip[g] = ga.spill;
            }
            Loc::OffChip => offchip[g] = true,
        }
        for (i, regs) in bufs.slots.iter().enumerate() {
            let top = regs.iter().map(|r| r.offset + r.len).max().unwrap_or(0);
            peak[i] = peak[i].max(top);
        }
        bufs.expire(g);
    }
    ValidationReport { violations, peak }
}
