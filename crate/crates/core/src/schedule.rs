use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{
    detect_blocks, fuse_groups_with, infer_segments, Block, FuseOptions, LayerKind, NetworkGraph, NodeGroup,
    SegmentPlan, Source,
};
use crate::policy::{ReusePolicy, Scheme};

/// A tensor at group granularity: the network input or a group's output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum TensorRef {
    Input,
    Group(usize),
}

/// Group-level dataflow derived from the layer graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupIo {
    pub input: TensorRef,
    pub shortcut: Option<TensorRef>,
    /// Concat sources and whether each one is long-path.
    pub concat_srcs: Vec<(TensorRef, bool)>,
    /// Groups reading this group's output, ascending.
    pub consumers: Vec<usize>,
    /// The output has a long-lived consumer and is kept off-chip.
    pub long_path: bool,
    /// No group consumes the output.
    pub terminal: bool,
}

/// A parsed network with its fused groups, blocks and segment plan.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub graph: NetworkGraph,
    pub groups: Vec<NodeGroup>,
    pub blocks: Vec<Block>,
    pub plan: SegmentPlan,
    pub io: Vec<GroupIo>,
    pub block_of_group: Vec<usize>,
    /// Groups consuming the network input.
    pub input_consumers: Vec<usize>,
}

impl Schedule {
    pub fn new(graph: NetworkGraph) -> Result<Self> {
        Schedule::with_options(graph, FuseOptions::default())
    }

    pub fn with_options(graph: NetworkGraph, opts: FuseOptions) -> Result<Self> {
        let groups = fuse_groups_with(&graph, opts);
        let blocks = detect_blocks(&graph, &groups)?;
        let plan = infer_segments(&graph, &groups, &blocks);
        let gmap = crate::graph::blocks_group_map(&graph, &groups);

        let tref = |s: Source| -> Result<TensorRef> {
            match s {
                Source::Network => Ok(TensorRef::Input),
                Source::Layer(l) => {
                    let g = gmap[l];
                    if *groups[g].layers.last().unwrap() != l {
                        return Err(Error::MalformedGraph(format!("layer {l} is read from inside fused group {g}")));
                    }
                    Ok(TensorRef::Group(g))
                }
            }
        };

        let mut io = Vec::with_capacity(groups.len());
        for g in &groups {
            let head = g.head(&graph);
            let input = tref(head.input_src)?;
            let shortcut = match g.shortcut_layer(&graph) {
                Some(l) => Some(tref(Source::Layer(l.shortcut_src.unwrap()))?),
                None => None,
            };
            let mut concat_srcs = Vec::new();
            if head.kind == LayerKind::Concat {
                for &s in &head.concat_srcs {
                    concat_srcs.push((tref(Source::Layer(s))?, head.long_path_srcs.contains(&s)));
                }
            }
            io.push(GroupIo {
                input,
                shortcut,
                concat_srcs,
                consumers: Vec::new(),
                long_path: false,
                terminal: false,
            });
        }
        let mut input_consumers = Vec::new();
        for (gid, g) in groups.iter().enumerate() {
            let mut reads: Vec<TensorRef> = vec![io[gid].input];
            reads.extend(io[gid].shortcut);
            reads.extend(io[gid].concat_srcs.iter().map(|c| c.0));
            for t in reads {
                match t {
                    TensorRef::Input => {
                        if !input_consumers.contains(&gid) {
                            input_consumers.push(gid);
                        }
                    }
                    TensorRef::Group(p) => {
                        if !io[p].consumers.contains(&gid) {
                            io[p].consumers.push(gid);
                        }
                    }
                }
            }
            for &l in &g.layers {
                for &s in &graph.layers[l].long_path_srcs {
                    io[gmap[s]].long_path = true;
                }
            }
        }
        for x in io.iter_mut() {
            x.consumers.sort_unstable();
            x.terminal = x.consumers.is_empty();
        }
        let mut block_of_group = vec![0; groups.len()];
        for b in &blocks {
            for g in b.groups() {
                block_of_group[g] = b.block_id;
            }
        }
        Ok(Schedule { graph, groups, blocks, plan, io, block_of_group, input_consumers })
    }

    pub fn tensor_size(&self, t: TensorRef) -> u64 {
        match t {
            TensorRef::Input => self.graph.input_size(),
            TensorRef::Group(g) => self.groups[g].out_size(&self.graph),
        }
    }

    /// Per-group schemes from per-block schemes.
    pub fn group_schemes(&self, block_schemes: &[Scheme]) -> Vec<Scheme> {
        self.block_of_group.iter().map(|&b| block_schemes[b]).collect()
    }

    pub fn block_schemes(&self, policy: &ReusePolicy) -> Result<Vec<Scheme>> {
        policy.schemes(&self.plan)
    }
}
