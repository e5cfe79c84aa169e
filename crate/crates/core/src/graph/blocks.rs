use serde::Serialize;

use super::parse::residual_spans;
use super::{NetworkGraph, NodeGroup, SeRole, Source};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Plain,
    Residual,
    ResidualSe,
}

/// Unit of reuse-scheme assignment: a residual block or a standalone group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Block {
    pub block_id: usize,
    /// Group ids `start..end`.
    pub start: usize,
    pub end: usize,
    pub kind: BlockKind,
}

impl Block {
    pub fn groups(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

pub(crate) fn group_of_layer(graph: &NetworkGraph, groups: &[NodeGroup]) -> Vec<usize> {
    let mut map = vec![usize::MAX; graph.layers.len()];
    for g in groups {
        for &l in &g.layers {
            map[l] = g.group_id;
        }
    }
    map
}

/// Partitions groups into blocks. Residual spans become one block each; an SE
/// branch outside any residual span is kept together with the depthwise group
/// feeding it, so a cut never splits it.
pub fn detect_blocks(graph: &NetworkGraph, groups: &[NodeGroup]) -> Result<Vec<Block>> {
    let gmap = group_of_layer(graph, groups);
    let mut spans: Vec<(usize, usize, BlockKind)> = Vec::new();
    for (entry, elt) in residual_spans(&graph.layers) {
        let start = gmap[entry] + 1;
        let end = gmap[elt] + 1;
        let se = groups[start..end].iter().any(|g| g.se_role != SeRole::None);
        spans.push((start, end, if se { BlockKind::ResidualSe } else { BlockKind::Residual }));
    }
    for g in groups.iter().filter(|g| g.se_role == SeRole::SeScale) {
        let inside = spans.iter().any(|&(a, b, _)| a <= g.group_id && g.group_id < b);
        if inside {
            continue;
        }
        let start = match g.head(graph).input_src {
            Source::Layer(l) => gmap[l],
            Source::Network => g.group_id - 3,
        };
        spans.push((start, g.group_id + 1, BlockKind::Plain));
    }
    spans.sort();
    for w in spans.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(Error::MalformedGraph(format!(
                "overlapping residual ranges: groups {}..{} and {}..{}",
                w[0].0, w[0].1, w[1].0, w[1].1
            )));
        }
    }
    let mut blocks = Vec::new();
    let mut next = 0;
    let push = |blocks: &mut Vec<Block>, start, end, kind| {
        blocks.push(Block { block_id: blocks.len(), start, end, kind });
    };
    for (a, b, kind) in spans {
        while next < a {
            push(&mut blocks, next, next + 1, BlockKind::Plain);
            next += 1;
        }
        push(&mut blocks, a, b, kind);
        next = b;
    }
    while next < groups.len() {
        push(&mut blocks, next, next + 1, BlockKind::Plain);
        next += 1;
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{fuse_groups, parse_network};

    fn blocks_of(layers: &str) -> Result<Vec<Block>> {
        let g = parse_network(&format!(r#"{{"name":"t","input":{{"w":8,"h":8,"c":8}},"layers":[{layers}]}}"#)).unwrap();
        let groups = fuse_groups(&g);
        detect_blocks(&g, &groups)
    }

    #[test]
    fn plain_chain_singletons() {
        let b = blocks_of(r#"{"kind":"conv","out_c":8,"kernel":3},{"kind":"conv","out_c":8,"kernel":3},{"kind":"conv","out_c":8,"kernel":3}"#)
            .unwrap();
        assert_eq!(b.len(), 3);
        assert!(b.iter().all(|b| b.kind == BlockKind::Plain && b.len() == 1));
    }

    #[test]
    fn identity_and_projection_blocks() {
        let b = blocks_of(
            r#"{"kind":"conv","out_c":8,"kernel":3},
               {"kind":"conv","out_c":8,"kernel":3},{"kind":"conv","out_c":8,"kernel":3},{"kind":"eltwise_add","shortcut":0},
               {"kind":"conv","out_c":16,"kernel":1,"stride":2},{"kind":"conv","out_c":16,"kernel":3,"stride":2,"input":3},{"kind":"eltwise_add","shortcut":4}"#,
        )
        .unwrap();
        let shape: Vec<(usize, usize, BlockKind)> = b.iter().map(|b| (b.start, b.end, b.kind)).collect();
        assert_eq!(
            shape,
            vec![(0, 1, BlockKind::Plain), (1, 3, BlockKind::Residual), (3, 5, BlockKind::Residual)]
        );
    }

    #[test]
    fn nested_residual_is_malformed() {
        let e = blocks_of(
            r#"{"kind":"conv","out_c":8,"kernel":3},
               {"kind":"conv","out_c":8,"kernel":3},{"kind":"conv","out_c":8,"kernel":3},{"kind":"eltwise_add","shortcut":1},
               {"kind":"conv","out_c":8,"kernel":3},{"kind":"eltwise_add","shortcut":0}"#,
        )
        .unwrap_err();
        assert!(matches!(e, Error::MalformedGraph(_)));
    }
}
