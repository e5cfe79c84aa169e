use serde::Serialize;

use super::{LayerKind, LayerNode, NetworkGraph, Source};

/// Role of a group inside a squeeze-and-excitation branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SeRole {
    #[default]
    None,
    SeGap,
    SeFc1,
    SeFc2,
    SeScale,
}

impl SeRole {
    pub fn code(self) -> u32 {
        match self {
            SeRole::None => 0,
            SeRole::SeGap => 1,
            SeRole::SeFc1 => 2,
            SeRole::SeFc2 => 3,
            SeRole::SeScale => 4,
        }
    }

    pub fn from_code(c: u32) -> Option<Self> {
        Some(match c {
            0 => SeRole::None,
            1 => SeRole::SeGap,
            2 => SeRole::SeFc1,
            3 => SeRole::SeFc2,
            4 => SeRole::SeScale,
            _ => return None,
        })
    }

    /// Vector-sized SE tensors kept on-chip regardless of the reuse scheme.
    pub fn is_vector(self) -> bool {
        matches!(self, SeRole::SeGap | SeRole::SeFc1 | SeRole::SeFc2)
    }
}

/// A fused unit executed by one instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeGroup {
    pub group_id: usize,
    pub layers: Vec<usize>,
    pub se_role: SeRole,
    /// Concat layer this group's output is redirected into, if any.
    pub concat_target: Option<usize>,
}

impl NodeGroup {
    pub fn head<'a>(&self, g: &'a NetworkGraph) -> &'a LayerNode {
        &g.layers[self.layers[0]]
    }

    pub fn last<'a>(&self, g: &'a NetworkGraph) -> &'a LayerNode {
        &g.layers[*self.layers.last().expect("non-empty group")]
    }

    pub fn find<'a>(&self, g: &'a NetworkGraph, kind: LayerKind) -> Option<&'a LayerNode> {
        self.layers.iter().map(|&i| &g.layers[i]).find(|l| l.kind == kind)
    }

    pub fn has(&self, g: &NetworkGraph, kind: LayerKind) -> bool {
        self.find(g, kind).is_some()
    }

    pub fn is_compute(&self, g: &NetworkGraph) -> bool {
        self.head(g).kind.is_compute()
    }

    /// Primary input bytes.
    pub fn in_size(&self, g: &NetworkGraph) -> u64 {
        self.head(g).in_size()
    }

    /// Output bytes after every fused post-op (pool, upsample).
    pub fn out_size(&self, g: &NetworkGraph) -> u64 {
        self.last(g).out_size()
    }

    /// The layer inside the group reading a second operand (eltwise or scale).
    pub fn shortcut_layer<'a>(&self, g: &'a NetworkGraph) -> Option<&'a LayerNode> {
        self.layers.iter().map(|&i| &g.layers[i]).find(|l| l.shortcut_src.is_some())
    }

    pub fn weight_bytes(&self, g: &NetworkGraph, act_bytes: u64) -> u64 {
        self.layers.iter().map(|&i| g.layers[i].weight_bytes(act_bytes)).sum()
    }

    pub fn macs(&self, g: &NetworkGraph) -> u64 {
        self.layers.iter().map(|&i| g.layers[i].macs()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FuseOptions {
    /// Fuse an element-wise shortcut add into the producing convolution.
    pub fuse_shortcut: bool,
}

impl Default for FuseOptions {
    fn default() -> Self {
        FuseOptions { fuse_shortcut: true }
    }
}

pub fn fuse_groups(graph: &NetworkGraph) -> Vec<NodeGroup> {
    fuse_groups_with(graph, FuseOptions::default())
}

/// Greedily fuses each layer into the open group when it consumes that group's
/// sole-consumer output and the accelerator chain supports it.
pub fn fuse_groups_with(graph: &NetworkGraph, opts: FuseOptions) -> Vec<NodeGroup> {
    let consumers = graph.consumers();
    let mut groups: Vec<NodeGroup> = Vec::new();
    for layer in &graph.layers {
        let absorb = groups.last().is_some_and(|g| can_absorb(graph, &consumers, g, layer, opts));
        if absorb {
            groups.last_mut().unwrap().layers.push(layer.id);
        } else {
            groups.push(NodeGroup {
                group_id: groups.len(),
                layers: vec![layer.id],
                se_role: SeRole::None,
                concat_target: None,
            });
        }
    }
    tag_se(graph, &mut groups);
    for l in graph.layers.iter().filter(|l| l.kind == LayerKind::Concat) {
        for g in groups.iter_mut() {
            if l.concat_srcs.contains(g.layers.last().unwrap()) && g.concat_target.is_none() {
                g.concat_target = Some(l.id);
            }
        }
    }
    groups
}

fn can_absorb(
    graph: &NetworkGraph,
    consumers: &[Vec<usize>],
    group: &NodeGroup,
    layer: &LayerNode,
    opts: FuseOptions,
) -> bool {
    let last = *group.layers.last().unwrap();
    if layer.input_src != Source::Layer(last) || consumers[last] != [layer.id] {
        return false;
    }
    let head = group.head(graph);
    let has = |k| group.has(graph, k);
    if has(LayerKind::Upsample) {
        // upsample always terminates the chain
        return false;
    }
    match layer.kind {
        LayerKind::Activation => true,
        LayerKind::Maxpool => head.kind.is_compute() && head.kind != LayerKind::Fc && !has(LayerKind::Maxpool),
        LayerKind::EltwiseAdd => {
            opts.fuse_shortcut
                && matches!(head.kind, LayerKind::Conv | LayerKind::Dwconv)
                && !has(LayerKind::EltwiseAdd)
                && !group.layers.contains(&layer.shortcut_src.unwrap())
        }
        LayerKind::Upsample => matches!(head.kind, LayerKind::Conv | LayerKind::Dwconv),
        _ => false,
    }
}

fn tag_se(graph: &NetworkGraph, groups: &mut [NodeGroup]) {
    let n = groups.len();
    for i in 0..n.saturating_sub(3) {
        let kinds: Vec<LayerKind> = (0..4).map(|d| groups[i + d].head(graph).kind).collect();
        if kinds != [LayerKind::AvgpoolGlobal, LayerKind::Fc, LayerKind::Fc, LayerKind::Scale] {
            continue;
        }
        let gap = groups[i].head(graph);
        let scale = groups[i + 3].head(graph);
        let fc2_last = *groups[i + 2].layers.last().unwrap();
        if scale.shortcut_src == Some(fc2_last) && scale.input_src == gap.input_src {
            groups[i].se_role = SeRole::SeGap;
            groups[i + 1].se_role = SeRole::SeFc1;
            groups[i + 2].se_role = SeRole::SeFc2;
            groups[i + 3].se_role = SeRole::SeScale;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_network;

    fn net(layers: &str) -> NetworkGraph {
        parse_network(&format!(r#"{{"name":"t","input":{{"w":8,"h":8,"c":8}},"layers":[{layers}]}}"#)).unwrap()
    }

    #[test]
    fn conv_bn_act_pool_is_one_group() {
        let g = net(
            r#"{"kind":"conv","out_c":8,"kernel":3,"batchnorm":true},{"kind":"activation","activation":"relu"},{"kind":"maxpool","stride":2}"#,
        );
        let groups = fuse_groups(&g);
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].layers, vec![0, 1, 2]);
    }

    #[test]
    fn eltwise_attaches_to_producing_conv() {
        let g = net(
            r#"{"kind":"conv","out_c":8,"kernel":3,"activation":"relu"},{"kind":"eltwise_add","shortcut":0,"input":0},{"kind":"conv","out_c":8,"kernel":3,"activation":"relu"}"#,
        );
        // eltwise reads layer 0 twice; it cannot fuse because its shortcut lives in the group
        let groups = fuse_groups(&g);
        assert_eq!(groups.len(), 3);

        let g = net(
            r#"{"kind":"conv","out_c":8,"kernel":3,"activation":"relu"},{"kind":"conv","out_c":8,"kernel":3},{"kind":"eltwise_add","shortcut":0},{"kind":"activation","activation":"relu"},{"kind":"conv","out_c":8,"kernel":3,"activation":"relu"}"#,
        );
        let groups = fuse_groups(&g);
        assert_eq!(groups.len(), 3);
        assert_eq!(groups[1].layers, vec![1, 2, 3]);
        let unfused = fuse_groups_with(&g, FuseOptions { fuse_shortcut: false });
        assert_eq!(unfused.len(), 4);
    }

    #[test]
    fn shared_output_blocks_fusion() {
        let g = net(r#"{"kind":"conv","out_c":8,"kernel":3},{"kind":"maxpool","stride":2},{"kind":"conv","out_c":8,"kernel":1,"input":0}"#);
        let groups = fuse_groups(&g);
        assert_eq!(groups.len(), 3);
    }

    #[test]
    fn upsample_terminates_chain() {
        let g = net(r#"{"kind":"conv","out_c":8,"kernel":1},{"kind":"upsample","stride":2},{"kind":"maxpool","stride":2}"#);
        let groups = fuse_groups(&g);
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].layers, vec![0, 1]);
    }

    #[test]
    fn concat_records_redirect() {
        let g = net(r#"{"kind":"conv","out_c":8,"kernel":3},{"kind":"conv","out_c":8,"kernel":3},{"kind":"concat","concat":[1,0]}"#);
        let groups = fuse_groups(&g);
        assert_eq!(groups[0].concat_target, Some(2));
        assert_eq!(groups[1].concat_target, Some(2));
        assert_eq!(groups[2].concat_target, None);
    }

    #[test]
    fn se_roles_tagged() {
        let g = net(
            r#"{"kind":"conv","out_c":8,"kernel":1},
               {"kind":"conv","out_c":32,"kernel":1,"activation":"swish"},
               {"kind":"dwconv","kernel":3,"activation":"swish"},
               {"kind":"avgpool_global"},
               {"kind":"fc","out_c":2,"activation":"swish"},
               {"kind":"fc","out_c":32,"activation":"sigmoid"},
               {"kind":"scale","input":2,"shortcut":5},
               {"kind":"conv","out_c":8,"kernel":1},
               {"kind":"eltwise_add","shortcut":0}"#,
        );
        let groups = fuse_groups(&g);
        let roles: Vec<SeRole> = groups.iter().map(|g| g.se_role).collect();
        assert_eq!(
            roles,
            vec![
                SeRole::None,
                SeRole::None,
                SeRole::None,
                SeRole::SeGap,
                SeRole::SeFc1,
                SeRole::SeFc2,
                SeRole::SeScale,
                SeRole::None
            ]
        );
        assert_eq!(groups[7].layers, vec![7, 8]);
    }
}
