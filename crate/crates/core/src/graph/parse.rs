use serde::{Deserialize, Serialize};

use super::{Activation, LayerKind, LayerNode, NetworkGraph, Source};
use crate::error::{Error, Result};

/// On-disk network description (JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkFile {
    pub name: String,
    pub input: InputSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_gop: Option<f64>,
    pub layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub w: u32,
    pub h: u32,
    pub c: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_c: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<u32>,
    #[serde(default, skip_serializing_if = "is_none_act")]
    pub activation: Activation,
    #[serde(default, skip_serializing_if = "is_false")]
    pub batchnorm: bool,
    /// Primary input layer; defaults to the previous layer (or the network input for layer 0).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shortcut: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub concat: Vec<usize>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub quant_shift: i8,
}

fn is_none_act(a: &Activation) -> bool {
    *a == Activation::None
}
fn is_false(b: &bool) -> bool {
    !*b
}
fn is_zero(v: &i8) -> bool {
    *v == 0
}

impl LayerSpec {
    pub fn new(kind: LayerKind) -> Self {
        LayerSpec {
            kind: kind.as_str().to_string(),
            name: None,
            out_c: None,
            kernel: None,
            stride: None,
            activation: Activation::None,
            batchnorm: false,
            input: None,
            shortcut: None,
            concat: Vec::new(),
            quant_shift: 0,
        }
    }
}

/// Parses a JSON network description into a validated, shape-propagated graph.
pub fn parse_network(document: &str) -> Result<NetworkGraph> {
    parse_network_with_input(document, None)
}

/// Like [`parse_network`] but overrides the declared input width/height.
pub fn parse_network_with_input(document: &str, input_wh: Option<(u32, u32)>) -> Result<NetworkGraph> {
    let mut file: NetworkFile = serde_json::from_str(document).map_err(|e| Error::Parse(e.to_string()))?;
    if let Some((w, h)) = input_wh {
        file.input.w = w;
        file.input.h = h;
    }
    build_graph(&file)
}

/// Canonical JSON form of a graph.
pub fn serialize_network(graph: &NetworkGraph) -> String {
    let file = to_file(graph);
    serde_json::to_string_pretty(&file).expect("network file serializes")
}

pub(crate) fn to_file(graph: &NetworkGraph) -> NetworkFile {
    let layers = graph
        .layers
        .iter()
        .map(|l| {
            let mut s = LayerSpec::new(l.kind);
            s.name = Some(l.name.clone());
            match l.kind {
                LayerKind::Conv | LayerKind::Fc => s.out_c = Some(l.out_c),
                _ => {}
            }
            match l.kind {
                LayerKind::Conv | LayerKind::Dwconv | LayerKind::Maxpool => {
                    s.kernel = Some(l.kernel);
                    s.stride = Some(l.stride);
                }
                LayerKind::Upsample => s.stride = Some(l.stride),
                _ => {}
            }
            s.activation = l.activation;
            s.batchnorm = l.batchnorm_folded;
            if l.kind != LayerKind::Concat {
                if let Source::Layer(src) = l.input_src {
                    if src + 1 != l.id {
                        s.input = Some(src);
                    }
                }
            }
            s.shortcut = l.shortcut_src;
            s.concat = l.concat_srcs.clone();
            s.quant_shift = l.quant_shift;
            s
        })
        .collect();
    NetworkFile {
        name: graph.name.clone(),
        input: InputSpec { w: graph.input_w, h: graph.input_h, c: graph.input_c },
        declared_gop: graph.declared_gop,
        layers,
    }
}

fn shape_of(layers: &[LayerNode], file: &NetworkFile, src: Source) -> (u32, u32, u32) {
    match src {
        Source::Network => (file.input.w, file.input.h, file.input.c),
        Source::Layer(i) => (layers[i].out_w, layers[i].out_h, layers[i].out_c),
    }
}

fn check_src(id: usize, src: usize) -> Result<()> {
    if src >= id {
        return Err(Error::Cycle { layer: id, src });
    }
    Ok(())
}

pub fn build_graph(file: &NetworkFile) -> Result<NetworkGraph> {
    if file.input.w == 0 || file.input.h == 0 || file.input.c == 0 {
        return Err(Error::Parse("input dimensions must be positive".into()));
    }
    let mut layers: Vec<LayerNode> = Vec::with_capacity(file.layers.len());
    for (id, spec) in file.layers.iter().enumerate() {
        let kind = LayerKind::from_name(&spec.kind).ok_or_else(|| Error::UnknownKind {
            layer: id,
            kind: spec.kind.clone(),
        })?;
        let bad = |detail: &str| Error::InvalidLayer { layer: id, detail: detail.to_string() };

        let input_src = match spec.input {
            Some(s) => {
                check_src(id, s)?;
                Source::Layer(s)
            }
            None if id == 0 => Source::Network,
            None => Source::Layer(id - 1),
        };
        if let Some(s) = spec.shortcut {
            check_src(id, s)?;
        }
        for &s in &spec.concat {
            check_src(id, s)?;
        }

        let (mut in_w, mut in_h, mut in_c) = shape_of(&layers, file, input_src);
        let stride = spec.stride.unwrap_or(1);
        let mut kernel = spec.kernel.unwrap_or(1);
        let (out_w, out_h, out_c);
        match kind {
            LayerKind::Conv | LayerKind::Dwconv => {
                if kernel == 0 || kernel % 2 == 0 {
                    return Err(bad("kernel must be odd and positive"));
                }
                if stride != 1 && stride != 2 {
                    return Err(bad("stride must be 1 or 2"));
                }
                out_c = if kind == LayerKind::Conv {
                    spec.out_c.ok_or_else(|| bad("conv requires out_c"))?
                } else {
                    if let Some(c) = spec.out_c {
                        if c != in_c {
                            return Err(bad("dwconv out_c must equal in_c"));
                        }
                    }
                    in_c
                };
                out_w = in_w.div_ceil(stride);
                out_h = in_h.div_ceil(stride);
            }
            LayerKind::Fc => {
                kernel = 1;
                out_c = spec.out_c.ok_or_else(|| bad("fc requires out_c"))?;
                out_w = 1;
                out_h = 1;
            }
            LayerKind::Maxpool => {
                if stride != 1 && stride != 2 {
                    return Err(bad("stride must be 1 or 2"));
                }
                kernel = spec.kernel.unwrap_or(stride);
                out_c = in_c;
                out_w = in_w.div_ceil(stride);
                out_h = in_h.div_ceil(stride);
            }
            LayerKind::AvgpoolGlobal => {
                kernel = 1;
                out_c = in_c;
                out_w = 1;
                out_h = 1;
            }
            LayerKind::Upsample => {
                if stride < 2 {
                    return Err(bad("upsample factor (stride) must be >= 2"));
                }
                out_c = in_c;
                out_w = in_w * stride;
                out_h = in_h * stride;
            }
            LayerKind::Activation | LayerKind::EltwiseAdd | LayerKind::Scale => {
                out_c = in_c;
                out_w = in_w;
                out_h = in_h;
            }
            LayerKind::Concat => {
                if spec.concat.is_empty() {
                    return Err(bad("concat requires at least one source"));
                }
                let (w0, h0, _) = shape_of(&layers, file, Source::Layer(spec.concat[0]));
                let mut c = 0;
                for &s in &spec.concat {
                    let (w, h, cc) = shape_of(&layers, file, Source::Layer(s));
                    if w != w0 || h != h0 {
                        return Err(Error::ShapeMismatch {
                            layer: id,
                            detail: format!("concat source {s} is {w}x{h}, expected {w0}x{h0}"),
                        });
                    }
                    c += cc;
                }
                in_w = w0;
                in_h = h0;
                in_c = c;
                out_w = w0;
                out_h = h0;
                out_c = c;
            }
        }

        match kind {
            LayerKind::EltwiseAdd => {
                let s = spec.shortcut.ok_or_else(|| bad("eltwise_add requires shortcut"))?;
                let sh = shape_of(&layers, file, Source::Layer(s));
                if sh != (in_w, in_h, in_c) {
                    return Err(Error::ShapeMismatch {
                        layer: id,
                        detail: format!(
                            "shortcut {s} is {}x{}x{}, input is {in_w}x{in_h}x{in_c}",
                            sh.0, sh.1, sh.2
                        ),
                    });
                }
            }
            LayerKind::Scale => {
                let s = spec.shortcut.ok_or_else(|| bad("scale requires a multiplier source in `shortcut`"))?;
                let sh = shape_of(&layers, file, Source::Layer(s));
                if sh != (1, 1, in_c) {
                    return Err(Error::ShapeMismatch {
                        layer: id,
                        detail: format!("scale multiplier {s} must be 1x1x{in_c}"),
                    });
                }
            }
            _ => {
                if spec.shortcut.is_some() {
                    return Err(bad("shortcut only valid on eltwise_add/scale"));
                }
            }
        }
        if kind != LayerKind::Concat && !spec.concat.is_empty() {
            return Err(bad("concat sources only valid on concat"));
        }

        layers.push(LayerNode {
            id,
            name: spec.name.clone().unwrap_or_else(|| format!("{}{}", kind.as_str(), id)),
            kind,
            in_w,
            in_h,
            in_c,
            out_w,
            out_h,
            out_c,
            kernel,
            stride: if matches!(kind, LayerKind::Fc | LayerKind::AvgpoolGlobal) { 1 } else { stride },
            activation: spec.activation,
            batchnorm_folded: spec.batchnorm,
            input_src: if kind == LayerKind::Concat {
                Source::Layer(spec.concat[0])
            } else {
                input_src
            },
            shortcut_src: spec.shortcut,
            concat_srcs: spec.concat.clone(),
            quant_shift: spec.quant_shift,
            long_path_srcs: Vec::new(),
        });
    }
    flag_long_paths(&mut layers);
    Ok(NetworkGraph {
        name: file.name.clone(),
        input_w: file.input.w,
        input_h: file.input.h,
        input_c: file.input.c,
        declared_gop: file.declared_gop,
        layers,
    })
}

/// Residual spans `[entry, eltwise]` in layer ids.
pub(crate) fn residual_spans(layers: &[LayerNode]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    for l in layers.iter().filter(|l| l.kind == LayerKind::EltwiseAdd) {
        let t = l.shortcut_src.expect("validated");
        let mut entry = t;
        // Projection shortcut: the shortcut conv reads the block entry, which a
        // later layer of the main branch also reads.
        if layers[t].kind.is_compute() {
            if let Source::Layer(x) = layers[t].input_src {
                let branch = layers[t + 1..l.id].iter().any(|m| m.input_src == Source::Layer(x));
                if branch {
                    entry = x;
                }
            }
        }
        spans.push((entry, l.id));
    }
    spans
}

fn flag_long_paths(layers: &mut [LayerNode]) {
    let spans = residual_spans(layers);
    for i in 0..layers.len() {
        let mut long = Vec::new();
        let srcs: Vec<usize> = if layers[i].kind == LayerKind::Concat {
            layers[i].concat_srcs.clone()
        } else {
            match layers[i].input_src {
                Source::Layer(s) => vec![s],
                Source::Network => vec![],
            }
        };
        for s in srcs {
            if s + 1 == i {
                continue;
            }
            let covered = spans.iter().any(|&(a, b)| a <= s && i <= b);
            let vector_gap = layers[s + 1..i].iter().all(|m| m.out_w == 1 && m.out_h == 1);
            // a single-layer side branch in between keeps the source live only briefly
            let short_gap = i - s == 2;
            if !covered && !vector_gap && !short_gap && !long.contains(&s) {
                long.push(s);
            }
        }
        layers[i].long_path_srcs = long;
    }
}
