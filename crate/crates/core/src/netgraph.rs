//! Convolutional architectures as DAGs, with cumulative stride, theoretical
//! receptive field and feature-map size per node.
//!
//! For a conv or pool node with kernel `k` on an input whose cumulative stride
//! is `s_in`, the receptive field grows as `rf = rf_in + (k - 1) * s_in`.
//! Concat nodes merge branches of different depth, so they carry an interval
//! `[rf_min, rf_max]` instead of a single value. Only theoretical receptive
//! fields are computed.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Input,
    Conv,
    Pool,
    Concat,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LayerKind::Input => "input",
            LayerKind::Conv => "conv",
            LayerKind::Pool => "pool",
            LayerKind::Concat => "concat",
        };
        f.write_str(s)
    }
}

/// Spatial padding of a conv or pool layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Padding {
    /// No padding: `floor((in - k) / s) + 1`.
    #[default]
    Valid,
    /// Output size `ceil(in / s)`.
    Same,
    /// Symmetric explicit padding of `p` pixels: `floor((in + 2p - k) / s) + 1`.
    Explicit(u32),
}

impl Padding {
    pub fn output_size(self, input: u32, kernel: u32, stride: u32) -> Option<u32> {
        match self {
            Padding::Valid => input.checked_sub(kernel).map(|d| d / stride + 1),
            Padding::Same => Some(input.div_ceil(stride)),
            Padding::Explicit(p) => (input + 2 * p).checked_sub(kernel).map(|d| d / stride + 1),
        }
    }
}

impl fmt::Display for Padding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Padding::Valid => f.write_str("valid"),
            Padding::Same => f.write_str("same"),
            Padding::Explicit(p) => write!(f, "{p}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerNode {
    pub name: String,
    pub kind: LayerKind,
    pub kernel: Option<u32>,
    pub stride: Option<u32>,
    pub padding: Padding,
    pub inputs: Vec<String>,
    /// Marks the node as a row of the summary table.
    pub table: bool,
}

impl LayerNode {
    pub fn input(name: &str) -> Self {
        LayerNode {
            name: name.to_owned(),
            kind: LayerKind::Input,
            kernel: None,
            stride: None,
            padding: Padding::Valid,
            inputs: Vec::new(),
            table: false,
        }
    }

    pub fn conv(name: &str, kernel: u32, stride: u32, padding: Padding, input: &str) -> Self {
        LayerNode {
            name: name.to_owned(),
            kind: LayerKind::Conv,
            kernel: Some(kernel),
            stride: Some(stride),
            padding,
            inputs: vec![input.to_owned()],
            table: false,
        }
    }

    pub fn pool(name: &str, kernel: u32, stride: u32, padding: Padding, input: &str) -> Self {
        LayerNode {
            kind: LayerKind::Pool,
            ..Self::conv(name, kernel, stride, padding, input)
        }
    }

    pub fn concat(name: &str, inputs: &[&str]) -> Self {
        LayerNode {
            name: name.to_owned(),
            kind: LayerKind::Concat,
            kernel: None,
            stride: None,
            padding: Padding::Valid,
            inputs: inputs.iter().map(|s| (*s).to_owned()).collect(),
            table: false,
        }
    }

    pub fn in_table(mut self) -> Self {
        self.table = true;
        self
    }

    fn check(&self) -> Result<()> {
        let bad = |message: &str| {
            Err(Error::InvalidLayer {
                layer: self.name.clone(),
                message: message.to_owned(),
            })
        };
        match self.kind {
            LayerKind::Input => {
                if !self.inputs.is_empty() {
                    return bad("input node must not have predecessors");
                }
                if self.kernel.is_some() || self.stride.is_some() {
                    return bad("input node must not set kernel or stride");
                }
            }
            LayerKind::Conv | LayerKind::Pool => {
                if self.inputs.len() != 1 {
                    return bad(&format!(
                        "{} requires exactly one input, found {}",
                        self.kind,
                        self.inputs.len()
                    ));
                }
                match (self.kernel, self.stride) {
                    (Some(k), Some(s)) if k >= 1 && s >= 1 => {}
                    (None, _) => return bad("missing field 'kernel'"),
                    (_, None) => return bad("missing field 'stride'"),
                    _ => return bad("kernel and stride must be >= 1"),
                }
            }
            LayerKind::Concat => {
                if self.inputs.len() < 2 {
                    return bad("concat requires at least two inputs");
                }
                if self.kernel.is_some() || self.stride.is_some() {
                    return bad("concat must not set kernel or stride");
                }
            }
        }
        Ok(())
    }
}

/// Validated, immutable architecture graph.
#[derive(Debug, Clone)]
pub struct NetGraph {
    nodes: Vec<LayerNode>,
    index: HashMap<String, usize>,
    /// Node indices in a topological order, ties resolved by declaration order.
    order: Vec<usize>,
    input: usize,
}

impl NetGraph {
    pub fn new(nodes: Vec<LayerNode>) -> Result<Self> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            n.check()?;
            if index.insert(n.name.clone(), i).is_some() {
                return Err(Error::DuplicateName(n.name.clone()));
            }
        }
        let inputs: Vec<usize> = nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.kind == LayerKind::Input)
            .map(|(i, _)| i)
            .collect();
        let input = match inputs.as_slice() {
            [] => return Err(Error::NoInputNode),
            [one] => *one,
            many => {
                return Err(Error::MultipleInputs(
                    many.iter().map(|&i| nodes[i].name.clone()).collect(),
                ))
            }
        };

        let mut preds: Vec<Vec<usize>> = Vec::with_capacity(nodes.len());
        for n in &nodes {
            let mut p = Vec::with_capacity(n.inputs.len());
            for name in &n.inputs {
                let &j = index.get(name).ok_or_else(|| Error::UnknownPredecessor {
                    layer: n.name.clone(),
                    input: name.clone(),
                })?;
                p.push(j);
            }
            preds.push(p);
        }

        // Kahn's algorithm; the ready set is a min-heap on declaration index so
        // the order is deterministic and matches the file whenever possible.
        let mut indegree: Vec<usize> = preds.iter().map(Vec::len).collect();
        let mut succs: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
        for (i, p) in preds.iter().enumerate() {
            for &j in p {
                succs[j].push(i);
            }
        }
        let mut ready: std::collections::BinaryHeap<std::cmp::Reverse<usize>> = indegree
            .iter()
            .enumerate()
            .filter(|(_, &d)| d == 0)
            .map(|(i, _)| std::cmp::Reverse(i))
            .collect();
        let mut order = Vec::with_capacity(nodes.len());
        while let Some(std::cmp::Reverse(i)) = ready.pop() {
            order.push(i);
            for &s in &succs[i] {
                indegree[s] -= 1;
                if indegree[s] == 0 {
                    ready.push(std::cmp::Reverse(s));
                }
            }
        }
        if order.len() != nodes.len() {
            let stuck = (0..nodes.len())
                .find(|&i| indegree[i] > 0)
                .expect("some node left unordered");
            return Err(Error::Cycle(nodes[stuck].name.clone()));
        }

        Ok(NetGraph {
            nodes,
            index,
            order,
            input,
        })
    }

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn node(&self, name: &str) -> Option<&LayerNode> {
        self.index.get(name).map(|&i| &self.nodes[i])
    }

    pub fn input_name(&self) -> &str {
        &self.nodes[self.input].name
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Per-node result of [`analyze`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeAnalysis {
    pub name: String,
    pub kind: LayerKind,
    pub cumulative_stride: u32,
    pub rf_min: u32,
    pub rf_max: u32,
    pub feature_height: u32,
    pub feature_width: u32,
    pub table: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct NetAnalysis {
    pub input_height: u32,
    pub input_width: u32,
    /// Nodes in topological order.
    pub nodes: Vec<NodeAnalysis>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl NetAnalysis {
    pub fn get(&self, name: &str) -> Option<&NodeAnalysis> {
        self.index.get(name).map(|&i| &self.nodes[i])
    }

    /// Rows flagged for the summary table, in topological order.
    pub fn table_rows(&self) -> impl Iterator<Item = &NodeAnalysis> {
        self.nodes.iter().filter(|n| n.table)
    }
}

/// Computes stride, receptive-field interval and feature size of every node.
pub fn analyze(graph: &NetGraph, input_size: (u32, u32)) -> Result<NetAnalysis> {
    let (h, w) = input_size;
    if h == 0 || w == 0 {
        return Err(Error::InvalidParameter(format!(
            "input size must be positive, got {h}x{w}"
        )));
    }
    let mut done: Vec<Option<NodeAnalysis>> = vec![None; graph.nodes.len()];
    for &i in &graph.order {
        let node = &graph.nodes[i];
        let pred = |name: &String| -> &NodeAnalysis {
            done[graph.index[name]]
                .as_ref()
                .expect("predecessor analyzed before successor")
        };
        let a = match node.kind {
            LayerKind::Input => NodeAnalysis {
                name: node.name.clone(),
                kind: node.kind,
                cumulative_stride: 1,
                rf_min: 1,
                rf_max: 1,
                feature_height: h,
                feature_width: w,
                table: node.table,
            },
            LayerKind::Conv | LayerKind::Pool => {
                let p = pred(&node.inputs[0]);
                let k = node.kernel.expect("validated");
                let s = node.stride.expect("validated");
                let grow = (k - 1) * p.cumulative_stride;
                let size = |dim: u32| {
                    node.padding
                        .output_size(dim, k, s)
                        .ok_or_else(|| Error::InvalidLayer {
                            layer: node.name.clone(),
                            message: format!(
                                "input extent {dim} smaller than kernel {k} with padding {}",
                                node.padding
                            ),
                        })
                };
                NodeAnalysis {
                    name: node.name.clone(),
                    kind: node.kind,
                    cumulative_stride: p.cumulative_stride * s,
                    rf_min: p.rf_min + grow,
                    rf_max: p.rf_max + grow,
                    feature_height: size(p.feature_height)?,
                    feature_width: size(p.feature_width)?,
                    table: node.table,
                }
            }
            LayerKind::Concat => {
                let parts: Vec<&NodeAnalysis> = node.inputs.iter().map(pred).collect();
                let stride = parts[0].cumulative_stride;
                if parts.iter().any(|p| p.cumulative_stride != stride) {
                    return Err(Error::StrideMismatch {
                        layer: node.name.clone(),
                        strides: parts.iter().map(|p| p.cumulative_stride).collect(),
                    });
                }
                let size = (parts[0].feature_height, parts[0].feature_width);
                if parts
                    .iter()
                    .any(|p| (p.feature_height, p.feature_width) != size)
                {
                    return Err(Error::FeatureSizeMismatch {
                        layer: node.name.clone(),
                        sizes: parts
                            .iter()
                            .map(|p| (p.feature_height, p.feature_width))
                            .collect(),
                    });
                }
                NodeAnalysis {
                    name: node.name.clone(),
                    kind: node.kind,
                    cumulative_stride: stride,
                    rf_min: parts.iter().map(|p| p.rf_min).min().expect(">= 2 inputs"),
                    rf_max: parts.iter().map(|p| p.rf_max).max().expect(">= 2 inputs"),
                    feature_height: size.0,
                    feature_width: size.1,
                    table: node.table,
                }
            }
        };
        done[i] = Some(a);
    }
    let nodes: Vec<NodeAnalysis> = graph
        .order
        .iter()
        .map(|&i| done[i].take().expect("all nodes analyzed"))
        .collect();
    let index = nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.name.clone(), i))
        .collect();
    Ok(NetAnalysis {
        input_height: h,
        input_width: w,
        nodes,
        index,
    })
}

// ---------------------------------------------------------------------------
// `.netcfg` documents (TOML)

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetConfig {
    #[serde(default)]
    layer: Vec<RawLayer>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayer {
    name: String,
    kind: LayerKind,
    kernel: Option<u32>,
    stride: Option<u32>,
    padding: Option<RawPadding>,
    #[serde(default)]
    inputs: Vec<String>,
    #[serde(default)]
    table: bool,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RawPadding {
    Pixels(u32),
    Named(String),
}

/// Parses a `.netcfg` document into a validated graph.
///
/// The document is TOML with one `[[layer]]` table per node:
///
/// ```toml
/// [[layer]]
/// name = "input"
/// kind = "input"
///
/// [[layer]]
/// name = "conv_1"
/// kind = "conv"
/// kernel = 3
/// stride = 2
/// padding = "valid"   # "valid" | "same" | pixels
/// inputs = ["input"]
/// table = true
/// ```
pub fn load_netconfig(text: &str) -> Result<NetGraph> {
    let raw: RawNetConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let mut nodes = Vec::with_capacity(raw.layer.len());
    for (i, l) in raw.layer.into_iter().enumerate() {
        let padding = match l.padding {
            None => Padding::Valid,
            Some(RawPadding::Pixels(p)) => Padding::Explicit(p),
            Some(RawPadding::Named(ref s)) => match s.as_str() {
                "valid" => Padding::Valid,
                "same" => Padding::Same,
                other => {
                    return Err(Error::Config(format!(
                        "layer #{} '{}': field 'padding': expected \"valid\", \"same\" or an integer, found \"{other}\"",
                        i + 1,
                        l.name
                    )))
                }
            },
        };
        if l.padding.is_some() && matches!(l.kind, LayerKind::Input | LayerKind::Concat) {
            return Err(Error::Config(format!(
                "layer #{} '{}': field 'padding' is not allowed on {} nodes",
                i + 1,
                l.name,
                l.kind
            )));
        }
        nodes.push(LayerNode {
            name: l.name,
            kind: l.kind,
            kernel: l.kernel,
            stride: l.stride,
            padding,
            inputs: l.inputs,
            table: l.table,
        });
    }
    NetGraph::new(nodes)
}

/// Serializes a graph back into `.netcfg` form.
pub fn to_netconfig(graph: &NetGraph) -> String {
    let mut out = String::new();
    for n in &graph.nodes {
        out.push_str("[[layer]]\n");
        out.push_str(&format!("name = {:?}\n", n.name));
        out.push_str(&format!("kind = \"{}\"\n", n.kind));
        if let Some(k) = n.kernel {
            out.push_str(&format!("kernel = {k}\n"));
        }
        if let Some(s) = n.stride {
            out.push_str(&format!("stride = {s}\n"));
        }
        if matches!(n.kind, LayerKind::Conv | LayerKind::Pool) {
            match n.padding {
                Padding::Explicit(p) => out.push_str(&format!("padding = {p}\n")),
                p => out.push_str(&format!("padding = \"{p}\"\n")),
            }
        }
        if !n.inputs.is_empty() {
            let names: Vec<String> = n.inputs.iter().map(|s| format!("{s:?}")).collect();
            out.push_str(&format!("inputs = [{}]\n", names.join(", ")));
        }
        if n.table {
            out.push_str("table = true\n");
        }
        out.push('\n');
    }
    out
}

/// The bundled Inception-v3 layout covering the stem and all A/B/C modules.
pub const INCEPTION_V3_NETCFG: &str = include_str!("../configs/inception_v3.netcfg");

pub fn inception_v3() -> NetGraph {
    load_netconfig(INCEPTION_V3_NETCFG).expect("bundled config is valid")
}

/// Names of every ancestor of `name`, nearest first.
pub fn ancestors(graph: &NetGraph, name: &str) -> Result<Vec<String>> {
    let start = *graph
        .index
        .get(name)
        .ok_or_else(|| Error::UnknownLayer(name.to_owned()))?;
    let mut seen = BTreeMap::new();
    let mut queue = VecDeque::from([start]);
    let mut out = Vec::new();
    while let Some(i) = queue.pop_front() {
        for p in &graph.nodes[i].inputs {
            let j = graph.index[p];
            if seen.insert(j, ()).is_none() {
                out.push(graph.nodes[j].name.clone());
                queue.push_back(j);
            }
        }
    }
    Ok(out)
}
