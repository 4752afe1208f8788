//! Operator-level model of a CNN: shapes, MAC and parameter counts, tensor
//! sizes. Nothing here executes the network.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph syntax: {0}")]
    Syntax(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("layer {layer}: unknown op kind {op:?}")]
    UnknownOpKind { layer: String, op: String },
    #[error("layer {layer}: shape mismatch: {reason}")]
    ShapeMismatch { layer: String, reason: String },
    #[error("layer {layer}: input {input:?} is not produced by an earlier layer")]
    Cycle { layer: String, input: String },
    #[error("duplicate tensor name {0:?}")]
    DuplicateName(String),
    #[error("layer {layer}: param_count {found} differs from the formula value {expected}")]
    ParamCount {
        layer: String,
        found: u64,
        expected: u64,
    },
    #[error("layer {layer}: {reason}")]
    Invalid { layer: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Conv2d,
    DepthwiseConv2d,
    PointwiseConv2d,
    Pool,
    Hsigmoid,
    Hswish,
    Relu,
    Add,
    Mul,
    Resize,
    SsdHead,
    Reshape,
}

impl OpKind {
    pub const ALL: [OpKind; 12] = [
        OpKind::Conv2d,
        OpKind::DepthwiseConv2d,
        OpKind::PointwiseConv2d,
        OpKind::Pool,
        OpKind::Hsigmoid,
        OpKind::Hswish,
        OpKind::Relu,
        OpKind::Add,
        OpKind::Mul,
        OpKind::Resize,
        OpKind::SsdHead,
        OpKind::Reshape,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv2d => "conv2d",
            OpKind::DepthwiseConv2d => "depthwise_conv2d",
            OpKind::PointwiseConv2d => "pointwise_conv2d",
            OpKind::Pool => "pool",
            OpKind::Hsigmoid => "hsigmoid",
            OpKind::Hswish => "hswish",
            OpKind::Relu => "relu",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Resize => "resize",
            OpKind::SsdHead => "ssd_head",
            OpKind::Reshape => "reshape",
        }
    }

    pub fn parse(s: &str) -> Option<OpKind> {
        OpKind::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn is_conv(self) -> bool {
        matches!(
            self,
            OpKind::Conv2d | OpKind::DepthwiseConv2d | OpKind::PointwiseConv2d
        )
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// (channels, height, width).
pub type Shape = [u32; 3];

pub fn elements(s: Shape) -> u64 {
    s.iter().map(|&d| d as u64).product()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    None,
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    pub op: OpKind,
    pub inputs: Vec<String>,
    pub in_shape: Shape,
    pub out_shape: Shape,
    pub kernel: [u32; 2],
    pub stride: u32,
    pub padding: u32,
    pub groups: u32,
    pub bias: bool,
    #[serde(default)]
    pub activation: Activation,
    pub param_count: u64,
    pub elementwise: bool,
}

impl Layer {
    /// A convolution record with `param_count` filled from the formula.
    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        name: &str,
        op: OpKind,
        input: &str,
        in_shape: Shape,
        cout: u32,
        k: u32,
        stride: u32,
        groups: u32,
    ) -> Layer {
        let pad = k / 2;
        let oh = (in_shape[1] + 2 * pad - k) / stride + 1;
        let ow = (in_shape[2] + 2 * pad - k) / stride + 1;
        let mut l = Layer {
            name: name.to_string(),
            op,
            inputs: vec![input.to_string()],
            in_shape,
            out_shape: [cout, oh, ow],
            kernel: [k, k],
            stride,
            padding: pad,
            groups,
            bias: true,
            activation: Activation::None,
            param_count: 0,
            elementwise: false,
        };
        l.param_count = expected_params(&l);
        l
    }

    /// A shape-preserving zero-parameter record.
    pub fn elementwise(name: &str, op: OpKind, inputs: &[&str], shape: Shape) -> Layer {
        Layer {
            name: name.to_string(),
            op,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            in_shape: shape,
            out_shape: shape,
            kernel: [1, 1],
            stride: 1,
            padding: 0,
            groups: 1,
            bias: false,
            activation: Activation::None,
            param_count: 0,
            elementwise: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphInput {
    pub name: String,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGraph {
    pub version: u32,
    pub name: String,
    pub element_bytes: u32,
    pub input: GraphInput,
    pub layers: Vec<Layer>,
}

#[derive(Deserialize)]
struct RawLayer {
    name: String,
    op: String,
    inputs: Vec<String>,
    in_shape: Shape,
    out_shape: Shape,
    kernel: [u32; 2],
    stride: u32,
    padding: u32,
    groups: u32,
    bias: bool,
    #[serde(default)]
    activation: Activation,
    param_count: u64,
    elementwise: bool,
}

#[derive(Deserialize)]
struct RawGraph {
    version: u32,
    name: String,
    element_bytes: u32,
    input: GraphInput,
    layers: Vec<RawLayer>,
}

fn conv_out(len: u32, k: u32, stride: u32, pad: u32) -> Option<u32> {
    let padded = len + 2 * pad;
    (padded >= k && stride > 0).then(|| (padded - k) / stride + 1)
}

fn expected_params(l: &Layer) -> u64 {
    if !l.op.is_conv() {
        return 0;
    }
    let cin_g = (l.in_shape[0] / l.groups.max(1)) as u64;
    let w = l.kernel[0] as u64 * l.kernel[1] as u64 * cin_g * l.out_shape[0] as u64;
    w + if l.bias { l.out_shape[0] as u64 } else { 0 }
}

impl LayerGraph {
    pub fn new(
        name: &str,
        input: GraphInput,
        layers: Vec<Layer>,
    ) -> Result<LayerGraph, GraphError> {
        let g = LayerGraph {
            version: 1,
            name: name.to_string(),
            element_bytes: 1,
            input,
            layers,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let mut shapes: HashMap<&str, Shape> = HashMap::new();
        shapes.insert(&self.input.name, self.input.shape);
        if self.element_bytes == 0 {
            return Err(GraphError::Invalid {
                layer: self.name.clone(),
                reason: "element_bytes is 0".into(),
            });
        }
        for l in &self.layers {
            let invalid = |reason: String| GraphError::Invalid {
                layer: l.name.clone(),
                reason,
            };
            let mismatch = |reason: String| GraphError::ShapeMismatch {
                layer: l.name.clone(),
                reason,
            };
            if l.inputs.is_empty() {
                return Err(invalid("no inputs".into()));
            }
            let mut in_shapes = Vec::with_capacity(l.inputs.len());
            for i in &l.inputs {
                match shapes.get(i.as_str()) {
                    Some(&s) => in_shapes.push(s),
                    None => {
                        return Err(GraphError::Cycle {
                            layer: l.name.clone(),
                            input: i.clone(),
                        })
                    }
                }
            }
            if l.in_shape.contains(&0) || l.out_shape.contains(&0) {
                return Err(invalid("zero-sized shape".into()));
            }
            if in_shapes[0] != l.in_shape {
                return Err(mismatch(format!(
                    "in_shape {:?} but producer emits {:?}",
                    l.in_shape, in_shapes[0]
                )));
            }
            let [c, h, w] = l.in_shape;
            match l.op {
                OpKind::Conv2d
                | OpKind::DepthwiseConv2d
                | OpKind::PointwiseConv2d
                | OpKind::Pool => {
                    if l.groups == 0 || c % l.groups != 0 {
                        return Err(invalid(format!(
                            "groups {} do not divide {} channels",
                            l.groups, c
                        )));
                    }
                    let oh = conv_out(h, l.kernel[0], l.stride, l.padding);
                    let ow = conv_out(w, l.kernel[1], l.stride, l.padding);
                    if oh != Some(l.out_shape[1]) || ow != Some(l.out_shape[2]) {
                        return Err(mismatch(format!(
                            "kernel {:?} stride {} padding {} on {}x{} gives {:?}x{:?}, not {}x{}",
                            l.kernel,
                            l.stride,
                            l.padding,
                            h,
                            w,
                            oh,
                            ow,
                            l.out_shape[1],
                            l.out_shape[2]
                        )));
                    }
                    let depthwise_shape = l.groups == c && l.out_shape[0] == c;
                    match l.op {
                        OpKind::DepthwiseConv2d if !depthwise_shape => {
                            return Err(invalid("depthwise needs groups = Cin = Cout".into()));
                        }
                        OpKind::PointwiseConv2d if l.kernel != [1, 1] => {
                            return Err(invalid("pointwise needs a 1x1 kernel".into()));
                        }
                        OpKind::Pool if l.out_shape[0] != c => {
                            return Err(mismatch("pool changes the channel count".into()));
                        }
                        _ => {}
                    }
                }
                OpKind::Add => {
                    if in_shapes.iter().any(|&s| s != l.in_shape) || l.out_shape != l.in_shape {
                        return Err(mismatch(format!("residual operands {:?}", in_shapes)));
                    }
                }
                OpKind::Mul => {
                    let ok = in_shapes.iter().all(|&s| s == l.in_shape || s == [c, 1, 1]);
                    if !ok || l.out_shape != l.in_shape {
                        return Err(mismatch(format!("scale operands {:?}", in_shapes)));
                    }
                }
                OpKind::Hsigmoid | OpKind::Hswish | OpKind::Relu => {
                    if l.out_shape != l.in_shape || l.inputs.len() != 1 {
                        return Err(mismatch("activation must preserve shape".into()));
                    }
                }
                OpKind::Reshape => {
                    if elements(l.out_shape) != elements(l.in_shape) || l.inputs.len() != 1 {
                        return Err(mismatch("reshape changes the element count".into()));
                    }
                }
                OpKind::Resize => {
                    if l.out_shape[0] != c || l.inputs.len() != 1 {
                        return Err(mismatch("resize changes the channel count".into()));
                    }
                }
                OpKind::SsdHead => {}
            }
            let expected = expected_params(l);
            if l.param_count != expected {
                return Err(GraphError::ParamCount {
                    layer: l.name.clone(),
                    found: l.param_count,
                    expected,
                });
            }
            if shapes.insert(&l.name, l.out_shape).is_some() {
                return Err(GraphError::DuplicateName(l.name.clone()));
            }
        }
        Ok(())
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Output shape of a named tensor (graph input or layer output).
    pub fn tensor_shape(&self, name: &str) -> Option<Shape> {
        if name == self.input.name {
            return Some(self.input.shape);
        }
        self.layers
            .iter()
            .find(|l| l.name == name)
            .map(|l| l.out_shape)
    }

    pub fn tensor_bytes(&self, name: &str) -> Option<u64> {
        self.tensor_shape(name)
            .map(|s| elements(s) * self.element_bytes as u64)
    }

    /// Bytes read by a layer: all operands, at their producer's shape.
    pub fn in_bytes(&self, layer: &Layer) -> u64 {
        layer
            .inputs
            .iter()
            .filter_map(|i| self.tensor_bytes(i))
            .sum()
    }

    pub fn out_bytes(&self, layer: &Layer) -> u64 {
        elements(layer.out_shape) * self.element_bytes as u64
    }

    pub fn weight_bytes(&self, layer: &Layer) -> u64 {
        layer.param_count * self.element_bytes as u64
    }
}

pub fn parse_graph(text: &str) -> Result<LayerGraph, GraphError> {
    let raw: RawGraph =
        serde_json::from_str(text).map_err(|e| GraphError::Syntax(e.to_string()))?;
    let mut layers = Vec::with_capacity(raw.layers.len());
    for r in raw.layers {
        let op = OpKind::parse(&r.op).ok_or_else(|| GraphError::UnknownOpKind {
            layer: r.name.clone(),
            op: r.op.clone(),
        })?;
        layers.push(Layer {
            name: r.name,
            op,
            inputs: r.inputs,
            in_shape: r.in_shape,
            out_shape: r.out_shape,
            kernel: r.kernel,
            stride: r.stride,
            padding: r.padding,
            groups: r.groups,
            bias: r.bias,
            activation: r.activation,
            param_count: r.param_count,
            elementwise: r.elementwise,
        });
    }
    let g = LayerGraph {
        version: raw.version,
        name: raw.name,
        element_bytes: raw.element_bytes,
        input: raw.input,
        layers,
    };
    g.validate()?;
    Ok(g)
}

pub fn load_graph(path: &Path) -> Result<LayerGraph, GraphError> {
    parse_graph(&std::fs::read_to_string(path)?)
}

pub fn graph_to_json(g: &LayerGraph) -> String {
    serde_json::to_string_pretty(g).expect("graph serializes")
}

/// kh·kw·(Cin/groups)·Cout·Hout·Wout for convolutions, 0 otherwise.
pub fn count_macs(layer: &Layer) -> u64 {
    if !layer.op.is_conv() {
        return 0;
    }
    let [cout, oh, ow] = layer.out_shape;
    let cin_g = layer.in_shape[0] / layer.groups.max(1);
    layer.kernel[0] as u64
        * layer.kernel[1] as u64
        * cin_g as u64
        * cout as u64
        * oh as u64
        * ow as u64
}

pub fn count_macs_total(g: &LayerGraph) -> u64 {
    g.layers.iter().map(count_macs).sum()
}

pub fn count_params_total(g: &LayerGraph) -> u64 {
    g.layers.iter().map(|l| l.param_count).sum()
}

/// Fractional parameter (and per-pixel MAC) saving of a k×k depthwise plus
/// pointwise pair over a dense k×k convolution.
pub fn dws_savings(k: u32, cin: u32, cout: u32) -> f64 {
    let (k, cin, cout) = (k as f64, cin as f64, cout as f64);
    1.0 - (k * k * cin + cin * cout) / (k * k * cin * cout)
}

/// The graph shipped with the repository.
pub fn builtin_graph() -> LayerGraph {
    parse_graph(include_str!(
        "../../../data/graphs/mbnv3_ssdlite_320x240.json"
    ))
    .expect("shipped graph is valid")
}
