//! Shape-checked layer graph and the builder used by the architectures.

use crate::error::{Error, Result};
use crate::layers::{conv_param_count, ConvGeom, Padding};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Op {
    Input,
    Conv { x: NodeId, w: usize, b: usize, geom: ConvGeom },
    Depthwise { x: NodeId, w: usize, geom: ConvGeom },
    UpConv { x: NodeId, w: usize, b: usize },
    BatchNorm { x: NodeId, bn: usize },
    Relu(NodeId),
    Add(NodeId, NodeId),
    MaxPool(NodeId),
    AvgPool(NodeId, usize),
    Upsample(NodeId, usize),
    Concat(NodeId, NodeId),
    Softmax(NodeId),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Zero-mean normal with std sqrt(2 / fan_in).
    He { fan_in: usize },
    Zeros,
    Ones,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: String,
    pub init: Init,
}

impl ParamInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BnInfo {
    pub name: String,
    pub gamma: usize,
    pub beta: usize,
    pub channels: usize,
}

/// Nodes, parameter declarations and per-node shapes `(C, H, W)` of a network.
#[derive(Clone, Debug)]
pub struct Layout {
    pub(crate) nodes: Vec<(Op, [usize; 3])>,
    pub params: Vec<ParamInfo>,
    pub bns: Vec<BnInfo>,
    /// Named intermediate outputs, e.g. each encoder level.
    pub taps: Vec<(String, NodeId)>,
    pub output: NodeId,
    /// Trainable-scalar counts accumulated from layer formulas at declaration time.
    pub declared: Vec<(String, usize)>,
}

impl Layout {
    pub fn shape_of(&self, id: NodeId) -> [usize; 3] {
        self.nodes[id.0].1
    }

    pub fn tap(&self, name: &str) -> Option<NodeId> {
        self.taps.iter().find(|(n, _)| n == name).map(|&(_, id)| id)
    }

    pub fn declared_total(&self) -> usize {
        self.declared.iter().map(|(_, c)| c).sum()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

pub(crate) struct Builder {
    nodes: Vec<(Op, [usize; 3])>,
    params: Vec<ParamInfo>,
    bns: Vec<BnInfo>,
    taps: Vec<(String, NodeId)>,
    declared: Vec<(String, usize)>,
    group: String,
    scope: Vec<String>,
}

impl Builder {
    pub fn new(input: [usize; 3]) -> (Self, NodeId) {
        let b = Builder {
            nodes: vec![(Op::Input, input)],
            params: Vec::new(),
            bns: Vec::new(),
            taps: Vec::new(),
            declared: Vec::new(),
            group: String::new(),
            scope: Vec::new(),
        };
        (b, NodeId(0))
    }

    pub fn finish(self, output: NodeId) -> Layout {
        Layout { nodes: self.nodes, params: self.params, bns: self.bns, taps: self.taps, output, declared: self.declared }
    }

    pub fn set_group(&mut self, group: impl Into<String>) {
        self.group = group.into();
        self.scope = vec![self.group.clone()];
    }

    pub fn push_scope(&mut self, s: impl Into<String>) {
        self.scope.push(s.into());
    }

    pub fn pop_scope(&mut self) {
        self.scope.pop();
    }

    pub fn shape(&self, x: NodeId) -> [usize; 3] {
        self.nodes[x.0].1
    }

    pub fn channels(&self, x: NodeId) -> usize {
        self.shape(x)[0]
    }

    pub fn tap(&mut self, name: impl Into<String>, x: NodeId) {
        self.taps.push((name.into(), x));
    }

    fn node(&mut self, op: Op, shape: [usize; 3]) -> NodeId {
        self.nodes.push((op, shape));
        NodeId(self.nodes.len() - 1)
    }

    fn declare(&mut self, count: usize) {
        match self.declared.last_mut() {
            Some((g, c)) if *g == self.group => *c += count,
            _ => self.declared.push((self.group.clone(), count)),
        }
    }

    fn param(&mut self, leaf: &str, shape: Vec<usize>, init: Init) -> usize {
        let name = format!("{}.{leaf}", self.scope.join("."));
        self.params.push(ParamInfo { name, shape, group: self.group.clone(), init });
        self.params.len() - 1
    }

    pub fn conv(&mut self, x: NodeId, name: &str, c_out: usize, kh: usize, kw: usize) -> Result<NodeId> {
        self.conv_geom(x, name, c_out, ConvGeom::same(kh, kw))
    }

    pub fn conv_geom(&mut self, x: NodeId, name: &str, c_out: usize, geom: ConvGeom) -> Result<NodeId> {
        let [c, h, w] = self.shape(x);
        let (oh, ow) = geom.output_size(h, w)?;
        self.push_scope(name);
        let fan_in = c * geom.kh * geom.kw;
        let wi = self.param("weight", vec![c_out, c, geom.kh, geom.kw], Init::He { fan_in });
        let bi = self.param("bias", vec![c_out], Init::Zeros);
        self.pop_scope();
        self.declare(conv_param_count(c, c_out, geom.kh, geom.kw));
        Ok(self.node(Op::Conv { x, w: wi, b: bi, geom }, [c_out, oh, ow]))
    }

    pub fn depthwise(&mut self, x: NodeId, name: &str, kh: usize, kw: usize) -> Result<NodeId> {
        let [c, h, w] = self.shape(x);
        let geom = ConvGeom::same(kh, kw);
        let (oh, ow) = geom.output_size(h, w)?;
        self.push_scope(name);
        let wi = self.param("weight", vec![c, 1, kh, kw], Init::He { fan_in: kh * kw });
        self.pop_scope();
        self.declare(c * kh * kw);
        Ok(self.node(Op::Depthwise { x, w: wi, geom }, [c, oh, ow]))
    }

    pub fn up_conv(&mut self, x: NodeId, name: &str) -> Result<NodeId> {
        let [c, h, w] = self.shape(x);
        if c % 2 != 0 {
            return Err(Error::InvalidSpec(format!("up-convolution {name} needs an even channel count, got {c}")));
        }
        self.push_scope(name);
        let wi = self.param("weight", vec![c / 2, c, 2, 2], Init::He { fan_in: c * 4 });
        let bi = self.param("bias", vec![c / 2], Init::Zeros);
        self.pop_scope();
        self.declare(conv_param_count(c, c / 2, 2, 2));
        Ok(self.node(Op::UpConv { x, w: wi, b: bi }, [c / 2, 2 * h, 2 * w]))
    }

    pub fn bn(&mut self, x: NodeId, name: &str) -> NodeId {
        let s = self.shape(x);
        self.push_scope(name);
        let gamma = self.param("gamma", vec![s[0]], Init::Ones);
        let beta = self.param("beta", vec![s[0]], Init::Zeros);
        let full = self.scope.join(".");
        self.pop_scope();
        self.bns.push(BnInfo { name: full, gamma, beta, channels: s[0] });
        self.declare(2 * s[0]);
        let bn = self.bns.len() - 1;
        self.node(Op::BatchNorm { x, bn }, s)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x);
        self.node(Op::Relu(x), s)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::InvalidSpec(format!("residual add in {} joins {sa:?} and {sb:?}", self.scope.join("."))));
        }
        Ok(self.node(Op::Add(a, b), sa))
    }

    pub fn max_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let [c, h, w] = self.shape(x);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidSpec(format!("max pooling in {} needs even size, got {h}x{w}", self.group)));
        }
        Ok(self.node(Op::MaxPool(x), [c, h / 2, w / 2]))
    }

    pub fn avg_pool(&mut self, x: NodeId, f: usize) -> Result<NodeId> {
        let [c, h, w] = self.shape(x);
        if f == 0 || h % f != 0 || w % f != 0 {
            return Err(Error::InvalidSpec(format!("{h}x{w} not divisible by shrink {f}")));
        }
        Ok(self.node(Op::AvgPool(x, f), [c, h / f, w / f]))
    }

    pub fn upsample(&mut self, x: NodeId, f: usize) -> NodeId {
        let [c, h, w] = self.shape(x);
        self.node(Op::Upsample(x, f), [c, h * f, w * f])
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let ([ca, ha, wa], [cb, hb, wb]) = (self.shape(a), self.shape(b));
        if (ha, wa) != (hb, wb) {
            return Err(Error::InvalidSpec(format!("concatenation in {} joins {ha}x{wa} and {hb}x{wb}", self.group)));
        }
        Ok(self.node(Op::Concat(a, b), [ca + cb, ha, wa]))
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let s = self.shape(x);
        self.node(Op::Softmax(x), s)
    }
}

/// Stride-2 1x1 geometry used by the residual-input path.
pub(crate) fn strided_pointwise() -> ConvGeom {
    ConvGeom { kh: 1, kw: 1, stride: (2, 2), pad: Padding::NONE }
}
