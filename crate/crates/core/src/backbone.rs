//! Nested UNet++ node graph.
//!
//! Node `x^{i,j}` lives at downsampling level `i` and skip position `j`:
//!
//! ```text
//! x^{i,0} = H(D(x^{i-1,0}))                                   (x^{0,0} = H(input))
//! x^{i,j} = H([x^{i,0}, ..., x^{i,j-1}, U(x^{i+1,j-1})])      j > 0
//! ```
//!
//! `H` is two 3×3 relu conv blocks, `D` is 2×2 max-pooling and `U` is
//! bilinear ×2 upsampling followed by a 1×1 convolution down to the level's
//! width. Only the top-row maps `x^{0,1..L-1}` leave the module.

use std::collections::{BTreeSet, HashMap};

use crate::autodiff::{Activation, ConvSpec, Tape, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Bound, Conv2d, ConvBlock, ForwardMode, ParamStore};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId {
    pub i: usize,
    pub j: usize,
}

impl NodeId {
    pub fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }

    /// Nodes whose outputs this node reads: the pooled node above it for
    /// `j = 0`, otherwise all earlier same-level nodes plus the lower node.
    pub fn predecessors(self) -> Vec<NodeId> {
        let NodeId { i, j } = self;
        if j == 0 {
            if i == 0 {
                vec![]
            } else {
                vec![NodeId::new(i - 1, 0)]
            }
        } else {
            let mut p: Vec<NodeId> = (0..j).map(|k| NodeId::new(i, k)).collect();
            p.push(NodeId::new(i + 1, j - 1));
            p
        }
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "x{}_{}", self.i, self.j)
    }
}

#[derive(Clone, Debug)]
struct BackboneNode {
    id: NodeId,
    /// 1×1 channel reduction applied after upsampling the lower node (`j > 0`).
    up: Option<Conv2d>,
    blocks: [ConvBlock; 2],
}

#[derive(Clone, Debug)]
pub struct Backbone {
    depth: usize,
    image_size: usize,
    input_channels: usize,
    /// In evaluation order.
    nodes: Vec<BackboneNode>,
    position: HashMap<NodeId, usize>,
}

/// Result of a backbone pass.
#[derive(Clone, Debug)]
pub struct BackboneOutput {
    /// `x^{0,1}, ..., x^{0,L-1}` in order.
    pub top: Vec<Var>,
    /// Every evaluated node.
    pub nodes: HashMap<NodeId, Var>,
}

/// Nodes in dependency order: increasing `i + j`, and within one tier
/// decreasing `i` (so `x^{i+1,j-1}` precedes `x^{i,j}`).
pub fn evaluation_order(depth: usize) -> Vec<NodeId> {
    let mut order = Vec::with_capacity(depth * (depth + 1) / 2);
    for tier in 0..depth {
        for i in (0..=tier).rev() {
            order.push(NodeId::new(i, tier - i));
        }
    }
    order
}

impl Backbone {
    pub fn build<T: Real>(config: &ModelConfig, store: &mut ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let depth = config.depth;
        let dropout = (config.dropout > 0.0).then_some(config.dropout);
        let mut nodes = Vec::new();
        let mut position = HashMap::new();
        for id in evaluation_order(depth) {
            let width = config.level_channels(id.i);
            let (up, in_channels) = if id.j == 0 {
                let c = if id.i == 0 {
                    config.input_channels
                } else {
                    config.level_channels(id.i - 1)
                };
                (None, c)
            } else {
                let lower = config.level_channels(id.i + 1);
                let up = Conv2d::new(store, &format!("backbone.{id}.up"), ConvSpec::same(lower, width, 1))?;
                (Some(up), (id.j + 1) * width)
            };
            let b0 = ConvBlock::new(
                store,
                &format!("backbone.{id}.conv0"),
                ConvSpec::same(in_channels, width, 3),
                Activation::Relu,
                dropout,
            )?;
            let b1 = ConvBlock::new(
                store,
                &format!("backbone.{id}.conv1"),
                ConvSpec::same(width, width, 3),
                Activation::Relu,
                dropout,
            )?;
            position.insert(id, nodes.len());
            nodes.push(BackboneNode {
                id,
                up,
                blocks: [b0, b1],
            });
        }
        Ok(Self {
            depth,
            image_size: config.image_size,
            input_channels: config.input_channels,
            nodes,
            position,
        })
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().map(|n| n.id)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input channel count of a node's first convolution.
    pub fn node_input_channels(&self, id: NodeId) -> Option<usize> {
        self.position
            .get(&id)
            .map(|&p| self.nodes[p].blocks[0].conv.spec.in_channels)
    }

    /// `target` and everything it transitively reads.
    pub fn ancestors(&self, target: NodeId) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![target];
        while let Some(id) = stack.pop() {
            if seen.insert(id) {
                stack.extend(id.predecessors());
            }
        }
        seen
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        params: &Bound,
        input: Var,
        mode: ForwardMode,
    ) -> Result<BackboneOutput> {
        self.evaluate(tape, params, input, mode, None)
    }

    /// Evaluates only the ancestors of `target`.
    pub fn forward_pruned<T: Real>(
        &self,
        tape: &mut Tape<T>,
        params: &Bound,
        input: Var,
        mode: ForwardMode,
        target: NodeId,
    ) -> Result<BackboneOutput> {
        if !self.position.contains_key(&target) {
            return Err(Error::Usage(format!("node {target} not in a depth-{} graph", self.depth)));
        }
        let keep = self.ancestors(target);
        self.evaluate(tape, params, input, mode, Some(&keep))
    }

    fn evaluate<T: Real>(
        &self,
        tape: &mut Tape<T>,
        params: &Bound,
        input: Var,
        mode: ForwardMode,
        keep: Option<&BTreeSet<NodeId>>,
    ) -> Result<BackboneOutput> {
        let [_, c, h, w] = tape.value(input).nchw()?;
        if c != self.input_channels || h != self.image_size || w != self.image_size {
            return Err(Error::Dimension(format!(
                "backbone expects N x {} x {} x {} input, got {:?}",
                self.input_channels,
                self.image_size,
                self.image_size,
                tape.shape(input)
            )));
        }
        let mut out: HashMap<NodeId, Var> = HashMap::new();
        for node in &self.nodes {
            if keep.is_some_and(|k| !k.contains(&node.id)) {
                continue;
            }
            let NodeId { i, j } = node.id;
            let x = if j == 0 {
                if i == 0 {
                    input
                } else {
                    tape.max_pool2d(out[&NodeId::new(i - 1, 0)], 2, 2)?
                }
            } else {
                let mut parts: Vec<Var> = (0..j).map(|k| out[&NodeId::new(i, k)]).collect();
                let lower = tape.upsample2x(out[&NodeId::new(i + 1, j - 1)])?;
                let up = node.up.as_ref().expect("j > 0 nodes carry an up conv");
                parts.push(up.forward(tape, params, lower)?);
                tape.concat_channels(&parts)?
            };
            let y = node.blocks[0].forward(tape, params, x, mode)?;
            let y = node.blocks[1].forward(tape, params, y, mode)?;
            out.insert(node.id, y);
        }
        let top = (1..self.depth)
            .filter_map(|j| out.get(&NodeId::new(0, j)).copied())
            .collect();
        Ok(BackboneOutput { top, nodes: out })
    }
}
