//! Straight-line evaluation procedures with `abs` as the only nonsmooth op.
//!
//! Every node references strictly earlier nodes, so the switching equation
//! `z = c(x, |z|, z)` is solved by one forward sweep and the partial
//! derivatives of `c` with respect to `|z|` and `z` are strictly lower
//! triangular by construction. The `i`-th `abs` node in tape order defines
//! the switching variable `z_i`.
//!
//! An `abs` node's output is a `|z_i|`-use. The node feeding an `abs` is the
//! defining node of `z_i`; consumers of that node appearing after the `abs`
//! node are `z_i`-uses. Input and constant nodes never act as defining nodes,
//! so `|x_k|` keeps every other use of `x_k` an ordinary `x`-use.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Index of a node within a [`Tape`].
pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Input(usize),
    Const { value: f64, param: Option<String> },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Sqr(NodeId),
    Abs(NodeId),
}

impl Node {
    pub fn name(&self) -> &'static str {
        match self {
            Node::Input(_) => "input",
            Node::Const { .. } => "const",
            Node::Add(..) => "add",
            Node::Sub(..) => "sub",
            Node::Mul(..) => "mul",
            Node::Div(..) => "div",
            Node::Neg(_) => "neg",
            Node::Sin(_) => "sin",
            Node::Cos(_) => "cos",
            Node::Exp(_) => "exp",
            Node::Log(_) => "log",
            Node::Sqr(_) => "sqr",
            Node::Abs(_) => "abs",
        }
    }

    pub fn args(&self) -> Vec<NodeId> {
        match *self {
            Node::Input(_) | Node::Const { .. } => vec![],
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => vec![a, b],
            Node::Neg(a)
            | Node::Sin(a)
            | Node::Cos(a)
            | Node::Exp(a)
            | Node::Log(a)
            | Node::Sqr(a)
            | Node::Abs(a) => vec![a],
        }
    }
}

/// One entry of the JSON problem format.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NodeDoc {
    pub op: String,
    #[serde(default)]
    pub args: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param: Option<String>,
}

/// The JSON problem format: `{"n_inputs", "nodes", "output"}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TapeDoc {
    pub n_inputs: usize,
    pub nodes: Vec<NodeDoc>,
    pub output: usize,
}

#[derive(Clone, Debug)]
pub struct Tape {
    n_inputs: usize,
    nodes: Vec<Node>,
    output: NodeId,
    /// `abs` node of each switching variable, in switching order.
    switches: Vec<NodeId>,
    /// switch index of an `abs` node
    abs_switch: Vec<Option<usize>>,
    /// switch whose `z` is defined by this node
    z_owner: Vec<Option<usize>>,
}

/// Per-node values of one forward sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalTrace {
    pub values: Vec<f64>,
    /// Arguments of the `abs` nodes, in switching order.
    pub z: Vec<f64>,
    /// `|z|`, or `Ξ z` when a fixed `ξ` was imposed.
    pub abs_values: Vec<f64>,
    /// Value of the output node.
    pub phi: f64,
}

/// Switch-to-switch dependency audit.
#[derive(Clone, Debug, Serialize)]
pub struct StructureReport {
    pub n_inputs: usize,
    pub n_switches: usize,
    /// For each switching variable, the earlier switches its `c_i` reaches.
    pub depends_on: Vec<Vec<usize>>,
    /// Length of the longest dependency chain (0 without switches).
    pub depth: usize,
}

/// Adjoints from one reverse sweep, split by kind of terminal.
#[derive(Clone, Debug)]
pub(crate) struct Adjoints {
    pub x: Vec<f64>,
    pub abs: Vec<f64>,
    pub z: Vec<f64>,
}

pub fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Parses and validates a problem document.
pub fn parse_tape(document: &str) -> Result<Tape> {
    let doc: TapeDoc = serde_json::from_str(document)?;
    Tape::from_doc(&doc)
}

impl Tape {
    pub fn from_doc(doc: &TapeDoc) -> Result<Tape> {
        let mut nodes = Vec::with_capacity(doc.nodes.len());
        for (k, nd) in doc.nodes.iter().enumerate() {
            nodes.push(node_from_doc(k, nd, doc.n_inputs)?);
        }
        Tape::new(doc.n_inputs, nodes, doc.output)
    }

    pub fn new(n_inputs: usize, nodes: Vec<Node>, output: NodeId) -> Result<Tape> {
        for (k, node) in nodes.iter().enumerate() {
            for a in node.args() {
                if a >= k {
                    return Err(Error::ForwardReference { node: k, target: a });
                }
            }
            match node {
                Node::Input(j) if *j >= n_inputs => {
                    return Err(Error::Node {
                        node: k,
                        message: format!("input index {j} out of range (n_inputs = {n_inputs})"),
                    })
                }
                Node::Const { value, .. } if !value.is_finite() => {
                    return Err(Error::Node {
                        node: k,
                        message: "constant is not finite".into(),
                    })
                }
                _ => {}
            }
        }
        if output >= nodes.len() {
            return Err(Error::Node {
                node: output,
                message: format!("output index out of range ({} nodes)", nodes.len()),
            });
        }

        let mut switches = Vec::new();
        let mut abs_switch = vec![None; nodes.len()];
        let mut z_owner = vec![None; nodes.len()];
        for (k, node) in nodes.iter().enumerate() {
            if let Node::Abs(a) = *node {
                let i = switches.len();
                switches.push(k);
                abs_switch[k] = Some(i);
                let defining = !matches!(nodes[a], Node::Input(_) | Node::Const { .. });
                if defining && z_owner[a].is_none() {
                    z_owner[a] = Some(i);
                }
            }
        }
        Ok(Tape {
            n_inputs,
            nodes,
            output,
            switches,
            abs_switch,
            z_owner,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_switches(&self) -> usize {
        self.switches.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `abs` node of switching variable `i`.
    pub fn switch_node(&self, i: usize) -> NodeId {
        self.switches[i]
    }

    /// Replaces the value of every constant tagged with `param`; returns how many were set.
    pub fn set_param(&mut self, param: &str, value: f64) -> usize {
        let mut count = 0;
        for node in &mut self.nodes {
            if let Node::Const {
                value: v,
                param: Some(p),
            } = node
            {
                if p == param {
                    *v = value;
                    count += 1;
                }
            }
        }
        count
    }

    pub fn to_doc(&self) -> TapeDoc {
        let nodes = self
            .nodes
            .iter()
            .map(|node| {
                let (value, param) = match node {
                    Node::Input(j) => (Some(*j as f64), None),
                    Node::Const { value, param } => (Some(*value), param.clone()),
                    _ => (None, None),
                };
                NodeDoc {
                    op: node.name().to_string(),
                    args: node.args(),
                    value,
                    param,
                }
            })
            .collect();
        TapeDoc {
            n_inputs: self.n_inputs,
            nodes,
            output: self.output,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("tape documents always serialize")
    }

    /// Forward sweep; with `xi` the `abs` nodes return `ξ_i z_i` instead of `|z_i|`.
    pub fn forward_eval(&self, x: &[f64], xi: Option<&[f64]>) -> Result<EvalTrace> {
        check_len("x", self.n_inputs, x.len())?;
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("x[{k}] is not finite")));
        }
        if let Some(xi) = xi {
            check_len("xi", self.n_switches(), xi.len())?;
            if let Some(i) = xi.iter().position(|v| !(v.abs() <= 1.0)) {
                return Err(Error::Invalid(format!(
                    "xi[{i}] = {} lies outside [-1, 1]",
                    xi[i]
                )));
            }
        }
        let s = self.n_switches();
        let mut values = Vec::with_capacity(self.nodes.len());
        let mut z = Vec::with_capacity(s);
        let mut abs_values = Vec::with_capacity(s);
        for (k, node) in self.nodes.iter().enumerate() {
            let v = match *node {
                Node::Input(j) => x[j],
                Node::Const { value, .. } => value,
                Node::Add(a, b) => values[a] + values[b],
                Node::Sub(a, b) => values[a] - values[b],
                Node::Mul(a, b) => values[a] * values[b],
                Node::Div(a, b) => {
                    let d: f64 = values[b];
                    if d == 0.0 {
                        return Err(Error::Domain {
                            node: k,
                            op: "div",
                            value: d,
                        });
                    }
                    values[a] / d
                }
                Node::Neg(a) => -values[a],
                Node::Sin(a) => values[a].sin(),
                Node::Cos(a) => values[a].cos(),
                Node::Exp(a) => values[a].exp(),
                Node::Log(a) => {
                    let u: f64 = values[a];
                    if u <= 0.0 {
                        return Err(Error::Domain {
                            node: k,
                            op: "log",
                            value: u,
                        });
                    }
                    u.ln()
                }
                Node::Sqr(a) => values[a] * values[a],
                Node::Abs(a) => {
                    let zi: f64 = values[a];
                    let y = match xi {
                        Some(xi) => xi[z.len()] * zi,
                        None => zi.abs(),
                    };
                    z.push(zi);
                    abs_values.push(y);
                    y
                }
            };
            if !v.is_finite() {
                return Err(Error::Domain {
                    node: k,
                    op: node.name(),
                    value: v,
                });
            }
            values.push(v);
        }
        Ok(EvalTrace {
            phi: values[self.output],
            values,
            z,
            abs_values,
        })
    }

    /// Local partial derivatives of node `k` with respect to its arguments.
    fn partials(&self, k: NodeId, values: &[f64]) -> [(NodeId, f64); 2] {
        const NONE: (NodeId, f64) = (0, 0.0);
        match self.nodes[k] {
            Node::Input(_) | Node::Const { .. } | Node::Abs(_) => [NONE, NONE],
            Node::Add(a, b) => [(a, 1.0), (b, 1.0)],
            Node::Sub(a, b) => [(a, 1.0), (b, -1.0)],
            Node::Mul(a, b) => [(a, values[b]), (b, values[a])],
            Node::Div(a, b) => {
                let d = values[b];
                [(a, 1.0 / d), (b, -values[a] / (d * d))]
            }
            Node::Neg(a) => [(a, -1.0), NONE],
            Node::Sin(a) => [(a, values[a].cos()), NONE],
            Node::Cos(a) => [(a, -values[a].sin()), NONE],
            Node::Exp(a) => [(a, values[k]), NONE],
            Node::Log(a) => [(a, 1.0 / values[a]), NONE],
            Node::Sqr(a) => [(a, 2.0 * values[a]), NONE],
        }
    }

    /// Reverse sweep from `root`, stopping at `abs` nodes (`|z|`-uses) and at
    /// `z`-uses of defining nodes. With `structural` every local partial is
    /// replaced by 1, which exposes the dependency pattern without cancellation.
    pub(crate) fn reverse_sweep(
        &self,
        values: &[f64],
        root: NodeId,
        seed_switch: Option<usize>,
        structural: bool,
    ) -> Adjoints {
        let s = self.n_switches();
        let mut out = Adjoints {
            x: vec![0.0; self.n_inputs],
            abs: vec![0.0; s],
            z: vec![0.0; s],
        };
        // The output of `f` consumes after every node; the root of `c_j` is
        // consumed by the `abs` node of switch j.
        let root_consumer = match seed_switch {
            Some(j) => self.switches[j],
            None => usize::MAX,
        };
        let mut adj = vec![0.0; root + 1];
        self.route(root_consumer, root, 1.0, &mut adj, &mut out);
        for k in (0..=root).rev() {
            let a = adj[k];
            if a == 0.0 {
                continue;
            }
            if let Some(i) = self.abs_switch[k] {
                out.abs[i] += a;
                continue;
            }
            match self.nodes[k] {
                Node::Input(j) => out.x[j] += a,
                Node::Const { .. } => {}
                _ => {
                    let parts = self.partials(k, values);
                    for (arg, p) in self.nodes[k].args().into_iter().zip(parts) {
                        let p = if structural { 1.0 } else { p.1 };
                        self.route(k, arg, a * p, &mut adj, &mut out);
                    }
                }
            }
        }
        out
    }

    fn route(
        &self,
        consumer: usize,
        arg: NodeId,
        contribution: f64,
        adj: &mut [f64],
        out: &mut Adjoints,
    ) {
        if let Some(i) = self.z_owner[arg] {
            if consumer > self.switches[i] {
                out.z[i] += contribution;
                return;
            }
        }
        adj[arg] += contribution;
    }

    /// Audits that each `c_i` depends only on switches `j < i`.
    pub fn structural_check(&self) -> StructureReport {
        let s = self.n_switches();
        let values = vec![0.0; self.nodes.len()];
        let mut depends_on = Vec::with_capacity(s);
        let mut depth_of = vec![0usize; s];
        for i in 0..s {
            let root = self.nodes[self.switches[i]].args()[0];
            let adj = self.reverse_sweep(&values, root, Some(i), true);
            let deps: Vec<usize> = (0..s)
                .filter(|&j| adj.abs[j] != 0.0 || adj.z[j] != 0.0)
                .collect();
            assert!(
                deps.iter().all(|&j| j < i),
                "switch {i} depends on a later switch: {deps:?}"
            );
            depth_of[i] = 1 + deps.iter().map(|&j| depth_of[j]).max().unwrap_or(0);
            depends_on.push(deps);
        }
        StructureReport {
            n_inputs: self.n_inputs,
            n_switches: s,
            depends_on,
            depth: depth_of.into_iter().max().unwrap_or(0),
        }
    }
}

fn node_from_doc(k: usize, nd: &NodeDoc, n_inputs: usize) -> Result<Node> {
    let arity = match nd.op.as_str() {
        "input" | "const" => 0,
        "add" | "sub" | "mul" | "div" => 2,
        "neg" | "sin" | "cos" | "exp" | "log" | "sqr" | "abs" => 1,
        other => {
            return Err(Error::UnknownOp {
                node: k,
                op: other.to_string(),
            })
        }
    };
    if nd.args.len() != arity {
        return Err(Error::Arity {
            node: k,
            op: nd.op.clone(),
            expected: arity,
            got: nd.args.len(),
        });
    }
    if let Some(&target) = nd.args.iter().find(|&&a| a >= k) {
        return Err(Error::ForwardReference { node: k, target });
    }
    let a = nd.args.first().copied().unwrap_or(0);
    let b = nd.args.get(1).copied().unwrap_or(0);
    let node = match nd.op.as_str() {
        "input" => {
            let v = nd.value.ok_or_else(|| Error::Node {
                node: k,
                message: "input node needs its input index in `value`".into(),
            })?;
            if v < 0.0 || v.fract() != 0.0 || v >= n_inputs as f64 {
                return Err(Error::Node {
                    node: k,
                    message: format!("input index {v} is not an integer in 0..{n_inputs}"),
                });
            }
            Node::Input(v as usize)
        }
        "const" => Node::Const {
            value: nd.value.ok_or_else(|| Error::Node {
                node: k,
                message: "const node needs a `value`".into(),
            })?,
            param: nd.param.clone(),
        },
        "add" => Node::Add(a, b),
        "sub" => Node::Sub(a, b),
        "mul" => Node::Mul(a, b),
        "div" => Node::Div(a, b),
        "neg" => Node::Neg(a),
        "sin" => Node::Sin(a),
        "cos" => Node::Cos(a),
        "exp" => Node::Exp(a),
        "log" => Node::Log(a),
        "sqr" => Node::Sqr(a),
        "abs" => Node::Abs(a),
        _ => unreachable!(),
    };
    Ok(node)
}

/// Incremental construction of a [`Tape`].
#[derive(Clone, Debug, Default)]
pub struct TapeBuilder {
    n_inputs: usize,
    nodes: Vec<Node>,
}

impl TapeBuilder {
    pub fn new(n_inputs: usize) -> Self {
        Self {
            n_inputs,
            nodes: Vec::new(),
        }
    }

    pub fn push(&mut self, node: Node) -> NodeId {
        self.nodes.push(node);
        self.nodes.len() - 1
    }

    pub fn input(&mut self, j: usize) -> NodeId {
        self.push(Node::Input(j))
    }

    pub fn constant(&mut self, value: f64) -> NodeId {
        self.push(Node::Const { value, param: None })
    }

    pub fn param(&mut self, name: &str, value: f64) -> NodeId {
        self.push(Node::Const {
            value,
            param: Some(name.to_string()),
        })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Node::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Node::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Node::Mul(a, b))
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.push(Node::Abs(a))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value of `node` at `x` on the tape built so far.
    pub fn value_at(&self, node: NodeId, x: &[f64]) -> Result<f64> {
        let partial = Tape::new(self.n_inputs, self.nodes[..=node].to_vec(), node)?;
        Ok(partial.forward_eval(x, None)?.phi)
    }

    pub fn finish(self, output: NodeId) -> Result<Tape> {
        Tape::new(self.n_inputs, self.nodes, output)
    }
}
