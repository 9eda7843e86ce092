//! Dense ReLU networks in abs-normal form.
//!
//! Hidden layers compute `z^(t) = W^(t) u^(t-1) + b^(t)` and
//! `u^(t) = (z^(t) + |z^(t)|)/2`; the output `y = W^(T+1) u^(T) + b^(T+1)` goes
//! through a smooth head and loss. Parameters are flattened as all weight
//! matrices (layer-major, row-major) followed by all bias vectors (layer-major).
//! The switching variables are the hidden pre-activations, layer by layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::absnormal::{AbsNormalPoint, SignatureVector, DEFAULT_KINK_TOL};
use crate::error::{check_len, Error, Result};
use crate::gradients::{fmt_num, gradient_for_weights, switching_jacobian};
use crate::linalg::{norm2, Matrix};
use crate::tape::{Node, NodeId, Tape, TapeBuilder};

/// Loss values above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Identity,
    Softmax,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `½‖h(y) − v‖²`
    Squared,
    /// `−Σ v_i log h(y)_i`
    CrossEntropy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecDoc", into = "SpecDoc")]
pub struct ReluNetSpec {
    layer_dims: Vec<usize>,
    head: Head,
    loss: Loss,
}

#[derive(Clone, Serialize, Deserialize)]
struct SpecDoc {
    layer_dims: Vec<usize>,
    head: Head,
    loss: Loss,
}

impl TryFrom<SpecDoc> for ReluNetSpec {
    type Error = Error;
    fn try_from(d: SpecDoc) -> Result<Self> {
        ReluNetSpec::new(d.layer_dims, d.head, d.loss)
    }
}

impl From<ReluNetSpec> for SpecDoc {
    fn from(s: ReluNetSpec) -> SpecDoc {
        SpecDoc {
            layer_dims: s.layer_dims,
            head: s.head,
            loss: s.loss,
        }
    }
}

impl ReluNetSpec {
    /// `layer_dims = [N, N₁, …, N_T, M]` with at least one hidden layer.
    pub fn new(layer_dims: Vec<usize>, head: Head, loss: Loss) -> Result<Self> {
        if layer_dims.len() < 3 {
            return Err(Error::Dimension(format!(
                "layer_dims needs input, at least one hidden layer and output; got {} entries",
                layer_dims.len()
            )));
        }
        if let Some(i) = layer_dims.iter().position(|&d| d == 0) {
            return Err(Error::Dimension(format!("layer_dims[{i}] is zero")));
        }
        if head == Head::Identity && loss == Loss::CrossEntropy {
            return Err(Error::Invalid(
                "cross_entropy requires the softmax head".into(),
            ));
        }
        Ok(Self {
            layer_dims,
            head,
            loss,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    /// Number of hidden layers `T`.
    pub fn depth(&self) -> usize {
        self.layer_dims.len() - 2
    }

    pub fn n_in(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn n_out(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    /// `s = N₁ + … + N_T`.
    pub fn s(&self) -> usize {
        self.layer_dims[1..=self.depth()].iter().sum()
    }

    fn n_weights(&self) -> usize {
        self.layer_dims.windows(2).map(|w| w[0] * w[1]).sum()
    }

    pub fn n_params(&self) -> usize {
        self.n_weights() + self.layer_dims[1..].iter().sum::<usize>()
    }

    /// Offset of `W^(t+1)` (0-based layer `t`) in the flat parameter vector.
    pub fn weight_offset(&self, t: usize) -> usize {
        self.layer_dims[..=t].windows(2).map(|w| w[0] * w[1]).sum()
    }

    /// Offset of `b^(t+1)`.
    pub fn bias_offset(&self, t: usize) -> usize {
        self.n_weights() + self.layer_dims[1..=t].iter().sum::<usize>()
    }

    /// Offset of the first switching variable of hidden layer `t`.
    pub fn switch_offset(&self, t: usize) -> usize {
        self.layer_dims[1..=t].iter().sum()
    }

    /// `W^(t+1)[k][l]`.
    pub fn weight(&self, params: &[f64], t: usize, k: usize, l: usize) -> f64 {
        params[self.weight_offset(t) + k * self.layer_dims[t] + l]
    }

    pub fn bias(&self, params: &[f64], t: usize, k: usize) -> f64 {
        params[self.bias_offset(t) + k]
    }

    pub fn check_params(&self, params: &[f64]) -> Result<()> {
        check_len("params", self.n_params(), params.len())?;
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("params[{i}] is not finite")));
        }
        Ok(())
    }

    /// Flattens per-layer weight rows and biases.
    pub fn flatten(&self, weights: &[Vec<Vec<f64>>], biases: &[Vec<f64>]) -> Result<Vec<f64>> {
        let layers = self.depth() + 1;
        check_len("weights (layers)", layers, weights.len())?;
        check_len("biases (layers)", layers, biases.len())?;
        let mut out = Vec::with_capacity(self.n_params());
        for (t, w) in weights.iter().enumerate() {
            check_len("weight rows", self.layer_dims[t + 1], w.len())?;
            for row in w {
                check_len("weight columns", self.layer_dims[t], row.len())?;
                out.extend(row);
            }
        }
        for (t, b) in biases.iter().enumerate() {
            check_len("bias", self.layer_dims[t + 1], b.len())?;
            out.extend(b);
        }
        self.check_params(&out)?;
        Ok(out)
    }

    pub fn unflatten(&self, params: &[f64]) -> Result<(Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>)> {
        check_len("params", self.n_params(), params.len())?;
        let layers = self.depth() + 1;
        let weights = (0..layers)
            .map(|t| {
                (0..self.layer_dims[t + 1])
                    .map(|k| {
                        (0..self.layer_dims[t])
                            .map(|l| self.weight(params, t, k, l))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let biases = (0..layers)
            .map(|t| {
                (0..self.layer_dims[t + 1])
                    .map(|k| self.bias(params, t, k))
                    .collect()
            })
            .collect();
        Ok((weights, biases))
    }

    /// Seeded `uniform(−0.5, 0.5)/√fan_in` for every weight and bias.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = vec![0.0; self.n_params()];
        for t in 0..=self.depth() {
            let scale = 1.0 / (self.layer_dims[t] as f64).sqrt();
            let w0 = self.weight_offset(t);
            for v in &mut out[w0..w0 + self.layer_dims[t] * self.layer_dims[t + 1]] {
                *v = (rng.random::<f64>() - 0.5) * scale;
            }
            let b0 = self.bias_offset(t);
            for v in &mut out[b0..b0 + self.layer_dims[t + 1]] {
                *v = (rng.random::<f64>() - 0.5) * scale;
            }
        }
        out
    }
}

/// Network file: spec plus optional weights and biases.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NetworkDoc {
    pub layer_dims: Vec<usize>,
    pub head: Head,
    pub loss: Loss,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub biases: Option<Vec<Vec<f64>>>,
}

impl NetworkDoc {
    /// Spec and, when both weights and biases are present, flat parameters.
    pub fn parse(document: &str) -> Result<(ReluNetSpec, Option<Vec<f64>>)> {
        let doc: NetworkDoc = serde_json::from_str(document)?;
        let spec = ReluNetSpec::new(doc.layer_dims, doc.head, doc.loss)?;
        let params = match (doc.weights, doc.biases) {
            (Some(w), Some(b)) => Some(spec.flatten(&w, &b)?),
            (None, None) => None,
            _ => {
                return Err(Error::Invalid(
                    "weights and biases must be given together".into(),
                ))
            }
        };
        Ok((spec, params))
    }

    pub fn checkpoint(spec: &ReluNetSpec, params: &[f64]) -> Result<String> {
        let (w, b) = spec.unflatten(params)?;
        let doc = NetworkDoc {
            layer_dims: spec.layer_dims.clone(),
            head: spec.head,
            loss: spec.loss,
            weights: Some(w),
            biases: Some(b),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn parse(document: &str) -> Result<Self> {
        Ok(serde_json::from_str(document)?)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self, spec: &ReluNetSpec) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Invalid("dataset has no samples".into()));
        }
        for (j, s) in self.samples.iter().enumerate() {
            if s.u.len() != spec.n_in() || s.v.len() != spec.n_out() {
                return Err(Error::Dimension(format!(
                    "sample {j} has |u| = {}, |v| = {}; network expects {} and {}",
                    s.u.len(),
                    s.v.len(),
                    spec.n_in(),
                    spec.n_out()
                )));
            }
            if s.u.iter().chain(&s.v).any(|x| !x.is_finite()) {
                return Err(Error::Invalid(format!("sample {j} has non-finite entries")));
            }
        }
        Ok(())
    }

    /// `v = relu(1.5u − 0.2)` on 21 equispaced points of `[−1, 1]`.
    pub fn bundled_1d() -> Self {
        let samples = (0..21)
            .map(|i| {
                let u = -1.0 + 0.1 * i as f64;
                Sample {
                    u: vec![u],
                    v: vec![(1.5 * u - 0.2).max(0.0)],
                }
            })
            .collect();
        Self { samples }
    }
}

/// Values of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// `u^(0) … u^(T)`
    pub activations: Vec<Vec<f64>>,
    /// `z^(1) … z^(T)` concatenated
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub output: Vec<f64>,
    pub loss: f64,
    /// `∂loss/∂y`
    pub grad_y: Vec<f64>,
}

fn affine(spec: &ReluNetSpec, params: &[f64], t: usize, input: &[f64]) -> Vec<f64> {
    (0..spec.layer_dims[t + 1])
        .map(|k| {
            let mut acc = spec.weight(params, t, k, 0) * input[0];
            for (l, &x) in input.iter().enumerate().skip(1) {
                acc += spec.weight(params, t, k, l) * x;
            }
            acc + spec.bias(params, t, k)
        })
        .collect()
}

fn relu(z: f64) -> f64 {
    0.5 * (z + z.abs())
}

fn softmax(y: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = y.iter().map(|v| v.exp()).collect();
    let mut total = e[0];
    for v in &e[1..] {
        total += v;
    }
    e.iter().map(|v| v / total).collect()
}

pub fn forward(spec: &ReluNetSpec, params: &[f64], sample: &Sample) -> Result<Forward> {
    spec.check_params(params)?;
    check_len("u", spec.n_in(), sample.u.len())?;
    check_len("v", spec.n_out(), sample.v.len())?;
    let t_hidden = spec.depth();
    let mut activations = vec![sample.u.clone()];
    let mut z = Vec::with_capacity(spec.s());
    for t in 0..t_hidden {
        let zt = affine(spec, params, t, activations.last().unwrap());
        activations.push(zt.iter().map(|&v| relu(v)).collect());
        z.extend(zt);
    }
    let y = affine(spec, params, t_hidden, &activations[t_hidden]);
    let output = match spec.head {
        Head::Identity => y.clone(),
        Head::Softmax => softmax(&y),
    };
    let v = &sample.v;
    let (loss, grad_out): (f64, Vec<f64>) = match spec.loss {
        Loss::Squared => {
            let r: Vec<f64> = output.iter().zip(v).map(|(o, v)| o - v).collect();
            let mut acc = r[0] * r[0];
            for x in &r[1..] {
                acc += x * x;
            }
            (0.5 * acc, r)
        }
        Loss::CrossEntropy => {
            let mut acc = v[0] * output[0].ln();
            for (vi, oi) in v.iter().zip(&output).skip(1) {
                acc += vi * oi.ln();
            }
            (-acc, output.iter().zip(v).map(|(o, v)| -v / o).collect())
        }
    };
    let grad_y = match spec.head {
        Head::Identity => grad_out,
        Head::Softmax => {
            let pg: f64 = output.iter().zip(&grad_out).map(|(p, g)| p * g).sum();
            output
                .iter()
                .zip(&grad_out)
                .map(|(p, g)| p * (g - pg))
                .collect()
        }
    };
    Ok(Forward {
        activations,
        z,
        y,
        output,
        loss,
        grad_y,
    })
}

/// Abs-normal data of sample `j`'s loss over parameter space.
pub fn build_absnormal(
    spec: &ReluNetSpec,
    data: &Dataset,
    j: usize,
    params: &[f64],
) -> Result<AbsNormalPoint> {
    let sample = data.samples.get(j).ok_or_else(|| {
        Error::Invalid(format!(
            "sample index {j} out of range (J = {})",
            data.len()
        ))
    })?;
    build_absnormal_for(spec, sample, params)
}

pub fn build_absnormal_for(
    spec: &ReluNetSpec,
    sample: &Sample,
    params: &[f64],
) -> Result<AbsNormalPoint> {
    let fw = forward(spec, params, sample)?;
    let n = spec.n_params();
    let s = spec.s();
    let t_hidden = spec.depth();
    let dims = &spec.layer_dims;
    let mut z_mat = Matrix::zeros(s, n);
    let mut lm = Matrix::zeros(s, s);
    for t in 0..t_hidden {
        let row0 = spec.switch_offset(t);
        for k in 0..dims[t + 1] {
            let r = row0 + k;
            let w0 = spec.weight_offset(t) + k * dims[t];
            z_mat.row_mut(r)[w0..w0 + dims[t]].copy_from_slice(&fw.activations[t]);
            z_mat[(r, spec.bias_offset(t) + k)] = 1.0;
            if t > 0 {
                let col0 = spec.switch_offset(t - 1);
                for l in 0..dims[t] {
                    lm[(r, col0 + l)] = 0.5 * spec.weight(params, t, k, l);
                }
            }
        }
    }
    let mut a = vec![0.0; n];
    let last = &fw.activations[t_hidden];
    for (i, &g) in fw.grad_y.iter().enumerate() {
        let w0 = spec.weight_offset(t_hidden) + i * dims[t_hidden];
        for (l, &u) in last.iter().enumerate() {
            a[w0 + l] = g * u;
        }
        a[spec.bias_offset(t_hidden) + i] = g;
    }
    let mut b = vec![0.0; s];
    let off = spec.switch_offset(t_hidden - 1);
    for l in 0..dims[t_hidden] {
        b[off + l] = 0.5
            * fw.grad_y
                .iter()
                .enumerate()
                .map(|(i, g)| spec.weight(params, t_hidden, i, l) * g)
                .sum::<f64>();
    }
    AbsNormalPoint::from_parts(
        params.to_vec(),
        fw.z,
        a,
        b.clone(),
        b,
        z_mat,
        lm.clone(),
        lm,
        DEFAULT_KINK_TOL,
    )
}

/// Appends sample `sample`'s loss subgraph; parameters are the tape inputs.
fn push_sample(
    b: &mut TapeBuilder,
    spec: &ReluNetSpec,
    sample: &Sample,
    params: &[NodeId],
) -> NodeId {
    let dims = &spec.layer_dims;
    let t_hidden = spec.depth();
    let mut input: Vec<NodeId> = sample.u.iter().map(|&u| b.constant(u)).collect();
    let half = b.constant(0.5);
    let layer = |b: &mut TapeBuilder, t: usize, input: &[NodeId]| -> Vec<NodeId> {
        (0..dims[t + 1])
            .map(|k| {
                let w = |l: usize| params[spec.weight_offset(t) + k * dims[t] + l];
                let mut acc = b.mul(w(0), input[0]);
                for (l, &x) in input.iter().enumerate().skip(1) {
                    let p = b.mul(w(l), x);
                    acc = b.add(acc, p);
                }
                b.add(acc, params[spec.bias_offset(t) + k])
            })
            .collect()
    };
    for t in 0..t_hidden {
        let z = layer(b, t, &input);
        input = z
            .into_iter()
            .map(|zk| {
                let a = b.abs(zk);
                let sum = b.add(zk, a);
                b.mul(half, sum)
            })
            .collect();
    }
    let y = layer(b, t_hidden, &input);
    let out: Vec<NodeId> = match spec.head {
        Head::Identity => y,
        Head::Softmax => {
            let e: Vec<NodeId> = y.iter().map(|&v| b.push(Node::Exp(v))).collect();
            let mut total = e[0];
            for &v in &e[1..] {
                total = b.add(total, v);
            }
            e.iter().map(|&v| b.push(Node::Div(v, total))).collect()
        }
    };
    match spec.loss {
        Loss::Squared => {
            let sq: Vec<NodeId> = out
                .iter()
                .zip(&sample.v)
                .map(|(&o, &v)| {
                    let c = b.constant(v);
                    let r = b.sub(o, c);
                    b.push(Node::Sqr(r))
                })
                .collect();
            let mut acc = sq[0];
            for &v in &sq[1..] {
                acc = b.add(acc, v);
            }
            b.mul(half, acc)
        }
        Loss::CrossEntropy => {
            let terms: Vec<NodeId> = out
                .iter()
                .zip(&sample.v)
                .map(|(&o, &v)| {
                    let c = b.constant(v);
                    let lg = b.push(Node::Log(o));
                    b.mul(c, lg)
                })
                .collect();
            let mut acc = terms[0];
            for &v in &terms[1..] {
                acc = b.add(acc, v);
            }
            b.push(Node::Neg(acc))
        }
    }
}

/// Sample loss as a generic tape over the flat parameters.
pub fn sample_tape(spec: &ReluNetSpec, sample: &Sample) -> Result<Tape> {
    check_len("u", spec.n_in(), sample.u.len())?;
    check_len("v", spec.n_out(), sample.v.len())?;
    let mut b = TapeBuilder::new(spec.n_params());
    let params: Vec<NodeId> = (0..spec.n_params()).map(|i| b.input(i)).collect();
    let out = push_sample(&mut b, spec, sample, &params);
    b.finish(out)
}

/// Mean loss over `batch` as one tape (per-sample subgraphs concatenated).
pub fn batch_tape(spec: &ReluNetSpec, data: &Dataset, batch: &[usize]) -> Result<Tape> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    data.validate(spec)?;
    let mut b = TapeBuilder::new(spec.n_params());
    let params: Vec<NodeId> = (0..spec.n_params()).map(|i| b.input(i)).collect();
    let mut total = None;
    for &j in batch {
        let sample = data.samples.get(j).ok_or_else(|| {
            Error::Invalid(format!(
                "sample index {j} out of range (J = {})",
                data.len()
            ))
        })?;
        let l = push_sample(&mut b, spec, sample, &params);
        total = Some(match total {
            None => l,
            Some(acc) => b.add(acc, l),
        });
    }
    let inv = b.constant(1.0 / batch.len() as f64);
    let out = b.mul(inv, total.unwrap());
    b.finish(out)
}

/// `∂|·|(0)` policy shared by every sample of a batch.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Zeta(Vec<f64>),
    Tau(Vec<i8>),
}

impl Policy {
    fn weights(&self) -> Vec<f64> {
        match self {
            Policy::Zeta(z) => z.clone(),
            Policy::Tau(t) => t.iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchContext {
    spec: ReluNetSpec,
    batch: Vec<usize>,
    points: Vec<AbsNormalPoint>,
    policy: Policy,
}

impl BatchContext {
    pub fn new(
        spec: &ReluNetSpec,
        data: &Dataset,
        params: &[f64],
        batch: &[usize],
        policy: Policy,
    ) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        data.validate(spec)?;
        let points = batch
            .iter()
            .map(|&j| build_absnormal(spec, data, j, params))
            .collect::<Result<Vec<_>>>()?;
        Self::from_points(spec, batch.to_vec(), points, policy)
    }

    pub fn from_points(
        spec: &ReluNetSpec,
        batch: Vec<usize>,
        points: Vec<AbsNormalPoint>,
        policy: Policy,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyBatch);
        }
        check_len("batch", batch.len(), points.len())?;
        let s = spec.s();
        for p in &points {
            check_len("switching variables", s, p.s())?;
            check_len("parameters", spec.n_params(), p.n())?;
        }
        match &policy {
            Policy::Zeta(z) => {
                check_len("zeta", s, z.len())?;
                if let Some(i) = z.iter().position(|v| !(v.abs() <= 1.0)) {
                    return Err(Error::Invalid(format!(
                        "zeta[{i}] = {} lies outside [-1, 1]",
                        z[i]
                    )));
                }
            }
            Policy::Tau(t) => {
                check_len("tau", s, t.len())?;
                if let Some(i) = t.iter().position(|v| v.abs() != 1) {
                    return Err(Error::Invalid(format!(
                        "tau[{i}] = {} must be -1 or 1",
                        t[i]
                    )));
                }
            }
        }
        Ok(Self {
            spec: spec.clone(),
            batch,
            points,
            policy,
        })
    }

    pub fn points(&self) -> &[AbsNormalPoint] {
        &self.points
    }

    pub fn batch(&self) -> &[usize] {
        &self.batch
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn spec(&self) -> &ReluNetSpec {
        &self.spec
    }

    pub fn with_policy(&self, policy: Policy) -> Result<Self> {
        Self::from_points(&self.spec, self.batch.clone(), self.points.clone(), policy)
    }
}

/// `ξ^[j]`: the policy at kinks of sample `j`, `σ̄^[j]` elsewhere.
pub fn sample_weights(point: &AbsNormalPoint, policy: &[f64]) -> Vec<f64> {
    point
        .sigma
        .as_slice()
        .iter()
        .zip(policy)
        .map(|(&sb, &w)| if sb == 0 { w } else { f64::from(sb) })
        .collect()
}

/// `σ^[j]_τ`.
pub fn sigma_tau(point: &AbsNormalPoint, tau: &[i8]) -> SignatureVector {
    let entries = point
        .sigma
        .as_slice()
        .iter()
        .zip(tau)
        .map(|(&sb, &t)| if sb == 0 { t } else { sb })
        .collect();
    SignatureVector::new(entries).expect("entries are signs")
}

/// `γ_{τ,ζ} = Π_i (τ_i ζ_i + 1)/2`.
pub fn gamma(tau: &[i8], zeta: &[f64]) -> f64 {
    tau.iter()
        .zip(zeta)
        .map(|(&t, &z)| (f64::from(t) * z + 1.0) / 2.0)
        .product()
}

/// `(1/|𝒥|) Σ_j ∇φ^[j]_{ξ^[j]}(x̄)`.
pub fn batch_gradient(ctx: &BatchContext) -> Vec<f64> {
    let policy = ctx.policy.weights();
    let n = ctx.spec.n_params();
    let mut total = vec![0.0; n];
    for p in &ctx.points {
        let g = gradient_for_weights(p, &sample_weights(p, &policy));
        for (t, v) in total.iter_mut().zip(g) {
            *t += v;
        }
    }
    let inv = 1.0 / ctx.points.len() as f64;
    total.iter().map(|v| v * inv).collect()
}

/// `Z†` selecting the hidden-bias coordinates; checks `Z^[j] Z† = I` for every sample.
pub fn shared_right_inverse(spec: &ReluNetSpec, points: &[AbsNormalPoint]) -> Result<Matrix> {
    if points.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let s = spec.s();
    let n = spec.n_params();
    let mut zdag = Matrix::zeros(n, s);
    for t in 0..spec.depth() {
        for k in 0..spec.layer_dims[t + 1] {
            zdag[(spec.bias_offset(t) + k, spec.switch_offset(t) + k)] = 1.0;
        }
    }
    let eye = Matrix::identity(s);
    for (j, p) in points.iter().enumerate() {
        check_len("parameters", n, p.n())?;
        check_len("switching variables", s, p.s())?;
        if p.z_mat.mul_mat(&zdag) != eye {
            return Err(Error::Assertion(format!(
                "Z Z^+ differs from the identity for batch entry {j}"
            )));
        }
    }
    Ok(zdag)
}

/// Direction `d_τ = Z† v` with `τ_k (Dz^[j]_{σ_τ} d_τ)_k ≥ 1` for every sample and switch.
pub fn tau_direction(ctx: &BatchContext, tau: &[i8]) -> Result<Vec<f64>> {
    let s = ctx.spec.s();
    check_len("tau", s, tau.len())?;
    if let Some(i) = tau.iter().position(|v| v.abs() != 1) {
        return Err(Error::Invalid(format!(
            "tau[{i}] = {} must be -1 or 1",
            tau[i]
        )));
    }
    let zdag = shared_right_inverse(&ctx.spec, &ctx.points)?;
    let sig: Vec<Vec<f64>> = ctx
        .points
        .iter()
        .map(|p| sigma_tau(p, tau).to_f64())
        .collect();
    // w[j] = (I − M − L Σ^[j]_τ)^{-1} v, grown together with v
    let mut v = vec![0.0; s];
    let mut w = vec![vec![0.0f64; s]; ctx.points.len()];
    for k in 0..s {
        let mut worst = 0.0f64;
        let mut lower = vec![0.0; ctx.points.len()];
        for (j, p) in ctx.points.iter().enumerate() {
            let mut bound = 0.0;
            let mut acc = 0.0;
            for l in 0..k {
                let c = p.m_mat[(k, l)] + p.l_mat[(k, l)] * sig[j][l];
                bound += c.abs() * w[j][l].abs();
                acc += c * w[j][l];
            }
            worst = worst.max(bound);
            lower[j] = acc;
        }
        v[k] = f64::from(tau[k]) * (1.0 + worst);
        for j in 0..ctx.points.len() {
            w[j][k] = v[k] + lower[j];
        }
    }
    let d = zdag.mul_vec(&v);
    for (j, p) in ctx.points.iter().enumerate() {
        let dz = switching_jacobian(p, &sig[j]).mul_vec(&d);
        for k in 0..s {
            let c = f64::from(tau[k]) * dz[k];
            if c < 1.0 - 1e-9 {
                return Err(Error::Assertion(format!(
                    "tau certificate fails for batch entry {j}, switch {k}: {c}"
                )));
            }
        }
    }
    Ok(d)
}

/// Mean loss over every sample.
pub fn training_loss(spec: &ReluNetSpec, data: &Dataset, params: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for s in &data.samples {
        total += forward(spec, params, s)?.loss;
    }
    Ok(total / data.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Constant {
        step: f64,
    },
    /// `step_k = initial / (1 + decay·k)`
    InverseTime {
        initial: f64,
        decay: f64,
    },
}

impl StepSchedule {
    pub fn step(&self, k: usize) -> f64 {
        match *self {
            StepSchedule::Constant { step } => step,
            StepSchedule::InverseTime { initial, decay } => initial / (1.0 + decay * k as f64),
        }
    }

    fn validate(&self) -> Result<()> {
        let vals = match *self {
            StepSchedule::Constant { step } => vec![step],
            StepSchedule::InverseTime { initial, decay } => vec![initial, decay],
        };
        if vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Invalid(format!(
                "step schedule {self:?} needs finite non-negative values"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub schedule: StepSchedule,
    /// `None` uses the full dataset every iteration.
    pub batch_size: Option<usize>,
    /// Kink policy, one entry per switching variable.
    pub zeta: Vec<f64>,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrainRecord {
    pub iteration: usize,
    /// Training loss before the step.
    pub loss: f64,
    /// Norm of the batch gradient used for the step.
    pub grad_norm: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub records: Vec<TrainRecord>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub params: Vec<f64>,
}

impl Trajectory {
    /// `iteration,loss,grad_norm`
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["iteration", "loss", "grad_norm"])?;
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                fmt_num(r.loss),
                fmt_num(r.grad_norm),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn reduction(&self) -> f64 {
        (self.initial_loss - self.final_loss) / self.initial_loss
    }
}

/// Stochastic generalized gradient descent from `init` (seeded init when `None`).
pub fn sgd_train(
    spec: &ReluNetSpec,
    data: &Dataset,
    config: &TrainConfig,
    init: Option<Vec<f64>>,
) -> Result<Trajectory> {
    data.validate(spec)?;
    config.schedule.validate()?;
    check_len("zeta", spec.s(), config.zeta.len())?;
    if let Some(i) = config.zeta.iter().position(|v| !(v.abs() <= 1.0)) {
        return Err(Error::Invalid(format!(
            "zeta[{i}] = {} lies outside [-1, 1]",
            config.zeta[i]
        )));
    }
    let j_total = data.len();
    let batch_size = match config.batch_size {
        Some(0) => return Err(Error::EmptyBatch),
        Some(b) => b.min(j_total),
        None => j_total,
    };
    let mut params = match init {
        Some(p) => {
            spec.check_params(&p)?;
            p
        }
        None => spec.init_params(config.seed),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_ba7c);
    let mut order: Vec<usize> = (0..j_total).collect();
    let mut cursor = j_total;
    let mut records = Vec::with_capacity(config.iterations);
    let check = |iteration: usize, loss: f64| -> Result<f64> {
        if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
            Err(Error::Divergence { iteration, loss })
        } else {
            Ok(loss)
        }
    };
    let initial_loss = check(0, training_loss(spec, data, &params)?)?;
    let mut loss = initial_loss;
    for k in 0..config.iterations {
        let batch: Vec<usize> = if batch_size == j_total {
            order.clone()
        } else {
            if cursor + batch_size > j_total {
                // fresh permutation per epoch
                for i in (1..j_total).rev() {
                    let r = rng.random_range(0..=i);
                    order.swap(i, r);
                }
                cursor = 0;
            }
            cursor += batch_size;
            order[cursor - batch_size..cursor].to_vec()
        };
        let ctx = BatchContext::new(
            spec,
            data,
            &params,
            &batch,
            Policy::Zeta(config.zeta.clone()),
        )?;
        let g = batch_gradient(&ctx);
        let step = config.schedule.step(k);
        records.push(TrainRecord {
            iteration: k,
            loss,
            grad_norm: norm2(&g),
        });
        for (p, gi) in params.iter_mut().zip(&g) {
            *p -= step * gi;
        }
        loss = check(k + 1, training_loss(spec, data, &params)?)?;
    }
    Ok(Trajectory {
        records,
        initial_loss,
        final_loss: loss,
        params,
    })
}
