//! Seeded random instances for property checks and the `verify` command.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::absnormal::{AbsNormalPoint, DEFAULT_KINK_TOL};
use crate::error::Result;
use crate::linalg::Matrix;
use crate::relunet::{forward, Dataset, Head, Loss, ReluNetSpec, Sample};
use crate::tape::{Node, NodeId, Tape, TapeBuilder};

/// Margin kept by inactive switches of generated tapes.
pub const TAPE_MARGIN: f64 = 0.1;

/// Margin kept by inactive neurons of generated networks.
pub const NET_MARGIN: f64 = 0.05;

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Uniform in `[-hi, -lo] ∪ [lo, hi]`.
fn away_from_zero(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let m = uniform(rng, lo, hi);
    if rng.random::<bool>() {
        m
    } else {
        -m
    }
}

/// Strictly lower triangular with roughly half the entries set.
fn random_lower(rng: &mut ChaCha8Rng, s: usize) -> Matrix {
    let mut m = Matrix::zeros(s, s);
    for i in 0..s {
        for j in 0..i {
            if rng.random::<bool>() {
                m[(i, j)] = uniform(rng, -1.0, 1.0);
            }
        }
    }
    m
}

/// Abs-normal data with uniform entries and `n_active` kinks at random positions.
pub fn random_point(
    rng: &mut ChaCha8Rng,
    n: usize,
    s: usize,
    n_active: usize,
) -> Result<AbsNormalPoint> {
    let n_active = n_active.min(s);
    let active = sample(rng, s, n_active).into_vec();
    let z: Vec<f64> = (0..s)
        .map(|i| {
            if active.contains(&i) {
                0.0
            } else {
                away_from_zero(rng, TAPE_MARGIN, 1.0)
            }
        })
        .collect();
    let vec_of = |rng: &mut ChaCha8Rng, len: usize| -> Vec<f64> {
        (0..len).map(|_| uniform(rng, -1.0, 1.0)).collect()
    };
    let x = vec_of(rng, n);
    let a = vec_of(rng, n);
    let b = vec_of(rng, s);
    let d = vec_of(rng, s);
    let mut z_mat = Matrix::zeros(s, n);
    for i in 0..s {
        for k in 0..n {
            z_mat[(i, k)] = uniform(rng, -1.0, 1.0);
        }
    }
    let l_mat = random_lower(rng, s);
    let m_mat = random_lower(rng, s);
    AbsNormalPoint::from_parts(x, z, a, b, d, z_mat, l_mat, m_mat, DEFAULT_KINK_TOL)
}

/// A generated tape with a base point and its kinks.
#[derive(Clone, Debug)]
pub struct RandomTape {
    pub tape: Tape,
    pub x: Vec<f64>,
    /// Switches that vanish exactly at `x`.
    pub active: Vec<usize>,
}

/// Bounded smooth unary map of `p`.
fn smooth_unary(b: &mut TapeBuilder, rng: &mut ChaCha8Rng, p: NodeId) -> NodeId {
    match rng.random_range(0..5) {
        0 => b.push(Node::Sin(p)),
        1 => b.push(Node::Cos(p)),
        2 => {
            let s = b.push(Node::Sin(p));
            b.push(Node::Exp(s))
        }
        3 => {
            let one = b.constant(1.0);
            let sq = b.push(Node::Sqr(p));
            let arg = b.add(one, sq);
            b.push(Node::Log(arg))
        }
        _ => {
            let one = b.constant(1.0);
            let sq = b.push(Node::Sqr(p));
            let den = b.add(one, sq);
            b.push(Node::Div(p, den))
        }
    }
}

/// Random composition of smooth operations and `abs`, with `n_active`
/// switches exactly at a kink at the returned point and the rest at least
/// [`TAPE_MARGIN`] away.
pub fn random_tape(
    rng: &mut ChaCha8Rng,
    n: usize,
    s: usize,
    n_active: usize,
) -> Result<RandomTape> {
    let n_active = n_active.min(s);
    let mut active = sample(rng, s, n_active).into_vec();
    active.sort_unstable();
    let x: Vec<f64> = (0..n).map(|_| uniform(rng, -1.0, 1.0)).collect();
    let mut b = TapeBuilder::new(n);
    let inputs: Vec<NodeId> = (0..n).map(|k| b.input(k)).collect();
    let mut pool: Vec<NodeId> = inputs.clone();
    let mut args = Vec::with_capacity(s);
    let mut abs_nodes = Vec::with_capacity(s);
    for i in 0..s {
        // linear part in one or two inputs
        let k = rng.random_range(0..n);
        let c = b.constant(away_from_zero(rng, 0.5, 2.0));
        let mut arg = b.mul(c, inputs[k]);
        if n > 1 && rng.random::<bool>() {
            let k2 = rng.random_range(0..n);
            let c2 = b.constant(uniform(rng, -1.0, 1.0));
            let t = b.mul(c2, inputs[k2]);
            arg = b.add(arg, t);
        }
        // nonlinear part from anything computed so far
        let p = pool[rng.random_range(0..pool.len())];
        let nl = smooth_unary(&mut b, rng, p);
        let c3 = b.constant(uniform(rng, -1.0, 1.0));
        let t = b.mul(c3, nl);
        arg = b.add(arg, t);
        if !pool.is_empty() && rng.random_range(0..3) == 0 {
            let q = pool[rng.random_range(0..pool.len())];
            let r = pool[rng.random_range(0..pool.len())];
            let prod = b.mul(q, r);
            let c4 = b.constant(uniform(rng, -0.5, 0.5));
            let t = b.mul(c4, prod);
            arg = b.add(arg, t);
        }
        let v = b.value_at(arg, &x)?;
        if active.contains(&i) {
            let shift = b.constant(v);
            arg = b.sub(arg, shift);
        } else if v.abs() < TAPE_MARGIN {
            let shift = b.constant(if v >= 0.0 { 0.5 } else { -0.5 });
            arg = b.add(arg, shift);
        }
        let a = b.abs(arg);
        args.push(arg);
        abs_nodes.push(a);
        pool.push(a);
        pool.push(arg);
    }
    // output: abs terms, some raw switching arguments and a smooth part
    let p0 = pool[rng.random_range(0..pool.len())];
    let mut out = smooth_unary(&mut b, rng, p0);
    for i in 0..s {
        let c = b.constant(away_from_zero(rng, 0.25, 1.5));
        let t = b.mul(c, abs_nodes[i]);
        out = b.add(out, t);
        if rng.random_range(0..3) == 0 {
            let c = b.constant(uniform(rng, -1.0, 1.0));
            let t = b.mul(c, args[i]);
            out = b.add(out, t);
        }
    }
    let tape = b.finish(out)?;
    Ok(RandomTape { tape, x, active })
}

/// A network with data, parameters and a batch.
#[derive(Clone, Debug)]
pub struct NetInstance {
    pub spec: ReluNetSpec,
    pub data: Dataset,
    pub params: Vec<f64>,
    pub batch: Vec<usize>,
}

fn random_spec(
    rng: &mut ChaCha8Rng,
    max_depth: usize,
    max_width: usize,
    max_s: usize,
) -> ReluNetSpec {
    loop {
        let depth = rng.random_range(1..=max_depth);
        let mut dims = vec![rng.random_range(1..=max_width.min(4))];
        for _ in 0..depth {
            dims.push(rng.random_range(1..=max_width));
        }
        let (head, loss) = match rng.random_range(0..3) {
            0 => (Head::Identity, Loss::Squared),
            1 => (Head::Softmax, Loss::CrossEntropy),
            _ => (Head::Softmax, Loss::Squared),
        };
        let out = if head == Head::Softmax {
            rng.random_range(2..=3)
        } else {
            rng.random_range(1..=3)
        };
        dims.push(out);
        let spec = ReluNetSpec::new(dims, head, loss).expect("generated dims are valid");
        if spec.s() <= max_s {
            return spec;
        }
    }
}

fn random_sample(rng: &mut ChaCha8Rng, spec: &ReluNetSpec) -> Sample {
    let u = (0..spec.n_in()).map(|_| uniform(rng, -1.0, 1.0)).collect();
    let v = if spec.head() == Head::Softmax {
        let hot = rng.random_range(0..spec.n_out());
        (0..spec.n_out())
            .map(|i| if i == hot { 1.0 } else { 0.0 })
            .collect()
    } else {
        (0..spec.n_out()).map(|_| uniform(rng, -1.0, 1.0)).collect()
    };
    Sample { u, v }
}

fn random_params(rng: &mut ChaCha8Rng, spec: &ReluNetSpec) -> Vec<f64> {
    let mut p = vec![0.0; spec.n_params()];
    let dims = spec.layer_dims();
    for t in 0..=spec.depth() {
        let scale = 1.5 / (dims[t] as f64).sqrt();
        let w0 = spec.weight_offset(t);
        for v in &mut p[w0..w0 + dims[t] * dims[t + 1]] {
            *v = uniform(rng, -scale, scale);
        }
        let b0 = spec.bias_offset(t);
        for v in &mut p[b0..b0 + dims[t + 1]] {
            *v = uniform(rng, -0.5, 0.5);
        }
    }
    p
}

/// Pre-activation sum `Σ_l W_kl u_l` in the order the network evaluates it.
fn weighted_sum(spec: &ReluNetSpec, params: &[f64], t: usize, k: usize, input: &[f64]) -> f64 {
    let mut acc = spec.weight(params, t, k, 0) * input[0];
    for (l, &x) in input.iter().enumerate().skip(1) {
        acc += spec.weight(params, t, k, l) * x;
    }
    acc
}

/// Random network with a batch where every switching variable of every
/// sample is at least [`NET_MARGIN`] from zero.
pub fn random_smooth_net(
    rng: &mut ChaCha8Rng,
    max_depth: usize,
    max_width: usize,
    max_batch: usize,
) -> Result<NetInstance> {
    loop {
        let spec = random_spec(rng, max_depth, max_width, usize::MAX);
        let j = rng.random_range(1..=max_batch);
        let data = Dataset {
            samples: (0..j).map(|_| random_sample(rng, &spec)).collect(),
        };
        let params = random_params(rng, &spec);
        let mut ok = true;
        for s in &data.samples {
            if forward(&spec, &params, s)?
                .z
                .iter()
                .any(|z| z.abs() < NET_MARGIN)
            {
                ok = false;
            }
        }
        if ok {
            return Ok(NetInstance {
                spec,
                data,
                params,
                batch: (0..j).collect(),
            });
        }
    }
}

/// Random network with `s ≤ max_s` and a batch in which every sample has at
/// least one exact kink; all other switches keep [`NET_MARGIN`].
///
/// Kinks are placed by setting a bias to minus the weighted sum of the
/// targeted sample, layer by layer so that later adjustments leave earlier
/// kinks intact.
pub fn random_kinked_net(
    rng: &mut ChaCha8Rng,
    max_depth: usize,
    max_width: usize,
    max_s: usize,
    max_batch: usize,
) -> Result<NetInstance> {
    loop {
        let spec = random_spec(rng, max_depth, max_width, max_s);
        let s = spec.s();
        let j = rng.random_range(1..=max_batch.min(s));
        let data = Dataset {
            samples: (0..j).map(|_| random_sample(rng, &spec)).collect(),
        };
        let mut params = random_params(rng, &spec);
        // one switch per sample, distinct across samples
        let targets = sample(rng, s, j).into_vec();
        let locate = |idx: usize| -> (usize, usize) {
            let mut t = 0;
            while t + 1 < spec.depth() && spec.switch_offset(t + 1) <= idx {
                t += 1;
            }
            (t, idx - spec.switch_offset(t))
        };
        let mut order: Vec<(usize, usize)> = targets
            .iter()
            .enumerate()
            .map(|(sj, &idx)| (idx, sj))
            .collect();
        order.sort_unstable();
        for &(idx, sj) in &order {
            let (t, k) = locate(idx);
            let fw = forward(&spec, &params, &data.samples[sj])?;
            let acc = weighted_sum(&spec, &params, t, k, &fw.activations[t]);
            params[spec.bias_offset(t) + k] = -acc;
        }
        let mut ok = true;
        for (sj, smp) in data.samples.iter().enumerate() {
            let z = forward(&spec, &params, smp)?.z;
            for (i, &zi) in z.iter().enumerate() {
                let target = targets[sj] == i;
                if (target && zi != 0.0) || (!target && zi.abs() < NET_MARGIN) {
                    ok = false;
                }
            }
        }
        if ok {
            return Ok(NetInstance {
                spec,
                data,
                params,
                batch: (0..j).collect(),
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::absnormal::extract;
    use rand::SeedableRng;

    #[test]
    fn tapes_hit_requested_kinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let rt = random_tape(&mut rng, 3, 5, 2).unwrap();
            let p = extract(&rt.tape, &rt.x, DEFAULT_KINK_TOL).unwrap();
            assert_eq!(p.alpha, rt.active);
            for (i, z) in p.z.iter().enumerate() {
                if !rt.active.contains(&i) {
                    assert!(z.abs() >= TAPE_MARGIN);
                }
            }
        }
    }

    #[test]
    fn kinked_nets_have_a_kink_per_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let inst = random_kinked_net(&mut rng, 3, 4, 12, 3).unwrap();
            assert!(inst.spec.s() <= 12);
            for smp in &inst.data.samples {
                let z = forward(&inst.spec, &inst.params, smp).unwrap().z;
                assert_eq!(z.iter().filter(|v| **v == 0.0).count(), 1);
            }
        }
    }

    #[test]
    fn points_are_well_formed() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_point(&mut rng, 4, 6, 3).unwrap();
        assert_eq!(p.alpha.len(), 3);
        assert!(p.l_mat.is_strictly_lower() && p.m_mat.is_strictly_lower());
    }

    #[test]
    fn generation_is_seeded() {
        let a = random_tape(&mut ChaCha8Rng::seed_from_u64(1), 2, 3, 1).unwrap();
        let b = random_tape(&mut ChaCha8Rng::seed_from_u64(1), 2, 3, 1).unwrap();
        assert_eq!(a.tape.to_json(), b.tape.to_json());
        assert_eq!(a.x, b.x);
    }
}
