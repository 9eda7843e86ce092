//! Built-in problems.

use crate::tape::{Node, Tape, TapeBuilder};

/// `φ^μ(x) = |x₁| + |x₂ − x₁| + μ |1 − cos x₁ − sin x₂|`.
///
/// The μ constant carries the parameter tag `"mu"`.
pub fn phi_mu(mu: f64) -> Tape {
    let mut b = TapeBuilder::new(2);
    let x1 = b.input(0);
    let x2 = b.input(1);
    let z1 = b.abs(x1);
    let diff = b.sub(x2, x1);
    let z2 = b.abs(diff);
    let one = b.constant(1.0);
    let c = b.push(Node::Cos(x1));
    let s = b.push(Node::Sin(x2));
    let t = b.sub(one, c);
    let arg3 = b.sub(t, s);
    let z3 = b.abs(arg3);
    let m = b.param("mu", mu);
    let mz3 = b.mul(m, z3);
    let sum = b.add(z1, z2);
    let out = b.add(sum, mz3);
    b.finish(out).expect("phi_mu tape is well formed")
}
