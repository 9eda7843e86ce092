//! Point-local abs-normal data.
//!
//! At a base point `x̄` with `z̄ = z[x̄]` the evaluation procedure is linearized
//! into
//!
//! ```text
//! a = ∇₁f   b = ∇₂f   d = ∇₃f      (gradients of f w.r.t. x, |z|, z)
//! Z = D₁c   L = D₂c   M = D₃c      (Jacobians of c w.r.t. x, |z|, z)
//! ```
//!
//! all evaluated at `(x̄, |z̄|, z̄)`. `L` and `M` are strictly lower triangular.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::Matrix;
use crate::tape::{sign, Tape};

/// Default threshold below which `|z_i|` counts as a kink.
pub const DEFAULT_KINK_TOL: f64 = 1e-12;

/// Default bound on the number of enumerated signatures.
pub const DEFAULT_ENUM_CAP: usize = 1 << 20;

/// Entries in `{-1, 0, 1}`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<i8>", into = "Vec<i8>")]
pub struct SignatureVector(Vec<i8>);

impl SignatureVector {
    pub fn new(entries: Vec<i8>) -> Result<Self> {
        if let Some(i) = entries.iter().position(|v| !(-1..=1).contains(v)) {
            return Err(Error::Invalid(format!(
                "signature entry {i} is {}, expected -1, 0 or 1",
                entries[i]
            )));
        }
        Ok(Self(entries))
    }

    pub fn from_values(z: &[f64], kink_tol: f64) -> Self {
        Self(
            z.iter()
                .map(|&v| if v.abs() <= kink_tol { 0 } else { sign(v) })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn is_definite(&self) -> bool {
        self.0.iter().all(|&v| v != 0)
    }

    /// Indices with entry 0.
    pub fn active(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&i| self.0[i] == 0).collect()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| f64::from(v)).collect()
    }
}

impl TryFrom<Vec<i8>> for SignatureVector {
    type Error = Error;
    fn try_from(v: Vec<i8>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SignatureVector> for Vec<i8> {
    fn from(s: SignatureVector) -> Vec<i8> {
        s.0
    }
}

impl fmt::Display for SignatureVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AbsNormalPoint {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub sigma: SignatureVector,
    /// Sorted active indices (0-based).
    pub alpha: Vec<usize>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub d: Vec<f64>,
    #[serde(rename = "Z")]
    pub z_mat: Matrix,
    #[serde(rename = "L")]
    pub l_mat: Matrix,
    #[serde(rename = "M")]
    pub m_mat: Matrix,
}

impl AbsNormalPoint {
    /// Assembles a point from raw data, validating shapes and triangularity.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        x: Vec<f64>,
        z: Vec<f64>,
        a: Vec<f64>,
        b: Vec<f64>,
        d: Vec<f64>,
        z_mat: Matrix,
        l_mat: Matrix,
        m_mat: Matrix,
        kink_tol: f64,
    ) -> Result<Self> {
        let n = x.len();
        let s = z.len();
        check_len("a", n, a.len())?;
        check_len("b", s, b.len())?;
        check_len("d", s, d.len())?;
        for (what, m, cols) in [("Z", &z_mat, n), ("L", &l_mat, s), ("M", &m_mat, s)] {
            if m.rows() != s || m.cols() != cols {
                return Err(Error::Dimension(format!(
                    "{what} is {}x{}, expected {s}x{cols}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        if !l_mat.is_strictly_lower() || !m_mat.is_strictly_lower() {
            return Err(Error::Invalid(
                "L and M must be strictly lower triangular".into(),
            ));
        }
        let sigma = SignatureVector::from_values(&z, kink_tol);
        let alpha = sigma.active();
        Ok(Self {
            x,
            z,
            sigma,
            alpha,
            a,
            b,
            d,
            z_mat,
            l_mat,
            m_mat,
        })
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn s(&self) -> usize {
        self.z.len()
    }
}

/// One forward sweep plus `s + 1` reverse sweeps.
pub fn extract(tape: &Tape, x: &[f64], kink_tol: f64) -> Result<AbsNormalPoint> {
    if !(kink_tol >= 0.0) {
        return Err(Error::Invalid(format!(
            "kink_tol must be >= 0, got {kink_tol}"
        )));
    }
    let trace = tape.forward_eval(x, None)?;
    let n = tape.n_inputs();
    let s = tape.n_switches();
    let mut z_mat = Matrix::zeros(s, n);
    let mut l_mat = Matrix::zeros(s, s);
    let mut m_mat = Matrix::zeros(s, s);
    for j in 0..s {
        let root = tape.nodes()[tape.switch_node(j)].args()[0];
        let adj = tape.reverse_sweep(&trace.values, root, Some(j), false);
        z_mat.row_mut(j).copy_from_slice(&adj.x);
        l_mat.row_mut(j).copy_from_slice(&adj.abs);
        m_mat.row_mut(j).copy_from_slice(&adj.z);
    }
    let f = tape.reverse_sweep(&trace.values, tape.output(), None, false);
    let point = AbsNormalPoint::from_parts(
        x.to_vec(),
        trace.z,
        f.x,
        f.abs,
        f.z,
        z_mat,
        l_mat,
        m_mat,
        kink_tol,
    )?;
    Ok(point)
}

/// `σ ⪰ σ̄`: `σ` agrees with `σ̄` wherever `σ̄` is nonzero.
pub fn precedes(sigma_bar: &SignatureVector, sigma: &SignatureVector) -> Result<bool> {
    check_len("signature", sigma_bar.len(), sigma.len())?;
    Ok(sigma_bar
        .as_slice()
        .iter()
        .zip(sigma.as_slice())
        .all(|(&sb, &s)| sb == 0 || sb == s))
}

pub(crate) fn check_cap(count_exponent: usize, base: f64, cap: usize) -> Result<()> {
    let needed = base.powi(count_exponent as i32);
    if needed > cap as f64 {
        Err(Error::CapExceeded { needed, cap })
    } else {
        Ok(())
    }
}

/// All definite signatures `σ ⪰ σ̄`.
///
/// Ordered lexicographically over the active indices (first active index most
/// significant), with `-1` before `+1`.
pub fn definite_successors(
    sigma_bar: &SignatureVector,
    cap: usize,
) -> Result<Vec<SignatureVector>> {
    let alpha = sigma_bar.active();
    check_cap(alpha.len(), 2.0, cap)?;
    let k = alpha.len();
    let mut out = Vec::with_capacity(1 << k);
    for code in 0u64..(1u64 << k) {
        let mut entries = sigma_bar.as_slice().to_vec();
        for (pos, &i) in alpha.iter().enumerate() {
            let bit = (code >> (k - 1 - pos)) & 1;
            entries[i] = if bit == 1 { 1 } else { -1 };
        }
        out.push(SignatureVector(entries));
    }
    Ok(out)
}

/// All `σ ∈ {-1,0,1}^s` with `σ ⪰ σ̄`, lexicographic over the active indices
/// with `-1 < 0 < 1`.
pub fn all_successors(sigma_bar: &SignatureVector, cap: usize) -> Result<Vec<SignatureVector>> {
    let alpha = sigma_bar.active();
    check_cap(alpha.len(), 3.0, cap)?;
    let k = alpha.len();
    let total = 3usize.pow(k as u32);
    let mut out = Vec::with_capacity(total);
    for code in 0..total {
        let mut entries = sigma_bar.as_slice().to_vec();
        let mut rest = code;
        for pos in (0..k).rev() {
            entries[alpha[pos]] = (rest % 3) as i8 - 1;
            rest /= 3;
        }
        out.push(SignatureVector(entries));
    }
    Ok(out)
}
