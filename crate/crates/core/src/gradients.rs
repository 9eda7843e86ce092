//! Generalized gradients from abs-normal data.
//!
//! For a (possibly fractional) switching weight vector `w` the smooth model
//! `φ_w` has gradient `a + Zᵀ y_w` with `y_w = (I − M − L W)^{-T}(W b + d)`,
//! `W = diag(w)`. The system is upper triangular and solved by the backward
//! recursion
//!
//! ```text
//! y_k = w_k b_k + d_k + Σ_{j>k} (M_jk + L_jk w_k) y_j,   k = s, …, 1.
//! ```
//!
//! Definite weights give the piece gradients `∇φ_σ(x̄)`; under LIKQ these are
//! exactly the limiting gradients, and fractional `ξ` gives their
//! `β`-weighted convex combination.

use std::fmt;

use serde::Serialize;

use crate::absnormal::{
    all_successors, definite_successors, precedes, AbsNormalPoint, SignatureVector,
};
use crate::error::{check_len, Error, Result};
use crate::hull::{convex_hull_membership, HullMembership};
use crate::linalg::{numerical_rank, pseudo_inverse, singular_values, Matrix};
use crate::tape::{sign, Tape};

/// Relative singular-value threshold for rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

/// A choice of `ξ ∈ [-1,1]^s` agreeing with `σ̄` off the active set.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct XiChoice {
    xi: Vec<f64>,
}

impl XiChoice {
    pub fn new(sigma_bar: &SignatureVector, xi: Vec<f64>) -> Result<Self> {
        check_len("xi", sigma_bar.len(), xi.len())?;
        for (i, (&v, &sb)) in xi.iter().zip(sigma_bar.as_slice()).enumerate() {
            if !(v.abs() <= 1.0) {
                return Err(Error::Invalid(format!(
                    "xi[{i}] = {v} lies outside [-1, 1]"
                )));
            }
            if sb != 0 && v != f64::from(sb) {
                return Err(Error::XiInconsistent {
                    index: i,
                    value: v,
                    sigma: sb,
                });
            }
        }
        Ok(Self { xi })
    }

    /// `ξ_i = value` on the active set, `σ̄_i` elsewhere.
    pub fn at_kinks(sigma_bar: &SignatureVector, value: f64) -> Result<Self> {
        let xi = sigma_bar
            .as_slice()
            .iter()
            .map(|&sb| if sb == 0 { value } else { f64::from(sb) })
            .collect();
        Self::new(sigma_bar, xi)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.xi
    }
}

/// Value several AD tools use for `∂|·|(0)` in backward propagation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdPreset {
    Jax,
    Tensorflow,
    Pytorch,
    ReverseDiff,
    Adolc,
    Codipack,
}

impl AdPreset {
    pub const ALL: [AdPreset; 6] = [
        AdPreset::Jax,
        AdPreset::Tensorflow,
        AdPreset::Pytorch,
        AdPreset::ReverseDiff,
        AdPreset::Adolc,
        AdPreset::Codipack,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AdPreset::Jax => "jax",
            AdPreset::Tensorflow => "tensorflow",
            AdPreset::Pytorch => "pytorch",
            AdPreset::ReverseDiff => "reversediff",
            AdPreset::Adolc => "adolc",
            AdPreset::Codipack => "codipack",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn kink_value(self) -> f64 {
        match self {
            AdPreset::Jax | AdPreset::ReverseDiff => 1.0,
            AdPreset::Tensorflow | AdPreset::Pytorch | AdPreset::Adolc | AdPreset::Codipack => 0.0,
        }
    }
}

/// Backward recursion for `y_w`.
pub(crate) fn adjoint_y(p: &AbsNormalPoint, w: &[f64]) -> Vec<f64> {
    let s = p.s();
    let mut y = vec![0.0; s];
    for k in (0..s).rev() {
        let mut acc = w[k] * p.b[k] + p.d[k];
        for j in k + 1..s {
            let coeff = p.m_mat[(j, k)] + p.l_mat[(j, k)] * w[k];
            if coeff != 0.0 {
                acc += coeff * y[j];
            }
        }
        y[k] = acc;
    }
    y
}

/// `a + Zᵀ y_w` without precedence checks.
pub(crate) fn gradient_for_weights(p: &AbsNormalPoint, w: &[f64]) -> Vec<f64> {
    let y = adjoint_y(p, w);
    let zty = p.z_mat.tr_mul_vec(&y);
    p.a.iter().zip(zty).map(|(a, v)| a + v).collect()
}

/// `(I − L W − M)^{-1} X` by forward substitution, row by row.
pub(crate) fn solve_lower(p: &AbsNormalPoint, w: &[f64], rhs: &Matrix) -> Matrix {
    let s = p.s();
    let mut out = rhs.clone();
    for k in 0..s {
        for l in 0..k {
            let coeff = p.m_mat[(k, l)] + p.l_mat[(k, l)] * w[l];
            if coeff == 0.0 {
                continue;
            }
            let (head, tail) = split_rows(&mut out, l, k);
            for (o, v) in tail.iter_mut().zip(head.iter()) {
                *o += coeff * v;
            }
        }
    }
    out
}

fn split_rows(m: &mut Matrix, l: usize, k: usize) -> (Vec<f64>, &mut [f64]) {
    let head = m.row(l).to_vec();
    (head, m.row_mut(k))
}

/// `Dz_w[x̄] = (I − L W − M)^{-1} Z`.
pub fn switching_jacobian(p: &AbsNormalPoint, w: &[f64]) -> Matrix {
    solve_lower(p, w, &p.z_mat)
}

/// `∇φ_σ(x̄)` for `σ ⪰ σ̄`.
pub fn grad_sigma(p: &AbsNormalPoint, sigma: &SignatureVector) -> Result<Vec<f64>> {
    check_len("sigma", p.s(), sigma.len())?;
    if let Some(i) = (0..p.s())
        .find(|&i| p.sigma.as_slice()[i] != 0 && p.sigma.as_slice()[i] != sigma.as_slice()[i])
    {
        return Err(Error::Precedence { index: i });
    }
    Ok(gradient_for_weights(p, &sigma.to_f64()))
}

/// `∇φ_ξ(x̄)`: what backward-mode AD returns when it uses `ξ_i` for `∂|·|(0)`.
pub fn grad_xi(p: &AbsNormalPoint, xi: &XiChoice) -> Result<Vec<f64>> {
    // revalidate: the choice may have been built against another point
    let xi = XiChoice::new(&p.sigma, xi.xi.clone())?;
    Ok(gradient_for_weights(p, &xi.xi))
}

/// `β_{σ,ξ} = Π_{i∈α} (σ_i ξ_i + 1)/2` over the definite successors, in enumeration order.
pub fn beta_coefficients(
    sigma_bar: &SignatureVector,
    xi: &XiChoice,
    cap: usize,
) -> Result<Vec<(SignatureVector, f64)>> {
    check_len("xi", sigma_bar.len(), xi.xi.len())?;
    let alpha = sigma_bar.active();
    let succ = definite_successors(sigma_bar, cap)?;
    Ok(succ
        .into_iter()
        .map(|sigma| {
            let beta = alpha
                .iter()
                .map(|&i| (f64::from(sigma.as_slice()[i]) * xi.xi[i] + 1.0) / 2.0)
                .product();
            (sigma, beta)
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LikqStatus {
    Holds,
    Fails,
    Unknown,
}

impl fmt::Display for LikqStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LikqStatus::Holds => "holds",
            LikqStatus::Fails => "fails",
            LikqStatus::Unknown => "unknown",
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LikqReport {
    pub status: LikqStatus,
    pub active: Vec<usize>,
    pub rank: usize,
    /// `|α|`
    pub required: usize,
    pub singular_values: Vec<f64>,
    /// `P_α (I − L Σ̄ − M)^{-1} Z`
    pub matrix: Matrix,
}

impl LikqReport {
    pub fn holds(&self) -> bool {
        self.status == LikqStatus::Holds
    }

    pub fn summary(&self) -> String {
        let rel = if self.holds() { "=" } else { "<" };
        format!(
            "{}: rank {} {rel} {}",
            self.status, self.rank, self.required
        )
    }
}

fn active_jacobian(p: &AbsNormalPoint, w: &[f64]) -> Matrix {
    switching_jacobian(p, w).select_rows(&p.alpha)
}

/// Linear independence kink qualification at the base point.
pub fn check_likq(p: &AbsNormalPoint, rank_tol: f64) -> LikqReport {
    let matrix = active_jacobian(p, &p.sigma.to_f64());
    let sv = singular_values(&matrix);
    let rank = numerical_rank(&sv, rank_tol);
    let required = p.alpha.len();
    LikqReport {
        status: if rank == required {
            LikqStatus::Holds
        } else {
            LikqStatus::Fails
        },
        active: p.alpha.clone(),
        rank,
        required,
        singular_values: sv,
        matrix,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RankEntry {
    pub sigma: SignatureVector,
    pub rank: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RankStabilityReport {
    pub required: usize,
    pub entries: Vec<RankEntry>,
    pub all_full: bool,
    pub likq: LikqStatus,
    /// Whether "full rank for every σ ⪰ σ̄" agrees with the LIKQ verdict.
    pub consistent: bool,
}

/// Rank of `P_α (I − L Σ − M)^{-1} Z` for every `σ ∈ {-1,0,1}^s`, `σ ⪰ σ̄`.
pub fn check_rank_stability(
    p: &AbsNormalPoint,
    rank_tol: f64,
    cap: usize,
) -> Result<RankStabilityReport> {
    let likq = check_likq(p, rank_tol);
    let sigmas = all_successors(&p.sigma, cap)?;
    let required = p.alpha.len();
    let entries: Vec<RankEntry> = sigmas
        .into_iter()
        .map(|sigma| {
            let m = active_jacobian(p, &sigma.to_f64());
            let rank = numerical_rank(&singular_values(&m), rank_tol);
            RankEntry { sigma, rank }
        })
        .collect();
    let all_full = entries.iter().all(|e| e.rank == required);
    Ok(RankStabilityReport {
        required,
        entries,
        all_full,
        likq: likq.status,
        consistent: all_full == likq.holds(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientSetKind {
    /// Enumerated under verified LIKQ: exactly the limiting gradients.
    Limiting,
    /// Enumerated without LIKQ: may contain spurious gradients.
    Candidates,
    /// Cluster centres of the sampling oracle.
    Sampled,
}

impl GradientSetKind {
    pub fn label(self) -> &'static str {
        match self {
            GradientSetKind::Limiting => "limiting gradients",
            GradientSetKind::Candidates => "candidate set, may contain spurious gradients",
            GradientSetKind::Sampled => "sampled cluster centres",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientEntry {
    pub signature: SignatureVector,
    pub gradient: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradientSet {
    pub anchor: Vec<f64>,
    pub kind: GradientSetKind,
    pub likq: LikqStatus,
    pub label: String,
    pub gradients: Vec<GradientEntry>,
}

impl GradientSet {
    pub fn new(
        anchor: Vec<f64>,
        kind: GradientSetKind,
        likq: LikqStatus,
        gradients: Vec<GradientEntry>,
    ) -> Result<Self> {
        let n = anchor.len();
        if let Some(e) = gradients.iter().find(|e| e.gradient.len() != n) {
            return Err(Error::Length {
                what: "gradient",
                expected: n,
                got: e.gradient.len(),
            });
        }
        Ok(Self {
            anchor,
            kind,
            likq,
            label: kind.label().to_string(),
            gradients,
        })
    }

    pub fn len(&self) -> usize {
        self.gradients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gradients.is_empty()
    }

    pub fn vectors(&self) -> Vec<Vec<f64>> {
        self.gradients.iter().map(|e| e.gradient.clone()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("gradient sets always serialize")
    }

    /// One row per gradient: `sigma_1..sigma_s, g_1..g_n`.
    pub fn to_csv(&self) -> Result<String> {
        let s = self.gradients.first().map_or(0, |e| e.signature.len());
        let n = self.anchor.len();
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<String> = (1..=s)
            .map(|i| format!("sigma_{i}"))
            .chain((1..=n).map(|k| format!("g_{k}")))
            .collect();
        w.write_record(&header)?;
        for e in &self.gradients {
            let row: Vec<String> = e
                .signature
                .as_slice()
                .iter()
                .map(|v| v.to_string())
                .chain(e.gradient.iter().map(|&g| fmt_num(g)))
                .collect();
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Shortest round-trip formatting with negative zero folded to zero.
pub fn fmt_num(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:?}")
}

/// `{∇φ_σ(x̄) : σ ∈ ⪰σ̄}`, labelled by the LIKQ verdict.
pub fn limiting_gradients(p: &AbsNormalPoint, cap: usize) -> Result<GradientSet> {
    limiting_gradients_with(p, cap, DEFAULT_RANK_TOL)
}

pub fn limiting_gradients_with(
    p: &AbsNormalPoint,
    cap: usize,
    rank_tol: f64,
) -> Result<GradientSet> {
    let sigmas = definite_successors(&p.sigma, cap)?;
    let likq = check_likq(p, rank_tol).status;
    let gradients = sigmas
        .into_iter()
        .map(|sigma| {
            let gradient = gradient_for_weights(p, &sigma.to_f64());
            GradientEntry {
                signature: sigma,
                gradient,
            }
        })
        .collect();
    let kind = if likq == LikqStatus::Holds {
        GradientSetKind::Limiting
    } else {
        GradientSetKind::Candidates
    };
    GradientSet::new(p.x.clone(), kind, likq, gradients)
}

/// `d_σ = (P_α (I − L Σ − M)^{-1} Z)^† P_α σ`.
pub fn essential_direction(
    p: &AbsNormalPoint,
    sigma: &SignatureVector,
    rank_tol: f64,
) -> Result<Vec<f64>> {
    let likq = check_likq(p, rank_tol);
    if !likq.holds() {
        return Err(Error::LikqNotVerified(likq.summary()));
    }
    if !precedes(&p.sigma, sigma)? {
        let i = (0..p.s())
            .find(|&i| p.sigma.as_slice()[i] != sigma.as_slice()[i])
            .unwrap_or(0);
        return Err(Error::Precedence { index: i });
    }
    let a = active_jacobian(p, &sigma.to_f64());
    let pinv = pseudo_inverse(&a, rank_tol)?;
    let target: Vec<f64> = p
        .alpha
        .iter()
        .map(|&i| f64::from(sigma.as_slice()[i]))
        .collect();
    Ok(pinv.mul_vec(&target))
}

/// Checks `sign(z[x̄ + ε d_σ]) = σ`.
pub fn verify_essential_direction(
    p: &AbsNormalPoint,
    tape: &Tape,
    sigma: &SignatureVector,
    eps: f64,
) -> Result<bool> {
    verify_essential_direction_with(p, tape, sigma, eps, DEFAULT_RANK_TOL)
}

pub fn verify_essential_direction_with(
    p: &AbsNormalPoint,
    tape: &Tape,
    sigma: &SignatureVector,
    eps: f64,
    rank_tol: f64,
) -> Result<bool> {
    let d = essential_direction(p, sigma, rank_tol)?;
    let x: Vec<f64> = p.x.iter().zip(&d).map(|(x, d)| x + eps * d).collect();
    let trace = tape.forward_eval(&x, None)?;
    Ok(trace
        .z
        .iter()
        .zip(sigma.as_slice())
        .all(|(&z, &s)| sign(z) == s))
}

/// `g ∈ conv(gset)` within `tol`.
pub fn hull_membership(gset: &GradientSet, g: &[f64], tol: f64) -> Result<HullMembership> {
    if gset.is_empty() {
        return Err(Error::Invalid("empty gradient set".into()));
    }
    convex_hull_membership(&gset.vectors(), g, tol)
}
