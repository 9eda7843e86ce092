//! Randomized checks of the convex-combination identities.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::absnormal::{SignatureVector, DEFAULT_ENUM_CAP};
use crate::error::Result;
use crate::gradients::{beta_coefficients, grad_sigma, grad_xi, switching_jacobian, XiChoice};
use crate::linalg::norm2;
use crate::random::{random_kinked_net, random_point};
use crate::relunet::{
    batch_gradient, forward, gamma, sigma_tau, tau_direction, BatchContext, Policy,
};
use crate::tape::sign;

/// Tolerance on `‖Σβ∇φ_σ − ∇φ_ξ‖ / (1 + ‖∇φ_ξ‖)`.
pub const COMBINATION_TOL: f64 = 1e-10;
/// Tolerance on `Σβ = 1` and `Σσ_kβ = ξ_k`.
pub const BETA_TOL: f64 = 1e-12;
/// Tolerance on the batch `γ`-sum.
pub const BATCH_TOL: f64 = 1e-10;
/// Slack on `τ_k (Dz d_τ)_k ≥ 1`.
pub const CERTIFICATE_SLACK: f64 = 1e-9;
/// Step along `d_τ` for the sign check.
pub const TAU_STEP: f64 = 1e-4;

#[derive(Clone, Debug, Serialize)]
pub struct CombinationReport {
    pub instances: usize,
    pub max_relative_error: f64,
    pub max_beta_sum_error: f64,
    pub max_moment_error: f64,
    pub passed: bool,
}

/// `∇φ_ξ = Σ_σ β_{σ,ξ} ∇φ_σ` on random abs-normal data (`s ≤ 20`, `|α| ≤ 10`).
pub fn combination_suite(seed: u64, instances: usize) -> Result<CombinationReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rel = 0.0f64;
    let mut sum_err = 0.0f64;
    let mut moment = 0.0f64;
    for _ in 0..instances {
        let n = rng.random_range(1..=6);
        let s = rng.random_range(1..=20);
        let k = rng.random_range(0..=s.min(10));
        let p = random_point(&mut rng, n, s, k)?;
        let xi: Vec<f64> = p
            .sigma
            .as_slice()
            .iter()
            .map(|&sb| {
                if sb == 0 {
                    rng.random_range(-1.0..=1.0)
                } else {
                    f64::from(sb)
                }
            })
            .collect();
        let choice = XiChoice::new(&p.sigma, xi.clone())?;
        let g_xi = grad_xi(&p, &choice)?;
        let betas = beta_coefficients(&p.sigma, &choice, DEFAULT_ENUM_CAP)?;
        let mut combo = vec![0.0; n];
        let mut total = 0.0;
        let mut moments = vec![0.0; s];
        for (sigma, beta) in &betas {
            let g = grad_sigma(&p, sigma)?;
            for (c, v) in combo.iter_mut().zip(g) {
                *c += beta * v;
            }
            total += beta;
            for (m, &sk) in moments.iter_mut().zip(sigma.as_slice()) {
                *m += f64::from(sk) * beta;
            }
        }
        let diff: Vec<f64> = combo.iter().zip(&g_xi).map(|(a, b)| a - b).collect();
        rel = rel.max(norm2(&diff) / (1.0 + norm2(&g_xi)));
        sum_err = sum_err.max((total - 1.0).abs());
        for (m, x) in moments.iter().zip(&xi) {
            moment = moment.max((m - x).abs());
        }
    }
    Ok(CombinationReport {
        instances,
        max_relative_error: rel,
        max_beta_sum_error: sum_err,
        max_moment_error: moment,
        passed: rel <= COMBINATION_TOL && sum_err <= BETA_TOL && moment <= BETA_TOL,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct BatchReport {
    pub instances: usize,
    pub max_decomposition_error: f64,
    /// Smallest `τ_k (Dz d_τ)_k` seen.
    pub min_certificate: f64,
    pub sign_failures: usize,
    pub passed: bool,
}

/// Batch decomposition, `τ`-direction certificate and sign attainment on
/// random networks with `s ≤ 12` and a kink in every sample.
pub fn batch_suite(seed: u64, instances: usize) -> Result<BatchReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err = 0.0f64;
    let mut min_cert = f64::INFINITY;
    let mut sign_failures = 0;
    for _ in 0..instances {
        let inst = random_kinked_net(&mut rng, 3, 4, 12, 3)?;
        let s = inst.spec.s();
        let zeta: Vec<f64> = (0..s).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let ctx = BatchContext::new(
            &inst.spec,
            &inst.data,
            &inst.params,
            &inst.batch,
            Policy::Zeta(zeta.clone()),
        )?;
        let g = batch_gradient(&ctx);

        let mut combo = vec![0.0; g.len()];
        let inv = 1.0 / ctx.points().len() as f64;
        for code in 0u32..(1u32 << s) {
            let tau: Vec<i8> = (0..s)
                .map(|i| {
                    if (code >> (s - 1 - i)) & 1 == 1 {
                        1
                    } else {
                        -1
                    }
                })
                .collect();
            let w = gamma(&tau, &zeta);
            if w == 0.0 {
                continue;
            }
            for p in ctx.points() {
                let gs = grad_sigma(p, &sigma_tau(p, &tau))?;
                for (c, v) in combo.iter_mut().zip(gs) {
                    *c += w * inv * v;
                }
            }
        }
        let err = combo
            .iter()
            .zip(&g)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        max_err = max_err.max(err);

        // a handful of τ per instance
        let picks = sample(&mut rng, 1usize << s, (1usize << s).min(4)).into_vec();
        for code in picks {
            let tau: Vec<i8> = (0..s)
                .map(|i| {
                    if (code >> (s - 1 - i)) & 1 == 1 {
                        1
                    } else {
                        -1
                    }
                })
                .collect();
            let d = tau_direction(&ctx, &tau)?;
            for p in ctx.points() {
                let st = sigma_tau(p, &tau);
                let dz = switching_jacobian(p, &st.to_f64()).mul_vec(&d);
                for (k, v) in dz.iter().enumerate() {
                    min_cert = min_cert.min(f64::from(tau[k]) * v);
                }
            }
            let moved: Vec<f64> = inst
                .params
                .iter()
                .zip(&d)
                .map(|(x, d)| x + TAU_STEP * d)
                .collect();
            for (p, &j) in ctx.points().iter().zip(&inst.batch) {
                let z = forward(&inst.spec, &moved, &inst.data.samples[j])?.z;
                let got = SignatureVector::new(z.iter().map(|&v| sign(v)).collect())?;
                if got != sigma_tau(p, &tau) {
                    sign_failures += 1;
                }
            }
        }
    }
    Ok(BatchReport {
        instances,
        max_decomposition_error: max_err,
        min_certificate: min_cert,
        sign_failures,
        passed: max_err <= BATCH_TOL && min_cert >= 1.0 - CERTIFICATE_SLACK && sign_failures == 0,
    })
}
