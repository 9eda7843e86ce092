//! Brute-force checks: central differences and a sampling approximation of
//! the limiting-gradient set.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::absnormal::{extract, SignatureVector, DEFAULT_KINK_TOL};
use crate::error::{check_len, Error, Result};
use crate::gradients::{
    check_likq, fmt_num, gradient_for_weights, GradientEntry, GradientSet, GradientSetKind,
    DEFAULT_RANK_TOL,
};
use crate::linalg::norm2;
use crate::tape::Tape;

/// Central differences `(φ(x + h e_k) − φ(x − h e_k)) / 2h`.
///
/// Fails if `x` sits on a kink or if the signature changes anywhere on the
/// stencil.
pub fn fd_gradient(tape: &Tape, x: &[f64], h: f64) -> Result<Vec<f64>> {
    fd_gradient_with(tape, x, h, DEFAULT_KINK_TOL)
}

pub fn fd_gradient_with(tape: &Tape, x: &[f64], h: f64, kink_tol: f64) -> Result<Vec<f64>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Invalid(format!("step h = {h} must be positive")));
    }
    let centre = tape.forward_eval(x, None)?;
    let sigma = SignatureVector::from_values(&centre.z, kink_tol);
    if let Some(&i) = sigma.active().first() {
        return Err(Error::Invalid(format!(
            "x lies on kink {i}; phi is not differentiable there"
        )));
    }
    let mut g = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for k in 0..x.len() {
        probe[k] = x[k] + h;
        let plus = tape.forward_eval(&probe, None)?;
        probe[k] = x[k] - h;
        let minus = tape.forward_eval(&probe, None)?;
        probe[k] = x[k];
        if SignatureVector::from_values(&plus.z, kink_tol) != sigma
            || SignatureVector::from_values(&minus.z, kink_tol) != sigma
        {
            return Err(Error::KinkCrossing { coordinate: k });
        }
        g.push((plus.phi - minus.phi) / (2.0 * h));
    }
    Ok(g)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SamplingPlan {
    pub radius: f64,
    pub count: usize,
    pub seed: u64,
    pub kink_tol: f64,
    /// Merge radius; `None` means `1e-3 · (1 + max gradient norm)`.
    pub cluster_tol: Option<f64>,
    /// Evaluate `∇φ_σ(x̄)` at the anchor instead of `∇φ` at the sample.
    pub at_anchor: bool,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self {
            radius: 1e-3,
            count: 4096,
            seed: 0,
            kink_tol: DEFAULT_KINK_TOL,
            cluster_tol: None,
            at_anchor: false,
        }
    }
}

impl SamplingPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::Invalid(format!(
                "radius {} must be positive",
                self.radius
            )));
        }
        if self.count == 0 {
            return Err(Error::Invalid("sample count must be at least 1".into()));
        }
        if !(self.kink_tol > 0.0) {
            return Err(Error::Invalid(format!(
                "kink_tol {} must be positive",
                self.kink_tol
            )));
        }
        if let Some(t) = self.cluster_tol {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Invalid(format!("cluster_tol {t} must be positive")));
            }
        }
        Ok(())
    }
}

/// One kept sample.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleRecord {
    pub x: Vec<f64>,
    pub sigma: SignatureVector,
    pub gradient: Vec<f64>,
}

/// Samples as CSV: `x_1..x_n, sigma_1..sigma_s, g_1..g_n`.
pub fn samples_to_csv(samples: &[SampleRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if let Some(first) = samples.first() {
        let n = first.x.len();
        let s = first.sigma.len();
        let header: Vec<String> = (1..=n)
            .map(|k| format!("x_{k}"))
            .chain((1..=s).map(|i| format!("sigma_{i}")))
            .chain((1..=n).map(|k| format!("g_{k}")))
            .collect();
        w.write_record(&header)?;
    }
    for r in samples {
        let row: Vec<String> =
            r.x.iter()
                .map(|&v| fmt_num(v))
                .chain(r.sigma.as_slice().iter().map(|v| v.to_string()))
                .chain(r.gradient.iter().map(|&v| fmt_num(v)))
                .collect();
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Uniform point in the ball of radius `r` around `centre`.
fn ball_point(rng: &mut ChaCha8Rng, centre: &[f64], r: f64) -> Vec<f64> {
    let n = centre.len();
    loop {
        let dir: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let len = norm2(&dir);
        if len == 0.0 {
            continue;
        }
        let u: f64 = rng.random();
        let rad = r * u.powf(1.0 / n as f64);
        return centre
            .iter()
            .zip(&dir)
            .map(|(c, d)| c + rad * d / len)
            .collect();
    }
}

/// Cluster centres of gradients sampled near `x_bar`.
pub fn sample_bouligand(tape: &Tape, x_bar: &[f64], plan: &SamplingPlan) -> Result<GradientSet> {
    Ok(sample_bouligand_with_dump(tape, x_bar, plan)?.0)
}

/// Like [`sample_bouligand`], also returning every kept sample in draw order.
pub fn sample_bouligand_with_dump(
    tape: &Tape,
    x_bar: &[f64],
    plan: &SamplingPlan,
) -> Result<(GradientSet, Vec<SampleRecord>)> {
    plan.validate()?;
    check_len("x_bar", tape.n_inputs(), x_bar.len())?;
    let anchor = extract(tape, x_bar, plan.kink_tol)?;
    let likq = check_likq(&anchor, DEFAULT_RANK_TOL).status;
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut samples = Vec::new();
    for _ in 0..plan.count {
        let x = ball_point(&mut rng, x_bar, plan.radius);
        let Ok(trace) = tape.forward_eval(&x, None) else {
            continue;
        };
        let sigma = SignatureVector::from_values(&trace.z, plan.kink_tol);
        if !sigma.is_definite() {
            continue;
        }
        let gradient = if plan.at_anchor {
            gradient_for_weights(&anchor, &sigma.to_f64())
        } else {
            let p = extract(tape, &x, plan.kink_tol)?;
            gradient_for_weights(&p, &sigma.to_f64())
        };
        samples.push(SampleRecord { x, sigma, gradient });
    }
    if samples.is_empty() {
        return Err(Error::NoDifferentiableSamples);
    }
    let tol = plan.cluster_tol.unwrap_or_else(|| {
        let max_norm = samples
            .iter()
            .map(|r| norm2(&r.gradient))
            .fold(0.0, f64::max);
        1e-3 * (1.0 + max_norm)
    });
    let entries = cluster(&samples, tol);
    let set = GradientSet::new(x_bar.to_vec(), GradientSetKind::Sampled, likq, entries)?;
    Ok((set, samples))
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Single-linkage clustering; centres are member means, signatures the most
/// frequent member signature.
fn cluster(samples: &[SampleRecord], tol: f64) -> Vec<GradientEntry> {
    // bitwise-identical gradients collapse first
    let mut unique: BTreeMap<Vec<u64>, Vec<usize>> = BTreeMap::new();
    for (i, r) in samples.iter().enumerate() {
        unique
            .entry(r.gradient.iter().map(|v| v.to_bits()).collect())
            .or_default()
            .push(i);
    }
    let groups: Vec<Vec<usize>> = unique.into_values().collect();
    let reps: Vec<&[f64]> = groups
        .iter()
        .map(|g| samples[g[0]].gradient.as_slice())
        .collect();
    let mut parent: Vec<usize> = (0..groups.len()).collect();
    for i in 0..reps.len() {
        for j in i + 1..reps.len() {
            let dist2: f64 = reps[i]
                .iter()
                .zip(reps[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if dist2.sqrt() <= tol {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (g, idx) in groups.iter().enumerate() {
        let root = find(&mut parent, g);
        members.entry(root).or_default().extend(idx);
    }
    let mut out: Vec<GradientEntry> = members
        .into_values()
        .map(|mut idx| {
            idx.sort_unstable();
            let n = samples[idx[0]].gradient.len();
            let mut centre = vec![0.0; n];
            let mut counts: BTreeMap<&SignatureVector, usize> = BTreeMap::new();
            for &i in &idx {
                for (c, v) in centre.iter_mut().zip(&samples[i].gradient) {
                    *c += v;
                }
                *counts.entry(&samples[i].sigma).or_default() += 1;
            }
            for c in &mut centre {
                *c /= idx.len() as f64;
            }
            let best = counts.values().copied().max().unwrap_or(0);
            let signature = counts
                .into_iter()
                .find(|&(_, c)| c == best)
                .map(|(s, _)| s.clone())
                .expect("clusters are non-empty");
            GradientEntry {
                signature,
                gradient: centre,
            }
        })
        .collect();
    out.sort_by(|a, b| a.signature.cmp(&b.signature));
    out
}

/// One-sided Hausdorff distance `max_a min_b ‖a − b‖`.
pub fn one_sided_distance(from: &[Vec<f64>], to: &[Vec<f64>]) -> f64 {
    from.iter()
        .map(|a| {
            to.iter()
                .map(|b| norm2(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>()))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::phi_mu;
    use crate::tape::parse_tape;

    fn abs_x1(n: usize) -> Tape {
        let doc = format!(
            r#"{{"n_inputs":{n},"nodes":[{{"op":"input","value":0}},{{"op":"abs","args":[0]}}],"output":1}}"#
        );
        parse_tape(&doc).unwrap()
    }

    #[test]
    fn fd_on_abs() {
        let g = fd_gradient(&abs_x1(1), &[2.0], 1e-5).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-10);
        assert!(matches!(
            fd_gradient(&abs_x1(1), &[1e-6], 1e-5),
            Err(Error::KinkCrossing { coordinate: 0 })
        ));
        assert!(fd_gradient(&abs_x1(1), &[0.0], 1e-5).is_err());
        assert!(fd_gradient(&abs_x1(1), &[1.0], 0.0).is_err());
    }

    #[test]
    fn plan_validation() {
        assert!(SamplingPlan::default().validate().is_ok());
        let bad = [
            SamplingPlan {
                radius: 0.0,
                ..Default::default()
            },
            SamplingPlan {
                count: 0,
                ..Default::default()
            },
            SamplingPlan {
                cluster_tol: Some(-1.0),
                ..Default::default()
            },
        ];
        for p in bad {
            assert!(p.validate().is_err());
        }
    }

    #[test]
    fn abs_has_two_clusters() {
        let set = sample_bouligand(
            &abs_x1(1),
            &[0.0],
            &SamplingPlan {
                count: 200,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(set.vectors(), vec![vec![-1.0], vec![1.0]]);
        assert_eq!(set.kind, GradientSetKind::Sampled);
    }

    #[test]
    fn sampling_is_deterministic() {
        let plan = SamplingPlan {
            count: 300,
            seed: 9,
            ..Default::default()
        };
        let t = phi_mu(-1.0);
        let (a, da) = sample_bouligand_with_dump(&t, &[0.0, 0.0], &plan).unwrap();
        let (b, db) = sample_bouligand_with_dump(&t, &[0.0, 0.0], &plan).unwrap();
        assert_eq!(a.gradients, b.gradients);
        assert_eq!(da, db);
        let (_, dc) =
            sample_bouligand_with_dump(&t, &[0.0, 0.0], &SamplingPlan { seed: 10, ..plan })
                .unwrap();
        assert_ne!(da[0].x, dc[0].x);
    }

    #[test]
    fn samples_stay_in_ball() {
        let plan = SamplingPlan {
            count: 500,
            radius: 0.5,
            ..Default::default()
        };
        let (_, dump) = sample_bouligand_with_dump(&abs_x1(3), &[0.1, 0.2, 0.3], &plan).unwrap();
        for r in dump {
            let d: Vec<f64> =
                r.x.iter()
                    .zip([0.1, 0.2, 0.3])
                    .map(|(a, b)| a - b)
                    .collect();
            assert!(norm2(&d) <= 0.5 + 1e-15);
        }
    }

    #[test]
    fn dump_csv_header() {
        let plan = SamplingPlan {
            count: 2,
            ..Default::default()
        };
        let (_, dump) = sample_bouligand_with_dump(&abs_x1(1), &[0.5], &plan).unwrap();
        let csv = samples_to_csv(&dump).unwrap();
        assert!(csv.starts_with("x_1,sigma_1,g_1\n"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn distance_helper() {
        let a = vec![vec![0.0, 0.0]];
        let b = vec![vec![3.0, 4.0], vec![1.0, 0.0]];
        assert_eq!(one_sided_distance(&a, &b), 1.0);
        assert_eq!(one_sided_distance(&b, &a), 5.0);
    }
}
