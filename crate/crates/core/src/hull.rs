//! Convex-hull membership by a phase-one simplex.
//!
//! Finds `λ ≥ 0` with `Σ λ_i = 1` and `Σ λ_i p_i = g`. The artificial-variable
//! objective is minimized with Bland's rule; a zero optimum yields the convex
//! coefficients, a positive one yields the dual vector `(w, w₀)` with
//! `w·p_i + w₀ ≤ 0` for all points and `w·g + w₀ > 0`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2, norm_inf};

const PIVOT_EPS: f64 = 1e-12;

#[derive(Clone, Debug, Serialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Certificate {
    /// Convex coefficients over the input points.
    Convex {
        coefficients: Vec<f64>,
        residual: f64,
    },
    /// Hyperplane `normal·y + offset = 0`; points satisfy `≤ 0`, the query is at `margin > 0`.
    Separating {
        normal: Vec<f64>,
        offset: f64,
        margin: f64,
    },
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct HullMembership {
    pub inside: bool,
    pub certificate: Certificate,
}

/// Decides whether `g` lies in the convex hull of `points` within `tol`.
pub fn convex_hull_membership(points: &[Vec<f64>], g: &[f64], tol: f64) -> Result<HullMembership> {
    if points.is_empty() {
        return Err(Error::Invalid("convex hull of an empty set".into()));
    }
    let n = g.len();
    if let Some(p) = points.iter().find(|p| p.len() != n) {
        return Err(Error::Length {
            what: "hull point",
            expected: n,
            got: p.len(),
        });
    }
    let m = points.len();
    let rows = n + 1;
    // rhs and row flips so that b ≥ 0
    let mut rhs: Vec<f64> = g.iter().copied().chain(std::iter::once(1.0)).collect();
    let flip: Vec<f64> = rhs
        .iter()
        .map(|&b| if b < 0.0 { -1.0 } else { 1.0 })
        .collect();
    for (b, f) in rhs.iter_mut().zip(&flip) {
        *b *= f;
    }
    // tableau columns: λ_0..λ_{m-1}, artificial_0..artificial_{rows-1}, rhs
    let cols = m + rows + 1;
    let mut t = vec![vec![0.0; cols]; rows + 1];
    for r in 0..rows {
        for (j, p) in points.iter().enumerate() {
            let a = if r < n { p[r] } else { 1.0 };
            t[r][j] = a * flip[r];
        }
        t[r][m + r] = 1.0;
        t[r][cols - 1] = rhs[r];
    }
    // objective row holds reduced costs; last entry is -objective
    for j in 0..cols {
        if j >= m && j < m + rows {
            continue;
        }
        t[rows][j] = -(0..rows).map(|r| t[r][j]).sum::<f64>();
    }
    let mut basis: Vec<usize> = (m..m + rows).collect();

    let max_iter = 50 * (m + rows) + 1000;
    for _ in 0..max_iter {
        let Some(enter) = (0..m + rows).find(|&j| t[rows][j] < -PIVOT_EPS) else {
            break;
        };
        let mut leave: Option<usize> = None;
        let mut best = f64::INFINITY;
        for r in 0..rows {
            let a = t[r][enter];
            if a > PIVOT_EPS {
                let ratio = t[r][cols - 1] / a;
                let better = ratio < best - 1e-15
                    || (ratio <= best + 1e-15 && leave.is_some_and(|l| basis[r] < basis[l]));
                if leave.is_none() || better {
                    best = ratio;
                    leave = Some(r);
                }
            }
        }
        let Some(pr) = leave else {
            // phase one is bounded below by 0; an unbounded ray means numerical trouble
            return Err(Error::Assertion("simplex ratio test found no pivot".into()));
        };
        pivot(&mut t, pr, enter);
        basis[pr] = enter;
    }

    let objective = -t[rows][cols - 1];
    let mut lambda = vec![0.0; m];
    for (r, &bv) in basis.iter().enumerate() {
        if bv < m {
            lambda[bv] = t[r][cols - 1].max(0.0);
        }
    }
    let total: f64 = lambda.iter().sum();
    let residual = if total > 0.0 {
        for l in &mut lambda {
            *l /= total;
        }
        let mut combo = vec![0.0; n];
        for (l, p) in lambda.iter().zip(points) {
            for (c, v) in combo.iter_mut().zip(p) {
                *c += l * v;
            }
        }
        norm_inf(&combo.iter().zip(g).map(|(a, b)| a - b).collect::<Vec<_>>())
    } else {
        f64::INFINITY
    };

    if objective <= tol && residual <= tol {
        return Ok(HullMembership {
            inside: true,
            certificate: Certificate::Convex {
                coefficients: lambda,
                residual,
            },
        });
    }

    // Duals from the artificial columns: reduced cost = 1 - y_r (flipped system).
    let y: Vec<f64> = (0..rows)
        .map(|r| (1.0 - t[rows][m + r]) * flip[r])
        .collect();
    let w = &y[..n];
    let w0 = y[n];
    let scale = norm2(w).max(f64::MIN_POSITIVE);
    let normal: Vec<f64> = w.iter().map(|v| v / scale).collect();
    let offset = w0 / scale;
    let margin = dot(&normal, g) + offset;
    let worst = points
        .iter()
        .map(|p| dot(&normal, p) + offset)
        .fold(f64::NEG_INFINITY, f64::max);
    if margin <= 0.0 || worst > tol {
        return Err(Error::Assertion(format!(
            "hull LP ended outside without a valid separating hyperplane (margin {margin}, worst point {worst})"
        )));
    }
    Ok(HullMembership {
        inside: false,
        certificate: Certificate::Separating {
            normal,
            offset,
            margin,
        },
    })
}

fn pivot(t: &mut [Vec<f64>], pr: usize, pc: usize) {
    let p = t[pr][pc];
    for v in t[pr].iter_mut() {
        *v /= p;
    }
    let pivot_row = t[pr].clone();
    for (r, row) in t.iter_mut().enumerate() {
        if r == pr {
            continue;
        }
        let f = row[pc];
        if f == 0.0 {
            continue;
        }
        for (v, pv) in row.iter_mut().zip(&pivot_row) {
            *v -= f * pv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Vec<Vec<f64>> {
        vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![0.0, 1.0],
        ]
    }

    #[test]
    fn interior_point_has_convex_coefficients() {
        let r = convex_hull_membership(&square(), &[0.25, 0.5], 1e-9).unwrap();
        assert!(r.inside);
        let Certificate::Convex { coefficients, .. } = r.certificate else {
            panic!()
        };
        assert!(coefficients.iter().all(|&c| c >= 0.0));
        assert!((coefficients.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn member_point_is_inside_with_weight_one() {
        let r = convex_hull_membership(&square(), &[1.0, 1.0], 1e-9).unwrap();
        let Certificate::Convex { coefficients, .. } = r.certificate else {
            panic!()
        };
        assert!((coefficients[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn outside_point_is_separated() {
        let pts = square();
        let g = [2.0, -0.5];
        let r = convex_hull_membership(&pts, &g, 1e-9).unwrap();
        assert!(!r.inside);
        let Certificate::Separating {
            normal,
            offset,
            margin,
        } = r.certificate
        else {
            panic!()
        };
        assert!(margin > 0.0);
        for p in &pts {
            assert!(dot(&normal, p) + offset <= 1e-9);
        }
    }

    #[test]
    fn degenerate_hulls() {
        let seg = vec![vec![-1.0, 0.0], vec![1.0, 0.0]];
        assert!(
            convex_hull_membership(&seg, &[0.3, 0.0], 1e-9)
                .unwrap()
                .inside
        );
        assert!(
            !convex_hull_membership(&seg, &[0.3, 0.1], 1e-9)
                .unwrap()
                .inside
        );
        let single = vec![vec![2.0, 3.0]];
        assert!(
            convex_hull_membership(&single, &[2.0, 3.0], 1e-9)
                .unwrap()
                .inside
        );
        assert!(convex_hull_membership(&[], &[0.0], 1e-9).is_err());
    }
}
