use absgrad::absnormal::{extract, SignatureVector, DEFAULT_KINK_TOL};
use absgrad::gradients::{
    check_likq, essential_direction, grad_sigma, hull_membership, limiting_gradients,
    GradientSetKind, LikqStatus, DEFAULT_RANK_TOL,
};
use absgrad::oracle::{fd_gradient, sample_bouligand, SamplingPlan};
use absgrad::problems::phi_mu;
use absgrad::Error;

/// Closed-form piece gradient at the origin.
fn piece(mu: f64, s: &[i8]) -> Vec<f64> {
    let (s1, s2, s3) = (f64::from(s[0]), f64::from(s[1]), f64::from(s[2]));
    vec![s1 - s2, s2 - mu * s3]
}

fn at_origin(mu: f64) -> absgrad::AbsNormalPoint {
    extract(&phi_mu(mu), &[0.0, 0.0], DEFAULT_KINK_TOL).unwrap()
}

#[test]
fn all_switches_are_active_at_the_origin() {
    let p = at_origin(1.0);
    assert_eq!(p.sigma.as_slice(), &[0, 0, 0]);
    assert_eq!(p.alpha, vec![0, 1, 2]);
}

#[test]
fn candidates_match_the_closed_form() {
    for mu in [1.0, 0.0, -1.0] {
        let set = limiting_gradients(&at_origin(mu), 1 << 10).unwrap();
        assert_eq!(set.kind, GradientSetKind::Candidates);
        assert_eq!(set.len(), 8);
        for e in &set.gradients {
            let want = piece(mu, e.signature.as_slice());
            for (a, b) in e.gradient.iter().zip(&want) {
                assert!(
                    (a - b).abs() <= 1e-12,
                    "mu {mu}: {:?} vs {want:?}",
                    e.gradient
                );
            }
        }
    }
}

#[test]
fn likq_fails_with_rank_two() {
    let r = check_likq(&at_origin(-1.0), DEFAULT_RANK_TOL);
    assert_eq!(r.status, LikqStatus::Fails);
    assert_eq!((r.rank, r.required), (2, 3));
    assert!(matches!(
        essential_direction(
            &at_origin(-1.0),
            &SignatureVector::new(vec![1, 1, 1]).unwrap(),
            DEFAULT_RANK_TOL
        ),
        Err(Error::LikqNotVerified(_))
    ));
}

#[test]
fn sampling_misses_the_spurious_pieces() {
    for at_anchor in [true, false] {
        let plan = SamplingPlan {
            at_anchor,
            ..SamplingPlan::default()
        };
        let set = sample_bouligand(&phi_mu(-1.0), &[0.0, 0.0], &plan).unwrap();
        let got = set.vectors();
        let want = [
            [-2.0, 0.0],
            [-2.0, 2.0],
            [0.0, 0.0],
            [2.0, -2.0],
            [2.0, 0.0],
        ];
        assert_eq!(got.len(), want.len(), "{got:?}");
        // off-anchor gradients move by O(radius)
        for w in &want {
            assert!(
                got.iter()
                    .any(|g| (g[0] - w[0]).abs() < 1e-2 && (g[1] - w[1]).abs() < 1e-2),
                "{got:?}"
            );
        }
        for g in &got {
            assert!(g[0].hypot(g[1].abs() - 2.0) > 0.1);
        }
    }
}

#[test]
fn hull_of_sampled_gradients() {
    let plan = SamplingPlan {
        at_anchor: true,
        ..SamplingPlan::default()
    };
    let set = sample_bouligand(&phi_mu(-1.0), &[0.0, 0.0], &plan).unwrap();
    for spurious in [[0.0, 2.0], [0.0, -2.0]] {
        assert!(!hull_membership(&set, &spurious, 1e-9).unwrap().inside);
    }
    let plus = limiting_gradients(&at_origin(1.0), 1 << 10).unwrap();
    assert!(hull_membership(&plus, &[0.0, 0.0], 1e-9).unwrap().inside);
}

#[test]
fn smooth_point_agrees_with_finite_differences() {
    for mu in [1.0, -1.0] {
        let x = [0.3, 0.1];
        let p = extract(&phi_mu(mu), &x, DEFAULT_KINK_TOL).unwrap();
        assert!(p.alpha.is_empty());
        let g = grad_sigma(&p, &p.sigma).unwrap();
        let (c, s) = (x[0].cos(), x[1].sin());
        let s3 = (1.0 - c - s).signum();
        // x₁ > 0 and x₂ − x₁ < 0 here
        let exact = [2.0 + mu * s3 * x[0].sin(), -1.0 - mu * s3 * x[1].cos()];
        for (a, b) in g.iter().zip(&exact) {
            assert!((a - b).abs() <= 1e-14);
        }
        let fd = fd_gradient(&phi_mu(mu), &x, 1e-6).unwrap();
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-7, "{g:?} vs {fd:?}");
        }
    }
}
