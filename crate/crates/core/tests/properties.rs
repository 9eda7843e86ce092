use absgrad::absnormal::{
    all_successors, definite_successors, extract, precedes, AbsNormalPoint, SignatureVector,
    DEFAULT_KINK_TOL,
};
use absgrad::gradients::{
    beta_coefficients, check_likq, check_rank_stability, grad_sigma, grad_xi, hull_membership,
    limiting_gradients, switching_jacobian, GradientEntry, GradientSet, GradientSetKind,
    LikqStatus, XiChoice, DEFAULT_RANK_TOL,
};
use absgrad::hull::convex_hull_membership;
use absgrad::oracle::fd_gradient;
use absgrad::random::{random_point, random_tape};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `a + Zᵀ (I − M − L W)^{-T} (W b + d)` by a dense LU solve.
fn dense_gradient(p: &AbsNormalPoint, w: &[f64]) -> Vec<f64> {
    let s = p.s();
    let n = p.n();
    let mut sys = DMatrix::<f64>::identity(s, s);
    for i in 0..s {
        for j in 0..s {
            sys[(i, j)] -= p.m_mat[(i, j)] + p.l_mat[(i, j)] * w[j];
        }
    }
    let rhs = DVector::from_iterator(s, (0..s).map(|i| w[i] * p.b[i] + p.d[i]));
    let y = sys.transpose().lu().solve(&rhs).expect("unit triangular");
    (0..n)
        .map(|k| p.a[k] + (0..s).map(|i| p.z_mat[(i, k)] * y[i]).sum::<f64>())
        .collect()
}

/// `(I − L W − M)^{-1} Z` densely.
fn dense_dz(p: &AbsNormalPoint, w: &[f64]) -> DMatrix<f64> {
    let s = p.s();
    let mut sys = DMatrix::<f64>::identity(s, s);
    for i in 0..s {
        for j in 0..s {
            sys[(i, j)] -= p.m_mat[(i, j)] + p.l_mat[(i, j)] * w[j];
        }
    }
    let z = DMatrix::from_fn(s, p.n(), |i, k| p.z_mat[(i, k)]);
    sys.lu().solve(&z).expect("unit triangular")
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    let scale = 1.0 + b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * scale)
}

fn sig_strategy(len: usize) -> impl Strategy<Value = SignatureVector> {
    prop::collection::vec(-1i8..=1, len).prop_map(|v| SignatureVector::new(v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn piece_gradient_matches_dense_solve(seed in any::<u64>(), n in 1usize..5, s in 1usize..10, k in 0usize..6) {
        let mut r = rng(seed);
        let p = random_point(&mut r, n, s, k).unwrap();
        for sigma in definite_successors(&p.sigma, 1 << 10).unwrap().into_iter().take(16) {
            let g = grad_sigma(&p, &sigma).unwrap();
            prop_assert!(close(&g, &dense_gradient(&p, &sigma.to_f64()), 1e-10));
        }
    }

    #[test]
    fn switching_jacobian_matches_dense_solve(seed in any::<u64>(), n in 1usize..5, s in 1usize..10) {
        let mut r = rng(seed);
        let p = random_point(&mut r, n, s, 0).unwrap();
        let w = p.sigma.to_f64();
        let ours = switching_jacobian(&p, &w);
        let dense = dense_dz(&p, &w);
        for i in 0..s {
            let row: Vec<f64> = (0..n).map(|k| dense[(i, k)]).collect();
            prop_assert!(close(ours.row(i), &row, 1e-10));
        }
    }

    #[test]
    fn xi_gradient_is_beta_combination(seed in any::<u64>(), n in 1usize..4, s in 1usize..8, k in 0usize..6,
                                        raw in prop::collection::vec(-1.0f64..=1.0, 8)) {
        let mut r = rng(seed);
        let p = random_point(&mut r, n, s, k).unwrap();
        let xi: Vec<f64> = p.sigma.as_slice().iter().enumerate()
            .map(|(i, &sb)| if sb == 0 { raw[i] } else { f64::from(sb) }).collect();
        let choice = XiChoice::new(&p.sigma, xi.clone()).unwrap();
        let g_xi = grad_xi(&p, &choice).unwrap();
        prop_assert!(close(&g_xi, &dense_gradient(&p, &xi), 1e-10));
        // β from the product formula, written out independently
        let mut combo = vec![0.0; n];
        let mut total = 0.0;
        for sigma in definite_successors(&p.sigma, 1 << 10).unwrap() {
            let beta: f64 = p.alpha.iter()
                .map(|&i| (f64::from(sigma.as_slice()[i]) * xi[i] + 1.0) / 2.0).product();
            prop_assert!(beta >= 0.0);
            total += beta;
            for (c, v) in combo.iter_mut().zip(dense_gradient(&p, &sigma.to_f64())) {
                *c += beta * v;
            }
        }
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(close(&combo, &g_xi, 1e-10));
    }

    #[test]
    fn beta_moments(sig in sig_strategy(6), raw in prop::collection::vec(-1.0f64..=1.0, 6)) {
        let xi: Vec<f64> = sig.as_slice().iter().zip(&raw)
            .map(|(&sb, &x)| if sb == 0 { x } else { f64::from(sb) }).collect();
        let choice = XiChoice::new(&sig, xi.clone()).unwrap();
        let betas = beta_coefficients(&sig, &choice, 1 << 10).unwrap();
        prop_assert_eq!(betas.len(), 1usize << sig.active().len());
        let total: f64 = betas.iter().map(|(_, b)| b).sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        for k in 0..6 {
            let m: f64 = betas.iter().map(|(s, b)| f64::from(s.as_slice()[k]) * b).sum();
            prop_assert!((m - xi[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn definite_xi_is_the_piece_gradient(seed in any::<u64>(), n in 1usize..4, s in 1usize..8, k in 0usize..5) {
        let mut r = rng(seed);
        let p = random_point(&mut r, n, s, k).unwrap();
        for sigma in definite_successors(&p.sigma, 64).unwrap() {
            let choice = XiChoice::new(&p.sigma, sigma.to_f64()).unwrap();
            prop_assert_eq!(grad_xi(&p, &choice).unwrap(), grad_sigma(&p, &sigma).unwrap());
        }
    }

    #[test]
    fn precedence_is_a_partial_order(a in sig_strategy(5), b in sig_strategy(5), c in sig_strategy(5)) {
        prop_assert!(precedes(&a, &a).unwrap());
        if precedes(&a, &b).unwrap() && precedes(&b, &a).unwrap() {
            prop_assert_eq!(&a, &b);
        }
        if precedes(&a, &b).unwrap() && precedes(&b, &c).unwrap() {
            prop_assert!(precedes(&a, &c).unwrap());
        }
    }

    #[test]
    fn successor_sets(sig in sig_strategy(6)) {
        let defs = definite_successors(&sig, 1 << 10).unwrap();
        let all = all_successors(&sig, 1 << 10).unwrap();
        let k = sig.active().len();
        prop_assert_eq!(defs.len(), 1usize << k);
        prop_assert_eq!(all.len(), 3usize.pow(k as u32));
        prop_assert!(defs.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(all.windows(2).all(|w| w[0] < w[1]));
        for s in &defs {
            prop_assert!(s.is_definite() && precedes(&sig, s).unwrap() && all.contains(s));
        }
    }

    #[test]
    fn forward_eval_is_deterministic(seed in any::<u64>()) {
        let mut r = rng(seed);
        let rt = random_tape(&mut r, 3, 5, 2).unwrap();
        prop_assert_eq!(rt.tape.forward_eval(&rt.x, None).unwrap(), rt.tape.forward_eval(&rt.x, None).unwrap());
        let a = extract(&rt.tape, &rt.x, DEFAULT_KINK_TOL).unwrap();
        let b = extract(&rt.tape, &rt.x, DEFAULT_KINK_TOL).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        prop_assert!(a.l_mat.is_strictly_lower() && a.m_mat.is_strictly_lower());
    }

    #[test]
    fn smooth_points_match_central_differences(seed in any::<u64>(), n in 1usize..4, s in 1usize..6) {
        let mut r = rng(seed);
        let rt = random_tape(&mut r, n, s, 0).unwrap();
        let p = extract(&rt.tape, &rt.x, DEFAULT_KINK_TOL).unwrap();
        prop_assert!(p.alpha.is_empty());
        let g = grad_sigma(&p, &p.sigma).unwrap();
        let fd = fd_gradient(&rt.tape, &rt.x, 1e-6).unwrap();
        let scale = 1.0 + g.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for (a, b) in g.iter().zip(&fd) {
            prop_assert!((a - b).abs() <= 1e-6 * scale, "{:?} vs {:?}", g, fd);
        }
        // the enumerated set at a smooth point is that single gradient
        let set = limiting_gradients(&p, 4).unwrap();
        prop_assert_eq!(set.vectors(), vec![g]);
    }

    #[test]
    fn likq_implies_rank_stability(seed in any::<u64>(), n in 2usize..6, s in 1usize..8, k in 1usize..5) {
        let mut r = rng(seed);
        let p = random_point(&mut r, n, s, k.min(n)).unwrap();
        let report = check_rank_stability(&p, DEFAULT_RANK_TOL, 1 << 12).unwrap();
        if check_likq(&p, DEFAULT_RANK_TOL).holds() {
            prop_assert!(report.all_full);
        }
        prop_assert!(report.consistent);
    }

    #[test]
    fn hull_agrees_with_triangle_test(pts in prop::collection::vec((-3i32..=3, -3i32..=3), 1..7),
                                      g in (-4i32..=4, -4i32..=4)) {
        let points: Vec<Vec<f64>> = pts.iter().map(|&(a, b)| vec![f64::from(a), f64::from(b)]).collect();
        let q = [f64::from(g.0), f64::from(g.1)];
        let expected = brute_force_contains(&points, q);
        let got = convex_hull_membership(&points, &q, 1e-9).unwrap();
        prop_assert_eq!(got.inside, expected);
    }
}

/// Carathéodory in the plane: `q` is in the hull iff it lies in a triangle,
/// segment or point spanned by at most three of the points.
fn brute_force_contains(points: &[Vec<f64>], q: [f64; 2]) -> bool {
    let cross = |o: &[f64], a: &[f64], b: &[f64]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let on_segment = |a: &[f64], b: &[f64]| {
        cross(a, b, &q) == 0.0
            && q[0] >= a[0].min(b[0])
            && q[0] <= a[0].max(b[0])
            && q[1] >= a[1].min(b[1])
            && q[1] <= a[1].max(b[1])
    };
    let m = points.len();
    for i in 0..m {
        if points[i][0] == q[0] && points[i][1] == q[1] {
            return true;
        }
        for j in i + 1..m {
            if on_segment(&points[i], &points[j]) {
                return true;
            }
            for k in j + 1..m {
                let (a, b, c) = (&points[i], &points[j], &points[k]);
                if cross(a, b, c) == 0.0 {
                    continue;
                }
                let d1 = cross(a, b, &q);
                let d2 = cross(b, c, &q);
                let d3 = cross(c, a, &q);
                let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
                let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
                if !(neg && pos) {
                    return true;
                }
            }
        }
    }
    false
}

#[test]
fn hull_membership_wraps_gradient_sets() {
    let entries = [(-1i8, -1.0), (1, 1.0)]
        .iter()
        .map(|&(s, g)| GradientEntry {
            signature: SignatureVector::new(vec![s]).unwrap(),
            gradient: vec![g],
        })
        .collect();
    let set = GradientSet::new(
        vec![0.0],
        GradientSetKind::Limiting,
        LikqStatus::Holds,
        entries,
    )
    .unwrap();
    assert!(hull_membership(&set, &[0.3], 1e-9).unwrap().inside);
    assert!(!hull_membership(&set, &[1.5], 1e-9).unwrap().inside);
}
