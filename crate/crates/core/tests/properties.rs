use proptest::prelude::*;
use trajcon::{brute_force_oracle, cosine_similarity, iou, l2_normalize, solve_min_cost, BoundingBox, CostMatrix};

fn bbox() -> impl Strategy<Value = BoundingBox<f64>> {
    (-50.0f64..50.0, -50.0f64..50.0, 0.0f64..40.0, 0.0f64..40.0)
        .prop_map(|(l, t, w, h)| BoundingBox::new(l, t, w, h))
}

fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, dim)
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in bbox(), b in bbox()) {
        let x = iou(&a, &b);
        prop_assert_eq!(x, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&x));
    }

    #[test]
    fn iou_with_itself_is_one(a in bbox()) {
        prop_assume!(a.area() > 1e-6);
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_ignores_positive_scale(u in vector(6), v in vector(6), s in 0.1f64..10.0) {
        let su: Vec<f64> = u.iter().map(|x| x * s).collect();
        let a = cosine_similarity(&u, &v).unwrap();
        let b = cosine_similarity(&su, &v).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&a));
    }

    #[test]
    fn normalization_is_idempotent(v in vector(5)) {
        let once = l2_normalize(&v);
        prop_assume!(!once.degenerate);
        let twice = l2_normalize(&once.vector);
        prop_assert!((once.vector.norm() - 1.0).abs() < 1e-12);
        for (a, b) in once.vector.iter().zip(twice.vector.iter()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn hungarian_agrees_with_enumeration(
        rows in 0usize..6,
        cols in 0usize..6,
        seed in prop::collection::vec((0u8..8, any::<bool>()), 36),
    ) {
        let m = CostMatrix::from_fn(rows, cols, |r, c| {
            let (k, blocked) = seed[r * 6 + c];
            if blocked && k % 3 == 0 { f64::INFINITY } else { f64::from(k) * 0.5 }
        });
        let fast = solve_min_cost(&m);
        let slow = brute_force_oracle(&m).unwrap();
        prop_assert_eq!(fast.matches.len(), slow.matches.len());
        prop_assert_eq!(fast.total_cost(&m), slow.total_cost(&m));
        prop_assert!(fast.matches.iter().all(|&(r, c)| !m.is_forbidden(r, c)));
    }
}
