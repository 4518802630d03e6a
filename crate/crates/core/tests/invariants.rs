use dpmix::approx::{grid_partition, snap_to_grid};
use dpmix::density::{DiscreteMeasure, MixtureDensity};
use dpmix::metrics::{compare, QuadratureScheme};
use dpmix::prior::{draw_stick_breaking, BaseMeasure, PriorConfig, StickBreakingDraw};
use dpmix::rng::stream;
use dpmix::sieve::{LocationNet, SimplexNet};
use proptest::prelude::*;

fn measure(dim: usize, max_atoms: usize, a: f64) -> impl Strategy<Value = DiscreteMeasure> {
    (1..=max_atoms).prop_flat_map(move |k| {
        (
            prop::collection::vec(-a..a, k * dim),
            prop::collection::vec(0.01f64..1.0, k),
        )
            .prop_map(move |(locs, raw)| {
                let total: f64 = raw.iter().sum();
                DiscreteMeasure::from_flat(dim, locs, raw.iter().map(|w| w / total).collect()).unwrap()
            })
    })
}

fn mixture_1d() -> impl Strategy<Value = MixtureDensity> {
    (measure(1, 4, 2.0), 0.2f64..1.5).prop_map(|(m, s)| MixtureDensity::new(m, s).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metric_inequalities(p in mixture_1d(), q in mixture_1d()) {
        let s = QuadratureScheme::grid(1024);
        let r = compare(&p, &q, &s).unwrap();
        let (l1, h) = (r.l1.value, r.hellinger.value);
        prop_assert!(0.5 * l1 <= h + 1e-4);
        prop_assert!(h * h <= l1 + 1e-4);
        prop_assert!(l1 <= 2.0 + 1e-6);
        prop_assert!(r.kl.value >= -1e-6);
        prop_assert!(r.kl_second.value + 1e-6 >= r.kl.value * r.kl.value);
        let back = compare(&q, &p, &s).unwrap();
        prop_assert!((back.l1.value - l1).abs() < 1e-12);
        prop_assert!((back.hellinger.value - h).abs() < 1e-12);
    }

    #[test]
    fn stick_weights_and_deficit_sum_to_one(sticks in prop::collection::vec(0.0f64..=1.0, 1..40)) {
        let atoms = vec![0.0; sticks.len()];
        let d = StickBreakingDraw::from_sticks(sticks, atoms, 1).unwrap();
        let total: f64 = d.weights.iter().sum::<f64>() + d.tail_deficit;
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(d.weights.iter().all(|w| *w >= 0.0));
    }

    #[test]
    fn prior_draw_masses(seed in any::<u64>(), h in 1usize..60) {
        let prior = PriorConfig::default().build().unwrap();
        let d = draw_stick_breaking(&prior, h, &mut stream(seed, 0)).unwrap();
        prop_assert_eq!(d.len(), h);
        prop_assert!((d.measure().total_mass() + d.tail_deficit - 1.0).abs() < 1e-12);
    }

    #[test]
    fn simplex_rank_round_trip(h in 1usize..6, eps in 0.05f64..0.9, r in any::<u64>()) {
        let net = SimplexNet::new(h, eps).unwrap();
        let len = net.len().unwrap();
        let rank = u128::from(r) % len;
        let parts = net.unrank(rank).unwrap();
        prop_assert_eq!(parts.iter().sum::<u64>(), net.k);
        prop_assert_eq!(net.rank(&parts), Some(rank));
    }

    #[test]
    fn simplex_rounding_is_within_eps(raw in prop::collection::vec(0.0f64..1.0, 1..8), eps in 0.02f64..0.5) {
        let total: f64 = raw.iter().sum();
        prop_assume!(total > 0.0);
        let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let net = SimplexNet::new(w.len(), eps).unwrap();
        let parts = net.nearest(&w);
        prop_assert_eq!(parts.iter().sum::<u64>(), net.k);
        let dist: f64 = net.weights(&parts).iter().zip(&w).map(|(a, b)| (a - b).abs()).sum();
        prop_assert!(dist <= eps + 1e-12, "{dist} > {eps}");
    }

    #[test]
    fn location_net_covers_box(a in 0.5f64..4.0, radius in 0.05f64..1.0, x in prop::collection::vec(-1.0f64..1.0, 1..4)) {
        let dim = x.len();
        let net = LocationNet::new(a, radius, dim).unwrap();
        let z: Vec<f64> = x.iter().map(|v| v * a).collect();
        let idx = net.nearest(&z);
        prop_assert_eq!(net.unrank(net.rank(&idx)), idx.clone());
        let p = net.point(&idx);
        let dist = p.iter().zip(&z).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        prop_assert!(dist <= radius * (1.0 + 1e-12), "{dist} > {radius}");
    }

    #[test]
    fn snapping_moves_little_and_is_idempotent(f in measure(2, 6, 1.0), sigma in 0.05f64..1.0, eps in 0.01f64..0.5) {
        let g = snap_to_grid(&f, sigma, eps, 1.0, false).unwrap();
        let step = sigma * eps;
        for (a, b) in f.locations().iter().zip(g.locations()) {
            prop_assert!((a - b).abs() <= 0.5 * step * (1.0 + 1e-9));
        }
        prop_assert_eq!(g.weights(), f.weights());
        // snapping can push an atom up to half a step past the box
        let again = snap_to_grid(&g, sigma, eps, 1.0 + step, false).unwrap();
        prop_assert_eq!(again.locations(), g.locations());
        let merged = snap_to_grid(&f, sigma, eps, 1.0, true).unwrap();
        prop_assert!((merged.total_mass() - f.total_mass()).abs() < 1e-12);
        prop_assert!(merged.len() <= f.len());
    }

    #[test]
    fn grid_partition_is_a_disjoint_cover(per_axis in 1usize..12, dim in 1usize..3, x in prop::collection::vec(-1.0f64..1.0, 2)) {
        let base = BaseMeasure::gaussian(1.0, 1.0, dim).unwrap();
        let part = grid_partition(1.0, per_axis, dim, &base).unwrap();
        prop_assert_eq!(part.len(), per_axis.pow(dim as u32));
        prop_assert_eq!(part.multiplicity(&x[..dim]), 1);
        let inside: f64 = part.masses.iter().sum();
        let expected = base.mass_of_box(1.0).inside;
        prop_assert!((inside - expected).abs() < 1e-12);
    }

    #[test]
    fn normalization_and_record_round_trip(f in measure(2, 5, 3.0), scale in 0.1f64..0.99) {
        let sub = DiscreteMeasure::from_flat(2, f.locations().to_vec(), f.weights().iter().map(|w| w * scale).collect()).unwrap();
        prop_assert!((sub.deficit() - (1.0 - scale)).abs() < 1e-12);
        let n = sub.normalized().unwrap();
        prop_assert!(n.is_normalized());
        let mut buf = Vec::new();
        n.write_record(&mut buf).unwrap();
        let back = DiscreteMeasure::read_record(&mut buf.as_slice()).unwrap().unwrap();
        prop_assert_eq!(back, n);
    }
}
