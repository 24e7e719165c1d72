use proptest::prelude::*;
use qcop::field::{field_value, field_value_at, sample_series, write_series_csv, FieldSpec};
use qcop::instance::{perturbed_grid, regular_grid, uniform_neighbor_weights};
use qcop::ProblemInstance;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn grid_distances_are_euclidean(rows in 2usize..6, cols in 2usize..6, edge in 0.1f64..5.0, noise_frac in 0.0f64..0.49, seed in 0u64..1000) {
        let net = perturbed_grid(rows, cols, edge, noise_frac * edge, seed).unwrap();
        for i in 0..net.len() {
            prop_assert_eq!(net.distance(i, i), 0.0);
            for j in 0..net.len() {
                let (p, q) = (net.nodes[i].pos, net.nodes[j].pos);
                let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
                prop_assert!((net.distance(i, j) - d).abs() <= 1e-12 * (1.0 + d));
            }
        }
    }

    #[test]
    fn uniform_weights_are_idempotent(rows in 2usize..6, cols in 2usize..6, seed in 0u64..1000) {
        let net = perturbed_grid(rows, cols, 1.0, 0.3, seed).unwrap();
        let once = uniform_neighbor_weights(&net);
        prop_assert_eq!(uniform_neighbor_weights(&once), once);
    }

    #[test]
    fn perturbation_is_seeded(rows in 2usize..6, cols in 2usize..6, seed in 0u64..1000) {
        prop_assert_eq!(perturbed_grid(rows, cols, 1.0, 0.2, seed).unwrap(), perturbed_grid(rows, cols, 1.0, 0.2, seed).unwrap());
        prop_assert_eq!(perturbed_grid(rows, cols, 1.5, 0.0, seed).unwrap(), regular_grid(rows, cols, 1.5).unwrap());
    }

    #[test]
    fn instances_round_trip(rows in 2usize..5, seed in 0u64..1000, budget in 0.5f64..20.0, base in 0usize..4) {
        let mut inst = ProblemInstance::single(perturbed_grid(rows, rows, 1.0, 0.3, seed).unwrap(), base, budget);
        inst.options.gap_tol = 0.1;
        inst.options.time_limit = Some(2500.0);
        let back = ProblemInstance::from_json_str(&inst.to_json_string()).unwrap();
        prop_assert_eq!(back, inst);
    }

    #[test]
    fn field_is_positive(t in 0usize..201, x in 0.0f64..10.0, y in 0.0f64..10.0) {
        prop_assert!(field_value(&FieldSpec::default(), t, [x, y]).unwrap() > 0.0);
    }
}

#[test]
fn grid_adjacency_counts() {
    for (r, c) in [(2, 2), (3, 3), (4, 4), (3, 5)] {
        let net = regular_grid(r, c, 1.0).unwrap();
        let mut want = 0;
        for a in 0..r * c {
            for b in 0..r * c {
                if (a / c).abs_diff(b / c) + (a % c).abs_diff(b % c) == 1 {
                    want += 1;
                }
            }
        }
        assert_eq!(net.edges.len(), want);
        for e in &net.edges {
            let (a, b) = (e.src, e.dst);
            assert_eq!((a / c).abs_diff(b / c) + (a % c).abs_diff(b % c), 1);
        }
    }
    let g = regular_grid(4, 4, 1.0).unwrap();
    assert_eq!((g.len(), g.edges.len()), (16, 48));
}

#[test]
fn perturbed_positions_stay_near_lattice() {
    let lattice = regular_grid(4, 4, 1.0).unwrap();
    let net = perturbed_grid(4, 4, 1.0, 0.3, 1).unwrap();
    for (a, b) in net.nodes.iter().zip(&lattice.nodes) {
        assert!((a.pos[0] - b.pos[0]).abs() <= 0.3 && (a.pos[1] - b.pos[1]).abs() <= 0.3);
    }
    assert_ne!(net, lattice);
}

#[test]
fn series_bytes_are_deterministic() {
    let net = perturbed_grid(3, 3, 1.0, 0.2, 4).unwrap();
    let bytes = || {
        let mut out = Vec::new();
        write_series_csv(&sample_series(&FieldSpec::default(), &net).unwrap(), &mut out).unwrap();
        out
    };
    assert_eq!(bytes(), bytes());
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn adjacent_nodes_are_correlated() {
    let net = regular_grid(5, 5, 1.0).unwrap();
    let series = sample_series(&FieldSpec::default(), &net).unwrap();
    let col = |i: usize| (0..series.len()).map(|t| series.value(t, i)).collect::<Vec<_>>();
    let mut worst = f64::INFINITY;
    for e in &net.edges {
        worst = worst.min(pearson(&col(e.src), &col(e.dst)));
    }
    assert!(worst > 0.5, "weakest adjacent correlation {worst}");
}

#[test]
fn time_differences_converge_at_second_order() {
    let spec = FieldSpec::default();
    let p = [3.3, 6.1];
    for t in [10.0, 55.5, 140.0] {
        let d = |h: f64| (field_value_at(&spec, t + h, p) - field_value_at(&spec, t - h, p)) / (2.0 * h);
        let exact = {
            // Richardson extrapolation of the central difference
            let h = 1e-3;
            (4.0 * d(h / 2.0) - d(h)) / 3.0
        };
        let (e1, e2) = ((d(0.2) - exact).abs(), (d(0.1) - exact).abs());
        let ratio = e1 / e2;
        assert!((3.5..4.5).contains(&ratio), "t={t}: error ratio {ratio}");
    }
}
