use eqlatent_core::eqdag::{Edge, EquationDag, NodeType};
use eqlatent_core::eqgen::{sample_expression, GenConfig};
use eqlatent_core::rng;
use proptest::prelude::*;
use rand::Rng;

fn config() -> GenConfig {
    GenConfig {
        d: 3,
        max_internal_nodes: 8,
        ..GenConfig::default()
    }
}

/// Random topological order of `g`, applied as a node relabeling.
fn shuffle_topologically(g: &EquationDag, r: &mut impl Rng) -> EquationDag {
    let n = g.len();
    let mut indeg = vec![0usize; n];
    for e in &g.edges {
        indeg[e.dst] += 1;
    }
    let mut ready: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while !ready.is_empty() {
        let u = ready.swap_remove(r.random_range(0..ready.len()));
        order.push(u);
        for e in g.edges.iter().filter(|e| e.src == u) {
            indeg[e.dst] -= 1;
            if indeg[e.dst] == 0 {
                ready.push(e.dst);
            }
        }
    }
    let mut new_index = vec![0; n];
    for (new, &old) in order.iter().enumerate() {
        new_index[old] = new;
    }
    let nodes: Vec<NodeType> = order.iter().map(|&o| g.nodes[o]).collect();
    let edges = g
        .edges
        .iter()
        .map(|e| Edge::new(new_index[e.src], new_index[e.dst], e.slot))
        .collect();
    EquationDag::new(nodes, edges, g.num_inputs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn trees_convert_to_valid_dags(seed in any::<u64>()) {
        let t = sample_expression(&mut rng::stream(seed, "tree", 0), &config()).unwrap();
        let g = EquationDag::from_expression(&t, 3).unwrap();
        prop_assert!(g.is_valid(), "{}", t);
    }

    #[test]
    fn canonical_string_survives_round_trip(seed in any::<u64>()) {
        let t = sample_expression(&mut rng::stream(seed, "tree", 0), &config()).unwrap();
        let g = EquationDag::from_expression(&t, 3).unwrap();
        let back = EquationDag::from_expression(&g.to_expression().unwrap(), 3).unwrap();
        prop_assert_eq!(back.canonical_string().unwrap(), g.canonical_string().unwrap());
        prop_assert_eq!(g.canonical_string().unwrap(), t.canonical_string());
    }

    #[test]
    fn evaluation_matches_recursive_oracle(seed in any::<u64>()) {
        let mut r = rng::stream(seed, "tree", 0);
        let t = sample_expression(&mut r, &config()).unwrap();
        let g = EquationDag::from_expression(&t, 3).unwrap();
        for _ in 0..10 {
            let x: Vec<f64> = (0..3).map(|_| r.random_range(-2.0..2.0)).collect();
            match (g.evaluate(&x), t.evaluate(&x)) {
                (Ok(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}"),
                (Err(_), None) => {}
                (a, b) => prop_assert!(false, "dag {:?} vs tree {:?} for {}", a, b, t),
            }
        }
    }

    #[test]
    fn evaluation_is_permutation_stable(seed in any::<u64>()) {
        let mut r = rng::stream(seed, "tree", 0);
        let t = sample_expression(&mut r, &config()).unwrap();
        let g = EquationDag::from_expression(&t, 3).unwrap();
        let h = shuffle_topologically(&g, &mut r);
        prop_assert!(h.is_valid());
        for _ in 0..5 {
            let x: Vec<f64> = (0..3).map(|_| r.random_range(-2.0..2.0)).collect();
            match (g.evaluate(&x), h.evaluate(&x)) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a.to_bits(), b.to_bits()),
                (Err(_), Err(_)) => {}
                (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
            }
        }
    }
}
