use eqlatent_core::eqdag::Expr;
use eqlatent_core::eqgen::{generate_corpus, sample_expression, GenConfig};
use eqlatent_core::metrics::{equivalent, simplify, EquivalenceMethod};
use eqlatent_core::rng;
use proptest::prelude::*;

fn config() -> GenConfig {
    GenConfig {
        d: 2,
        max_internal_nodes: 6,
        ..GenConfig::default()
    }
}

fn tree(seed: u64, i: u64) -> Expr {
    sample_expression(&mut rng::stream(seed, "tree", i), &config()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn simplify_is_idempotent(seed in any::<u64>()) {
        let once = simplify(&tree(seed, 0)).unwrap();
        prop_assert_eq!(simplify(&once).unwrap(), once);
    }
}

/// Pairs with equal normal forms must agree numerically wherever both
/// sides are defined.
#[test]
fn canonical_equivalence_implies_numeric_agreement() {
    let mut pairs = 0;
    let mut canonical_hits = 0;
    let mut r = rng::stream(1, "pairs", 0);
    for i in 0..1000u64 {
        let a = tree(1, i);
        // Half the pairs are rewritten forms of the same tree, so the
        // canonical path is exercised.
        let b = if i % 2 == 0 {
            simplify(&a).unwrap()
        } else {
            tree(2, i)
        };
        pairs += 1;
        let Ok(v) = equivalent(&a, &b, 2, &mut r) else {
            continue;
        };
        if v.method == EquivalenceMethod::Canonical {
            canonical_hits += 1;
            for _ in 0..20 {
                let x = [
                    rand::Rng::random_range(&mut r, -2.0..2.0),
                    rand::Rng::random_range(&mut r, -2.0..2.0),
                ];
                if let (Some(va), Some(vb)) = (a.evaluate(&x), b.evaluate(&x)) {
                    assert!(
                        (va - vb).abs() <= 1e-6 * va.abs().max(vb.abs()).max(1.0),
                        "{a} vs {b} at {x:?}"
                    );
                }
            }
        }
    }
    assert_eq!(pairs, 1000);
    assert!(canonical_hits >= 500);
}

#[test]
fn equivalence_is_reflexive_and_symmetric_on_a_corpus() {
    let corpus = generate_corpus(
        40,
        &GenConfig {
            d: 2,
            seed: 3,
            max_internal_nodes: 6,
            ..GenConfig::default()
        },
    )
    .unwrap();
    let trees: Vec<Expr> = corpus
        .all()
        .map(|e| e.dag.to_expression().unwrap())
        .collect();
    for (i, a) in trees.iter().enumerate() {
        let v = equivalent(a, a, 2, &mut rng::stream(0, "refl", i as u64)).unwrap();
        assert!(v.equivalent);
        for (j, b) in trees.iter().enumerate().skip(i + 1).take(5) {
            let ab = equivalent(a, b, 2, &mut rng::stream(0, "sym", (i * 100 + j) as u64));
            let ba = equivalent(b, a, 2, &mut rng::stream(0, "sym", (i * 100 + j) as u64));
            match (ab, ba) {
                (Ok(x), Ok(y)) => assert_eq!(x.equivalent, y.equivalent),
                (Err(_), Err(_)) => {}
                (x, y) => panic!("asymmetric outcome {x:?} vs {y:?}"),
            }
        }
    }
}
