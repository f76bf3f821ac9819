use ncgl::findist::{divergence, DivergenceKind, FiniteJoint};
use ncgl::theory::{check_thm1, random_full_rank_channel};
use ncgl::ConfusionMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn joint(support: usize, m: usize, seed: u64) -> FiniteJoint {
    FiniteJoint::random(support, m, &mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn uniform_flip_rows_are_distributions(m in 2usize..8, pi in 0.0f64..=1.0) {
        let c = ConfusionMatrix::uniform_flip(m, pi).unwrap();
        for i in 0..m {
            prop_assert!((c.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!((c.get(i, i) - pi).abs() < 1e-12);
        }
    }

    #[test]
    fn chaining_flips_matches_closed_form(m in 2usize..6, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        // Two symmetric flips compose to a symmetric flip whose diagonal is
        // ab + (1-a)(1-b)/(m-1).
        let c = ConfusionMatrix::uniform_flip(m, a).unwrap().then(&ConfusionMatrix::uniform_flip(m, b).unwrap()).unwrap();
        let diag = a * b + (1.0 - a) * (1.0 - b) / (m as f64 - 1.0);
        for i in 0..m {
            prop_assert!((c.get(i, i) - diag).abs() < 1e-12);
        }
    }

    #[test]
    fn push_forward_keeps_x_marginal(support in 1usize..8, m in 2usize..5, seed in any::<u64>()) {
        let p = joint(support, m, seed);
        let c = random_full_rank_channel(m, &mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let q = c.push_forward(&p).unwrap();
        for (a, b) in p.x_marginal().iter().zip(q.x_marginal()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        // Label marginal is the row vector times C.
        let lp = p.label_marginal();
        let lq = q.label_marginal();
        for j in 0..m {
            let want: f64 = (0..m).map(|i| lp[i] * c.get(i, j)).sum();
            prop_assert!((lq[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn tv_is_half_l1_and_contracts(support in 1usize..8, m in 2usize..5, seed in any::<u64>()) {
        let (p, q) = (joint(support, m, seed), joint(support, m, seed.wrapping_add(1)));
        let l1: f64 = p.probs().iter().zip(q.probs()).map(|(a, b)| (a - b).abs()).sum();
        let tv = divergence(&p, &q, DivergenceKind::Tv).unwrap();
        prop_assert!((tv - l1 / 2.0).abs() < 1e-12);
        let c = random_full_rank_channel(m, &mut ChaCha8Rng::seed_from_u64(seed ^ 2));
        let tv_noisy = divergence(&c.push_forward(&p).unwrap(), &c.push_forward(&q).unwrap(), DivergenceKind::Tv).unwrap();
        prop_assert!(tv_noisy <= tv + 1e-12);
    }

    #[test]
    fn sandwich_holds_for_random_instances(support in 1usize..6, m in 2usize..5, seed in any::<u64>()) {
        let (p, q) = (joint(support, m, seed), joint(support, m, seed.wrapping_add(7)));
        let c = random_full_rank_channel(m, &mut ChaCha8Rng::seed_from_u64(seed ^ 3));
        let (tv, js) = check_thm1(&p, &q, &c).unwrap();
        prop_assert!(tv.ok(), "{tv:?}");
        prop_assert!(js.ok(), "{js:?}");
    }
}

#[test]
fn corrupt_matches_row_frequencies() {
    let c = ConfusionMatrix::from_rows(&[vec![0.6, 0.3, 0.1], vec![0.2, 0.7, 0.1], vec![0.0, 0.0, 1.0]]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 200_000;
    for y in 0..3 {
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[c.corrupt(y, &mut rng).unwrap()] += 1;
        }
        for j in 0..3 {
            let f = counts[j] as f64 / n as f64;
            // Five standard errors.
            let se = (c.get(y, j) * (1.0 - c.get(y, j)) / n as f64).sqrt();
            assert!((f - c.get(y, j)).abs() <= 5.0 * se + 1e-12, "row {y} col {j}: {f}");
        }
    }
}
