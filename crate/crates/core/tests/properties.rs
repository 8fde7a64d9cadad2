use std::collections::BTreeSet;
use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dactd::envs::{enumerate, CoupledLine, Jommdp, Radix, DEFAULT_CAPACITY};
use dactd::funcapprox::{Approximator, Checkpoint, SoftmaxPolicy};
use dactd::learner::ParamBox;
use dactd::protocol::{
    partial_sum_invariant, centralized_team_td, replay_acyclic, replay_general, Slot, TdVector,
};
use dactd::topology::GraphSchedule;
use dactd::transport::{Channel, ChannelModel, SendOutcome};
use dactd::verify::{random_schedule, random_tree};
use dactd::Error;

fn schedule(n: usize, seed: u64) -> GraphSchedule {
    random_schedule(&mut ChaCha8Rng::seed_from_u64(seed), n).unwrap()
}

fn tree(n: usize, seed: u64) -> GraphSchedule {
    random_tree(&mut ChaCha8Rng::seed_from_u64(seed), n).unwrap()
}

fn deltas(ticks: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd1ce);
    (0..ticks)
        .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Vector for `origin` knowing exactly the agents in `mask`.
fn masked(truth: &[f64], mask: &[bool], origin: i64) -> TdVector {
    let n = truth.len();
    let mut v = TdVector::unknown(origin, n);
    for i in (0..n).filter(|&i| mask[i]) {
        v.merge_from(&TdVector::init(i, Arc::from([truth[i]]), origin, n).unwrap())
            .unwrap();
    }
    v
}

proptest! {
    #[test]
    fn khop_sets_partition_the_reachable_agents(n in 1usize..9, seed: u64) {
        let g = schedule(n, seed);
        for t in 0..g.period() as i64 {
            for i in 0..n {
                let dist = g.undirected_distances(i, t).unwrap();
                let reachable: BTreeSet<usize> = (0..n).filter(|&j| dist[j].is_some()).collect();
                let mut union = BTreeSet::new();
                for k in 0..=n {
                    let ring = g.khop_neighbors(i, k, t).unwrap();
                    prop_assert!(ring.is_disjoint(&union));
                    union.extend(ring);
                    prop_assert_eq!(&g.khop_ball(i, k, t).unwrap(), &union);
                }
                prop_assert_eq!(&union, &reachable);
                prop_assert_eq!(g.khop_neighbors(i, 0, t).unwrap(), BTreeSet::from([i]));
            }
        }
    }

    #[test]
    fn trees_are_acyclic_with_n_minus_one_edges(n in 1usize..12, seed: u64) {
        let g = tree(n, seed);
        let c = g.classify().unwrap();
        prop_assert!(c.acyclic_undirected);
        prop_assert!(c.strongly_connected);
        prop_assert_eq!(g.edges_at(0).len(), 2 * (n - 1));
        prop_assert!(g.is_symmetric());
    }

    #[test]
    fn adding_an_edge_to_a_tree_breaks_acyclicity(n in 3usize..10, seed: u64, a in 0usize..10, b in 0usize..10) {
        let g = tree(n, seed);
        let (a, b) = (a % n, b % n);
        prop_assume!(a != b && !g.has_edge((a, b), 0));
        let mut edges: Vec<_> = g.edges_at(0).iter().copied().collect();
        edges.extend([(a, b), (b, a)]);
        let h = GraphSchedule::new_static(n, edges).unwrap();
        prop_assert!(!h.classify().unwrap().acyclic_undirected);
    }

    #[test]
    fn merge_is_a_join(
        truth in prop::collection::vec(-5.0f64..5.0, 1..8),
        ma in prop::collection::vec(any::<bool>(), 8),
        mb in prop::collection::vec(any::<bool>(), 8),
        mc in prop::collection::vec(any::<bool>(), 8),
    ) {
        let n = truth.len();
        let (a, b, c) = (masked(&truth, &ma[..n], 3), masked(&truth, &mb[..n], 3), masked(&truth, &mc[..n], 3));

        let mut ab = a.clone();
        ab.merge_from(&b).unwrap();
        let mut ba = b.clone();
        ba.merge_from(&a).unwrap();
        prop_assert_eq!(&ab, &ba);

        let mut again = ab.clone();
        prop_assert!(!again.merge_from(&b).unwrap());
        prop_assert_eq!(&again, &ab);

        let mut ab_c = ab.clone();
        ab_c.merge_from(&c).unwrap();
        let mut bc = b.clone();
        bc.merge_from(&c).unwrap();
        let mut a_bc = a.clone();
        a_bc.merge_from(&bc).unwrap();
        prop_assert_eq!(&ab_c, &a_bc);

        for (i, s) in ab.entries().iter().enumerate() {
            prop_assert_eq!(s.is_known(), ma[i] || mb[i]);
            if let Slot::Known(l) = s {
                prop_assert_eq!(l[0].to_bits(), truth[i].to_bits());
            }
        }
    }

    #[test]
    fn merge_rejects_conflicting_values(truth in prop::collection::vec(-5.0f64..5.0, 1..8), pick in 0usize..8) {
        let n = truth.len();
        let i = pick % n;
        let mut a = TdVector::init(i, Arc::from([truth[i]]), 0, n).unwrap();
        let b = TdVector::init(i, Arc::from([truth[i] + 1.0]), 0, n).unwrap();
        prop_assert!(
            matches!(a.merge_from(&b), Err(Error::Corruption { agent, origin: 0 }) if agent == i),
            "conflict accepted"
        );
    }

    #[test]
    fn channel_respects_its_guarantee_and_is_deterministic(
        n in 2usize..7,
        seed: u64,
        t1 in 0usize..4,
        t2 in 1usize..4,
        p in 0.0f64..0.95,
    ) {
        let g = Arc::new(schedule(n, seed));
        let model = ChannelModel::new(t1, t2, p, seed).unwrap();
        let run = || {
            let mut ch: Channel<Vec<f64>> = Channel::new(model.clone(), g.clone()).unwrap();
            let mut received = Vec::new();
            for t in 0..40i64 {
                for &e in g.edges_at(t) {
                    ch.attempt_send(e, vec![t as f64], t).unwrap();
                }
                for dst in 0..n {
                    for m in ch.drain(dst, t) {
                        assert!(m.deliver_tick == t && m.deliver_tick - m.sent_tick <= t2 as i64);
                        received.push((t, m.src, m.dst, m.sent_tick));
                    }
                }
            }
            ch.check_guarantee().unwrap();
            (ch.attempts().to_vec(), received)
        };
        let (attempts, received) = run();
        let delivered = attempts.iter().filter(|a| matches!(a.outcome, SendOutcome::Delivered { .. })).count();
        let late = attempts.iter().filter(|a| matches!(a.outcome, SendOutcome::Delivered { at } if at >= 40)).count();
        prop_assert_eq!(received.len() + late, delivered);
        prop_assert_eq!(run(), (attempts, received));
    }

    #[test]
    fn readouts_equal_the_centralized_mean_bitwise(
        n in 1usize..7,
        seed: u64,
        t1 in 0usize..3,
        t2 in 1usize..3,
        p in 0.0f64..0.8,
    ) {
        let g = Arc::new(schedule(n, seed));
        let ticks = 30;
        let d = deltas(ticks, n, seed);
        let r = replay_general(g, ChannelModel::new(t1, t2, p, seed).unwrap(), None, &d).unwrap();
        for (t, out) in r.readouts.iter().enumerate() {
            match out {
                None => prop_assert!(t < r.k),
                Some(v) => {
                    let want = centralized_team_td(&d[t - r.k]).unwrap();
                    for x in v {
                        prop_assert_eq!(x.to_bits(), want.to_bits());
                    }
                }
            }
        }
        prop_assert_eq!(r.stats.max_payload, (r.stats.attempts > 0).then_some(n * r.k));
    }

    #[test]
    fn acyclic_readouts_and_partial_sums_are_exact(n in 1usize..9, seed: u64) {
        let g = Arc::new(tree(n, seed));
        let d = deltas(25, n, seed);
        let r = replay_acyclic(g.clone(), None, &d).unwrap();
        let k = r.replay.k;
        for (t, out) in r.replay.readouts.iter().enumerate().skip(k) {
            let want = centralized_team_td(&d[t - k]).unwrap();
            for x in out.as_ref().unwrap() {
                prop_assert!((x - want).abs() <= 1e-12);
            }
        }
        let check = partial_sum_invariant(&g, &d, &r.trace, 1e-12).unwrap();
        prop_assert!(check.holds, "worst {}", check.worst_error);
        if n > 1 {
            prop_assert_eq!(r.replay.stats.max_payload, Some(k));
        }
    }

    #[test]
    fn policy_probabilities_are_a_positive_distribution(
        ns in 1usize..5,
        na in 1usize..5,
        theta in prop::collection::vec(-10.0f64..10.0, 16),
        hidden in 1usize..6,
        seed: u64,
    ) {
        let mut tab = SoftmaxPolicy::tabular(ns, na).unwrap();
        let k = tab.n_params();
        tab.set_params(&theta[..k]).unwrap();
        let mlp = SoftmaxPolicy::mlp(ns, na, &[hidden], seed).unwrap();
        for pol in [&tab, &mlp] {
            for s in 0..ns {
                let p = pol.probs(s).unwrap();
                prop_assert_eq!(p.len(), na);
                prop_assert!(p.iter().all(|&x| x > 0.0));
                prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn projection_lands_in_the_box_and_fixes_its_points(
        lo in -5.0f64..0.0,
        width in 0.0f64..10.0,
        x in prop::collection::vec(-20.0f64..20.0, 0..12),
    ) {
        let b = ParamBox::new(lo, lo + width).unwrap();
        let mut y = x.clone();
        b.project(&mut y);
        prop_assert!(b.contains(&y));
        let mut z = y.clone();
        b.project(&mut z);
        prop_assert_eq!(&z, &y);
        for (a, c) in x.iter().zip(&y) {
            if b.contains(&[*a]) {
                prop_assert_eq!(a, c);
            }
        }
    }

    #[test]
    fn checkpoints_round_trip_bitwise(ns in 1usize..5, na in 1usize..4, hidden in 1usize..6, seed: u64) {
        let pol = SoftmaxPolicy::mlp(ns, na, &[hidden, hidden], seed).unwrap();
        let text = pol.checkpoint().to_text();
        let back = SoftmaxPolicy::from_checkpoint(&Checkpoint::from_text(&text).unwrap()).unwrap();
        let bits = |p: &SoftmaxPolicy| p.params().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&pol), bits(&back));
    }

    #[test]
    fn radix_round_trips(sizes in prop::collection::vec(1usize..5, 1..6), pick: u64) {
        let r = Radix::new(sizes.clone());
        let idx = (pick % r.len() as u64) as usize;
        let x = r.decode(idx);
        prop_assert!(x.iter().zip(&sizes).all(|(v, s)| v < s));
        prop_assert_eq!(r.encode(&x), idx);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exact_chains_are_stochastic_with_bounded_rewards(n in 1usize..5, gamma in 0.0f64..0.99, seed: u64) {
        let env = CoupledLine::new(n, gamma).unwrap();
        let policies: Vec<_> = (0..n)
            .map(|i| SoftmaxPolicy::mlp(2, 2, &[3], seed.wrapping_add(i as u64)).unwrap())
            .collect();
        let m = enumerate(&env, &policies, DEFAULT_CAPACITY).unwrap();
        for s in 0..m.n_states() {
            prop_assert!((m.p.row(s).sum() - 1.0).abs() <= 1e-12);
            prop_assert!((m.pi.row(s).sum() - 1.0).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&m.r_bar[s]));
        }
        prop_assert!((m.d.sum() - 1.0).abs() <= 1e-12);
        prop_assert!(m.d.iter().all(|&x| x >= -1e-15));
        let dp = m.p.transpose() * &m.d;
        prop_assert!((dp - &m.d).amax() <= 1e-12);
    }
}

/// The enumerated stationary distribution matches a long simulated
/// trajectory of the two-agent chain.
#[test]
fn stationary_distribution_matches_simulation() {
    let env = CoupledLine::micro();
    let policies: Vec<_> = (0..2)
        .map(|i| SoftmaxPolicy::mlp(2, 2, &[4], 11 + i).unwrap())
        .collect();
    let m = enumerate(&env, &policies, DEFAULT_CAPACITY).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut s = env.initial_state();
    let mut counts = vec![0u64; m.n_states()];
    let steps = 1_000_000u64;
    for _ in 0..steps {
        counts[m.states.encode(&s)] += 1;
        let a: Vec<usize> = (0..2)
            .map(|i| policies[i].sample_action(s[i], &mut rng).unwrap())
            .collect();
        s = env.step(&s, &a, &mut rng).unwrap().0;
    }
    for (x, &c) in counts.iter().enumerate() {
        let freq = c as f64 / steps as f64;
        assert!(
            (freq - m.d[x]).abs() <= 0.005,
            "state {x}: simulated {freq}, exact {}",
            m.d[x]
        );
    }
}
