//! Property tests over randomly drawn parameters, populations and vectors.

use std::collections::HashSet;

use emas::arena::{fight_meeting, SyncEngine};
use emas::contract::CheckMode;
use emas::islands::wire::{decode, encode, Frame};
use emas::islands::{Cluster, ClusterSpec, Topology};
use emas::model::{Agent, AgentId, EmasParams, Energy, IslandId, Solution};
use emas::operators::{crossover, rastrigin, Objective};
use emas::rng::Stream;
use proptest::prelude::*;

fn valid_params() -> impl Strategy<Value = EmasParams> {
    (
        1usize..40,
        1u64..20,
        (0u64..20, 1u64..10),
        1u64..15,
        2usize..5,
        0.0f64..0.05,
        1usize..8,
        (0.0f64..=1.0, 0.001f64..1.0, 0.0f64..=1.0, 0.0f64..=1.0),
    )
        .prop_map(|(size, energy, (threshold, transfer), fight, arena, migration, n, (rate, range, mp, rp))| EmasParams {
            initial_size: size,
            initial_energy: energy,
            reproduction_threshold: threshold.max(transfer),
            reproduction_transfer: transfer,
            fight_transfer: fight,
            fight_arena_size: arena,
            migration_probability: migration,
            migration_energy_min: 0,
            problem_size: n,
            mutation_rate: rate,
            mutation_range: range,
            mutation_probability: mp,
            recombination_probability: rp,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sync_steps_conserve_energy_and_ids(params in valid_params(), seed in any::<u64>()) {
        prop_assert!(params.validate().is_ok());
        let total = params.initial_total_energy();
        let mut engine = SyncEngine::new(params.clone(), Objective::rastrigin(params.problem_size), IslandId(0), seed, CheckMode::Fast).unwrap();
        let mut seen: HashSet<AgentId> = engine.population().iter().map(|a| a.id).collect();
        for _ in 0..300 {
            engine.step().unwrap();
            prop_assert_eq!(engine.total_energy(), total);
            let ids: HashSet<AgentId> = engine.population().iter().map(|a| a.id).collect();
            prop_assert_eq!(ids.len(), engine.population().len(), "duplicate id in population");
            prop_assert!(engine.population().iter().all(|a| a.sol.is_initialized()));
            // Agents with energy hold at least one unit each.
            let holding = engine.population().iter().filter(|a| a.energy.units() > 0).count() as u64;
            prop_assert!(holding <= total.units());
            seen.extend(ids);
        }
        // Ids are never reused: every id ever seen was issued once.
        prop_assert!(seen.len() as u64 <= engine.evaluations());
    }

    #[test]
    fn checked_steps_raise_no_violation(params in valid_params(), seed in any::<u64>()) {
        let mut engine = SyncEngine::new(params.clone(), Objective::rastrigin(params.problem_size), IslandId(0), seed, CheckMode::Checked).unwrap();
        for _ in 0..60 {
            prop_assert!(engine.step().is_ok());
        }
    }

    #[test]
    fn cluster_conserves_global_energy(params in valid_params(), seed in any::<u64>(), islands in 2usize..5, topo in 0usize..3) {
        let topology = [Topology::Ring, Topology::Complete, Topology::Experiment][topo];
        let params = EmasParams { migration_probability: 0.2, ..params };
        let total = params.initial_total_energy().units() * islands as u64;
        let mut cluster = Cluster::new(&params, Objective::rastrigin(params.problem_size), ClusterSpec::new(islands, topology), seed, CheckMode::Fast).unwrap();
        for _ in 0..150 {
            cluster.step().unwrap();
            prop_assert_eq!(cluster.total_energy().units(), total);
        }
        let mut ids = HashSet::new();
        for e in cluster.engines() {
            for a in e.population() {
                prop_assert!(ids.insert(a.id), "agent {} lives on two islands", a.id);
            }
        }
    }

    #[test]
    fn fights_conserve_energy(energies in prop::collection::vec(1u64..40, 1..6), fits in prop::collection::vec(-50i32..0, 6), transfer in 0u64..30) {
        let params = EmasParams { fight_transfer: transfer, fight_arena_size: 6, ..EmasParams::default() };
        let members: Vec<Agent> = energies.iter().zip(&fits).enumerate()
            .map(|(i, (&e, &f))| Agent::new(AgentId(i as u64), Solution::with_fitness(vec![0.0], f as f64), Energy(e)))
            .collect();
        let before: u64 = energies.iter().sum();
        let out = fight_meeting(members.clone(), &params).unwrap();
        prop_assert_eq!(out.total_energy().units(), before);
        prop_assert_eq!(out.agents.len(), members.len());
        let losers = out.agents.iter().zip(&members).filter(|(a, m)| a.energy < m.energy).count();
        if members.len() > 1 && transfer > 0 {
            prop_assert_eq!(losers, members.len() - 1);
        }
    }

    #[test]
    fn crossover_stays_in_parent_box(p in prop::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 1..50), seed in any::<u64>()) {
        let (a, b): (Vec<f64>, Vec<f64>) = p.into_iter().unzip();
        let mut rng = Stream::Test(0).rng(seed);
        let child = crossover(&a, &b, &mut rng).unwrap();
        for i in 0..a.len() {
            prop_assert!(child[i] >= a[i].min(b[i]) && child[i] <= a[i].max(b[i]));
        }
    }

    #[test]
    fn rastrigin_is_non_negative(x in prop::collection::vec(-100f64..100.0, 1..60)) {
        let v = rastrigin(&x);
        prop_assert!(v >= 0.0);
        if x.iter().any(|&c| c != 0.0 && c.abs() > 1e-6) {
            prop_assert!(v > 0.0);
        }
    }

    #[test]
    fn wire_round_trip_is_bit_exact(id in any::<u64>(), energy in any::<u64>(), bits in prop::collection::vec(any::<u64>(), 1..40), fit_bits in any::<u64>()) {
        let values: Vec<f64> = bits.iter().map(|&b| f64::from_bits(b)).collect();
        let fitness = f64::from_bits(fit_bits);
        let agent = Agent::new(AgentId(id), Solution::with_fitness(values, fitness), Energy(energy));
        let Frame::Migrate(back) = decode(&encode(&Frame::Migrate(agent.clone())).unwrap()).unwrap() else {
            panic!("not a MIGRATE frame");
        };
        prop_assert_eq!(back.id, agent.id);
        prop_assert_eq!(back.energy, agent.energy);
        prop_assert_eq!(back.sol.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), bits);
        prop_assert_eq!(back.sol.fitness().unwrap().to_bits(), fit_bits);
    }
}

#[test]
fn rastrigin_zero_only_at_origin_on_a_grid() {
    for i in -20..=20 {
        for j in -20..=20 {
            let x = [i as f64 * 0.25, j as f64 * 0.25];
            let v = rastrigin(&x);
            if i == 0 && j == 0 {
                assert_eq!(v, 0.0);
            } else {
                assert!(v > 0.0, "{x:?} -> {v}");
            }
        }
    }
    for eps in [1e-3, -1e-3, 1e-5] {
        assert!(rastrigin(&[eps, 0.0, 0.0]) > 0.0);
    }
}
