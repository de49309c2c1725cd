//! Seeded random instance generation.
//!
//! Instances are generated with a planted assignment: every input vertex
//! draws a target image first, and a candidate arc only survives the density
//! draw when the planted images support it. The planted assignment is
//! therefore always a homomorphism, so generated instances are feasible by
//! construction. Target digraphs with a requested ordering structure are
//! sampled by deterministic retry over consecutive seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{rat_int, Cost, Digraph, Instance, Ordering};
use crate::orderings::{find_min_ordering, find_min_ordering_with_levels, SearchTarget};

/// Attempts a target sampler makes before giving up on a seed family.
const TARGET_RETRY_LIMIT: u64 = 10_000;

/// Shape of a generated instance.
#[derive(Debug, Clone)]
pub struct GenConfig {
    /// Number of input vertices.
    pub n: usize,
    /// Acceptance probability of each candidate arc.
    pub density: f64,
    /// Inclusive lower bound of the uniform integer costs.
    pub cost_lo: i64,
    /// Inclusive upper bound of the uniform integer costs.
    pub cost_hi: i64,
    /// Probability of replacing a cost with infinity. The planted image of a
    /// vertex always keeps a finite cost.
    pub inf_prob: f64,
    /// Generate an undirected input: each kept pair contributes both arcs.
    pub symmetric: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n: 30,
            density: 0.3,
            cost_lo: 5,
            cost_hi: 100_000,
            inf_prob: 0.0,
            symmetric: false,
        }
    }
}

/// Generates an instance over the target `h`, deterministically from `seed`.
/// When `levels` is given, input vertices draw levels too and arcs only run
/// to the circularly next level, so the input maps onto the levels by
/// construction.
pub fn generate_instance(
    h: &Digraph,
    levels: Option<&[usize]>,
    cfg: &GenConfig,
    seed: u64,
) -> Instance {
    generate_with_plant(h, levels, cfg, seed).0
}

/// Same as [`generate_instance`], also returning the planted homomorphism.
pub fn generate_with_plant(
    h: &Digraph,
    levels: Option<&[usize]>,
    cfg: &GenConfig,
    seed: u64,
) -> (Instance, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = levels.map_or(1, |ls| ls.iter().max().map_or(1, |&m| m + 1));
    let xlev: Vec<usize> = (0..cfg.n).map(|_| rng.gen_range(0..k)).collect();
    let plant: Vec<usize> = (0..cfg.n)
        .map(|x| {
            let pool: Vec<usize> = (0..h.n())
                .filter(|&a| levels.map_or(true, |ls| ls[a] == xlev[x]))
                .collect();
            pool[rng.gen_range(0..pool.len())]
        })
        .collect();
    let mut d = Digraph::new(cfg.n);
    for x in 0..cfg.n {
        for y in 0..cfg.n {
            if x == y || (cfg.symmetric && y < x) {
                continue;
            }
            if k > 1 && xlev[y] != (xlev[x] + 1) % k {
                continue;
            }
            if !rng.gen_bool(cfg.density) {
                continue;
            }
            if !h.has_arc(plant[x], plant[y]) {
                continue;
            }
            d.add_arc(x, y);
            if cfg.symmetric {
                d.add_arc(y, x);
            }
        }
    }
    let costs = (0..cfg.n)
        .map(|x| {
            (0..h.n())
                .map(|a| {
                    if a != plant[x] && cfg.inf_prob > 0.0 && rng.gen_bool(cfg.inf_prob) {
                        Cost::Infinite
                    } else {
                        Cost::Finite(rat_int(rng.gen_range(cfg.cost_lo..=cfg.cost_hi)))
                    }
                })
                .collect()
        })
        .collect();
    (Instance::new(d, h.clone(), costs), plant)
}

/// Samples a target digraph admitting a linear min-ordering, retrying
/// consecutive seeds until one is found.
pub fn random_min_ordered_target(p: usize, arc_prob: f64, seed: u64) -> (Digraph, Ordering) {
    random_ordered_target(p, arc_prob, seed, SearchTarget::Min)
}

/// Samples a target digraph admitting a linear min-max-ordering.
pub fn random_minmax_target(p: usize, arc_prob: f64, seed: u64) -> (Digraph, Ordering) {
    random_ordered_target(p, arc_prob, seed, SearchTarget::MinMax)
}

fn random_ordered_target(
    p: usize,
    arc_prob: f64,
    seed: u64,
    target: SearchTarget,
) -> (Digraph, Ordering) {
    for attempt in 0..TARGET_RETRY_LIMIT {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        let mut h = Digraph::new(p);
        for a in 0..p {
            for b in 0..p {
                if rng.gen_bool(arc_prob) {
                    h.add_arc(a, b);
                }
            }
        }
        if h.arc_count() == 0 {
            continue;
        }
        if let Ok(Some(ord)) = find_min_ordering(&h, target) {
            return (h, ord);
        }
    }
    panic!("no ordered target of size {p} within the retry budget");
}

/// Samples a cyclically leveled target with `k` non-empty levels admitting a
/// leveled min-ordering. The levels are readable from the returned ordering.
pub fn random_kmin_target(p: usize, k: usize, arc_prob: f64, seed: u64) -> (Digraph, Ordering) {
    assert!(k >= 1 && p >= k);
    for attempt in 0..TARGET_RETRY_LIMIT {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        let levels: Vec<usize> = (0..p)
            .map(|a| if a < k { a } else { rng.gen_range(0..k) })
            .collect();
        let mut h = Digraph::new(p);
        for a in 0..p {
            for b in 0..p {
                if levels[b] == (levels[a] + 1) % k && rng.gen_bool(arc_prob) {
                    h.add_arc(a, b);
                }
            }
        }
        if h.arc_count() == 0 {
            continue;
        }
        if let Ok(Some(ord)) = find_min_ordering_with_levels(&h, &levels, k) {
            return (h, ord);
        }
    }
    panic!("no leveled target of size {p} within the retry budget");
}

/// Samples a symmetric target whose bipartite double admits a two-level
/// min-ordering, so the doubled pipeline applies.
pub fn random_biarc_target(p: usize, edge_prob: f64, seed: u64) -> Digraph {
    for attempt in 0..TARGET_RETRY_LIMIT {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        let mut h = Digraph::new(p);
        for a in 0..p {
            for b in a..p {
                if rng.gen_bool(edge_prob) {
                    h.add_arc(a, b);
                    h.add_arc(b, a);
                }
            }
        }
        if h.arc_count() == 0 {
            continue;
        }
        let probe = Instance::zero_costs(Digraph::new(1), h.clone());
        let dbl = match crate::lp::double_graph(&probe) {
            Ok(d) => d,
            Err(_) => continue,
        };
        if let Ok(Some(_)) =
            find_min_ordering_with_levels(&dbl.inst.h, &dbl.target_side_levels(), 2)
        {
            return h;
        }
    }
    panic!("no doubled-orderable symmetric target of size {p} within the retry budget");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::extend_min_ordering_system;
    use crate::model::validate_hom;
    use crate::simplex::{solve, LpOutcome};
    use num::ToPrimitive;

    #[test]
    fn identical_seeds_reproduce_the_instance() {
        let (h, _) = random_min_ordered_target(5, 0.4, 11);
        let cfg = GenConfig {
            n: 12,
            inf_prob: 0.2,
            ..GenConfig::default()
        };
        let a = generate_instance(&h, None, &cfg, 99);
        let b = generate_instance(&h, None, &cfg, 99);
        assert_eq!(a.d.arcs(), b.d.arcs());
        for x in 0..cfg.n {
            for v in 0..h.n() {
                assert_eq!(a.cost(x, v), b.cost(x, v));
            }
        }
        let c = generate_instance(&h, None, &cfg, 100);
        assert!(a.d.arcs() != c.d.arcs() || (0..cfg.n).any(|x| a.cost(x, 0) != c.cost(x, 0)));
    }

    #[test]
    fn the_planted_assignment_is_a_homomorphism() {
        for seed in 0..8 {
            let (h, _) = random_min_ordered_target(6, 0.35, seed);
            let cfg = GenConfig {
                n: 15,
                density: 0.4,
                inf_prob: 0.3,
                ..GenConfig::default()
            };
            let (inst, plant) = generate_with_plant(&h, None, &cfg, seed * 7 + 1);
            assert!(validate_hom(&inst, &plant).is_ok());
            for (x, &a) in plant.iter().enumerate() {
                assert!(inst.cost(x, a).is_finite());
            }
        }
    }

    #[test]
    fn leveled_generation_respects_the_cycle() {
        let (h, ord) = random_kmin_target(6, 3, 0.6, 5);
        let levels = ord.levels().expect("leveled ordering carries levels");
        let cfg = GenConfig {
            n: 14,
            density: 0.5,
            ..GenConfig::default()
        };
        let (inst, plant) = generate_with_plant(&h, Some(levels), &cfg, 3);
        assert!(validate_hom(&inst, &plant).is_ok());
        for &(x, y) in inst.d.arcs() {
            assert_eq!(
                (levels[plant[x]] + 1) % 3,
                levels[plant[y]],
                "arcs must advance the level cyclically"
            );
        }
    }

    #[test]
    fn two_level_generation_only_crosses_sides() {
        let h = Digraph::from_arcs(2, &[(0, 1), (1, 0)]);
        let levels = vec![0, 1];
        let cfg = GenConfig {
            n: 16,
            density: 0.7,
            ..GenConfig::default()
        };
        let (inst, plant) = generate_with_plant(&h, Some(&levels), &cfg, 21);
        for &(x, y) in inst.d.arcs() {
            assert_ne!(levels[plant[x]], levels[plant[y]]);
        }
    }

    #[test]
    fn zero_density_costs_sum_per_vertex_minima() {
        let (h, ord) = random_minmax_target(4, 0.45, 2);
        let cfg = GenConfig {
            n: 8,
            density: 0.0,
            ..GenConfig::default()
        };
        let inst = generate_instance(&h, None, &cfg, 17);
        assert_eq!(inst.d.arc_count(), 0);
        let model = extend_min_ordering_system(&inst, &ord).unwrap();
        let solved = match solve(&model).unwrap() {
            LpOutcome::Optimal(s) => s,
            LpOutcome::Infeasible => panic!("arcless instances are feasible"),
        };
        let expected: f64 = (0..cfg.n)
            .map(|x| {
                (0..h.n())
                    .filter(|&a| inst.cost(x, a).is_finite())
                    .map(|a| inst.cost(x, a).finite().to_f64().unwrap())
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        assert!((solved.value - expected).abs() < 1e-6 * expected.max(1.0));
    }

    #[test]
    fn sampled_biarc_targets_double_cleanly() {
        for seed in 0..4 {
            let h = random_biarc_target(5, 0.45, seed);
            assert!(h.is_symmetric());
            assert!(h.arc_count() > 0);
        }
    }
}
