//! Arc and pair consistency preprocessing.
//!
//! Both procedures prune candidate images without losing any valid
//! mapping: every image used by some list-respecting homomorphism
//! survives. An emptied list therefore proves that no homomorphism
//! exists.

use crate::model::Instance;
use std::collections::{BTreeSet, HashMap, VecDeque};

/// Why pruning wiped out a candidate set.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EmptyLists {
    #[error("list of vertex {vertex} became empty")]
    Vertex { vertex: usize },
    #[error("pair list of ({x}, {y}) became empty")]
    Pair { x: usize, y: usize },
}

/// Prunes the lists `L(x) = {a : c(x, a) finite}` to the arc-consistent
/// closure: `a` stays in `L(x)` only if every arc at `x` has a supporting
/// image on the other endpoint. Runs a worklist until stable.
pub fn arc_consistency(inst: &Instance) -> Result<Vec<BTreeSet<usize>>, EmptyLists> {
    let mut lists: Vec<BTreeSet<usize>> =
        (0..inst.d.n()).map(|x| inst.list(x).into_iter().collect()).collect();
    arc_consistency_on(inst, &mut lists)?;
    Ok(lists)
}

/// Runs the arc-consistency worklist on caller-provided lists.
pub fn arc_consistency_on(
    inst: &Instance,
    lists: &mut [BTreeSet<usize>],
) -> Result<(), EmptyLists> {
    for (x, l) in lists.iter().enumerate() {
        if l.is_empty() {
            return Err(EmptyLists::Vertex { vertex: x });
        }
    }
    let h = &inst.h;
    let mut queue: VecDeque<usize> = (0..inst.d.arcs().len() * 2).collect();
    let mut queued = vec![true; inst.d.arcs().len() * 2];
    while let Some(job) = queue.pop_front() {
        queued[job] = false;
        let (arc, tail_side) = (job / 2, job % 2 == 0);
        let (u, v) = inst.d.arcs()[arc];
        let changed = if u == v {
            let before = lists[u].len();
            lists[u].retain(|&a| h.has_arc(a, a));
            lists[u].len() != before
        } else if tail_side {
            revise(lists, u, v, |a, b| h.has_arc(a, b))
        } else {
            revise(lists, v, u, |b, a| h.has_arc(a, b))
        };
        if changed {
            let shrunk = if tail_side && u != v { u } else { v };
            if lists[shrunk].is_empty() {
                return Err(EmptyLists::Vertex { vertex: shrunk });
            }
            for (other, &(a, b)) in inst.d.arcs().iter().enumerate() {
                for side in 0..2 {
                    let endpoint = if side == 0 { a } else { b };
                    let job2 = other * 2 + (1 - side);
                    if endpoint == shrunk && !queued[job2] {
                        queued[job2] = true;
                        queue.push_back(job2);
                    }
                }
            }
        }
    }
    Ok(())
}

/// Drops values of `L(x)` with no partner in `L(y)` under `rel`.
/// Returns whether anything was removed.
fn revise(
    lists: &mut [BTreeSet<usize>],
    x: usize,
    y: usize,
    rel: impl Fn(usize, usize) -> bool,
) -> bool {
    let keep: BTreeSet<usize> = lists[x]
        .iter()
        .copied()
        .filter(|&a| lists[y].iter().any(|&b| rel(a, b)))
        .collect();
    if keep.len() != lists[x].len() {
        lists[x] = keep;
        true
    } else {
        false
    }
}

/// Pair lists `L(x, y)` for ordered pairs of distinct input vertices,
/// kept symmetric: `(a, b)` is in `L(x, y)` exactly when `(b, a)` is in
/// `L(y, x)`.
#[derive(Debug, Clone)]
pub struct PairTable {
    pairs: HashMap<(usize, usize), BTreeSet<(usize, usize)>>,
}

impl PairTable {
    pub fn get(&self, x: usize, y: usize) -> Option<&BTreeSet<(usize, usize)>> {
        self.pairs.get(&(x, y))
    }

    pub fn contains(&self, x: usize, y: usize, a: usize, b: usize) -> bool {
        self.pairs.get(&(x, y)).map_or(false, |s| s.contains(&(a, b)))
    }
}

/// The arc-restricted initial pair list: images jointly compatible with
/// whichever arcs run between `x` and `y`, and individually on-list.
pub fn init_pair_list(
    inst: &Instance,
    lists: &[BTreeSet<usize>],
    x: usize,
    y: usize,
) -> BTreeSet<(usize, usize)> {
    assert_ne!(x, y);
    let mut s = BTreeSet::new();
    for &a in &lists[x] {
        for &b in &lists[y] {
            if inst.d.has_arc(x, y) && !inst.h.has_arc(a, b) {
                continue;
            }
            if inst.d.has_arc(y, x) && !inst.h.has_arc(b, a) {
                continue;
            }
            s.insert((a, b));
        }
    }
    s
}

/// Result of the pair-consistency fixpoint: pruned vertex lists plus the
/// full table of pair lists.
#[derive(Debug, Clone)]
pub struct PairConsistency {
    pub lists: Vec<BTreeSet<usize>>,
    pub table: PairTable,
}

/// Runs the pair-consistency fixpoint over all ordered pairs of distinct
/// vertices, starting from arc-consistent lists.
///
/// A pair `(a, b)` survives in `L(x, y)` only if for every third vertex
/// `z` some `c` has `(a, c)` in `L(x, z)` and `(b, c)` in `L(y, z)`.
/// Vertex lists are re-derived as projections of the pair lists. The
/// table is quadratic in `|V(D)|`, so this is meant for moderate sizes;
/// larger builds fall back to [`init_pair_list`] on demand.
pub fn pair_consistency(inst: &Instance) -> Result<PairConsistency, EmptyLists> {
    let lists = (0..inst.d.n()).map(|x| inst.list(x).into_iter().collect()).collect();
    pair_consistency_with(inst, lists)
}

/// Same as [`pair_consistency`] but seeded with caller-restricted lists,
/// for example lists already cut down to one level of a leveled ordering.
pub fn pair_consistency_with(
    inst: &Instance,
    mut lists: Vec<BTreeSet<usize>>,
) -> Result<PairConsistency, EmptyLists> {
    arc_consistency_on(inst, &mut lists)?;
    let pairs = initial_pairs(inst, &lists);
    pair_fixpoint(inst, lists, pairs)
}

/// Pair consistency over a doubled instance whose two copies of each vertex
/// are tied to partner images: vertex `v` and its copy `half_n + v` may only
/// take images `a` and `a + half_p` together, so their pair list starts from
/// exactly those pairs before the fixpoint runs. An emptied list proves that
/// no assignment folding back to the original instance exists.
pub fn pair_consistency_paired(
    inst: &Instance,
    half_n: usize,
    half_p: usize,
) -> Result<PairConsistency, EmptyLists> {
    debug_assert_eq!(inst.d.n(), 2 * half_n);
    let mut lists: Vec<BTreeSet<usize>> =
        (0..inst.d.n()).map(|x| inst.list(x).into_iter().collect()).collect();
    arc_consistency_on(inst, &mut lists)?;
    let mut pairs = initial_pairs(inst, &lists);
    for v in 0..half_n {
        let tied: BTreeSet<(usize, usize)> = lists[v]
            .iter()
            .map(|&a| (a, a + half_p))
            .filter(|(_, b)| lists[half_n + v].contains(b))
            .collect();
        let fwd = pairs.get_mut(&(v, half_n + v)).expect("distinct pair");
        fwd.retain(|p| tied.contains(p));
        if fwd.is_empty() {
            return Err(EmptyLists::Pair { x: v, y: half_n + v });
        }
        let kept: BTreeSet<(usize, usize)> = fwd.iter().map(|&(a, b)| (b, a)).collect();
        let bwd = pairs.get_mut(&(half_n + v, v)).expect("distinct pair");
        bwd.retain(|p| kept.contains(p));
    }
    pair_fixpoint(inst, lists, pairs)
}

fn initial_pairs(
    inst: &Instance,
    lists: &[BTreeSet<usize>],
) -> HashMap<(usize, usize), BTreeSet<(usize, usize)>> {
    let n = inst.d.n();
    let mut pairs: HashMap<(usize, usize), BTreeSet<(usize, usize)>> = HashMap::new();
    for x in 0..n {
        for y in 0..n {
            if x != y {
                pairs.insert((x, y), init_pair_list(inst, lists, x, y));
            }
        }
    }
    pairs
}

fn pair_fixpoint(
    inst: &Instance,
    mut lists: Vec<BTreeSet<usize>>,
    mut pairs: HashMap<(usize, usize), BTreeSet<(usize, usize)>>,
) -> Result<PairConsistency, EmptyLists> {
    let n = inst.d.n();
    loop {
        let mut changed = false;
        for x in 0..n {
            for y in (x + 1)..n {
                let current: Vec<(usize, usize)> =
                    pairs[&(x, y)].iter().copied().collect();
                for (a, b) in current {
                    let supported = (0..n).filter(|&z| z != x && z != y).all(|z| {
                        let xz = &pairs[&(x, z)];
                        let yz = &pairs[&(y, z)];
                        lists[z].iter().any(|&c| xz.contains(&(a, c)) && yz.contains(&(b, c)))
                    });
                    if !supported {
                        pairs.get_mut(&(x, y)).unwrap().remove(&(a, b));
                        pairs.get_mut(&(y, x)).unwrap().remove(&(b, a));
                        changed = true;
                    }
                }
                if pairs[&(x, y)].is_empty() {
                    return Err(EmptyLists::Pair { x, y });
                }
            }
        }
        for x in 0..n {
            for y in 0..n {
                if x == y {
                    continue;
                }
                let proj: BTreeSet<usize> =
                    pairs[&(x, y)].iter().map(|&(a, _)| a).collect();
                let before = lists[x].len();
                lists[x].retain(|a| proj.contains(a));
                if lists[x].is_empty() {
                    return Err(EmptyLists::Vertex { vertex: x });
                }
                if lists[x].len() != before {
                    changed = true;
                }
            }
        }
        if changed {
            for x in 0..n {
                for y in 0..n {
                    if x == y {
                        continue;
                    }
                    let l = pairs.get_mut(&(x, y)).unwrap();
                    let before = l.len();
                    l.retain(|&(a, b)| lists[x].contains(&a) && lists[y].contains(&b));
                    changed |= l.len() != before;
                    if l.is_empty() {
                        return Err(EmptyLists::Pair { x, y });
                    }
                }
            }
        }
        if !changed {
            return Ok(PairConsistency { lists, table: PairTable { pairs } });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{rat_int, Cost, Digraph, Instance, Rat};
    use num::Zero;

    fn zero_inst(d: Digraph, h: Digraph) -> Instance {
        Instance::zero_costs(d, h)
    }

    fn with_lists(d: Digraph, h: Digraph, lists: &[&[usize]]) -> Instance {
        let p = h.n();
        let costs = lists
            .iter()
            .map(|l| {
                (0..p)
                    .map(|a| {
                        if l.contains(&a) {
                            Cost::Finite(Rat::zero())
                        } else {
                            Cost::Infinite
                        }
                    })
                    .collect()
            })
            .collect();
        Instance::new(d, h, costs)
    }

    /// Exhaustive list-homomorphism enumeration for cross-checking.
    fn all_homs(inst: &Instance) -> Vec<Vec<usize>> {
        let n = inst.d.n();
        let p = inst.h.n();
        let mut out = Vec::new();
        let mut map = vec![0usize; n];
        let mut stack = vec![0usize];
        'outer: loop {
            let depth = stack.len() - 1;
            let a = stack[depth];
            if a >= p {
                stack.pop();
                if let Some(top) = stack.last_mut() {
                    *top += 1;
                    continue;
                }
                break;
            }
            map[depth] = a;
            let ok = inst.allows(depth, a)
                && inst.d.arcs().iter().all(|&(u, v)| {
                    u > depth || v > depth || inst.h.has_arc(map[u], map[v])
                });
            if !ok {
                stack[depth] += 1;
                continue 'outer;
            }
            if depth + 1 == n {
                out.push(map.clone());
                stack[depth] += 1;
            } else {
                stack.push(0);
            }
        }
        out
    }

    /// One arc mapped into the target {0->2, 0->3, 1->2} leaves tails on
    /// {0, 1} and heads on {2, 3}.
    #[test]
    fn single_arc_example() {
        let h = Digraph::from_arcs(4, &[(0, 2), (0, 3), (1, 2)]);
        let d = Digraph::from_arcs(2, &[(0, 1)]);
        let lists = arc_consistency(&zero_inst(d, h)).unwrap();
        assert_eq!(lists[0].iter().copied().collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(lists[1].iter().copied().collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn loop_arc_restricts_to_looped_targets() {
        let h = Digraph::from_arcs(3, &[(0, 0), (0, 1), (1, 2)]);
        let d = Digraph::from_arcs(1, &[(0, 0)]);
        let lists = arc_consistency(&zero_inst(d, h)).unwrap();
        assert_eq!(lists[0].iter().copied().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn empty_list_reported() {
        let h = Digraph::from_arcs(2, &[(0, 1)]);
        let d = Digraph::from_arcs(2, &[(0, 1), (1, 0)]);
        let err = arc_consistency(&zero_inst(d, h)).unwrap_err();
        assert!(matches!(err, EmptyLists::Vertex { .. }));
    }

    #[test]
    fn fixpoint_independent_of_arc_order() {
        let h = Digraph::from_arcs(4, &[(0, 2), (0, 3), (1, 2), (3, 1)]);
        let arcs = [(0, 1), (1, 2), (2, 0), (0, 3)];
        let d1 = Digraph::from_arcs(4, &arcs);
        let mut rev = arcs;
        rev.reverse();
        let d2 = Digraph::from_arcs(4, &rev);
        let l1 = arc_consistency(&zero_inst(d1, h.clone()));
        let l2 = arc_consistency(&zero_inst(d2, h));
        match (l1, l2) {
            (Ok(a), Ok(b)) => assert_eq!(a, b),
            (Err(_), Err(_)) => {}
            other => panic!("order-dependent outcome: {:?}", other),
        }
    }

    /// Every image used by some valid homomorphism survives pruning, and
    /// pruning reports empty only when no homomorphism exists.
    #[test]
    fn pruning_preserves_all_solutions() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for round in 0..60 {
            let n = rng.gen_range(2..5);
            let p = rng.gen_range(2..5);
            let mut d = Digraph::new(n);
            let mut h = Digraph::new(p);
            for u in 0..n {
                for v in 0..n {
                    if u != v && rng.gen_bool(0.5) {
                        d.add_arc(u, v);
                    }
                }
            }
            for a in 0..p {
                for b in 0..p {
                    if rng.gen_bool(0.4) {
                        h.add_arc(a, b);
                    }
                }
            }
            let inst = zero_inst(d, h);
            let homs = all_homs(&inst);
            let ac = arc_consistency(&inst);
            let pc = pair_consistency(&inst);
            match &ac {
                Ok(lists) => {
                    for f in &homs {
                        for (x, &a) in f.iter().enumerate() {
                            assert!(lists[x].contains(&a), "round {}: pruned used image", round);
                        }
                    }
                }
                Err(_) => assert!(homs.is_empty(), "round {}: false empty", round),
            }
            match &pc {
                Ok(res) => {
                    for f in &homs {
                        for (x, &a) in f.iter().enumerate() {
                            assert!(res.lists[x].contains(&a));
                            for (y, &b) in f.iter().enumerate() {
                                if x != y {
                                    assert!(res.table.contains(x, y, a, b));
                                }
                            }
                        }
                    }
                }
                Err(_) => assert!(homs.is_empty(), "round {}: false pair empty", round),
            }
        }
    }

    /// Pair consistency can detect infeasibility that arc consistency
    /// misses: three mutually adjacent vertices into a symmetric edge.
    #[test]
    fn pair_consistency_is_stronger() {
        let h = Digraph::from_arcs(2, &[(0, 1), (1, 0)]);
        let mut d = Digraph::new(3);
        for &(u, v) in &[(0, 1), (1, 2), (2, 0)] {
            d.add_arc(u, v);
            d.add_arc(v, u);
        }
        let inst = zero_inst(d, h);
        assert!(arc_consistency(&inst).is_ok());
        assert!(pair_consistency(&inst).is_err());
    }

    #[test]
    fn costs_beyond_lists_ignored() {
        let h = Digraph::from_arcs(3, &[(0, 1), (1, 2)]);
        let d = Digraph::from_arcs(2, &[(0, 1)]);
        let mut inst = with_lists(d, h, &[&[0, 1], &[1, 2]]);
        inst.costs[0][0] = Cost::Finite(rat_int(7));
        let lists = arc_consistency(&inst).unwrap();
        assert!(lists[0].contains(&0) && lists[0].contains(&1));
        assert!(lists[1].contains(&1) && lists[1].contains(&2));
    }
}
