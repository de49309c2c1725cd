//! Recognition and construction of vertex orderings on target digraphs.
//!
//! A min-ordering of a digraph `H` is a linear order on its vertices such
//! that whenever `uv` and `u'v'` are arcs with `u` before `u'` and `v'`
//! before `v`, the arc `uv'` is also present. A max-ordering requires the
//! arc `u'v` instead, and a min-max-ordering requires both. A k-min-ordering
//! partitions the vertices into `k` cyclic levels (a homomorphism to the
//! directed k-cycle) and imposes the min condition between every pair of
//! circularly consecutive levels.
//!
//! This module verifies and searches for such orderings, completes a
//! min-ordered digraph into a min-max-ordered one by adding extension arcs,
//! derives the semilattice/majority polymorphism pair that a k-min-ordering
//! induces, and detects the two obstructions to tractability: invertible
//! pairs and digraph asteroidal triples.

use crate::model::{Digraph, Ordering};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use std::collections::{BTreeSet, HashMap, VecDeque};
use thiserror::Error;

/// Largest target size accepted by the ordering and invertible-pair searches.
pub const SEARCH_SIZE_LIMIT: usize = 12;

/// Largest target size accepted by the asteroidal-triple search.
pub const DAT_SIZE_LIMIT: usize = 8;

/// Cap on the number of per-component level rotations tried in a k-min search.
const ROTATION_LIMIT: usize = 1_000_000;

/// Which closure condition an ordering is checked against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderingRule {
    Min,
    Max,
    MinMax,
}

/// Which kind of ordering a search should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchTarget {
    /// Linear min-ordering.
    Min,
    /// Linear min-max-ordering.
    MinMax,
    /// Leveled min-ordering over the given number of cyclic levels.
    KMin(usize),
}

/// Witness that an ordering fails one of the closure conditions.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OrderingViolation {
    #[error("arc {tail}->{head} goes from level {tail_level} to level {head_level} instead of the next level")]
    LevelJump {
        tail: usize,
        head: usize,
        tail_level: usize,
        head_level: usize,
    },
    #[error("{rule} condition fails for arcs {first:?} and {second:?}: arc {required:?} is missing")]
    MissingArc {
        first: (usize, usize),
        second: (usize, usize),
        required: (usize, usize),
        rule: &'static str,
    },
}

/// Input exceeds the hard cap of an exhaustive search.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{what} supports at most {limit} vertices, got {size}")]
pub struct SizeLimitExceeded {
    pub what: &'static str,
    pub size: usize,
    pub limit: usize,
}

/// Checks the closure condition of `rule` for `ord` on `h`.
///
/// For a leveled ordering every arc must go from its tail's level to the
/// circularly next level, and the condition is imposed on every pair of arcs
/// spanning the same consecutive level pair.
pub fn verify_min_ordering(
    h: &Digraph,
    ord: &Ordering,
    rule: OrderingRule,
) -> Result<(), OrderingViolation> {
    assert_eq!(h.n(), ord.p(), "ordering size must match the digraph");
    let k = ord.k();
    if k > 1 {
        for &(u, v) in h.arcs() {
            if (ord.level(u) + 1) % k != ord.level(v) {
                return Err(OrderingViolation::LevelJump {
                    tail: u,
                    head: v,
                    tail_level: ord.level(u),
                    head_level: ord.level(v),
                });
            }
        }
    }
    let check_min = matches!(rule, OrderingRule::Min | OrderingRule::MinMax);
    let check_max = matches!(rule, OrderingRule::Max | OrderingRule::MinMax);
    for &(u, v) in h.arcs() {
        for &(u2, v2) in h.arcs() {
            if k > 1 && ord.level(u) != ord.level(u2) {
                continue;
            }
            if ord.pos(u) < ord.pos(u2) && ord.pos(v2) < ord.pos(v) {
                if check_min && !h.has_arc(u, v2) {
                    return Err(OrderingViolation::MissingArc {
                        first: (u, v),
                        second: (u2, v2),
                        required: (u, v2),
                        rule: "min",
                    });
                }
                if check_max && !h.has_arc(u2, v) {
                    return Err(OrderingViolation::MissingArc {
                        first: (u, v),
                        second: (u2, v2),
                        required: (u2, v),
                        rule: "max",
                    });
                }
            }
        }
    }
    Ok(())
}

/// Assigns a level in `0..k` to every vertex so that each arc advances the
/// level by one modulo `k`, or `None` if no such assignment exists.
///
/// Each weak component is rooted at its smallest vertex, which gets level 0.
pub fn assign_cycle_levels(g: &Digraph, k: usize) -> Option<Vec<usize>> {
    assert!(k >= 1);
    let n = g.n();
    let mut level = vec![usize::MAX; n];
    for comp in g.weak_components() {
        let root = comp[0];
        level[root] = 0;
        let mut queue = VecDeque::from([root]);
        while let Some(x) = queue.pop_front() {
            for &y in g.out_neighbors(x) {
                let want = (level[x] + 1) % k;
                if level[y] == usize::MAX {
                    level[y] = want;
                    queue.push_back(y);
                } else if level[y] != want {
                    return None;
                }
            }
            for &y in g.in_neighbors(x) {
                let want = (level[x] + k - 1) % k;
                if level[y] == usize::MAX {
                    level[y] = want;
                    queue.push_back(y);
                } else if level[y] != want {
                    return None;
                }
            }
        }
    }
    Some(level)
}

/// Searches for an ordering of `h` of the requested kind.
///
/// Returns the lexicographically smallest permutation admitting the ordering,
/// or `None` when no ordering of that kind exists. The search is exhaustive
/// and refuses targets larger than [`SEARCH_SIZE_LIMIT`].
pub fn find_min_ordering(
    h: &Digraph,
    target: SearchTarget,
) -> Result<Option<Ordering>, SizeLimitExceeded> {
    let n = h.n();
    if n > SEARCH_SIZE_LIMIT {
        return Err(SizeLimitExceeded {
            what: "the ordering search",
            size: n,
            limit: SEARCH_SIZE_LIMIT,
        });
    }
    match target {
        SearchTarget::Min => {
            Ok(search_order(h, OrderingRule::Min, 1, None).map(Ordering::linear))
        }
        SearchTarget::MinMax => {
            Ok(search_order(h, OrderingRule::MinMax, 1, None).map(Ordering::linear))
        }
        SearchTarget::KMin(k) => {
            assert!(k >= 1, "level count must be positive");
            let base = match assign_cycle_levels(h, k) {
                Some(base) => base,
                None => return Ok(None),
            };
            let comps = h.weak_components();
            let mut total = 1usize;
            for _ in &comps {
                total = total.saturating_mul(k);
                if total > ROTATION_LIMIT {
                    return Err(SizeLimitExceeded {
                        what: "the level-rotation enumeration",
                        size: total,
                        limit: ROTATION_LIMIT,
                    });
                }
            }
            let mut best: Option<(Vec<usize>, Vec<usize>)> = None;
            let mut rot = vec![0usize; comps.len()];
            loop {
                let mut levels = base.clone();
                for (c, comp) in comps.iter().enumerate() {
                    for &v in comp {
                        levels[v] = (base[v] + rot[c]) % k;
                    }
                }
                if let Some(perm) = search_order(h, OrderingRule::Min, k, Some(&levels)) {
                    let better = match &best {
                        Some((b, _)) => perm < *b,
                        None => true,
                    };
                    if better {
                        best = Some((perm, levels));
                    }
                }
                let mut idx = comps.len();
                while idx > 0 && rot[idx - 1] + 1 == k {
                    rot[idx - 1] = 0;
                    idx -= 1;
                }
                if idx == 0 {
                    break;
                }
                rot[idx - 1] += 1;
            }
            Ok(best.map(|(perm, levels)| Ordering::leveled(perm, levels, k)))
        }
    }
}

/// Searches for a leveled min-ordering with a fixed level assignment.
///
/// Used for bipartite doubles, where the two sides are the levels. Returns
/// `None` when some arc does not advance levels by one modulo `k` or when no
/// order of the vertices within the levels satisfies the min condition.
pub fn find_min_ordering_with_levels(
    h: &Digraph,
    levels: &[usize],
    k: usize,
) -> Result<Option<Ordering>, SizeLimitExceeded> {
    assert!(k >= 1);
    assert_eq!(levels.len(), h.n());
    assert!(levels.iter().all(|&l| l < k));
    if h.n() > SEARCH_SIZE_LIMIT {
        return Err(SizeLimitExceeded {
            what: "the ordering search",
            size: h.n(),
            limit: SEARCH_SIZE_LIMIT,
        });
    }
    if h.arcs()
        .iter()
        .any(|&(u, v)| (levels[u] + 1) % k != levels[v])
    {
        return Ok(None);
    }
    Ok(search_order(h, OrderingRule::Min, k, Some(levels))
        .map(|perm| Ordering::leveled(perm, levels.to_vec(), k)))
}

fn search_order(
    h: &Digraph,
    rule: OrderingRule,
    k: usize,
    levels: Option<&[usize]>,
) -> Option<Vec<usize>> {
    let n = h.n();
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k];
    for v in 0..n {
        let l = levels.map_or(0, |ls| ls[v]);
        groups[l].push(v);
    }
    let mut pos = vec![usize::MAX; n];
    let mut perm = Vec::with_capacity(n);
    if place_next(h, rule, k, levels, &groups, &mut pos, &mut perm) {
        Some(perm)
    } else {
        None
    }
}

fn place_next(
    h: &Digraph,
    rule: OrderingRule,
    k: usize,
    levels: Option<&[usize]>,
    groups: &[Vec<usize>],
    pos: &mut Vec<usize>,
    perm: &mut Vec<usize>,
) -> bool {
    if perm.len() == pos.len() {
        return true;
    }
    let group = groups
        .iter()
        .find(|g| g.iter().any(|&v| pos[v] == usize::MAX))
        .expect("an unplaced vertex exists");
    for &v in group.iter() {
        if pos[v] != usize::MAX {
            continue;
        }
        pos[v] = perm.len();
        perm.push(v);
        if prefix_ok(h, rule, k, levels, pos, v)
            && place_next(h, rule, k, levels, groups, pos, perm)
        {
            return true;
        }
        perm.pop();
        pos[v] = usize::MAX;
    }
    false
}

/// Checks every closure implication whose four endpoints are all placed and
/// that involves the just-placed vertex.
fn prefix_ok(
    h: &Digraph,
    rule: OrderingRule,
    k: usize,
    levels: Option<&[usize]>,
    pos: &[usize],
    just: usize,
) -> bool {
    let check_min = matches!(rule, OrderingRule::Min | OrderingRule::MinMax);
    let check_max = matches!(rule, OrderingRule::Max | OrderingRule::MinMax);
    for &(u, v) in h.arcs() {
        for &(u2, v2) in h.arcs() {
            if u != just && v != just && u2 != just && v2 != just {
                continue;
            }
            if pos[u] == usize::MAX || pos[v] == usize::MAX {
                continue;
            }
            if pos[u2] == usize::MAX || pos[v2] == usize::MAX {
                continue;
            }
            if k > 1 {
                let ls = levels.expect("leveled search carries levels");
                if ls[u] != ls[u2] {
                    continue;
                }
            }
            if pos[u] < pos[u2] && pos[v2] < pos[v] {
                if check_min && !h.has_arc(u, v2) {
                    return false;
                }
                if check_max && !h.has_arc(u2, v) {
                    return false;
                }
            }
        }
    }
    true
}

/// A min-ordered target together with the extension arcs that complete it
/// into a min-max-ordered one.
///
/// An extension arc `(a, b)` is a level-compatible non-arc such that `a` has
/// an out-neighbour before `b` and `b` has an in-neighbour before `a`. The
/// completed digraph keeps the original ordering and satisfies both closure
/// conditions; every extension arc moreover lacks either an in-neighbour of
/// its head after its tail or an out-neighbour of its tail after its head.
#[derive(Debug, Clone)]
pub struct Completion {
    hprime: Digraph,
    eprime: Vec<(usize, usize)>,
    eprime_set: BTreeSet<(usize, usize)>,
    e_out_pos: Vec<Vec<usize>>,
    e_in_pos: Vec<Vec<usize>>,
    hp_out_pos: Vec<Vec<usize>>,
    hp_in_pos: Vec<Vec<usize>>,
}

impl Completion {
    /// The original digraph plus all extension arcs.
    pub fn hprime(&self) -> &Digraph {
        &self.hprime
    }

    /// Extension arcs sorted by (tail position, head position).
    pub fn eprime(&self) -> &[(usize, usize)] {
        &self.eprime
    }

    pub fn is_extension_arc(&self, a: usize, b: usize) -> bool {
        self.eprime_set.contains(&(a, b))
    }

    /// Position of the first out-neighbour of `v` in the completed digraph.
    pub fn lplus_pos(&self, v: usize) -> Option<usize> {
        self.hp_out_pos[v].first().copied()
    }

    /// Position of the first in-neighbour of `v` in the completed digraph.
    pub fn lminus_pos(&self, v: usize) -> Option<usize> {
        self.hp_in_pos[v].first().copied()
    }

    /// Positions of the original out-neighbours of `v`, ascending.
    pub fn e_out_positions(&self, v: usize) -> &[usize] {
        &self.e_out_pos[v]
    }

    /// Positions of the original in-neighbours of `v`, ascending.
    pub fn e_in_positions(&self, v: usize) -> &[usize] {
        &self.e_in_pos[v]
    }

    /// Position of the first original in-neighbour of `v` strictly after `pos`.
    pub fn first_e_in_after(&self, v: usize, pos: usize) -> Option<usize> {
        let list = &self.e_in_pos[v];
        list.get(list.partition_point(|&q| q <= pos)).copied()
    }

    /// Position of the first original out-neighbour of `v` strictly after `pos`.
    pub fn first_e_out_after(&self, v: usize, pos: usize) -> Option<usize> {
        let list = &self.e_out_pos[v];
        list.get(list.partition_point(|&q| q <= pos)).copied()
    }

    pub fn has_e_in_after(&self, v: usize, pos: usize) -> bool {
        self.first_e_in_after(v, pos).is_some()
    }

    pub fn has_e_out_after(&self, v: usize, pos: usize) -> bool {
        self.first_e_out_after(v, pos).is_some()
    }
}

/// Completes a min-ordered digraph by adding every extension arc.
pub fn build_completion(h: &Digraph, ord: &Ordering) -> Result<Completion, OrderingViolation> {
    verify_min_ordering(h, ord, OrderingRule::Min)?;
    let p = h.n();
    let k = ord.k();
    let e_out_pos: Vec<Vec<usize>> = (0..p)
        .map(|v| sorted_positions(ord, h.out_neighbors(v)))
        .collect();
    let e_in_pos: Vec<Vec<usize>> = (0..p)
        .map(|v| sorted_positions(ord, h.in_neighbors(v)))
        .collect();
    let mut eprime = Vec::new();
    for a in 0..p {
        for b in 0..p {
            if (ord.level(a) + 1) % k != ord.level(b) || h.has_arc(a, b) {
                continue;
            }
            let out_before = e_out_pos[a].first().is_some_and(|&q| q < ord.pos(b));
            let in_before = e_in_pos[b].first().is_some_and(|&q| q < ord.pos(a));
            if out_before && in_before {
                eprime.push((a, b));
            }
        }
    }
    eprime.sort_by_key(|&(a, b)| (ord.pos(a), ord.pos(b)));
    let mut hprime = h.clone();
    for &(a, b) in &eprime {
        hprime.add_arc(a, b);
    }
    verify_min_ordering(&hprime, ord, OrderingRule::MinMax)
        .expect("the completed digraph must satisfy both closure conditions");
    let hp_out_pos: Vec<Vec<usize>> = (0..p)
        .map(|v| sorted_positions(ord, hprime.out_neighbors(v)))
        .collect();
    let hp_in_pos: Vec<Vec<usize>> = (0..p)
        .map(|v| sorted_positions(ord, hprime.in_neighbors(v)))
        .collect();
    let eprime_set: BTreeSet<(usize, usize)> = eprime.iter().copied().collect();
    let comp = Completion {
        hprime,
        eprime,
        eprime_set,
        e_out_pos,
        e_in_pos,
        hp_out_pos,
        hp_in_pos,
    };
    for &(a, b) in &comp.eprime {
        assert!(
            !comp.has_e_in_after(b, ord.pos(a)) || !comp.has_e_out_after(a, ord.pos(b)),
            "an extension arc cannot have both a later in-neighbour and a later out-neighbour"
        );
    }
    Ok(comp)
}

fn sorted_positions(ord: &Ordering, vs: &[usize]) -> Vec<usize> {
    let mut ps: Vec<usize> = vs.iter().map(|&v| ord.pos(v)).collect();
    ps.sort_unstable();
    ps
}

/// The binary and ternary conservative operations induced by a k-min-ordering.
///
/// The binary operation is a semilattice within each level (the earlier of
/// its arguments) and the first projection across levels. The ternary
/// operation is a majority on every cross-level pair of arguments.
#[derive(Debug, Clone)]
pub struct Polymorphisms {
    binary: Vec<Vec<usize>>,
    ternary: Vec<Vec<Vec<usize>>>,
}

impl Polymorphisms {
    pub fn binary(&self, x: usize, y: usize) -> usize {
        self.binary[x][y]
    }

    pub fn ternary(&self, x: usize, y: usize, z: usize) -> usize {
        self.ternary[x][y][z]
    }
}

/// Witness that a claimed operation pair fails one of its properties.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolymorphismViolation {
    #[error("operation output {out} is not among its arguments {args:?}")]
    NotConservative { args: Vec<usize>, out: usize },
    #[error("binary operation maps arcs {first:?} and {second:?} to the non-arc {image:?}")]
    BinaryArc {
        first: (usize, usize),
        second: (usize, usize),
        image: (usize, usize),
    },
    #[error("ternary operation maps arcs {first:?}, {second:?} and {third:?} to the non-arc {image:?}")]
    TernaryArc {
        first: (usize, usize),
        second: (usize, usize),
        third: (usize, usize),
        image: (usize, usize),
    },
    #[error("ternary operation is not a majority on the cross-level pair ({x}, {y})")]
    NotMajority { x: usize, y: usize },
    #[error("binary operation is not a semilattice within a level on arguments ({x}, {y}, {z})")]
    NotSemilattice { x: usize, y: usize, z: usize },
}

/// Builds the operation pair induced by a k-min-ordering of `h`.
pub fn build_kmin_polymorphisms(h: &Digraph, ord: &Ordering) -> Polymorphisms {
    verify_min_ordering(h, ord, OrderingRule::Min)
        .expect("polymorphisms require a verified ordering");
    let p = h.n();
    let earlier = |x: usize, y: usize| if ord.pos(x) <= ord.pos(y) { x } else { y };
    let mut binary = vec![vec![0usize; p]; p];
    for x in 0..p {
        for y in 0..p {
            binary[x][y] = if ord.level(x) == ord.level(y) {
                earlier(x, y)
            } else {
                x
            };
        }
    }
    let mut ternary = vec![vec![vec![0usize; p]; p]; p];
    for x in 0..p {
        for y in 0..p {
            for z in 0..p {
                let (lx, ly, lz) = (ord.level(x), ord.level(y), ord.level(z));
                ternary[x][y][z] = if lx == ly && ly == lz {
                    x
                } else if lx == ly {
                    if x == y { x } else { earlier(x, y) }
                } else if lx == lz {
                    if x == z { x } else { earlier(x, z) }
                } else if ly == lz {
                    if y == z { y } else { earlier(y, z) }
                } else {
                    x
                };
            }
        }
    }
    Polymorphisms { binary, ternary }
}

/// Exhaustively checks that the operation pair preserves arcs, is
/// conservative, acts as a semilattice within each level, and acts as a
/// majority on cross-level argument pairs.
pub fn verify_polymorphisms(
    h: &Digraph,
    ord: &Ordering,
    poly: &Polymorphisms,
) -> Result<(), PolymorphismViolation> {
    let p = h.n();
    for x in 0..p {
        for y in 0..p {
            let out = poly.binary(x, y);
            if out != x && out != y {
                return Err(PolymorphismViolation::NotConservative {
                    args: vec![x, y],
                    out,
                });
            }
            for z in 0..p {
                let out = poly.ternary(x, y, z);
                if out != x && out != y && out != z {
                    return Err(PolymorphismViolation::NotConservative {
                        args: vec![x, y, z],
                        out,
                    });
                }
            }
        }
    }
    for &(u, v) in h.arcs() {
        for &(u2, v2) in h.arcs() {
            let image = (poly.binary(u, u2), poly.binary(v, v2));
            if !h.has_arc(image.0, image.1) {
                return Err(PolymorphismViolation::BinaryArc {
                    first: (u, v),
                    second: (u2, v2),
                    image,
                });
            }
            for &(u3, v3) in h.arcs() {
                let image = (poly.ternary(u, u2, u3), poly.ternary(v, v2, v3));
                if !h.has_arc(image.0, image.1) {
                    return Err(PolymorphismViolation::TernaryArc {
                        first: (u, v),
                        second: (u2, v2),
                        third: (u3, v3),
                        image,
                    });
                }
            }
        }
    }
    for x in 0..p {
        for y in 0..p {
            if ord.level(x) == ord.level(y) {
                continue;
            }
            if poly.ternary(x, x, y) != x
                || poly.ternary(x, y, x) != x
                || poly.ternary(y, x, x) != x
            {
                return Err(PolymorphismViolation::NotMajority { x, y });
            }
        }
    }
    for x in 0..p {
        for y in 0..p {
            for z in 0..p {
                if ord.level(x) != ord.level(y) || ord.level(y) != ord.level(z) {
                    continue;
                }
                let f = |a: usize, b: usize| poly.binary(a, b);
                if f(x, y) != f(y, x) || f(x, x) != x || f(x, f(y, z)) != f(f(x, y), z) {
                    return Err(PolymorphismViolation::NotSemilattice { x, y, z });
                }
            }
        }
    }
    Ok(())
}

fn pair_arc(h: &Digraph, a1: usize, a2: usize, b1: usize, b2: usize) -> bool {
    (h.has_arc(a1, b1) && h.has_arc(a2, b2) && !h.has_arc(a1, b2))
        || (h.has_arc(b1, a1) && h.has_arc(b2, a2) && !h.has_arc(b2, a1))
}

/// Lists the invertible pairs of `h` in canonical form `(x, y)` with `x < y`.
///
/// A pair is invertible when `(x, y)` and `(y, x)` lie in the same strongly
/// connected component of the pair digraph, whose arcs connect `(a1, a2)` to
/// `(b1, b2)` when both coordinates step forward along arcs of `h` with
/// `a1 b2` absent, or both step backward with `b2 a1` absent. Any invertible
/// pair rules out a min-ordering.
pub fn invertible_pairs(h: &Digraph) -> Result<Vec<(usize, usize)>, SizeLimitExceeded> {
    let p = h.n();
    if p > SEARCH_SIZE_LIMIT {
        return Err(SizeLimitExceeded {
            what: "the invertible-pair search",
            size: p,
            limit: SEARCH_SIZE_LIMIT,
        });
    }
    let mut g = DiGraph::<(), ()>::new();
    let nodes: Vec<_> = (0..p * p).map(|_| g.add_node(())).collect();
    for a1 in 0..p {
        for a2 in 0..p {
            if a1 == a2 {
                continue;
            }
            for b1 in 0..p {
                for b2 in 0..p {
                    if b1 == b2 {
                        continue;
                    }
                    if pair_arc(h, a1, a2, b1, b2) {
                        g.add_edge(nodes[a1 * p + a2], nodes[b1 * p + b2], ());
                    }
                }
            }
        }
    }
    let mut comp = vec![0usize; p * p];
    for (c, members) in tarjan_scc(&g).into_iter().enumerate() {
        for node in members {
            comp[node.index()] = c;
        }
    }
    let mut pairs = Vec::new();
    for x in 0..p {
        for y in x + 1..p {
            if comp[x * p + y] == comp[y * p + x] {
                pairs.push((x, y));
            }
        }
    }
    Ok(pairs)
}

/// A digraph asteroidal triple together with the walks certifying it.
///
/// Each of the three walks runs in the triple digraph from one arrangement
/// of the triple to the tuple `(alpha, beta, beta)`, where `(alpha, beta)`
/// is an invertible pair.
#[derive(Debug, Clone)]
pub struct DatWitness {
    pub triple: (usize, usize, usize),
    pub alpha: usize,
    pub beta: usize,
    pub paths: [Vec<(usize, usize, usize)>; 3],
}

fn triple_arc(h: &Digraph, s: (usize, usize, usize), t: (usize, usize, usize)) -> bool {
    let fwd = h.has_arc(s.0, t.0)
        && h.has_arc(s.1, t.1)
        && h.has_arc(s.2, t.2)
        && !h.has_arc(s.0, t.1)
        && !h.has_arc(s.0, t.2);
    let bwd = h.has_arc(t.0, s.0)
        && h.has_arc(t.1, s.1)
        && h.has_arc(t.2, s.2)
        && !h.has_arc(t.1, s.0)
        && !h.has_arc(t.2, s.0);
    fwd || bwd
}

/// Searches `h` for a digraph asteroidal triple.
///
/// Returns the witness for the lexicographically first triple `(a, b, c)` of
/// pairwise distinct vertices such that the triple digraph contains walks
/// from `(a, b, c)`, `(b, a, c)` and `(c, a, b)` to a common `(alpha, beta,
/// beta)` with `(alpha, beta)` invertible. A hit certifies that no ordering
/// of any level count exists and that list homomorphism to `h` is hard.
pub fn detect_dat(h: &Digraph) -> Result<Option<DatWitness>, SizeLimitExceeded> {
    let p = h.n();
    if p > DAT_SIZE_LIMIT {
        return Err(SizeLimitExceeded {
            what: "the asteroidal-triple search",
            size: p,
            limit: DAT_SIZE_LIMIT,
        });
    }
    if p < 3 {
        return Ok(None);
    }
    let inv = invertible_pairs(h).expect("the pair search accepts anything the triple search does");
    let inv_set: BTreeSet<(usize, usize)> = inv
        .iter()
        .flat_map(|&(x, y)| [(x, y), (y, x)])
        .collect();
    if inv_set.is_empty() {
        return Ok(None);
    }
    let enc = |t: (usize, usize, usize)| (t.0 * p + t.1) * p + t.2;
    let dec = |i: usize| (i / (p * p), (i / p) % p, i % p);
    let total = p * p * p;
    let mut adj = vec![Vec::new(); total];
    for s in 0..total {
        for t in 0..total {
            if triple_arc(h, dec(s), dec(t)) {
                adj[s].push(t);
            }
        }
    }
    let mut memo: HashMap<usize, Vec<usize>> = HashMap::new();
    let ensure_bfs = |memo: &mut HashMap<usize, Vec<usize>>, start: usize| {
        if memo.contains_key(&start) {
            return;
        }
        let mut parent = vec![usize::MAX; total];
        parent[start] = start;
        let mut queue = VecDeque::from([start]);
        while let Some(x) = queue.pop_front() {
            for &y in &adj[x] {
                if parent[y] == usize::MAX {
                    parent[y] = x;
                    queue.push_back(y);
                }
            }
        }
        memo.insert(start, parent);
    };
    for a in 0..p {
        for b in 0..p {
            for c in 0..p {
                if a == b || a == c || b == c {
                    continue;
                }
                let starts = [enc((a, b, c)), enc((b, a, c)), enc((c, a, b))];
                for &s in &starts {
                    ensure_bfs(&mut memo, s);
                }
                for &(alpha, beta) in &inv_set {
                    let t = enc((alpha, beta, beta));
                    if starts.iter().all(|s| memo[s][t] != usize::MAX) {
                        let walk = |s: usize| {
                            let parent = &memo[&s];
                            let mut path = vec![t];
                            let mut x = t;
                            while x != s {
                                x = parent[x];
                                path.push(x);
                            }
                            path.reverse();
                            path.into_iter().map(dec).collect::<Vec<_>>()
                        };
                        return Ok(Some(DatWitness {
                            triple: (a, b, c),
                            alpha,
                            beta,
                            paths: [walk(starts[0]), walk(starts[1]), walk(starts[2])],
                        }));
                    }
                }
            }
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn digraph(n: usize, arcs: &[(usize, usize)]) -> Digraph {
        Digraph::from_arcs(n, arcs)
    }

    fn three_cycle() -> Digraph {
        digraph(3, &[(0, 1), (1, 2), (2, 0)])
    }

    fn reflexive_square() -> Digraph {
        let mut arcs = vec![(0, 0), (1, 1), (2, 2), (3, 3)];
        for &(u, v) in &[(0, 1), (1, 2), (2, 3), (3, 0)] {
            arcs.push((u, v));
            arcs.push((v, u));
        }
        digraph(4, &arcs)
    }

    #[test]
    fn min_violation_reports_the_missing_arc() {
        let h = digraph(4, &[(0, 3), (1, 2)]);
        let bad = Ordering::linear(vec![0, 1, 2, 3]);
        assert_eq!(
            verify_min_ordering(&h, &bad, OrderingRule::Min),
            Err(OrderingViolation::MissingArc {
                first: (0, 3),
                second: (1, 2),
                required: (0, 2),
                rule: "min",
            })
        );
        let good = Ordering::linear(vec![1, 0, 2, 3]);
        assert_eq!(verify_min_ordering(&h, &good, OrderingRule::Min), Ok(()));
    }

    #[test]
    fn staircase_is_min_max() {
        let h = digraph(4, &[(0, 2), (0, 3), (1, 3)]);
        let ord = Ordering::linear(vec![0, 1, 2, 3]);
        assert_eq!(verify_min_ordering(&h, &ord, OrderingRule::MinMax), Ok(()));
    }

    #[test]
    fn three_cycle_needs_three_levels() {
        let h = three_cycle();
        assert_eq!(find_min_ordering(&h, SearchTarget::Min).unwrap(), None);
        assert_eq!(find_min_ordering(&h, SearchTarget::KMin(2)).unwrap(), None);
        let ord = find_min_ordering(&h, SearchTarget::KMin(3)).unwrap().unwrap();
        assert_eq!(ord.k(), 3);
        assert_eq!(verify_min_ordering(&h, &ord, OrderingRule::Min), Ok(()));
        assert_eq!(assign_cycle_levels(&h, 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(assign_cycle_levels(&h, 2), None);
    }

    #[test]
    fn single_level_search_matches_the_linear_one() {
        let h = digraph(4, &[(0, 2), (0, 3), (1, 2)]);
        let linear = find_min_ordering(&h, SearchTarget::Min).unwrap().unwrap();
        let leveled = find_min_ordering(&h, SearchTarget::KMin(1)).unwrap().unwrap();
        assert_eq!(linear.perm(), leveled.perm());
        assert_eq!(leveled.k(), 1);
    }

    #[test]
    fn completion_adds_the_forced_arc() {
        let h = digraph(4, &[(0, 2), (0, 3), (1, 2)]);
        let ord = Ordering::linear(vec![0, 1, 2, 3]);
        let comp = build_completion(&h, &ord).unwrap();
        assert_eq!(comp.eprime(), &[(1, 3)]);
        assert!(comp.is_extension_arc(1, 3));
        assert!(comp.hprime().has_arc(1, 3));
        assert_eq!(comp.hprime().arc_count(), 4);
        assert_eq!(comp.lplus_pos(0), Some(2));
        assert_eq!(comp.lminus_pos(3), Some(0));
        assert_eq!(comp.first_e_in_after(3, 1), None);
        assert_eq!(comp.first_e_out_after(1, 3), None);
        assert_eq!(comp.first_e_in_after(2, 0), Some(1));
    }

    #[test]
    fn completion_rejects_a_bad_ordering() {
        let h = digraph(4, &[(0, 3), (1, 2)]);
        let ord = Ordering::linear(vec![0, 1, 2, 3]);
        assert!(build_completion(&h, &ord).is_err());
    }

    #[test]
    fn bipartite_double_search() {
        let double = |n: usize, edges: &[(usize, usize)]| {
            let mut arcs = Vec::new();
            for &(u, v) in edges {
                arcs.push((u, n + v));
                arcs.push((v, n + u));
            }
            digraph(2 * n, &arcs)
        };
        let path = double(3, &[(0, 1), (1, 2)]);
        let levels: Vec<usize> = (0..6).map(|v| usize::from(v >= 3)).collect();
        let ord = find_min_ordering_with_levels(&path, &levels, 2)
            .unwrap()
            .expect("the double of a path is orderable");
        assert_eq!(verify_min_ordering(&path, &ord, OrderingRule::Min), Ok(()));
        let c5 = double(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]);
        let levels: Vec<usize> = (0..10).map(|v| usize::from(v >= 5)).collect();
        assert_eq!(find_min_ordering_with_levels(&c5, &levels, 2).unwrap(), None);
    }

    #[test]
    fn ordered_targets_have_no_invertible_pairs() {
        for h in [
            digraph(4, &[(0, 2), (0, 3), (1, 2)]),
            digraph(4, &[(0, 2), (0, 3), (1, 3)]),
            three_cycle(),
        ] {
            assert_eq!(invertible_pairs(&h).unwrap(), Vec::new());
        }
        assert!(!invertible_pairs(&reflexive_square()).unwrap().is_empty());
    }

    #[test]
    fn size_limits_are_enforced() {
        let big = digraph(13, &[]);
        assert!(find_min_ordering(&big, SearchTarget::Min).is_err());
        assert!(invertible_pairs(&big).is_err());
        assert!(detect_dat(&digraph(9, &[])).is_err());
    }

    #[test]
    fn reflexive_square_has_an_asteroidal_triple() {
        let h = reflexive_square();
        let w = detect_dat(&h).unwrap().expect("the reflexive square is hard");
        let (a, b, c) = w.triple;
        assert!(a != b && b != c && a != c);
        let inv: BTreeSet<(usize, usize)> = invertible_pairs(&h)
            .unwrap()
            .into_iter()
            .flat_map(|(x, y)| [(x, y), (y, x)])
            .collect();
        assert!(inv.contains(&(w.alpha, w.beta)));
        let expected_starts = [(a, b, c), (b, a, c), (c, a, b)];
        for (path, start) in w.paths.iter().zip(expected_starts) {
            assert_eq!(*path.first().unwrap(), start);
            assert_eq!(*path.last().unwrap(), (w.alpha, w.beta, w.beta));
            for pair in path.windows(2) {
                assert!(triple_arc(&h, pair[0], pair[1]));
            }
        }
    }

    #[test]
    fn tractable_targets_have_no_asteroidal_triple() {
        assert!(detect_dat(&three_cycle()).unwrap().is_none());
        let reflexive_path = digraph(
            3,
            &[(0, 0), (1, 1), (2, 2), (0, 1), (1, 0), (1, 2), (2, 1)],
        );
        assert!(detect_dat(&reflexive_path).unwrap().is_none());
    }

    #[test]
    fn leveled_polymorphisms_verify_and_match_the_tables() {
        let h = digraph(
            9,
            &[(0, 3), (1, 3), (0, 4), (3, 6), (4, 7)],
        );
        let levels = vec![0, 0, 0, 1, 1, 1, 2, 2, 2];
        let ord = Ordering::leveled((0..9).collect(), levels, 3);
        assert_eq!(verify_min_ordering(&h, &ord, OrderingRule::Min), Ok(()));
        let poly = build_kmin_polymorphisms(&h, &ord);
        assert_eq!(verify_polymorphisms(&h, &ord, &poly), Ok(()));
        assert_eq!(poly.binary(0, 1), 0);
        assert_eq!(poly.binary(1, 0), 0);
        assert_eq!(poly.binary(3, 0), 3);
        assert_eq!(poly.ternary(4, 3, 4), 4);
        assert_eq!(poly.ternary(0, 3, 3), 3);
        assert_eq!(poly.ternary(0, 1, 3), 0);
        assert_eq!(poly.ternary(3, 0, 1), 0);
    }

    #[test]
    fn cycle_polymorphisms_verify() {
        let h = three_cycle();
        let ord = find_min_ordering(&h, SearchTarget::KMin(3)).unwrap().unwrap();
        let poly = build_kmin_polymorphisms(&h, &ord);
        assert_eq!(verify_polymorphisms(&h, &ord, &poly), Ok(()));
    }
}
