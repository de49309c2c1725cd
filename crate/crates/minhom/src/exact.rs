//! Ground-truth oracles: exhaustive search for minimum-cost homomorphisms,
//! enumeration of the integer solutions of a built system, and the greedy
//! list homomorphism that an ordered target always admits.
//!
//! These paths are deliberately independent of the relaxation pipeline so
//! that their answers can be compared against it. Budgets are computed up
//! front from the instance shape; oversized inputs are refused rather than
//! searched.

use crate::consistency::{arc_consistency, arc_consistency_on, EmptyLists};
use crate::lp::LpModel;
use crate::model::{eval_cost, rat_int, validate_hom, Homomorphism, Instance, Ordering, Rat};
use crate::orderings::{verify_min_ordering, OrderingRule};
use std::collections::BTreeSet;
use thiserror::Error;

/// Default cap on the number of list-respecting assignments to search.
pub const SEARCH_BUDGET: u128 = 10_000_000;

/// Cap on `|V(D)| * |V(H)|` for integer-solution enumeration.
pub const ENUMERATION_CELL_LIMIT: u128 = 30;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("problem size {size} exceeds the supported budget of {budget}")]
pub struct SizeLimit {
    pub size: u128,
    pub budget: u128,
}

/// Arc-consistent lists as position-ordered vectors, vertices ordered for
/// search by decreasing degree. Returns `None` when consistency empties a
/// list, i.e. no homomorphism exists.
struct SearchPrep {
    lists: Vec<Vec<usize>>,
    order: Vec<usize>,
}

fn prepare(inst: &Instance, budget: u128) -> Result<Option<SearchPrep>, SizeLimit> {
    let lists = match arc_consistency(inst) {
        Ok(l) => l,
        Err(_) => return Ok(None),
    };
    let mut size: u128 = 1;
    for l in &lists {
        size = size.saturating_mul(l.len() as u128);
        if size > budget {
            return Err(SizeLimit { size, budget });
        }
    }
    let mut order: Vec<usize> = (0..inst.d.n()).collect();
    let degree = |v: usize| inst.d.out_neighbors(v).len() + inst.d.in_neighbors(v).len();
    order.sort_by(|&a, &b| degree(b).cmp(&degree(a)).then(a.cmp(&b)));
    Ok(Some(SearchPrep {
        lists: lists
            .into_iter()
            .map(|s| s.into_iter().collect())
            .collect(),
        order,
    }))
}

fn consistent_with_assigned(
    inst: &Instance,
    map: &[Option<usize>],
    x: usize,
    a: usize,
) -> bool {
    for &y in inst.d.out_neighbors(x) {
        if y == x {
            if !inst.h.has_arc(a, a) {
                return false;
            }
        } else if let Some(b) = map[y] {
            if !inst.h.has_arc(a, b) {
                return false;
            }
        }
    }
    for &y in inst.d.in_neighbors(x) {
        if y != x {
            if let Some(b) = map[y] {
                if !inst.h.has_arc(b, a) {
                    return false;
                }
            }
        }
    }
    true
}

/// Exhaustive minimum-cost homomorphism by backtracking over the
/// arc-consistent lists, with cost-based pruning. Refuses instances whose
/// assignment space exceeds [`SEARCH_BUDGET`].
pub fn brute_force_min(inst: &Instance) -> Result<Option<Homomorphism>, SizeLimit> {
    brute_force_min_with_budget(inst, SEARCH_BUDGET)
}

pub fn brute_force_min_with_budget(
    inst: &Instance,
    budget: u128,
) -> Result<Option<Homomorphism>, SizeLimit> {
    let Some(prep) = prepare(inst, budget)? else {
        return Ok(None);
    };
    let n = inst.d.n();
    let finite = |x: usize, a: usize| -> Rat {
        match inst.cost(x, a) {
            crate::model::Cost::Finite(r) => r.clone(),
            crate::model::Cost::Infinite => unreachable!("lists hold finite-cost images"),
        }
    };
    let cheapest: Vec<Rat> = (0..n)
        .map(|x| {
            prep.lists[x]
                .iter()
                .map(|&a| finite(x, a))
                .min()
                .expect("arc-consistent lists are non-empty")
        })
        .collect();
    let mut tail_bound: Vec<Rat> = vec![rat_int(0); n + 1];
    for depth in (0..n).rev() {
        tail_bound[depth] = tail_bound[depth + 1].clone() + cheapest[prep.order[depth]].clone();
    }
    let mut map: Vec<Option<usize>> = vec![None; n];
    let mut best: Option<(Vec<usize>, Rat)> = None;
    let mut partial = rat_int(0);
    search_min(
        inst, &prep, &tail_bound, 0, &mut map, &mut partial, &mut best, &finite,
    );
    Ok(best.map(|(m, cost)| Homomorphism { map: m, cost }))
}

#[allow(clippy::too_many_arguments)]
fn search_min(
    inst: &Instance,
    prep: &SearchPrep,
    tail_bound: &[Rat],
    depth: usize,
    map: &mut Vec<Option<usize>>,
    partial: &mut Rat,
    best: &mut Option<(Vec<usize>, Rat)>,
    finite: &dyn Fn(usize, usize) -> Rat,
) {
    if let Some((_, bound)) = best {
        if partial.clone() + tail_bound[depth].clone() >= *bound {
            return;
        }
    }
    if depth == prep.order.len() {
        let full: Vec<usize> = map.iter().map(|m| m.unwrap()).collect();
        let cost = partial.clone();
        match best {
            Some((_, b)) if *b <= cost => {}
            _ => *best = Some((full, cost)),
        }
        return;
    }
    let x = prep.order[depth];
    for &a in &prep.lists[x] {
        if !consistent_with_assigned(inst, map, x, a) {
            continue;
        }
        let c = finite(x, a);
        map[x] = Some(a);
        *partial += c.clone();
        search_min(inst, prep, tail_bound, depth + 1, map, partial, best, finite);
        *partial -= c;
        map[x] = None;
    }
}

/// All list-respecting homomorphisms of the instance, in a deterministic
/// order. Same budget rule as [`brute_force_min`].
pub fn brute_force_all(inst: &Instance) -> Result<Vec<Vec<usize>>, SizeLimit> {
    brute_force_all_with_budget(inst, SEARCH_BUDGET)
}

pub fn brute_force_all_with_budget(
    inst: &Instance,
    budget: u128,
) -> Result<Vec<Vec<usize>>, SizeLimit> {
    let Some(prep) = prepare(inst, budget)? else {
        return Ok(Vec::new());
    };
    let n = inst.d.n();
    let mut map: Vec<Option<usize>> = vec![None; n];
    let mut out = Vec::new();
    search_all(inst, &prep, 0, &mut map, &mut out);
    Ok(out)
}

fn search_all(
    inst: &Instance,
    prep: &SearchPrep,
    depth: usize,
    map: &mut Vec<Option<usize>>,
    out: &mut Vec<Vec<usize>>,
) {
    if depth == prep.order.len() {
        out.push(map.iter().map(|m| m.unwrap()).collect());
        return;
    }
    let x = prep.order[depth];
    for &a in &prep.lists[x] {
        if !consistent_with_assigned(inst, map, x, a) {
            continue;
        }
        map[x] = Some(a);
        search_all(inst, prep, depth + 1, map, out);
        map[x] = None;
    }
}

/// All integer feasible points of a built system, decoded to maps by the
/// largest slot still at one.
///
/// Only monotone 0/1 chain assignments can satisfy the always-emitted
/// first-slot, sentinel, and monotonicity rows, so the enumeration walks
/// one cut position per vertex and checks every row of the model exactly.
pub fn enumerate_integer_solutions(model: &LpModel) -> Result<Vec<Vec<usize>>, SizeLimit> {
    let n = model.n_vertices();
    let p = model.ord.p();
    let cells = (n as u128) * (p as u128);
    if cells > ENUMERATION_CELL_LIMIT {
        return Err(SizeLimit {
            size: cells,
            budget: ENUMERATION_CELL_LIMIT,
        });
    }
    let mut cuts: Vec<usize> = vec![1; n];
    let mut out = Vec::new();
    loop {
        let mut x = vec![0i64; model.nvars()];
        for (v, &cut) in cuts.iter().enumerate() {
            for slot in 0..cut {
                x[model.var(v, slot) as usize] = 1;
            }
        }
        let feasible = model.rows.iter().all(|row| {
            let lhs: i64 = row
                .terms
                .iter()
                .map(|(var, coeff)| *coeff as i64 * x[*var as usize])
                .sum();
            match row.op {
                crate::lp::Op::Le => lhs <= row.rhs as i64,
                crate::lp::Op::Eq => lhs == row.rhs as i64,
            }
        });
        if feasible {
            let map: Vec<usize> = (0..n)
                .map(|v| model.ord.at(model.chains[v].positions[cuts[v] - 1]))
                .collect();
            out.push(map);
        }
        let mut v = 0;
        loop {
            if v == n {
                return Ok(out);
            }
            if cuts[v] < model.chain_len(v) {
                cuts[v] += 1;
                break;
            }
            cuts[v] = 1;
            v += 1;
        }
    }
}

/// Maps every vertex to the position-smallest element of its arc-consistent
/// list. For a min-ordered target this is always a valid homomorphism.
/// Costs are ignored in the choice; the returned cost is the map's.
pub fn greedy_list_hom(inst: &Instance, ord: &Ordering) -> Result<Homomorphism, EmptyLists> {
    assert_eq!(ord.k(), 1, "a linear ordering is required");
    greedy_leveled(inst, ord, &vec![0; inst.d.n()])
}

/// Leveled variant: each vertex's list is first restricted to the level its
/// component assignment `psi` dictates, then the position-smallest element
/// of the consistent restriction is chosen.
pub fn greedy_kmin_hom(
    inst: &Instance,
    ord: &Ordering,
    psi: &[usize],
) -> Result<Homomorphism, EmptyLists> {
    greedy_leveled(inst, ord, psi)
}

fn greedy_leveled(
    inst: &Instance,
    ord: &Ordering,
    psi: &[usize],
) -> Result<Homomorphism, EmptyLists> {
    assert!(
        verify_min_ordering(&inst.h, ord, OrderingRule::Min).is_ok(),
        "the target ordering must satisfy the min rule"
    );
    let mut lists: Vec<BTreeSet<usize>> = (0..inst.d.n())
        .map(|v| {
            inst.list(v)
                .into_iter()
                .filter(|&a| ord.level(a) == psi[v])
                .collect()
        })
        .collect();
    for (v, l) in lists.iter().enumerate() {
        if l.is_empty() {
            return Err(EmptyLists::Vertex { vertex: v });
        }
    }
    arc_consistency_on(inst, &mut lists)?;
    let map: Vec<usize> = lists
        .iter()
        .map(|l| {
            *l.iter()
                .min_by_key(|&&a| ord.pos(a))
                .expect("consistency keeps lists non-empty")
        })
        .collect();
    debug_assert!(validate_hom(inst, &map).is_ok());
    let cost = eval_cost(inst, &map).expect("lists hold finite-cost images");
    Ok(Homomorphism { map, cost })
}
