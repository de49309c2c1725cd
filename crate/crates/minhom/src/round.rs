//! Threshold rounding of fractional relaxation solutions and the repair
//! procedures that turn the rounded assignment into a homomorphism.
//!
//! A fractional solution is rounded against a threshold `X`: a chain slot is
//! set to one when its value reaches `X`, and every vertex maps to its last
//! one-slot. The result lands in the completed target, so arcs whose image is
//! an extension arc are repaired by shifting images strictly earlier in the
//! ordering, guided by a second draw `Y` over the fractional masses. The
//! module also carries the de-randomized grid search over `(X, Y)`, the
//! per-component level-rotation driver for cyclically leveled targets, and
//! the two-stage driver for symmetric instances via their bipartite double.

use std::cmp::Reverse;
use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

use crate::consistency::pair_consistency_paired;
use crate::lp::{
    build_doubling, build_kmin_system, double_graph, BuildError, DoubledInstance, LpModel,
};
use crate::model::{eval_cost, validate_hom, Cost, Digraph, Homomorphism, Instance, Ordering, Rat};
use crate::orderings::{
    assign_cycle_levels, build_completion, find_min_ordering_with_levels, Completion,
    SizeLimitExceeded,
};
use crate::simplex::{solve, LpOutcome, SolveError};

/// Slack used when comparing fractional values against the threshold, so
/// that solver residuals below the feasibility tolerance cannot split two
/// values the constraints tie together.
pub const ROUND_TOLERANCE: f64 = 1e-7;

/// Closure rounds allowed when growing the de-randomization `Y` grid.
const Y_CLOSURE_ROUNDS: usize = 8;

/// One image move performed during repair: `vertex` went from target vertex
/// `from` to target vertex `to`, which sits strictly earlier in the ordering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShiftStep {
    pub vertex: usize,
    pub from: usize,
    pub to: usize,
}

impl fmt::Display for ShiftStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "shift {}: {} -> {}", self.vertex, self.from, self.to)
    }
}

/// Renders a repair trace one step per line.
pub fn format_trace(trace: &[ShiftStep]) -> String {
    trace
        .iter()
        .map(ShiftStep::to_string)
        .collect::<Vec<_>>()
        .join("\n")
}

/// Why a rounding run could not produce a homomorphism.
#[derive(Debug, Error)]
pub enum RoundError {
    #[error("vertex {vertex} has no shift candidate; the pair rows are supposed to rule this out")]
    EmptyCandidates { vertex: usize },
    #[error("the shift budget of {budget} moves was exhausted")]
    ShiftBudget { budget: usize },
    #[error("the input digraph has no homomorphism onto {k} cyclic levels")]
    NotCyclic { k: usize },
    #[error("the doubled target admits no two-level min-ordering")]
    NotBiArc,
    #[error("the relaxation is infeasible; no homomorphism exists")]
    Infeasible,
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Search(#[from] SizeLimitExceeded),
    #[error("internal invariant failed: {0}")]
    Internal(&'static str),
}

/// Mutable state of one rounding-and-repair run: the current image slot per
/// input vertex, the two random draws, and the shift bookkeeping.
#[derive(Debug, Clone)]
pub struct RoundingState {
    slots: Vec<usize>,
    pub x: f64,
    pub y: f64,
    pub trace: Vec<ShiftStep>,
    pub shifts: usize,
    /// Selections that fell back to the largest candidate because every
    /// candidate mass was zero.
    pub zero_mass_picks: usize,
    /// Cumulative-mass ratios observed at selection points, used as `Y`
    /// candidates by the de-randomization.
    pub breakpoints: Vec<f64>,
}

impl RoundingState {
    /// Current image of `v` under the model's ordering.
    pub fn image(&self, model: &LpModel, v: usize) -> usize {
        model.ord.at(model.chains[v].positions[self.slots[v]])
    }

    /// Current image vector.
    pub fn images(&self, model: &LpModel) -> Vec<usize> {
        (0..self.slots.len()).map(|v| self.image(model, v)).collect()
    }

    /// Rounded chain bits of `v`: ones up to the current image slot.
    pub fn rounded_bits(&self, model: &LpModel, v: usize) -> Vec<bool> {
        (0..model.chain_len(v)).map(|s| s <= self.slots[v]).collect()
    }

    fn hpos(&self, model: &LpModel, v: usize) -> usize {
        model.chains[v].positions[self.slots[v]]
    }
}

/// Rounds a fractional solution against the threshold `x`: every chain keeps
/// the slots whose value reaches `x` and the vertex maps to the last kept
/// slot. `y` is stashed for the repair phase.
///
/// Thresholds below three tolerances are raised to that floor, so solver
/// residue on variables that are zero in the true solution can never pass.
pub fn round_threshold(model: &LpModel, frac: &[f64], x: f64, y: f64) -> RoundingState {
    let cut = x.max(3.0 * ROUND_TOLERANCE) - ROUND_TOLERANCE;
    let slots = (0..model.n_vertices())
        .map(|v| {
            let mut slot = 0;
            for s in 0..model.chain_len(v) {
                if frac[model.var(v, s) as usize] >= cut {
                    slot = s;
                } else {
                    break;
                }
            }
            slot
        })
        .collect();
    RoundingState {
        slots,
        x,
        y,
        trace: Vec::new(),
        shifts: 0,
        zero_mass_picks: 0,
        breakpoints: Vec::new(),
    }
}

/// Fractional mass of `v` sitting exactly on target position `hpos`.
/// Differences within the tolerance are floored to zero so solver residue
/// cannot masquerade as support.
fn mass(model: &LpModel, frac: &[f64], v: usize, hpos: usize) -> f64 {
    match model.chains[v].positions.binary_search(&hpos) {
        Err(_) => 0.0,
        Ok(s) => {
            let here = frac[model.var(v, s) as usize];
            let next = frac[model.var(v, s + 1) as usize];
            let m = here - next;
            if m <= ROUND_TOLERANCE {
                0.0
            } else {
                m
            }
        }
    }
}

/// A pending repair: `mover` must leave its current image because the arc it
/// shares with `anchor` is not mapped to an arc of the target. When
/// `mover_is_head`, the offending arc is `anchor -> mover`, otherwise
/// `mover -> anchor`.
struct Demand {
    mover: usize,
    anchor: usize,
    mover_is_head: bool,
}

impl Demand {
    fn arc_images(&self, model: &LpModel, state: &RoundingState) -> (usize, usize) {
        let m = state.image(model, self.mover);
        let a = state.image(model, self.anchor);
        if self.mover_is_head {
            (a, m)
        } else {
            (m, a)
        }
    }
}

/// Which endpoint of an extension-arc image must move: the head when the
/// image head has no original in-neighbour after the image tail, otherwise
/// the tail when the image tail has no original out-neighbour after the
/// image head. Exactly one case applies to every extension arc; the head is
/// preferred when both do.
fn repair_head(comp: &Completion, ord: &Ordering, a: usize, b: usize) -> Option<bool> {
    if !comp.has_e_in_after(b, ord.pos(a)) {
        Some(true)
    } else if !comp.has_e_out_after(a, ord.pos(b)) {
        Some(false)
    } else {
        None
    }
}

/// Runs one repair wave from `start`: the queue is seeded with the
/// extension-mapped arcs whose case split selects `start`, and every shift
/// enqueues the opposite endpoints of the arcs it breaks. `y` guides the
/// candidate selection for the whole wave.
pub fn shift(
    inst: &Instance,
    model: &LpModel,
    comp: &Completion,
    frac: &[f64],
    state: &mut RoundingState,
    start: usize,
    y: f64,
) -> Result<(), RoundError> {
    state.y = y;
    let mut queue = VecDeque::new();
    for &(u, v) in inst.d.arcs() {
        if u != start && v != start {
            continue;
        }
        let (a, b) = (state.image(model, u), state.image(model, v));
        if !comp.is_extension_arc(a, b) {
            continue;
        }
        let head = match repair_head(comp, &model.ord, a, b) {
            Some(head) => head,
            None => return Err(RoundError::Internal("extension image admits no repair side")),
        };
        let (mover, anchor) = if head { (v, u) } else { (u, v) };
        if mover != start {
            continue;
        }
        queue.push_back(Demand {
            mover,
            anchor,
            mover_is_head: head,
        });
    }
    drain(inst, model, comp, frac, state, queue)
}

fn drain(
    inst: &Instance,
    model: &LpModel,
    comp: &Completion,
    frac: &[f64],
    state: &mut RoundingState,
    mut queue: VecDeque<Demand>,
) -> Result<(), RoundError> {
    let budget = max_shifts(model, comp);
    while let Some(demand) = queue.pop_front() {
        let (tail_img, head_img) = demand.arc_images(model, state);
        if inst.h.has_arc(tail_img, head_img) {
            continue;
        }
        let target = select_target(inst, model, frac, state, &demand)?;
        if state.shifts == budget {
            return Err(RoundError::ShiftBudget { budget });
        }
        let mover = demand.mover;
        let from = state.image(model, mover);
        state.slots[mover] = model.slot_of_pos(mover, target);
        let to = state.image(model, mover);
        state.trace.push(ShiftStep { vertex: mover, from, to });
        state.shifts += 1;
        for &(u, v) in inst.d.arcs() {
            if u != mover && v != mover {
                continue;
            }
            let (a, b) = (state.image(model, u), state.image(model, v));
            if inst.h.has_arc(a, b) {
                continue;
            }
            let follower = if u == mover { v } else { u };
            queue.push_back(Demand {
                mover: follower,
                anchor: mover,
                mover_is_head: follower == v,
            });
        }
    }
    Ok(())
}

/// Total shift allowance of one run: one inner wave per extension arc, each
/// moving every vertex at most once per target position.
fn max_shifts(model: &LpModel, comp: &Completion) -> usize {
    comp.eprime().len().max(1) * model.ord.p() * model.n_vertices()
}

/// Picks the mover's new position among the positions below its current
/// image that are compatible with the anchor's image, weighting each
/// candidate by its fractional mass and selecting the first whose cumulative
/// mass reaches `y` times the total. Zero-mass candidates are never chosen
/// unless every candidate has zero mass, in which case the largest candidate
/// is taken.
fn select_target(
    inst: &Instance,
    model: &LpModel,
    frac: &[f64],
    state: &mut RoundingState,
    demand: &Demand,
) -> Result<usize, RoundError> {
    let mover = demand.mover;
    let mpos = state.hpos(model, mover);
    let anchor_img = state.image(model, demand.anchor);
    let selfloop = demand.mover == demand.anchor;
    let mut candidates = Vec::new();
    for &q in &model.chains[mover].positions {
        if q >= mpos {
            break;
        }
        let a = model.ord.at(q);
        let ok = if selfloop {
            inst.h.has_arc(a, a)
        } else if demand.mover_is_head {
            inst.h.has_arc(anchor_img, a)
        } else {
            inst.h.has_arc(a, anchor_img)
        };
        if ok {
            candidates.push(q);
        }
    }
    if candidates.is_empty() {
        return Err(RoundError::EmptyCandidates { vertex: mover });
    }
    let masses: Vec<f64> = candidates
        .iter()
        .map(|&q| mass(model, frac, mover, q))
        .collect();
    let total: f64 = masses.iter().sum();
    if total <= 0.0 {
        state.zero_mass_picks += 1;
        return Ok(*candidates.last().expect("candidates are non-empty"));
    }
    let goal = state.y * total;
    let mut cum = 0.0;
    let mut chosen = None;
    let mut last_positive = None;
    for (&q, &m) in candidates.iter().zip(&masses) {
        if m <= 0.0 {
            continue;
        }
        cum += m;
        state.breakpoints.push(cum / total);
        last_positive = Some(q);
        if chosen.is_none() && cum >= goal {
            chosen = Some(q);
        }
    }
    Ok(chosen
        .or(last_positive)
        .expect("a positive total implies a positive mass"))
}

/// Result of one rounding-and-repair run.
#[derive(Debug, Clone)]
pub struct RoundingOutcome {
    pub hom: Homomorphism,
    pub state: RoundingState,
}

/// Rounds `frac` against `x` and repairs every arc whose image is an
/// extension arc, guided by `y`, until the assignment is a homomorphism into
/// the original target.
pub fn approx_min_ordering(
    inst: &Instance,
    model: &LpModel,
    comp: &Completion,
    frac: &[f64],
    x: f64,
    y: f64,
) -> Result<RoundingOutcome, RoundError> {
    let mut state = round_threshold(model, frac, x, y);
    for &(u, v) in inst.d.arcs() {
        let (a, b) = (state.image(model, u), state.image(model, v));
        if !comp.hprime().has_arc(a, b) {
            return Err(RoundError::Internal(
                "thresholding left the completed target",
            ));
        }
    }
    loop {
        let offending = inst.d.arcs().iter().find(|&&(u, v)| {
            comp.is_extension_arc(state.image(model, u), state.image(model, v))
        });
        let &(u, v) = match offending {
            None => break,
            Some(arc) => arc,
        };
        let (a, b) = (state.image(model, u), state.image(model, v));
        let start = match repair_head(comp, &model.ord, a, b) {
            Some(true) => v,
            Some(false) => u,
            None => return Err(RoundError::Internal("extension image admits no repair side")),
        };
        let current_y = state.y;
        shift(inst, model, comp, frac, &mut state, start, current_y)?;
    }
    let map = state.images(model);
    if validate_hom(inst, &map).is_err() {
        return Err(RoundError::Internal("repair left a non-homomorphic map"));
    }
    let cost = eval_cost(inst, &map)
        .ok_or(RoundError::Internal("images must carry finite costs"))?;
    Ok(RoundingOutcome {
        hom: Homomorphism { map, cost },
        state,
    })
}

/// Best grid point of a de-randomized search.
#[derive(Debug, Clone)]
pub struct DerandRun {
    pub hom: Homomorphism,
    pub x: f64,
    pub y: f64,
    /// Number of `(x, y)` evaluations performed.
    pub evaluations: usize,
    /// Whether some `Y` grid stopped growing only because of the closure cap.
    pub capped: bool,
}

/// The distinct fractional values above the residue band, ascending,
/// preceded by a point strictly below the smallest of them.
fn x_grid(frac: &[f64]) -> Vec<f64> {
    let mut vals: Vec<f64> = frac
        .iter()
        .copied()
        .filter(|&v| v > 3.0 * ROUND_TOLERANCE)
        .collect();
    vals.sort_by(f64::total_cmp);
    vals.dedup();
    if let Some(&lowest) = vals.first() {
        vals.insert(0, lowest / 2.0);
    }
    vals
}

struct GridBest {
    cost: Rat,
    xi: usize,
    yi: usize,
    x: f64,
    y: f64,
    map: Vec<usize>,
}

struct GridEval {
    best: Option<GridBest>,
    evaluations: usize,
    capped: bool,
}

/// Evaluates every threshold in `xs`, growing a `Y` grid per threshold from
/// the observed selection breakpoints until closure, and keeps the best
/// outcome under the order (cost, threshold index, `Y` index). Thresholds
/// are scored concurrently; the reduction is deterministic.
fn derand_grid<F>(xs: &[f64], eval: F) -> Result<GridEval, RoundError>
where
    F: Fn(f64, f64) -> Result<(Rat, Vec<usize>, Vec<f64>), RoundError> + Sync,
{
    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(xs.len().max(1))
        .min(8);
    let chunk = xs.len().div_ceil(threads.max(1)).max(1);
    let results: Vec<Result<GridEval, RoundError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = xs
            .chunks(chunk)
            .enumerate()
            .map(|(ci, part)| {
                let eval = &eval;
                scope.spawn(move || derand_chunk(ci * chunk, part, eval))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("grid worker")).collect()
    });
    let mut merged = GridEval {
        best: None,
        evaluations: 0,
        capped: false,
    };
    for r in results {
        let part = r?;
        merged.evaluations += part.evaluations;
        merged.capped |= part.capped;
        merged.best = match (merged.best.take(), part.best) {
            (None, b) => b,
            (a, None) => a,
            (Some(a), Some(b)) => {
                if (&b.cost, b.xi, b.yi) < (&a.cost, a.xi, a.yi) {
                    Some(b)
                } else {
                    Some(a)
                }
            }
        };
    }
    Ok(merged)
}

fn derand_chunk<F>(offset: usize, xs: &[f64], eval: &F) -> Result<GridEval, RoundError>
where
    F: Fn(f64, f64) -> Result<(Rat, Vec<usize>, Vec<f64>), RoundError>,
{
    let mut out = GridEval {
        best: None,
        evaluations: 0,
        capped: false,
    };
    for (i, &x) in xs.iter().enumerate() {
        let xi = offset + i;
        let mut ys = vec![1.0f64];
        let mut seen = 0;
        let mut rounds = 0;
        while seen < ys.len() {
            let mut fresh = Vec::new();
            while seen < ys.len() {
                let y = ys[seen];
                let (cost, map, bps) = eval(x, y)?;
                out.evaluations += 1;
                let better = match &out.best {
                    None => true,
                    Some(b) => (&cost, xi, seen) < (&b.cost, b.xi, b.yi),
                };
                if better {
                    out.best = Some(GridBest {
                        cost,
                        xi,
                        yi: seen,
                        x,
                        y,
                        map,
                    });
                }
                fresh.extend(bps);
                seen += 1;
            }
            rounds += 1;
            if rounds >= Y_CLOSURE_ROUNDS {
                if fresh.iter().any(|bp| !ys.contains(bp)) {
                    out.capped = true;
                }
                break;
            }
            for bp in fresh {
                if bp > 0.0 && bp <= 1.0 && !ys.contains(&bp) {
                    ys.push(bp);
                }
            }
        }
    }
    Ok(out)
}

/// De-randomizes the rounding: tries every distinct fractional value as the
/// threshold and every observed selection breakpoint as the guide, and
/// returns the cheapest homomorphism of the grid.
pub fn derandomize(
    inst: &Instance,
    model: &LpModel,
    comp: &Completion,
    frac: &[f64],
) -> Result<DerandRun, RoundError> {
    let xs = x_grid(frac);
    let grid = derand_grid(&xs, |x, y| {
        let out = approx_min_ordering(inst, model, comp, frac, x, y)?;
        Ok((out.hom.cost, out.hom.map, out.state.breakpoints))
    })?;
    let best = grid.best.ok_or(RoundError::Internal("the threshold grid is empty"))?;
    Ok(DerandRun {
        hom: Homomorphism {
            map: best.map,
            cost: best.cost,
        },
        x: best.x,
        y: best.y,
        evaluations: grid.evaluations,
        capped: grid.capped,
    })
}

/// A variant driver's result: the homomorphism and the relaxation lower
/// bound its guarantee is measured against.
#[derive(Debug, Clone)]
pub struct VariantRun {
    pub hom: Homomorphism,
    pub lp_bound: f64,
}

/// Approximates an instance over a cyclically leveled target: every weak
/// component of the input tries all `k` level rotations, keeping its
/// cheapest repaired homomorphism, and the component answers combine.
pub fn approx_kmin(
    inst: &Instance,
    ord: &Ordering,
    x: f64,
    y: f64,
) -> Result<VariantRun, RoundError> {
    kmin_drive(inst, ord, Some((x, y)))
}

/// De-randomized version of [`approx_kmin`]: each rotation is scored by its
/// own grid search.
pub fn derandomize_kmin(inst: &Instance, ord: &Ordering) -> Result<VariantRun, RoundError> {
    kmin_drive(inst, ord, None)
}

fn kmin_drive(
    inst: &Instance,
    ord: &Ordering,
    draw: Option<(f64, f64)>,
) -> Result<VariantRun, RoundError> {
    let k = ord.k();
    let base = assign_cycle_levels(&inst.d, k).ok_or(RoundError::NotCyclic { k })?;
    let comp = build_completion(&inst.h, ord).map_err(BuildError::from)?;
    let mut map = vec![0usize; inst.d.n()];
    let mut lp_bound = 0.0;
    for verts in inst.d.weak_components() {
        let sub = induce(inst, &verts);
        let mut best: Option<(Rat, Vec<usize>)> = None;
        let mut best_lp: Option<f64> = None;
        for rot in 0..k {
            let psi: Vec<usize> = verts.iter().map(|&v| (base[v] + rot) % k).collect();
            let model = match build_kmin_system(&sub, ord, &psi) {
                Ok(m) => m,
                Err(BuildError::Infeasible(_)) => continue,
                Err(e) => return Err(e.into()),
            };
            let solved = match solve(&model)? {
                LpOutcome::Optimal(s) => s,
                LpOutcome::Infeasible => continue,
            };
            best_lp = Some(match best_lp {
                None => solved.value,
                Some(b) => b.min(solved.value),
            });
            let hom = match draw {
                Some((x, y)) => approx_min_ordering(&sub, &model, &comp, &solved.values, x, y)?.hom,
                None => derandomize(&sub, &model, &comp, &solved.values)?.hom,
            };
            let better = match &best {
                None => true,
                Some((c, _)) => hom.cost < *c,
            };
            if better {
                best = Some((hom.cost, hom.map));
            }
        }
        let (_, sub_map) = best.ok_or(RoundError::Infeasible)?;
        for (i, &v) in verts.iter().enumerate() {
            map[v] = sub_map[i];
        }
        lp_bound += best_lp.expect("a feasible rotation was scored");
    }
    if validate_hom(inst, &map).is_err() {
        return Err(RoundError::Internal("component answers do not combine"));
    }
    let cost = eval_cost(inst, &map)
        .ok_or(RoundError::Internal("images must carry finite costs"))?;
    Ok(VariantRun {
        hom: Homomorphism { map, cost },
        lp_bound,
    })
}

/// Restriction of an instance to a vertex subset of its input digraph.
fn induce(inst: &Instance, verts: &[usize]) -> Instance {
    let mut index = vec![usize::MAX; inst.d.n()];
    for (i, &v) in verts.iter().enumerate() {
        index[v] = i;
    }
    let arcs: Vec<(usize, usize)> = inst
        .d
        .arcs()
        .iter()
        .filter(|&&(u, v)| index[u] != usize::MAX && index[v] != usize::MAX)
        .map(|&(u, v)| (index[u], index[v]))
        .collect();
    let costs = verts
        .iter()
        .map(|&v| (0..inst.h.n()).map(|a| inst.cost(v, a).clone()).collect())
        .collect();
    Instance::new(Digraph::from_arcs(verts.len(), &arcs), inst.h.clone(), costs)
}

/// A two-stage symmetric-instance run: the folded homomorphism, the halved
/// relaxation bound, and the repair bookkeeping.
#[derive(Debug, Clone)]
pub struct BiArcRun {
    pub hom: Homomorphism,
    /// Half the doubled relaxation optimum; a lower bound on the optimum.
    pub lp_bound: f64,
    pub shifts: usize,
    pub align_actions: usize,
    pub stage2: Vec<ShiftStep>,
    breakpoints: Vec<f64>,
}

/// Approximates a symmetric instance through its bipartite double: rounds
/// and repairs on the double, then aligns the two copies of every vertex and
/// folds the assignment back.
pub fn approx_biarc_graph(inst: &Instance, x: f64, y: f64) -> Result<BiArcRun, RoundError> {
    let setup = biarc_prepare(inst)?;
    biarc_run(inst, &setup, x, y)
}

/// De-randomized version of [`approx_biarc_graph`].
pub fn derandomize_biarc(inst: &Instance) -> Result<BiArcRun, RoundError> {
    let setup = biarc_prepare(inst)?;
    let xs = x_grid(&setup.frac);
    let grid = derand_grid(&xs, |x, y| {
        let run = biarc_run(inst, &setup, x, y)?;
        let bps = run.breakpoints();
        Ok((run.hom.cost, run.hom.map, bps))
    })?;
    let best = grid.best.ok_or(RoundError::Internal("the threshold grid is empty"))?;
    biarc_run(inst, &setup, best.x, best.y)
}

struct BiArcSetup {
    dbl: DoubledInstance,
    model: LpModel,
    comp: Completion,
    frac: Vec<f64>,
    lp_value: f64,
}

impl BiArcRun {
    fn breakpoints(&self) -> Vec<f64> {
        self.breakpoints.clone()
    }
}

/// Doubles a symmetric instance and prunes it with the paired pair
/// consistency closure: the two copies of every vertex may only take partner
/// images, so values that extend to no foldable assignment are driven to
/// infinite cost. An emptied list means the original instance has no
/// homomorphism.
pub fn pruned_double(inst: &Instance) -> Result<DoubledInstance, RoundError> {
    let dbl = double_graph(inst)?;
    let pc = match pair_consistency_paired(&dbl.inst, dbl.half_n, dbl.half_p) {
        Ok(pc) => pc,
        Err(_) => return Err(RoundError::Infeasible),
    };
    let costs = (0..dbl.inst.d.n())
        .map(|v| {
            (0..dbl.inst.h.n())
                .map(|a| {
                    if pc.lists[v].contains(&a) {
                        dbl.inst.cost(v, a).clone()
                    } else {
                        Cost::Infinite
                    }
                })
                .collect()
        })
        .collect();
    Ok(DoubledInstance {
        inst: Instance::new(dbl.inst.d.clone(), dbl.inst.h.clone(), costs),
        half_n: dbl.half_n,
        half_p: dbl.half_p,
    })
}

fn biarc_prepare(inst: &Instance) -> Result<BiArcSetup, RoundError> {
    let dbl = pruned_double(inst)?;
    let ord = find_min_ordering_with_levels(&dbl.inst.h, &dbl.target_side_levels(), 2)?
        .ok_or(RoundError::NotBiArc)?;
    let model = build_doubling(&dbl, &ord)?;
    let solved = match solve(&model)? {
        LpOutcome::Optimal(s) => s,
        LpOutcome::Infeasible => return Err(RoundError::Infeasible),
    };
    let comp = build_completion(&dbl.inst.h, &ord).map_err(BuildError::from)?;
    Ok(BiArcSetup {
        dbl,
        model,
        comp,
        frac: solved.values.clone(),
        lp_value: solved.value,
    })
}

fn biarc_run(inst: &Instance, setup: &BiArcSetup, x: f64, y: f64) -> Result<BiArcRun, RoundError> {
    let out = approx_min_ordering(&setup.dbl.inst, &setup.model, &setup.comp, &setup.frac, x, y)?;
    let mut state = out.state;
    let (align_actions, stage2) =
        stabilize(&setup.dbl, &setup.model, &setup.comp, &setup.frac, &mut state)?;
    let imgs = state.images(&setup.model);
    for &(u, v) in setup.dbl.inst.d.arcs() {
        if !setup.dbl.inst.h.has_arc(imgs[u], imgs[v]) {
            return Err(RoundError::Internal("alignment broke a doubled arc"));
        }
    }
    let map = setup.dbl.fold_map(&imgs);
    if validate_hom(inst, &map).is_err() {
        return Err(RoundError::Internal("the folded map is not a homomorphism"));
    }
    let cost = eval_cost(inst, &map)
        .ok_or(RoundError::Internal("images must carry finite costs"))?;
    Ok(BiArcRun {
        hom: Homomorphism { map, cost },
        lp_bound: setup.lp_value / 2.0,
        shifts: state.shifts,
        align_actions,
        stage2,
        breakpoints: state.breakpoints,
    })
}

/// Aligns the two copies of every doubled vertex. An inconsistent vertex has
/// its copies at images that are not partners; the loop repeatedly takes the
/// inconsistent vertex whose first-copy image sits latest in the ordering
/// and snaps one of its copies to the partner of the other, preferring the
/// direction that moves strictly earlier. Arcs broken by the snap are healed
/// by the ordinary repair cascade, whose moves only travel earlier; a move
/// budget guards the loop. Returns the number of snaps and the slice of the
/// trace recorded here.
fn stabilize(
    dbl: &DoubledInstance,
    model: &LpModel,
    comp: &Completion,
    frac: &[f64],
    state: &mut RoundingState,
) -> Result<(usize, Vec<ShiftStep>), RoundError> {
    let n = dbl.half_n;
    let p = dbl.half_p;
    let ord = &model.ord;
    let inst = &dbl.inst;
    let base = state.trace.len();
    let mut actions = 0;
    loop {
        let unstable = |state: &RoundingState, v: usize| {
            state.image(model, n + v) != state.image(model, v) + p
        };
        let Some(seed) = (0..n)
            .filter(|&v| unstable(state, v))
            .max_by_key(|&v| (ord.pos(state.image(model, v)), Reverse(v)))
        else {
            break;
        };
        let first = state.image(model, seed);
        let second = state.image(model, n + seed);
        let (mover, target) = if ord.pos(first + p) < ord.pos(second) {
            (n + seed, first + p)
        } else if ord.pos(second - p) < ord.pos(first) {
            (seed, second - p)
        } else {
            (n + seed, first + p)
        };
        actions += 1;
        if actions > 4 * n * p {
            return Err(RoundError::Internal("alignment exceeded its move budget"));
        }
        let from = state.image(model, mover);
        state.slots[mover] = model.slot_of_pos(mover, ord.pos(target));
        state.trace.push(ShiftStep { vertex: mover, from, to: target });
        let mut queue = VecDeque::new();
        for &(u, v) in inst.d.arcs() {
            if u != mover && v != mover {
                continue;
            }
            let (a, b) = (state.image(model, u), state.image(model, v));
            if inst.h.has_arc(a, b) {
                continue;
            }
            let follower = if u == mover { v } else { u };
            queue.push_back(Demand {
                mover: follower,
                anchor: mover,
                mover_is_head: follower == v,
            });
        }
        drain(inst, model, comp, frac, state, queue)?;
    }
    Ok((actions, state.trace[base..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::brute_force_min;
    use crate::lp::extend_min_ordering_system;
    use crate::model::{rat_int, Cost};
    use num::ToPrimitive;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn digraph(n: usize, arcs: &[(usize, usize)]) -> Digraph {
        Digraph::from_arcs(n, arcs)
    }

    fn fill_chain(model: &LpModel, frac: &mut [f64], v: usize, plateau: usize, edge: usize) {
        for (s, &q) in model.chains[v].positions.iter().enumerate() {
            frac[model.var(v, s) as usize] = if q <= plateau {
                1.0
            } else if q <= edge {
                0.9
            } else {
                0.0
            };
        }
    }

    #[test]
    fn thresholding_keeps_the_slots_reaching_x() {
        let d = digraph(1, &[]);
        let mut h = Digraph::new(4);
        for a in 0..4 {
            for b in 0..4 {
                h.add_arc(a, b);
            }
        }
        let inst = Instance::zero_costs(d, h);
        let ord = Ordering::linear(vec![0, 1, 2, 3]);
        let model = extend_min_ordering_system(&inst, &ord).unwrap();
        assert_eq!(model.chain_len(0), 4);
        let mut frac = vec![0.0; model.nvars()];
        for (s, val) in [1.0, 0.7, 0.3, 0.0].into_iter().enumerate() {
            frac[model.var(0, s) as usize] = val;
        }
        let state = round_threshold(&model, &frac, 0.5, 0.5);
        assert_eq!(state.rounded_bits(&model, 0), vec![true, true, false, false]);
        assert_eq!(state.image(&model, 0), 1);
    }

    #[test]
    fn integral_values_round_to_the_encoded_map() {
        let d = digraph(2, &[(0, 1), (1, 0)]);
        let h = digraph(2, &[(1, 1), (0, 1), (1, 0)]);
        let inst = Instance::zero_costs(d, h);
        let ord = Ordering::linear(vec![1, 0]);
        let model = extend_min_ordering_system(&inst, &ord).unwrap();
        let mut frac = vec![0.0; model.nvars()];
        for (v, cut) in [(0usize, 0usize), (1, 1)] {
            for s in 0..model.chain_len(v) {
                frac[model.var(v, s) as usize] = if s <= cut { 1.0 } else { 0.0 };
            }
        }
        for x in [0.3, 0.9] {
            let state = round_threshold(&model, &frac, x, 0.5);
            assert_eq!(state.images(&model), vec![1, 0]);
        }
    }

    #[test]
    fn min_max_targets_need_no_repair() {
        let d = digraph(2, &[(0, 1)]);
        let h = digraph(4, &[(0, 2), (0, 3), (1, 3)]);
        let inst = Instance::zero_costs(d, h);
        let ord = Ordering::linear(vec![0, 1, 2, 3]);
        let model = extend_min_ordering_system(&inst, &ord).unwrap();
        let comp = build_completion(&inst.h, &ord).unwrap();
        assert!(comp.eprime().is_empty());
        let mut frac = vec![0.0; model.nvars()];
        fill_chain(&model, &mut frac, 0, 0, 1);
        fill_chain(&model, &mut frac, 1, 0, 3);
        let out = approx_min_ordering(&inst, &model, &comp, &frac, 0.6, 0.5).unwrap();
        assert_eq!(out.state.shifts, 0);
        assert!(out.state.trace.is_empty());
        assert!(validate_hom(&inst, &out.hom.map).is_ok());
    }

    #[test]
    fn one_shift_repairs_the_bipartite_pair() {
        let d = digraph(3, &[(0, 2), (1, 2)]);
        let h = digraph(7, &[(1, 4), (1, 5), (2, 4)]);
        let inst = Instance::zero_costs(d, h);
        let ord = Ordering::linear((0..7).collect());
        let model = extend_min_ordering_system(&inst, &ord).unwrap();
        let comp = build_completion(&inst.h, &ord).unwrap();
        assert!(comp.is_extension_arc(2, 5));
        let mut frac = vec![0.0; model.nvars()];
        fill_chain(&model, &mut frac, 0, 1, 2);
        fill_chain(&model, &mut frac, 1, 1, 2);
        fill_chain(&model, &mut frac, 2, 4, 5);
        let out = approx_min_ordering(&inst, &model, &comp, &frac, 0.6, 0.5).unwrap();
        assert_eq!(
            out.state.trace,
            vec![ShiftStep { vertex: 2, from: 5, to: 4 }]
        );
        assert_eq!(out.hom.map, vec![2, 2, 4]);
    }

    #[test]
    fn a_cascade_moves_five_images_in_sequence() {
        let d = digraph(6, &[(0, 1), (1, 2), (1, 3), (4, 2), (4, 5)]);
        let h = digraph(
            8,
            &[
                (0, 0),
                (0, 1),
                (0, 2),
                (0, 3),
                (1, 0),
                (1, 2),
                (2, 0),
                (2, 5),
                (3, 0),
                (3, 6),
                (3, 7),
                (4, 0),
                (4, 6),
            ],
        );
        let inst = Instance::zero_costs(d, h);
        let ord = Ordering::linear((0..8).collect());
        let model = extend_min_ordering_system(&inst, &ord).unwrap();
        let comp = build_completion(&inst.h, &ord).unwrap();
        assert!(comp.is_extension_arc(1, 3));
        assert!(comp.is_extension_arc(4, 1));
        let mut frac = vec![0.0; model.nvars()];
        for (v, plateau, edge) in [
            (0usize, 0usize, 1usize),
            (1, 2, 3),
            (2, 5, 6),
            (3, 5, 7),
            (4, 2, 4),
            (5, 0, 1),
        ] {
            fill_chain(&model, &mut frac, v, plateau, edge);
        }
        let out = approx_min_ordering(&inst, &model, &comp, &frac, 0.6, 0.5).unwrap();
        assert_eq!(
            out.state.trace,
            vec![
                ShiftStep { vertex: 1, from: 3, to: 2 },
                ShiftStep { vertex: 2, from: 6, to: 5 },
                ShiftStep { vertex: 3, from: 7, to: 5 },
                ShiftStep { vertex: 4, from: 4, to: 2 },
                ShiftStep { vertex: 5, from: 1, to: 0 },
            ]
        );
        assert_eq!(out.hom.map, vec![1, 2, 5, 5, 2, 0]);
    }

    #[test]
    fn leveled_repair_walks_the_cycle_levels() {
        let d = digraph(3, &[(0, 1), (1, 2)]);
        let h = digraph(6, &[(0, 2), (1, 2), (0, 3), (2, 4), (3, 5)]);
        let inst = Instance::zero_costs(d, h);
        let ord = Ordering::leveled((0..6).collect(), vec![0, 0, 1, 1, 2, 2], 3);
        let psi = assign_cycle_levels(&inst.d, 3).unwrap();
        assert_eq!(psi, vec![0, 1, 2]);
        let model = build_kmin_system(&inst, &ord, &psi).unwrap();
        let comp = build_completion(&inst.h, &ord).unwrap();
        assert!(comp.is_extension_arc(1, 3));
        let mut frac = vec![0.0; model.nvars()];
        for (v, vals) in [
            (0usize, [1.0, 0.6]),
            (1, [1.0, 0.6]),
            (2, [1.0, 0.55]),
        ] {
            for (s, val) in vals.into_iter().enumerate() {
                frac[model.var(v, s) as usize] = val;
            }
        }
        let out = approx_min_ordering(&inst, &model, &comp, &frac, 0.5, 0.5).unwrap();
        assert_eq!(
            out.state.trace,
            vec![
                ShiftStep { vertex: 1, from: 3, to: 2 },
                ShiftStep { vertex: 2, from: 5, to: 4 },
            ]
        );
        assert_eq!(out.hom.map, vec![1, 2, 4]);
    }

    #[test]
    fn derandomization_recovers_integral_optima() {
        let d = digraph(2, &[(0, 1), (1, 0)]);
        let h = digraph(2, &[(1, 1), (0, 1), (1, 0)]);
        let costs = vec![
            vec![Cost::Finite(rat_int(2)), Cost::Finite(rat_int(3))],
            vec![Cost::Finite(rat_int(1)), Cost::Finite(rat_int(5))],
        ];
        let inst = Instance::new(d, h, costs);
        let ord = Ordering::linear(vec![1, 0]);
        let model = extend_min_ordering_system(&inst, &ord).unwrap();
        let comp = build_completion(&inst.h, &ord).unwrap();
        let solved = match solve(&model).unwrap() {
            LpOutcome::Optimal(s) => s,
            LpOutcome::Infeasible => panic!("the cover relaxation is feasible"),
        };
        let run = derandomize(&inst, &model, &comp, &solved.values).unwrap();
        let best = brute_force_min(&inst).unwrap().unwrap();
        assert_eq!(run.hom.cost, best.cost);
        assert!(validate_hom(&inst, &run.hom.map).is_ok());
        assert!(!run.capped);
    }

    #[test]
    fn random_repairs_always_terminate_validly() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0002);
        let vc = digraph(2, &[(1, 1), (0, 1), (1, 0)]);
        let staircase = digraph(4, &[(0, 2), (0, 3), (1, 3)]);
        let widened = digraph(4, &[(0, 2), (0, 3), (1, 2)]);
        let mut driven = 0;
        for trial in 0..36 {
            let (h, ord) = match trial % 3 {
                0 => (vc.clone(), Ordering::linear(vec![1, 0])),
                1 => (staircase.clone(), Ordering::linear(vec![0, 1, 2, 3])),
                _ => (widened.clone(), Ordering::linear(vec![0, 1, 2, 3])),
            };
            let n = rng.gen_range(2..=5);
            let mut arcs = Vec::new();
            for u in 0..n {
                for v in 0..n {
                    if u != v && rng.gen_bool(0.35) {
                        arcs.push((u, v));
                    }
                }
            }
            let costs = (0..n)
                .map(|_| {
                    (0..h.n())
                        .map(|_| Cost::Finite(rat_int(rng.gen_range(0..12))))
                        .collect()
                })
                .collect();
            let inst = Instance::new(digraph(n, &arcs), h, costs);
            let brute = brute_force_min(&inst).unwrap();
            let model = match extend_min_ordering_system(&inst, &ord) {
                Ok(m) => m,
                Err(_) => {
                    assert!(brute.is_none());
                    continue;
                }
            };
            let comp = build_completion(&inst.h, &ord).unwrap();
            let solved = match solve(&model).unwrap() {
                LpOutcome::Optimal(s) => s,
                LpOutcome::Infeasible => {
                    assert!(brute.is_none());
                    continue;
                }
            };
            let best = brute.expect("a feasible relaxation implies a homomorphism");
            for _ in 0..4 {
                let x = 1.0 - rng.gen::<f64>();
                let y = 1.0 - rng.gen::<f64>();
                let out = approx_min_ordering(&inst, &model, &comp, &solved.values, x, y).unwrap();
                assert!(validate_hom(&inst, &out.hom.map).is_ok());
                assert!(out.hom.cost >= best.cost);
            }
            let derand = derandomize(&inst, &model, &comp, &solved.values).unwrap();
            let p = inst.h.n() as f64;
            let bound = p * p * solved.value + 1e-6;
            let derand_cost = derand.hom.cost.to_f64().unwrap_or(f64::INFINITY);
            assert!(derand_cost >= best.cost.to_f64().unwrap() - 1e-9);
            assert!(derand_cost <= bound, "trial {trial}");
            driven += 1;
        }
        assert!(driven >= 12);
    }

    #[test]
    fn rotations_pick_levels_per_component() {
        let d = digraph(2, &[]);
        let h = digraph(3, &[(0, 1), (1, 2), (2, 0)]);
        let costs = vec![
            vec![
                Cost::Finite(rat_int(0)),
                Cost::Finite(rat_int(9)),
                Cost::Finite(rat_int(9)),
            ],
            vec![
                Cost::Finite(rat_int(9)),
                Cost::Finite(rat_int(0)),
                Cost::Finite(rat_int(9)),
            ],
        ];
        let inst = Instance::new(d, h, costs);
        let ord = crate::orderings::find_min_ordering(&inst.h, crate::orderings::SearchTarget::KMin(3))
            .unwrap()
            .expect("the directed triangle is cyclically orderable");
        let run = derandomize_kmin(&inst, &ord).unwrap();
        assert_eq!(run.hom.cost, rat_int(0));
        assert_eq!(run.hom.map, vec![0, 1]);
        assert!(run.lp_bound.abs() < 1e-9);
    }

    #[test]
    fn rotation_driver_covers_connected_inputs() {
        let c3 = digraph(3, &[(0, 1), (1, 2), (2, 0)]);
        let inst = Instance::zero_costs(digraph(3, &[(0, 1), (1, 2)]), c3);
        let ord = crate::orderings::find_min_ordering(&inst.h, crate::orderings::SearchTarget::KMin(3))
            .unwrap()
            .expect("the directed triangle is cyclically orderable");
        let run = approx_kmin(&inst, &ord, 0.7, 0.4).unwrap();
        assert!(validate_hom(&inst, &run.hom.map).is_ok());
        assert_eq!(run.hom.cost, rat_int(0));
    }

    #[test]
    fn doubled_cover_run_matches_the_brute_minimum() {
        let d = digraph(3, &[(0, 1), (1, 0), (1, 2), (2, 1)]);
        let h = digraph(2, &[(0, 1), (1, 0), (1, 1)]);
        let costs = vec![
            vec![Cost::Finite(rat_int(0)), Cost::Finite(rat_int(1))],
            vec![Cost::Finite(rat_int(0)), Cost::Finite(rat_int(5))],
            vec![Cost::Finite(rat_int(0)), Cost::Finite(rat_int(1))],
        ];
        let inst = Instance::new(d, h, costs);
        let run = derandomize_biarc(&inst).unwrap();
        assert_eq!(run.hom.cost, rat_int(2));
        assert_eq!(run.hom.map, vec![1, 0, 1]);
        assert!(run.hom.cost.to_f64().unwrap() <= 4.0 * run.lp_bound + 1e-6);
    }

    #[test]
    fn isolated_doubles_stay_aligned() {
        let d = digraph(1, &[]);
        let h = digraph(2, &[(0, 1), (1, 0), (1, 1)]);
        let costs = vec![vec![Cost::Finite(rat_int(0)), Cost::Finite(rat_int(7))]];
        let inst = Instance::new(d, h, costs);
        let run = derandomize_biarc(&inst).unwrap();
        assert_eq!(run.hom.cost, rat_int(0));
        assert_eq!(run.hom.map, vec![0]);
        assert_eq!(run.align_actions, 0);
        assert_eq!(run.shifts, 0);
    }
}
