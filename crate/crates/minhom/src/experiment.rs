//! The relaxation-versus-integer experiment harness.
//!
//! For each requested input size the harness generates seeded instances over
//! a fixed target, solves the fractional relaxation, computes the exact
//! integer optimum, runs one randomized rounding pass and the de-randomized
//! grid, and emits one CSV row per instance plus per-size averages. Rows are
//! computed in a worker pool but written in input order, so the CSV is
//! bit-identical for identical configurations.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use num::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fileio::{parse_instance, FileError};
use crate::gen::{generate_instance, GenConfig};
use crate::lp::{
    build_doubling, build_kmin_system, double_graph, extend_min_ordering_system, BuildError,
    LpModel,
};
use crate::model::{eval_cost, rat_int, validate_hom, Digraph, Homomorphism, Instance, Ordering, Rat};
use crate::orderings::{
    assign_cycle_levels, build_completion, find_min_ordering, find_min_ordering_with_levels,
    SearchTarget, SizeLimitExceeded,
};
use crate::round::{
    approx_biarc_graph, approx_kmin, approx_min_ordering, derandomize, derandomize_biarc,
    derandomize_kmin, pruned_double, RoundError,
};
use crate::simplex::{solve, solve_integer, IlpOutcome, LpOutcome, SolveError, SolvedLp};

/// Which pipeline the harness exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    MinOrder,
    KMin,
    BiArcGraph,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::MinOrder => "minorder",
            Variant::KMin => "kmin",
            Variant::BiArcGraph => "biarc-graph",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "minorder" => Ok(Variant::MinOrder),
            "kmin" => Ok(Variant::KMin),
            "biarc-graph" => Ok(Variant::BiArcGraph),
            other => Err(format!("unknown variant `{other}`")),
        }
    }
}

/// Harness parameters. Sizes and repetitions default to the desk-scale
/// preset; costs default to the uniform range [5, 100000].
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Target file path, read by [`run_experiment`].
    pub target: String,
    pub sizes: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub cost_lo: i64,
    pub cost_hi: i64,
    pub variant: Variant,
    /// Arc probability is `density_factor * ln(n) / n`, clamped to [0, 1].
    pub density_factor: f64,
    pub inf_prob: f64,
    /// Levels searched for when a k-min run has no leveled ordering supplied.
    pub kmin_levels: usize,
    /// Node allowance per branch-and-bound solve.
    pub node_budget: usize,
    /// Record wall times per phase; zeros keep the CSV reproducible.
    pub record_times: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            target: String::new(),
            sizes: vec![20, 50, 100, 200],
            reps: 20,
            seed: 1,
            cost_lo: 5,
            cost_hi: 100_000,
            variant: Variant::MinOrder,
            density_factor: 2.0,
            inf_prob: 0.0,
            kmin_levels: 3,
            node_budget: 20_000,
            record_times: false,
        }
    }
}

/// Why a whole run (as opposed to a single row) failed.
#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    File(#[from] FileError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Round(#[from] RoundError),
    #[error(transparent)]
    Search(#[from] SizeLimitExceeded),
    #[error("a generated instance lost feasibility")]
    Infeasible,
    #[error("the target does not fit the variant: {0}")]
    NoOrdering(&'static str),
    #[error("internal invariant failed: {0}")]
    Internal(&'static str),
}

/// Reads the target file named by the config and runs the harness on it.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<String, ExperimentError> {
    let (tinst, ord) = parse_instance(Path::new(&cfg.target))?;
    run_experiment_on(&tinst.h, ord.as_ref(), cfg)
}

/// Runs the harness on an in-memory target, returning the CSV text.
pub fn run_experiment_on(
    h: &Digraph,
    ord: Option<&Ordering>,
    cfg: &ExperimentConfig,
) -> Result<String, ExperimentError> {
    let ord = resolve_structure(h, ord, cfg)?;
    let mut out = String::new();
    let sizes: Vec<String> = cfg.sizes.iter().map(|s| s.to_string()).collect();
    let _ = writeln!(
        out,
        "# harness seed={} sizes={} reps={} costs=[{},{}] variant={} density_factor={} inf_prob={} record_times={}",
        cfg.seed,
        sizes.join("/"),
        cfg.reps,
        cfg.cost_lo,
        cfg.cost_hi,
        cfg.variant,
        cfg.density_factor,
        cfg.inf_prob,
        cfg.record_times,
    );
    let _ = writeln!(
        out,
        "seed,n,p,variant,lp,ilp,approx,derand,gap,ratio,t_lp,t_ilp,t_approx,t_derand"
    );
    let specs: Vec<(u64, usize)> = cfg
        .sizes
        .iter()
        .flat_map(|&n| (0..cfg.reps).map(move |_| n))
        .enumerate()
        .map(|(i, n)| (cfg.seed.wrapping_add(i as u64), n))
        .collect();
    let rows = compute_rows(h, ord.as_ref(), cfg, &specs);
    let p = h.n();
    let mut cursor = 0usize;
    for &n in &cfg.sizes {
        let block = &rows[cursor..cursor + cfg.reps];
        let mut gaps = Vec::new();
        let mut ratios = Vec::new();
        for (i, row) in block.iter().enumerate() {
            let (seed, _) = specs[cursor + i];
            match row {
                Ok(nums) => {
                    let _ = writeln!(
                        out,
                        "{seed},{n},{p},{var},{lp},{ilp},{approx},{derand},{gap},{ratio},{t0},{t1},{t2},{t3}",
                        var = cfg.variant,
                        lp = sig(nums.lp),
                        ilp = sig(nums.ilp),
                        approx = sig(nums.approx),
                        derand = sig(nums.derand),
                        gap = sig(nums.gap),
                        ratio = sig(nums.ratio),
                        t0 = sig(nums.times[0]),
                        t1 = sig(nums.times[1]),
                        t2 = sig(nums.times[2]),
                        t3 = sig(nums.times[3]),
                    );
                    gaps.push(nums.gap);
                    ratios.push(nums.ratio);
                }
                Err(tag) => {
                    let _ = writeln!(out, "{seed},{n},{p},{var},error:{tag},,,,,,,,,", var = cfg.variant);
                }
            }
        }
        let _ = writeln!(
            out,
            "# size {n} rows {}/{} mean_gap {} mean_ratio {}",
            gaps.len(),
            cfg.reps,
            sig(mean(&gaps)),
            sig(mean(&ratios)),
        );
        cursor += cfg.reps;
    }
    Ok(out)
}

fn mean(vals: &[f64]) -> f64 {
    if vals.is_empty() {
        return 0.0;
    }
    vals.iter().sum::<f64>() / vals.len() as f64
}

/// Nine significant digits, stable across platforms.
fn sig(v: f64) -> String {
    format!("{v:.8e}")
}

fn resolve_structure(
    h: &Digraph,
    ord: Option<&Ordering>,
    cfg: &ExperimentConfig,
) -> Result<Option<Ordering>, ExperimentError> {
    match cfg.variant {
        Variant::MinOrder => match ord {
            Some(o) if o.k() == 1 => Ok(Some(o.clone())),
            _ => Ok(Some(
                find_min_ordering(h, SearchTarget::Min)?
                    .ok_or(ExperimentError::NoOrdering("no min-ordering found"))?,
            )),
        },
        Variant::KMin => match ord {
            Some(o) if o.k() > 1 => Ok(Some(o.clone())),
            _ => Ok(Some(
                find_min_ordering(h, SearchTarget::KMin(cfg.kmin_levels))?
                    .ok_or(ExperimentError::NoOrdering("no leveled min-ordering found"))?,
            )),
        },
        Variant::BiArcGraph => {
            let probe = Instance::zero_costs(Digraph::new(1), h.clone());
            let dbl = double_graph(&probe)
                .map_err(|_| ExperimentError::NoOrdering("the target is not symmetric"))?;
            find_min_ordering_with_levels(&dbl.inst.h, &dbl.target_side_levels(), 2)?
                .ok_or(ExperimentError::NoOrdering(
                    "the doubled target admits no two-level min-ordering",
                ))?;
            Ok(None)
        }
    }
}

struct RowNums {
    lp: f64,
    ilp: f64,
    approx: f64,
    derand: f64,
    gap: f64,
    ratio: f64,
    times: [f64; 4],
}

fn compute_rows(
    h: &Digraph,
    ord: Option<&Ordering>,
    cfg: &ExperimentConfig,
    specs: &[(u64, usize)],
) -> Vec<Result<RowNums, String>> {
    let threads = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(specs.len().max(1))
        .min(8);
    let chunk = specs.len().div_ceil(threads.max(1)).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = specs
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|&(seed, n)| {
                            run_row(h, ord, cfg, seed, n)
                                .map_err(|e| e.to_string().replace(',', ";"))
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("row worker"))
            .collect()
    })
}

fn run_row(
    h: &Digraph,
    ord: Option<&Ordering>,
    cfg: &ExperimentConfig,
    seed: u64,
    n: usize,
) -> Result<RowNums, ExperimentError> {
    let density = (cfg.density_factor * (n.max(2) as f64).ln() / n as f64).clamp(0.0, 1.0);
    let gcfg = GenConfig {
        n,
        density,
        cost_lo: cfg.cost_lo,
        cost_hi: cfg.cost_hi,
        inf_prob: cfg.inf_prob,
        symmetric: cfg.variant == Variant::BiArcGraph,
    };
    let levels = ord.and_then(|o| o.levels());
    let inst = generate_instance(h, levels, &gcfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_5A5A_0F0F_F0F0);
    let x = 1.0 - rng.gen::<f64>();
    let y = 1.0 - rng.gen::<f64>();
    match cfg.variant {
        Variant::MinOrder => row_min_order(&inst, ord.expect("resolved"), cfg, x, y),
        Variant::KMin => row_kmin(&inst, ord.expect("resolved"), cfg, x, y),
        Variant::BiArcGraph => row_biarc(&inst, cfg, x, y),
    }
}

fn timed<T>(on: bool, f: impl FnOnce() -> T) -> (T, f64) {
    if !on {
        return (f(), 0.0);
    }
    let start = Instant::now();
    let v = f();
    (v, start.elapsed().as_secs_f64())
}

fn finish(
    lp: Rat,
    ilp: Rat,
    approx: Rat,
    derand: Rat,
    times: [f64; 4],
) -> Result<RowNums, ExperimentError> {
    let gap = ratio_of(&ilp, &lp);
    let ratio = ratio_of(&derand, &lp);
    Ok(RowNums {
        lp: lp.to_f64().unwrap_or(f64::NAN),
        ilp: ilp.to_f64().unwrap_or(f64::NAN),
        approx: approx.to_f64().unwrap_or(f64::NAN),
        derand: derand.to_f64().unwrap_or(f64::NAN),
        gap,
        ratio,
        times,
    })
}

fn ratio_of(num: &Rat, den: &Rat) -> f64 {
    let zero = rat_int(0);
    if *den == zero {
        if *num == zero {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).to_f64().unwrap_or(f64::NAN)
    }
}

/// Accepts the fractional optimum as the integer optimum when it decodes to
/// an integral homomorphism of matching value.
fn integral_shortcut(inst: &Instance, model: &LpModel, solved: &SolvedLp) -> Option<(Vec<usize>, Rat)> {
    if !solved.values.iter().all(|&v| v.min(1.0 - v).abs() < 1e-6) {
        return None;
    }
    let map = model.decode_integral_f64(&solved.values);
    if validate_hom(inst, &map).is_err() {
        return None;
    }
    let cost = eval_cost(inst, &map)?;
    let cost_f = cost.to_f64()?;
    if (cost_f - solved.value).abs() > 1e-6 * cost_f.abs().max(1.0) {
        return None;
    }
    Some((map, cost))
}

fn exact_value(
    inst: &Instance,
    model: &LpModel,
    solved: &SolvedLp,
    warm: Option<&Homomorphism>,
    node_budget: usize,
) -> Result<Rat, ExperimentError> {
    if let Some((_, cost)) = integral_shortcut(inst, model, solved) {
        return Ok(cost);
    }
    match solve_integer(inst, model, warm, node_budget)? {
        IlpOutcome::Optimal(res) => Ok(res.value),
        IlpOutcome::Infeasible => Err(ExperimentError::Infeasible),
    }
}

fn row_min_order(
    inst: &Instance,
    ord: &Ordering,
    cfg: &ExperimentConfig,
    x: f64,
    y: f64,
) -> Result<RowNums, ExperimentError> {
    let (model_solved, t_lp) = timed(cfg.record_times, || -> Result<_, ExperimentError> {
        let model = extend_min_ordering_system(inst, ord)?;
        match solve(&model)? {
            LpOutcome::Optimal(s) => Ok((model, s)),
            LpOutcome::Infeasible => Err(ExperimentError::Infeasible),
        }
    });
    let (model, solved) = model_solved?;
    let lp = solved.certified_lower_bound();
    let comp = build_completion(&inst.h, ord).map_err(BuildError::from)?;
    let (approx_out, t_approx) = timed(cfg.record_times, || {
        approx_min_ordering(inst, &model, &comp, &solved.values, x, y)
    });
    let approx = approx_out?.hom;
    let (derand_out, t_derand) = timed(cfg.record_times, || {
        derandomize(inst, &model, &comp, &solved.values)
    });
    let derand = derand_out?.hom;
    let (ilp_out, t_ilp) = timed(cfg.record_times, || {
        exact_value(inst, &model, &solved, Some(&derand), cfg.node_budget)
    });
    let ilp = ilp_out?;
    finish(lp, ilp, approx.cost, derand.cost, [t_lp, t_ilp, t_approx, t_derand])
}

fn row_kmin(
    inst: &Instance,
    ord: &Ordering,
    cfg: &ExperimentConfig,
    x: f64,
    y: f64,
) -> Result<RowNums, ExperimentError> {
    let (bounds, t_lp_ilp) = timed(cfg.record_times, || kmin_bounds(inst, ord, cfg));
    let (lp, ilp) = bounds?;
    let (approx_out, t_approx) = timed(cfg.record_times, || approx_kmin(inst, ord, x, y));
    let approx = approx_out?.hom;
    let (derand_out, t_derand) = timed(cfg.record_times, || derandomize_kmin(inst, ord));
    let derand = derand_out?.hom;
    finish(lp, ilp, approx.cost, derand.cost, [t_lp_ilp, 0.0, t_approx, t_derand])
}

/// Certified relaxation bound and exact optimum of a leveled run: each weak
/// component takes its best rotation, and components sum.
fn kmin_bounds(
    inst: &Instance,
    ord: &Ordering,
    cfg: &ExperimentConfig,
) -> Result<(Rat, Rat), ExperimentError> {
    let k = ord.k();
    let base = assign_cycle_levels(&inst.d, k)
        .ok_or(ExperimentError::NoOrdering("the input has no cyclic levels"))?;
    let mut lp = rat_int(0);
    let mut ilp = rat_int(0);
    for verts in inst.d.weak_components() {
        let sub = induce(inst, &verts);
        let mut best_lp: Option<Rat> = None;
        let mut best_ilp: Option<Rat> = None;
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
            let bound = solved.certified_lower_bound();
            if best_lp.as_ref().map_or(true, |b| bound < *b) {
                best_lp = Some(bound);
            }
            let value = exact_value(&sub, &model, &solved, None, cfg.node_budget)?;
            if best_ilp.as_ref().map_or(true, |b| value < *b) {
                best_ilp = Some(value);
            }
        }
        lp += best_lp.ok_or(ExperimentError::Infeasible)?;
        ilp += best_ilp.ok_or(ExperimentError::Infeasible)?;
    }
    Ok((lp, ilp))
}

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

fn row_biarc(
    inst: &Instance,
    cfg: &ExperimentConfig,
    x: f64,
    y: f64,
) -> Result<RowNums, ExperimentError> {
    let two = rat_int(2);
    let (pair, t_lp) = timed(cfg.record_times, || -> Result<_, ExperimentError> {
        let dbl = pruned_double(inst)?;
        let ord = find_min_ordering_with_levels(&dbl.inst.h, &dbl.target_side_levels(), 2)?
            .ok_or(ExperimentError::NoOrdering(
                "the doubled target admits no two-level min-ordering",
            ))?;
        let model = build_doubling(&dbl, &ord)?;
        let solved = match solve(&model)? {
            LpOutcome::Optimal(s) => s,
            LpOutcome::Infeasible => return Err(ExperimentError::Infeasible),
        };
        Ok((dbl, model, solved))
    });
    let (dbl, model, solved) = pair?;
    let lp = solved.certified_lower_bound() / &two;
    let (approx_out, t_approx) = timed(cfg.record_times, || approx_biarc_graph(inst, x, y));
    let approx = approx_out?.hom;
    let (derand_out, t_derand) = timed(cfg.record_times, || derandomize_biarc(inst));
    let derand = derand_out?.hom;
    let warm_map: Vec<usize> = derand
        .map
        .iter()
        .copied()
        .chain(derand.map.iter().map(|&a| a + dbl.half_p))
        .collect();
    let warm = Homomorphism {
        map: warm_map,
        cost: &derand.cost * &two,
    };
    let (ilp_out, t_ilp) = timed(cfg.record_times, || {
        exact_value(&dbl.inst, &model, &solved, Some(&warm), cfg.node_budget)
    });
    let ilp = ilp_out? / &two;
    finish(lp, ilp, approx.cost, derand.cost, [t_lp, t_ilp, t_approx, t_derand])
}
