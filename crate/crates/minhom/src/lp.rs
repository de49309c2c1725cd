//! Linear relaxations of minimum-cost homomorphism instances.
//!
//! Every system works over indicator chains: for each input vertex `v` and
//! each position `i` of the target ordering that `v` may use, a variable
//! encodes "the image of `v` is at this position or later". A chain starts
//! at 1, ends at a sentinel pinned to 0, and decreases monotonically; the
//! image is decoded as the last position whose variable is 1, and the cost
//! of an image is charged on the difference of adjacent chain variables.
//!
//! Four systems share this skeleton:
//! - the base system for min-max-ordered targets (families C2..C7),
//! - its extension for min-ordered targets, which adds rows excluding the
//!   completion arcs and a pair-list family (C8..C12),
//! - the leveled system for k-min-ordered targets (families A2..A12),
//! - the doubled systems on bipartite doubles, one with copy-tying rows in
//!   place of the pair family (CM1..CM12) and one with both (CD1..CD13).
//!
//! Nonnegativity and the implicit upper bound of 1 are kept as variable
//! bounds rather than rows.

use crate::consistency::{
    arc_consistency_on, init_pair_list, pair_consistency_with, EmptyLists, PairConsistency,
};
use crate::model::{Cost, Digraph, Instance, Ordering, Rat};
use crate::orderings::{build_completion, OrderingViolation};
use num::Zero;
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use thiserror::Error;

/// Largest doubled-or-plain input size for which the pair family uses the
/// full pair-consistency fixpoint; larger builds derive each pair list on
/// demand from the arcs alone.
pub const PAIR_CONSISTENCY_LIMIT: usize = 40;

/// Which vertex pairs the pair family ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairScope {
    /// Ordered pairs at undirected distance at most 2 in the input digraph.
    Near,
    /// All ordered pairs of distinct vertices.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    Base,
    Extended,
    KMin,
    DoubledGraph,
    DoubledDigraph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Le,
    Eq,
}

/// One constraint row in canonical form: `terms . x (<=|=) rhs` with
/// deduplicated, ascending variable ids and no zero coefficients.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Row {
    pub family: &'static str,
    pub terms: Vec<(u32, i32)>,
    pub op: Op,
    pub rhs: i32,
}

/// Which vertex and target position a variable stands for; the sentinel at
/// the end of each chain has no position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarMeta {
    pub vertex: usize,
    pub hpos: Option<usize>,
}

/// The variable chain of one input vertex: its variable offset and the
/// target positions it ranges over, ascending.
#[derive(Debug, Clone)]
pub struct ChainInfo {
    pub offset: u32,
    pub positions: Vec<usize>,
}

/// A fully built relaxation, ready for the solver.
#[derive(Debug, Clone)]
pub struct LpModel {
    pub kind: SystemKind,
    pub ord: Ordering,
    /// Level of each input vertex (all zero for linear orderings).
    pub psi: Vec<usize>,
    /// Pruned image lists the rows were generated from.
    pub lists: Vec<BTreeSet<usize>>,
    pub chains: Vec<ChainInfo>,
    pub var_meta: Vec<VarMeta>,
    pub rows: Vec<Row>,
    /// Sparse objective over expanded chain differences.
    pub objective: Vec<(u32, Rat)>,
}

impl LpModel {
    pub fn nvars(&self) -> usize {
        self.var_meta.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.chains.len()
    }

    /// Variable id of `vertex`'s chain slot `slot` (the sentinel is the slot
    /// one past the chain length).
    pub fn var(&self, vertex: usize, slot: usize) -> u32 {
        debug_assert!(slot <= self.chains[vertex].positions.len());
        self.chains[vertex].offset + slot as u32
    }

    pub fn chain_len(&self, vertex: usize) -> usize {
        self.chains[vertex].positions.len()
    }

    /// Chain slot of `vertex` holding the target position `hpos`.
    pub fn slot_of_pos(&self, vertex: usize, hpos: usize) -> usize {
        let ps = &self.chains[vertex].positions;
        ps.binary_search(&hpos)
            .expect("position must belong to the vertex's chain")
    }

    pub fn var_name(&self, var: u32) -> String {
        let meta = &self.var_meta[var as usize];
        match meta.hpos {
            Some(p) => format!("x{}_{}", meta.vertex, p),
            None => format!("x{}_end", meta.vertex),
        }
    }

    /// Decodes a 0/1 solution into an image vector (last slot at 1).
    pub fn decode_integral_f64(&self, vals: &[f64]) -> Vec<usize> {
        self.decode_by(|var| vals[var as usize] >= 0.5)
    }

    /// Exact-arithmetic version of [`Self::decode_integral_f64`].
    pub fn decode_integral_rat(&self, vals: &[Rat]) -> Vec<usize> {
        let half = Rat::new(1.into(), 2.into());
        self.decode_by(|var| vals[var as usize] >= half)
    }

    fn decode_by(&self, mut one: impl FnMut(u32) -> bool) -> Vec<usize> {
        self.chains
            .iter()
            .enumerate()
            .map(|(v, ch)| {
                let mut slot = 0;
                for t in 0..ch.positions.len() {
                    if one(self.var(v, t)) {
                        slot = t;
                    } else {
                        break;
                    }
                }
                self.ord.at(ch.positions[slot])
            })
            .collect()
    }

    /// Number of rows per constraint family.
    pub fn family_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut counts = BTreeMap::new();
        for row in &self.rows {
            *counts.entry(row.family).or_insert(0) += 1;
        }
        counts
    }

    pub fn rows_of(&self, family: &str) -> Vec<&Row> {
        self.rows.iter().filter(|r| r.family == family).collect()
    }

    /// Renders the model in LP text format, rows tagged `FAMILY_ordinal`.
    pub fn dump_lp(&self) -> String {
        let mut out = String::from("Minimize\n obj:");
        if self.objective.is_empty() {
            out.push_str(" 0");
        }
        for (i, (var, coeff)) in self.objective.iter().enumerate() {
            write_term(&mut out, i == 0, coeff, &self.var_name(*var));
        }
        out.push_str("\nSubject To\n");
        let mut seq: HashMap<&'static str, usize> = HashMap::new();
        for row in &self.rows {
            let n = seq.entry(row.family).or_insert(0);
            *n += 1;
            let _ = write!(out, " {}_{}:", row.family, n);
            if row.terms.is_empty() {
                out.push_str(" 0");
            }
            for (i, (var, coeff)) in row.terms.iter().enumerate() {
                write_term(&mut out, i == 0, &Rat::from_integer((*coeff).into()), &self.var_name(*var));
            }
            let op = match row.op {
                Op::Le => "<=",
                Op::Eq => "=",
            };
            let _ = writeln!(out, " {} {}", op, row.rhs);
        }
        out.push_str("Bounds\n");
        for var in 0..self.nvars() as u32 {
            let _ = writeln!(out, " 0 <= {} <= 1", self.var_name(var));
        }
        out.push_str("End\n");
        out
    }
}

fn write_term(out: &mut String, first: bool, coeff: &Rat, name: &str) {
    let neg = coeff < &Rat::zero();
    let abs = if neg { -coeff.clone() } else { coeff.clone() };
    let sign = if neg { "-" } else { "+" };
    if first {
        if neg {
            out.push_str(" -");
        }
    } else {
        let _ = write!(out, " {}", sign);
    }
    if abs.is_integer() {
        let _ = write!(out, " {} {}", abs.numer(), name);
    } else {
        let _ = write!(out, " {} {}", rat_to_f64(&abs), name);
    }
}

fn rat_to_f64(r: &Rat) -> f64 {
    use num::ToPrimitive;
    r.to_f64().unwrap_or(f64::NAN)
}

/// Why a system could not be built.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BuildError {
    #[error("ordering precondition failed: {0}")]
    Ordering(#[from] OrderingViolation),
    #[error("no homomorphism exists: {0}")]
    Infeasible(#[from] EmptyLists),
    #[error("doubling a graph instance requires symmetric arcs in {which}")]
    NotSymmetric { which: &'static str },
}

/// A bipartite double of an instance: input and target vertex sets are both
/// duplicated, every original arc `uv` becomes `u -> v'`, and the copy of a
/// vertex inherits its costs on the copies of the target vertices. Cross-side
/// images are forbidden via infinite costs.
#[derive(Debug, Clone)]
pub struct DoubledInstance {
    pub inst: Instance,
    pub half_n: usize,
    pub half_p: usize,
}

impl DoubledInstance {
    /// Side levels of the doubled input vertices: 0 for originals, 1 for copies.
    pub fn side_levels(&self) -> Vec<usize> {
        (0..2 * self.half_n).map(|v| usize::from(v >= self.half_n)).collect()
    }

    /// Side levels of the doubled target vertices, for leveled ordering search.
    pub fn target_side_levels(&self) -> Vec<usize> {
        (0..2 * self.half_p).map(|a| usize::from(a >= self.half_p)).collect()
    }

    /// Folds a doubled image vector back to original target vertices,
    /// keeping the assignment of the unprimed copy.
    pub fn fold_map(&self, map: &[usize]) -> Vec<usize> {
        (0..self.half_n).map(|v| map[v] % self.half_p).collect()
    }
}

/// Doubles an arbitrary digraph instance.
pub fn double_digraph(inst: &Instance) -> DoubledInstance {
    let n = inst.d.n();
    let p = inst.h.n();
    let mut dstar = Digraph::new(2 * n);
    for &(u, v) in inst.d.arcs() {
        dstar.add_arc(u, n + v);
    }
    let mut hstar = Digraph::new(2 * p);
    for &(a, b) in inst.h.arcs() {
        hstar.add_arc(a, p + b);
    }
    let mut costs = Vec::with_capacity(2 * n);
    for u in 0..2 * n {
        let mut row = Vec::with_capacity(2 * p);
        for a in 0..2 * p {
            let same_side = (u < n) == (a < p);
            row.push(if same_side {
                inst.cost(u % n, a % p).clone()
            } else {
                Cost::Infinite
            });
        }
        costs.push(row);
    }
    DoubledInstance {
        inst: Instance::new(dstar, hstar, costs),
        half_n: n,
        half_p: p,
    }
}

/// Doubles a graph instance; both the input and the target must be symmetric.
pub fn double_graph(inst: &Instance) -> Result<DoubledInstance, BuildError> {
    if !inst.d.is_symmetric() {
        return Err(BuildError::NotSymmetric { which: "the input" });
    }
    if !inst.h.is_symmetric() {
        return Err(BuildError::NotSymmetric { which: "the target" });
    }
    Ok(double_digraph(inst))
}

struct FamilyNames {
    first: &'static str,
    sentinel: &'static str,
    monotone: &'static str,
    list_eq: &'static str,
    arc_lower: &'static str,
    arc_upper: &'static str,
    ep_in_s: &'static str,
    ep_in_end: &'static str,
    ep_out_s: &'static str,
    ep_out_end: &'static str,
    pair: &'static str,
    ties: &'static str,
}

static C_NAMES: FamilyNames = FamilyNames {
    first: "C2",
    sentinel: "C3",
    monotone: "C4",
    list_eq: "C5",
    arc_lower: "C6",
    arc_upper: "C7",
    ep_in_s: "C8",
    ep_in_end: "C9",
    ep_out_s: "C10",
    ep_out_end: "C11",
    pair: "C12",
    ties: "",
};

static A_NAMES: FamilyNames = FamilyNames {
    first: "A2",
    sentinel: "A3",
    monotone: "A4",
    list_eq: "A5",
    arc_lower: "A6",
    arc_upper: "A7",
    ep_in_s: "A8",
    ep_in_end: "A9",
    ep_out_s: "A10",
    ep_out_end: "A11",
    pair: "A12",
    ties: "",
};

static CM_NAMES: FamilyNames = FamilyNames {
    first: "CM2",
    sentinel: "CM3",
    monotone: "CM4",
    list_eq: "CM5",
    arc_lower: "CM6",
    arc_upper: "CM7",
    ep_in_s: "CM9",
    ep_in_end: "CM10",
    ep_out_s: "CM11",
    ep_out_end: "CM12",
    pair: "",
    ties: "CM8",
};

static CD_NAMES: FamilyNames = FamilyNames {
    first: "CD2",
    sentinel: "CD3",
    monotone: "CD4",
    list_eq: "CD5",
    arc_lower: "CD6",
    arc_upper: "CD7",
    ep_in_s: "CD8",
    ep_in_end: "CD9",
    ep_out_s: "CD10",
    ep_out_end: "CD11",
    pair: "CD12",
    ties: "CD13",
};

struct SysCfg {
    kind: SystemKind,
    names: &'static FamilyNames,
    eprime_rows: bool,
    pair: Option<PairScope>,
    /// For doubled systems: (original vertex count, original target size).
    ties: Option<(usize, usize)>,
}

/// Builds the base system C1..C7 for a min-ordered target. Neighbor minima
/// run over the completed arc set, so the integer points of this system
/// correspond to homomorphisms into the completion; the extension rows that
/// cut those back to the original target are left out.
pub fn build_base_system(inst: &Instance, ord: &Ordering) -> Result<LpModel, BuildError> {
    let psi = vec![0; inst.d.n()];
    build_system(
        inst,
        ord,
        &psi,
        SysCfg {
            kind: SystemKind::Base,
            names: &C_NAMES,
            eprime_rows: false,
            pair: None,
            ties: None,
        },
    )
}

/// Builds the full system C1..C12 for a min-ordered target.
pub fn extend_min_ordering_system(inst: &Instance, ord: &Ordering) -> Result<LpModel, BuildError> {
    extend_min_ordering_system_scoped(inst, ord, PairScope::Near)
}

/// Same as [`extend_min_ordering_system`] with an explicit pair-family scope.
pub fn extend_min_ordering_system_scoped(
    inst: &Instance,
    ord: &Ordering,
    scope: PairScope,
) -> Result<LpModel, BuildError> {
    let psi = vec![0; inst.d.n()];
    build_system(
        inst,
        ord,
        &psi,
        SysCfg {
            kind: SystemKind::Extended,
            names: &C_NAMES,
            eprime_rows: true,
            pair: Some(scope),
            ties: None,
        },
    )
}

/// Builds the leveled system A1..A12 for a k-min-ordered target; `psi` gives
/// the cyclic level of every input vertex.
pub fn build_kmin_system(
    inst: &Instance,
    ord: &Ordering,
    psi: &[usize],
) -> Result<LpModel, BuildError> {
    build_system(
        inst,
        ord,
        psi,
        SysCfg {
            kind: SystemKind::KMin,
            names: &A_NAMES,
            eprime_rows: true,
            pair: Some(PairScope::Near),
            ties: None,
        },
    )
}

/// Builds the doubled-graph system CM1..CM12 on a bipartite double whose
/// ordering keeps originals on level 0 and copies on level 1.
pub fn build_doubling(d: &DoubledInstance, ord: &Ordering) -> Result<LpModel, BuildError> {
    check_double_levels(d, ord);
    let psi = d.side_levels();
    build_system(
        &d.inst,
        ord,
        &psi,
        SysCfg {
            kind: SystemKind::DoubledGraph,
            names: &CM_NAMES,
            eprime_rows: true,
            pair: None,
            ties: Some((d.half_n, d.half_p)),
        },
    )
}

/// Builds the doubled-digraph system CD1..CD13, which carries both the pair
/// family and the copy-tying rows.
pub fn build_cd_system(d: &DoubledInstance, ord: &Ordering) -> Result<LpModel, BuildError> {
    check_double_levels(d, ord);
    let psi = d.side_levels();
    build_system(
        &d.inst,
        ord,
        &psi,
        SysCfg {
            kind: SystemKind::DoubledDigraph,
            names: &CD_NAMES,
            eprime_rows: true,
            pair: Some(PairScope::Near),
            ties: Some((d.half_n, d.half_p)),
        },
    )
}

fn check_double_levels(d: &DoubledInstance, ord: &Ordering) {
    assert_eq!(ord.p(), 2 * d.half_p);
    assert_eq!(ord.k(), 2);
    for a in 0..d.half_p {
        assert_eq!(ord.level(a), 0, "original target vertices sit on level 0");
        assert_eq!(ord.level(a + d.half_p), 1, "copies sit on level 1");
    }
}

fn push_row(
    rows: &mut Vec<Row>,
    family: &'static str,
    terms: impl IntoIterator<Item = (u32, i32)>,
    op: Op,
    rhs: i32,
) {
    let mut acc: BTreeMap<u32, i32> = BTreeMap::new();
    for (var, coeff) in terms {
        *acc.entry(var).or_insert(0) += coeff;
    }
    acc.retain(|_, c| *c != 0);
    rows.push(Row {
        family,
        terms: acc.into_iter().collect(),
        op,
        rhs,
    });
}

fn build_system(
    inst: &Instance,
    ord: &Ordering,
    psi: &[usize],
    cfg: SysCfg,
) -> Result<LpModel, BuildError> {
    let d = &inst.d;
    let h = &inst.h;
    let n = d.n();
    let p = h.n();
    let k = ord.k();
    assert_eq!(ord.p(), p);
    assert_eq!(psi.len(), n);
    assert!(psi.iter().all(|&l| l < k));
    for &(u, v) in d.arcs() {
        assert_eq!(
            (psi[u] + 1) % k,
            psi[v],
            "input arcs must advance levels by one"
        );
    }
    let comp = build_completion(h, ord)?;

    let mut lists: Vec<BTreeSet<usize>> = (0..n)
        .map(|v| {
            inst.list(v)
                .into_iter()
                .filter(|&a| ord.level(a) == psi[v])
                .collect()
        })
        .collect();
    let mut pc: Option<PairConsistency> = None;
    if cfg.pair.is_some() && n <= PAIR_CONSISTENCY_LIMIT {
        let full = pair_consistency_with(inst, lists)?;
        lists = full.lists.clone();
        pc = Some(full);
    } else {
        arc_consistency_on(inst, &mut lists)?;
    }

    let mut chains = Vec::with_capacity(n);
    let mut var_meta = Vec::new();
    let mut offset = 0u32;
    for v in 0..n {
        let positions = ord.level_positions(psi[v]);
        if positions.is_empty() {
            return Err(BuildError::Infeasible(EmptyLists::Vertex { vertex: v }));
        }
        let len = positions.len();
        for &q in &positions {
            var_meta.push(VarMeta {
                vertex: v,
                hpos: Some(q),
            });
        }
        var_meta.push(VarMeta {
            vertex: v,
            hpos: None,
        });
        chains.push(ChainInfo { offset, positions });
        offset += len as u32 + 1;
    }
    let var = |v: usize, t: usize| chains[v].offset + t as u32;
    let slot_of = |v: usize, q: usize| -> usize {
        chains[v]
            .positions
            .binary_search(&q)
            .expect("position belongs to the chain")
    };
    let cl = |v: usize| chains[v].positions.len();

    let mut rows = Vec::new();
    for v in 0..n {
        push_row(&mut rows, cfg.names.first, [(var(v, 0), 1)], Op::Eq, 1);
    }
    for v in 0..n {
        push_row(&mut rows, cfg.names.sentinel, [(var(v, cl(v)), 1)], Op::Eq, 0);
    }
    for v in 0..n {
        for t in 0..cl(v) {
            push_row(
                &mut rows,
                cfg.names.monotone,
                [(var(v, t + 1), 1), (var(v, t), -1)],
                Op::Le,
                0,
            );
        }
    }
    for v in 0..n {
        for t in 0..cl(v) {
            let a = ord.at(chains[v].positions[t]);
            if !lists[v].contains(&a) {
                push_row(
                    &mut rows,
                    cfg.names.list_eq,
                    [(var(v, t), 1), (var(v, t + 1), -1)],
                    Op::Eq,
                    0,
                );
            }
        }
    }
    for &(u, v) in d.arcs() {
        for t in 0..cl(u) {
            let a = ord.at(chains[u].positions[t]);
            if let Some(q) = comp.lplus_pos(a) {
                push_row(
                    &mut rows,
                    cfg.names.arc_lower,
                    [(var(u, t), 1), (var(v, slot_of(v, q)), -1)],
                    Op::Le,
                    0,
                );
            }
        }
    }
    for &(u, v) in d.arcs() {
        for t in 0..cl(v) {
            let b = ord.at(chains[v].positions[t]);
            if let Some(q) = comp.lminus_pos(b) {
                push_row(
                    &mut rows,
                    cfg.names.arc_upper,
                    [(var(v, t), 1), (var(u, slot_of(u, q)), -1)],
                    Op::Le,
                    0,
                );
            }
        }
    }

    if cfg.eprime_rows {
        for &(a, b) in comp.eprime() {
            let i = ord.pos(a);
            let j = ord.pos(b);
            for &(u, v) in d.arcs() {
                if psi[u] != ord.level(a) {
                    continue;
                }
                let in_mass: Vec<(u32, i32)> = comp
                    .e_in_positions(b)
                    .iter()
                    .take_while(|&&q| q < i)
                    .filter(|&&q| lists[u].contains(&ord.at(q)))
                    .flat_map(|&q| {
                        let t = slot_of(u, q);
                        [(var(u, t), -1), (var(u, t + 1), 1)]
                    })
                    .collect();
                let s_in = comp
                    .e_in_positions(b)
                    .iter()
                    .copied()
                    .find(|&q| q > i && lists[u].contains(&ord.at(q)));
                match s_in {
                    Some(s) => push_row(
                        &mut rows,
                        cfg.names.ep_in_s,
                        [(var(v, slot_of(v, j)), 1), (var(u, slot_of(u, s)), -1)]
                            .into_iter()
                            .chain(in_mass),
                        Op::Le,
                        0,
                    ),
                    None => {
                        let jt = slot_of(v, j);
                        push_row(
                            &mut rows,
                            cfg.names.ep_in_end,
                            [(var(v, jt), 1), (var(v, jt + 1), -1)]
                                .into_iter()
                                .chain(in_mass),
                            Op::Le,
                            0,
                        )
                    }
                }
                let out_mass: Vec<(u32, i32)> = comp
                    .e_out_positions(a)
                    .iter()
                    .take_while(|&&q| q < j)
                    .filter(|&&q| lists[v].contains(&ord.at(q)))
                    .flat_map(|&q| {
                        let t = slot_of(v, q);
                        [(var(v, t), -1), (var(v, t + 1), 1)]
                    })
                    .collect();
                let s_out = comp
                    .e_out_positions(a)
                    .iter()
                    .copied()
                    .find(|&q| q > j && lists[v].contains(&ord.at(q)));
                match s_out {
                    Some(s) => push_row(
                        &mut rows,
                        cfg.names.ep_out_s,
                        [(var(u, slot_of(u, i)), 1), (var(v, slot_of(v, s)), -1)]
                            .into_iter()
                            .chain(out_mass),
                        Op::Le,
                        0,
                    ),
                    None => {
                        let it = slot_of(u, i);
                        push_row(
                            &mut rows,
                            cfg.names.ep_out_end,
                            [(var(u, it), 1), (var(u, it + 1), -1)]
                                .into_iter()
                                .chain(out_mass),
                            Op::Le,
                            0,
                        )
                    }
                }
            }
        }
    }

    if let Some((half_n, half_p)) = cfg.ties {
        for u in 0..half_n {
            for t in 0..cl(u) {
                let a = ord.at(chains[u].positions[t]);
                let partner = a + half_p;
                let pt = slot_of(u + half_n, ord.pos(partner));
                push_row(
                    &mut rows,
                    cfg.names.ties,
                    [
                        (var(u, t), 1),
                        (var(u, t + 1), -1),
                        (var(u + half_n, pt), -1),
                        (var(u + half_n, pt + 1), 1),
                    ],
                    Op::Eq,
                    0,
                );
            }
        }
    }

    if let Some(scope) = cfg.pair {
        let mut nb: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for &(u, v) in d.arcs() {
            nb[u].insert(v);
            nb[v].insert(u);
        }
        let near = |x: usize, y: usize| {
            nb[x].contains(&y) || nb[x].iter().any(|z| nb[y].contains(z))
        };
        for x in 0..n {
            for y in 0..n {
                if x == y {
                    continue;
                }
                if scope == PairScope::Near && !near(x, y) {
                    continue;
                }
                let plist = match &pc {
                    Some(full) => full.table.get(x, y).cloned().unwrap_or_default(),
                    None => init_pair_list(inst, &lists, x, y),
                };
                let support: Vec<usize> = (0..cl(y))
                    .filter(|&q| lists[y].contains(&ord.at(chains[y].positions[q])))
                    .collect();
                for t in 0..cl(x) {
                    let a = ord.at(chains[x].positions[t]);
                    if !lists[x].contains(&a) {
                        continue;
                    }
                    let j_slots: Vec<usize> = (0..cl(y))
                        .filter(|&q| plist.contains(&(a, ord.at(chains[y].positions[q]))))
                        .collect();
                    if j_slots == support {
                        continue;
                    }
                    push_row(
                        &mut rows,
                        cfg.names.pair,
                        [(var(x, t), 1), (var(x, t + 1), -1)].into_iter().chain(
                            j_slots
                                .iter()
                                .flat_map(|&q| [(var(y, q), -1), (var(y, q + 1), 1)]),
                        ),
                        Op::Le,
                        0,
                    );
                }
            }
        }
    }

    let mut objective = Vec::new();
    for v in 0..n {
        let finite = |t: usize| -> Rat {
            if t < cl(v) {
                match inst.cost(v, ord.at(chains[v].positions[t])) {
                    Cost::Finite(c) => c.clone(),
                    Cost::Infinite => Rat::zero(),
                }
            } else {
                Rat::zero()
            }
        };
        for t in 0..=cl(v) {
            let coeff = finite(t) - if t > 0 { finite(t - 1) } else { Rat::zero() };
            if !coeff.is_zero() {
                objective.push((var(v, t), coeff));
            }
        }
    }

    Ok(LpModel {
        kind: cfg.kind,
        ord: ord.clone(),
        psi: psi.to_vec(),
        lists,
        chains,
        var_meta,
        rows,
        objective,
    })
}
