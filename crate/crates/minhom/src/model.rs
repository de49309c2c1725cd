//! Core data model: digraphs, cost tables, problem instances, orderings,
//! and homomorphisms.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::traits::ToPrimitive;
use num::Zero;
use std::collections::BTreeSet;
use std::fmt;

/// Exact rational scalar used for costs and exact arithmetic throughout.
pub type Rat = BigRational;

/// Builds a rational from an integer numerator and denominator.
pub fn rat(num: i64, den: i64) -> Rat {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Builds a rational from an integer.
pub fn rat_int(v: i64) -> Rat {
    BigRational::from_integer(BigInt::from(v))
}

/// A mapping cost: a nonnegative rational, or infinity for a forbidden image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Cost {
    Finite(Rat),
    Infinite,
}

impl Cost {
    pub fn is_finite(&self) -> bool {
        matches!(self, Cost::Finite(_))
    }

    /// Returns the finite value, panicking on infinity.
    pub fn finite(&self) -> &Rat {
        match self {
            Cost::Finite(r) => r,
            Cost::Infinite => panic!("infinite cost where a finite value was required"),
        }
    }

    pub fn to_f64(&self) -> f64 {
        match self {
            Cost::Finite(r) => r.to_f64().unwrap_or(f64::MAX),
            Cost::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cost::Finite(r) => write!(f, "{}", r),
            Cost::Infinite => write!(f, "inf"),
        }
    }
}

/// A directed graph on vertices `0..n`. Loops are allowed; parallel arcs
/// are collapsed. Arc order is the insertion order with duplicates dropped.
#[derive(Debug, Clone)]
pub struct Digraph {
    n: usize,
    arcs: Vec<(usize, usize)>,
    arc_set: BTreeSet<(usize, usize)>,
    out: Vec<Vec<usize>>,
    inn: Vec<Vec<usize>>,
}

impl Digraph {
    pub fn new(n: usize) -> Self {
        Digraph {
            n,
            arcs: Vec::new(),
            arc_set: BTreeSet::new(),
            out: vec![Vec::new(); n],
            inn: vec![Vec::new(); n],
        }
    }

    pub fn from_arcs(n: usize, arcs: &[(usize, usize)]) -> Self {
        let mut g = Digraph::new(n);
        for &(u, v) in arcs {
            g.add_arc(u, v);
        }
        g
    }

    /// Adds the arc `u -> v` if not already present. Panics on out-of-range
    /// endpoints.
    pub fn add_arc(&mut self, u: usize, v: usize) {
        assert!(u < self.n && v < self.n, "arc endpoint out of range");
        if self.arc_set.insert((u, v)) {
            self.arcs.push((u, v));
            self.out[u].push(v);
            self.inn[v].push(u);
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn arc_count(&self) -> usize {
        self.arcs.len()
    }

    /// Arcs in insertion order.
    pub fn arcs(&self) -> &[(usize, usize)] {
        &self.arcs
    }

    pub fn has_arc(&self, u: usize, v: usize) -> bool {
        self.arc_set.contains(&(u, v))
    }

    pub fn out_neighbors(&self, u: usize) -> &[usize] {
        &self.out[u]
    }

    pub fn in_neighbors(&self, v: usize) -> &[usize] {
        &self.inn[v]
    }

    /// True if for every arc `u -> v` the reverse arc `v -> u` is present.
    pub fn is_symmetric(&self) -> bool {
        self.arcs.iter().all(|&(u, v)| self.has_arc(v, u))
    }

    /// Vertices of the weakly connected component containing `start`.
    pub fn weak_component(&self, start: usize) -> Vec<usize> {
        let mut seen = vec![false; self.n];
        let mut stack = vec![start];
        let mut comp = Vec::new();
        seen[start] = true;
        while let Some(u) = stack.pop() {
            comp.push(u);
            for &v in self.out[u].iter().chain(self.inn[u].iter()) {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        comp.sort_unstable();
        comp
    }

    /// Partition of the vertex set into weakly connected components,
    /// each sorted, ordered by smallest member.
    pub fn weak_components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.n];
        let mut comps = Vec::new();
        for s in 0..self.n {
            if !seen[s] {
                let comp = self.weak_component(s);
                for &v in &comp {
                    seen[v] = true;
                }
                comps.push(comp);
            }
        }
        comps
    }
}

/// A linear or leveled ordering of the target's vertices.
///
/// `perm[i]` is the vertex placed at position `i` (positions are
/// zero-based internally). For leveled orderings, `levels[v]` assigns each
/// vertex to one of `k` circularly ordered levels and the permutation
/// lists level 0's vertices first, then level 1's, and so on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ordering {
    perm: Vec<usize>,
    pos: Vec<usize>,
    levels: Option<Vec<usize>>,
    k: usize,
}

impl Ordering {
    /// A plain linear ordering (a single level).
    pub fn linear(perm: Vec<usize>) -> Self {
        let pos = invert_perm(&perm);
        Ordering { perm, pos, levels: None, k: 1 }
    }

    /// A leveled ordering with `k` levels. The permutation must list the
    /// vertices level by level in increasing level order.
    pub fn leveled(perm: Vec<usize>, levels: Vec<usize>, k: usize) -> Self {
        assert_eq!(perm.len(), levels.len());
        assert!(k >= 1);
        let pos = invert_perm(&perm);
        let mut last = 0usize;
        for &v in &perm {
            assert!(levels[v] < k, "level out of range");
            assert!(levels[v] >= last, "permutation must be grouped by level");
            last = levels[v];
        }
        Ordering { perm, pos, levels: Some(levels), k }
    }

    pub fn p(&self) -> usize {
        self.perm.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Vertex at zero-based position `i`.
    pub fn at(&self, i: usize) -> usize {
        self.perm[i]
    }

    /// Zero-based position of vertex `v`.
    pub fn pos(&self, v: usize) -> usize {
        self.pos[v]
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// Level of vertex `v` (0 for plain linear orderings).
    pub fn level(&self, v: usize) -> usize {
        match &self.levels {
            Some(l) => l[v],
            None => 0,
        }
    }

    pub fn levels(&self) -> Option<&[usize]> {
        self.levels.as_deref()
    }

    /// Positions (ascending) of the vertices in level `l`.
    pub fn level_positions(&self, l: usize) -> Vec<usize> {
        (0..self.p()).filter(|&i| self.level(self.perm[i]) == l).collect()
    }
}

fn invert_perm(perm: &[usize]) -> Vec<usize> {
    let mut pos = vec![usize::MAX; perm.len()];
    for (i, &v) in perm.iter().enumerate() {
        assert!(v < perm.len() && pos[v] == usize::MAX, "not a permutation");
        pos[v] = i;
    }
    pos
}

/// A problem instance: input digraph `D`, target digraph `H`, and a cost
/// table `costs[x][a]` for mapping `x` in `D` to `a` in `H`.
#[derive(Debug, Clone)]
pub struct Instance {
    pub d: Digraph,
    pub h: Digraph,
    pub costs: Vec<Vec<Cost>>,
}

impl Instance {
    pub fn new(d: Digraph, h: Digraph, costs: Vec<Vec<Cost>>) -> Self {
        assert_eq!(costs.len(), d.n(), "one cost row per input vertex");
        for row in &costs {
            assert_eq!(row.len(), h.n(), "one cost entry per target vertex");
        }
        Instance { d, h, costs }
    }

    /// Uniform zero costs (pure existence problem).
    pub fn zero_costs(d: Digraph, h: Digraph) -> Self {
        let costs = vec![vec![Cost::Finite(Rat::zero()); h.n()]; d.n()];
        Instance::new(d, h, costs)
    }

    pub fn cost(&self, x: usize, a: usize) -> &Cost {
        &self.costs[x][a]
    }

    /// The list of allowed images of `x`: targets with finite cost.
    pub fn list(&self, x: usize) -> Vec<usize> {
        (0..self.h.n()).filter(|&a| self.costs[x][a].is_finite()).collect()
    }

    /// True if `a` is an allowed image of `x`.
    pub fn allows(&self, x: usize, a: usize) -> bool {
        self.costs[x][a].is_finite()
    }
}

/// A vertex mapping `V(D) -> V(H)` together with its exact cost.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Homomorphism {
    pub map: Vec<usize>,
    pub cost: Rat,
}

/// Checks that `map` is a homomorphism from `inst.d` to `inst.h` that
/// stays within the finite-cost lists. Returns the index of an offending
/// arc or vertex on failure.
pub fn validate_hom(inst: &Instance, map: &[usize]) -> Result<(), HomViolation> {
    if map.len() != inst.d.n() {
        return Err(HomViolation::WrongLength {
            got: map.len(),
            want: inst.d.n(),
        });
    }
    for (x, &a) in map.iter().enumerate() {
        if a >= inst.h.n() {
            return Err(HomViolation::ImageOutOfRange { vertex: x, image: a });
        }
        if !inst.allows(x, a) {
            return Err(HomViolation::ForbiddenImage { vertex: x, image: a });
        }
    }
    for (idx, &(u, v)) in inst.d.arcs().iter().enumerate() {
        if !inst.h.has_arc(map[u], map[v]) {
            return Err(HomViolation::ArcNotPreserved { arc_index: idx, u, v });
        }
    }
    Ok(())
}

/// Total cost of a mapping; `None` if any image is forbidden.
pub fn eval_cost(inst: &Instance, map: &[usize]) -> Option<Rat> {
    let mut total = Rat::zero();
    for (x, &a) in map.iter().enumerate() {
        match inst.cost(x, a) {
            Cost::Finite(r) => total += r,
            Cost::Infinite => return None,
        }
    }
    Some(total)
}

/// Why a mapping failed validation.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HomViolation {
    #[error("mapping has {got} entries, expected {want}")]
    WrongLength { got: usize, want: usize },
    #[error("vertex {vertex} mapped to out-of-range target {image}")]
    ImageOutOfRange { vertex: usize, image: usize },
    #[error("vertex {vertex} mapped to forbidden target {image}")]
    ForbiddenImage { vertex: usize, image: usize },
    #[error("arc #{arc_index} ({u} -> {v}) not preserved")]
    ArcNotPreserved { arc_index: usize, u: usize, v: usize },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digraph_basics() {
        let g = Digraph::from_arcs(3, &[(0, 1), (1, 2), (0, 1)]);
        assert_eq!(g.arc_count(), 2);
        assert!(g.has_arc(0, 1));
        assert!(!g.has_arc(1, 0));
        assert_eq!(g.out_neighbors(0), &[1]);
        assert_eq!(g.in_neighbors(2), &[1]);
        assert!(!g.is_symmetric());
    }

    #[test]
    fn weak_components_split() {
        let g = Digraph::from_arcs(5, &[(0, 1), (3, 2)]);
        let comps = g.weak_components();
        assert_eq!(comps, vec![vec![0, 1], vec![2, 3], vec![4]]);
    }

    #[test]
    fn ordering_roundtrip() {
        let o = Ordering::linear(vec![2, 0, 1]);
        assert_eq!(o.at(0), 2);
        assert_eq!(o.pos(2), 0);
        assert_eq!(o.pos(1), 2);
        assert_eq!(o.level(1), 0);
    }

    #[test]
    fn leveled_ordering_positions() {
        let o = Ordering::leveled(vec![0, 2, 1, 3], vec![0, 1, 0, 1], 2);
        assert_eq!(o.level_positions(0), vec![0, 1]);
        assert_eq!(o.level_positions(1), vec![2, 3]);
        assert_eq!(o.level(3), 1);
    }

    /// Minimum-cost homomorphism to the target with vertices {0, 1} and
    /// arcs {1->1, 0->1, 1->0} expresses weighted vertex cover of a
    /// symmetric input: the cover is the preimage of 1.
    #[test]
    fn vertex_cover_encoding() {
        let h = Digraph::from_arcs(2, &[(1, 1), (0, 1), (1, 0)]);
        let mut d = Digraph::new(3);
        for &(u, v) in &[(0, 1), (1, 2)] {
            d.add_arc(u, v);
            d.add_arc(v, u);
        }
        let costs = vec![
            vec![Cost::Finite(Rat::zero()), Cost::Finite(rat_int(2))],
            vec![Cost::Finite(Rat::zero()), Cost::Finite(rat_int(1))],
            vec![Cost::Finite(Rat::zero()), Cost::Finite(rat_int(2))],
        ];
        let inst = Instance::new(d, h, costs);
        let cover_middle = vec![0, 1, 0];
        assert!(validate_hom(&inst, &cover_middle).is_ok());
        assert_eq!(eval_cost(&inst, &cover_middle), Some(rat_int(1)));
        let empty_cover = vec![0, 0, 0];
        assert!(matches!(
            validate_hom(&inst, &empty_cover),
            Err(HomViolation::ArcNotPreserved { .. })
        ));
    }

    #[test]
    fn list_from_infinite_costs() {
        let h = Digraph::from_arcs(3, &[(0, 1)]);
        let d = Digraph::from_arcs(1, &[]);
        let costs = vec![vec![
            Cost::Finite(rat(1, 2)),
            Cost::Infinite,
            Cost::Finite(rat_int(3)),
        ]];
        let inst = Instance::new(d, h, costs);
        assert_eq!(inst.list(0), vec![0, 2]);
        assert!(!inst.allows(0, 1));
        assert_eq!(eval_cost(&inst, &[1]), None);
    }
}
