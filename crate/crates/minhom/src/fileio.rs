//! Line-oriented instance files.
//!
//! The format is UTF-8 text, one directive per line, `#` starting a comment:
//!
//! ```text
//! h <p>              target vertex count, then one `ha <i> <j>` per arc
//! order <i0> ...     optional claimed ordering, verified before use
//! levels <l0> ...    optional level per target vertex, makes the order cyclic
//! d <n>              input vertex count, then one `da <x> <y>` per arc
//! c <x> <i> <value>  mapping cost; integers, `a/b` rationals, or `inf`
//! sym                both digraphs are undirected; arcs close automatically
//! ```
//!
//! Unspecified costs default to zero. Files carrying only the `h` section
//! describe a bare target.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::model::{rat_int, Cost, Digraph, Instance, Ordering, Rat};
use crate::orderings::{verify_min_ordering, OrderingRule, OrderingViolation};

/// Why an instance file was rejected.
#[derive(Debug, Error)]
pub enum FileError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("the supplied ordering is not valid: {0}")]
    BadOrder(#[from] OrderingViolation),
}

fn parse_fail<T>(line: usize, msg: impl Into<String>) -> Result<T, FileError> {
    Err(FileError::Parse {
        line,
        msg: msg.into(),
    })
}

/// Reads and parses an instance file. A verified ordering is returned when
/// the file claims one.
pub fn parse_instance(path: &Path) -> Result<(Instance, Option<Ordering>), FileError> {
    parse_instance_str(&std::fs::read_to_string(path)?)
}

/// Parses instance text. See the module docs for the format.
pub fn parse_instance_str(text: &str) -> Result<(Instance, Option<Ordering>), FileError> {
    let mut p: Option<usize> = None;
    let mut n: Option<usize> = None;
    let mut h_arcs: Vec<(usize, usize)> = Vec::new();
    let mut d_arcs: Vec<(usize, usize)> = Vec::new();
    let mut order: Option<(usize, Vec<usize>)> = None;
    let mut levels: Option<(usize, Vec<usize>)> = None;
    let mut cost_lines: Vec<(usize, usize, usize, Cost)> = Vec::new();
    let mut sym = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        let mut tok = content.split_whitespace();
        let Some(head) = tok.next() else { continue };
        let rest: Vec<&str> = tok.collect();
        match head {
            "h" => {
                if p.is_some() {
                    return parse_fail(line, "duplicate target declaration");
                }
                p = Some(parse_count(line, &rest, "h")?);
            }
            "ha" => {
                let p = require(line, p, "target size must be declared before its arcs")?;
                h_arcs.push(parse_arc(line, &rest, p, "ha")?);
            }
            "order" => {
                let p = require(line, p, "target size must be declared before an ordering")?;
                let perm = parse_indices(line, &rest, p, "order")?;
                if perm.len() != p {
                    return parse_fail(line, format!("order must list all {p} target vertices"));
                }
                let mut seen = vec![false; p];
                for &v in &perm {
                    if std::mem::replace(&mut seen[v], true) {
                        return parse_fail(line, format!("vertex {v} repeats in the order"));
                    }
                }
                order = Some((line, perm));
            }
            "levels" => {
                let p = require(line, p, "target size must be declared before levels")?;
                let ls = parse_indices(line, &rest, usize::MAX, "levels")?;
                if ls.len() != p {
                    return parse_fail(line, format!("levels must list all {p} target vertices"));
                }
                levels = Some((line, ls));
            }
            "d" => {
                if n.is_some() {
                    return parse_fail(line, "duplicate input declaration");
                }
                n = Some(parse_count(line, &rest, "d")?);
            }
            "da" => {
                let n = require(line, n, "input size must be declared before its arcs")?;
                d_arcs.push(parse_arc(line, &rest, n, "da")?);
            }
            "c" => {
                let p = require(line, p, "target size must be declared before costs")?;
                let n = require(line, n, "input size must be declared before costs")?;
                if rest.len() != 3 {
                    return parse_fail(line, "costs take an input vertex, a target vertex, and a value");
                }
                let x = parse_index(line, rest[0], n, "input vertex")?;
                let a = parse_index(line, rest[1], p, "target vertex")?;
                cost_lines.push((line, x, a, parse_cost(line, rest[2])?));
            }
            "sym" => {
                if !rest.is_empty() {
                    return parse_fail(line, "the sym flag takes no arguments");
                }
                sym = true;
            }
            other => return parse_fail(line, format!("unknown directive `{other}`")),
        }
    }
    let Some(p) = p else {
        return parse_fail(text.lines().count().max(1), "missing target declaration `h <p>`");
    };
    let n = n.unwrap_or(0);
    let mut h = Digraph::new(p);
    for &(a, b) in &h_arcs {
        h.add_arc(a, b);
        if sym {
            h.add_arc(b, a);
        }
    }
    let mut d = Digraph::new(n);
    for &(x, y) in &d_arcs {
        d.add_arc(x, y);
        if sym {
            d.add_arc(y, x);
        }
    }
    let mut costs = vec![vec![Cost::Finite(rat_int(0)); p]; n];
    for (_, x, a, cost) in cost_lines {
        costs[x][a] = cost;
    }
    let ord = match (order, levels) {
        (None, _) => None,
        (Some((_, perm)), None) => {
            let ord = Ordering::linear(perm);
            verify_min_ordering(&h, &ord, OrderingRule::Min)?;
            Some(ord)
        }
        (Some((oline, perm)), Some((_, ls))) => {
            let k = ls.iter().max().map_or(1, |&m| m + 1);
            let mut last = 0usize;
            for &v in &perm {
                if ls[v] < last {
                    return parse_fail(oline, "the order must group target vertices by level");
                }
                last = ls[v];
            }
            let ord = Ordering::leveled(perm, ls, k);
            verify_min_ordering(&h, &ord, OrderingRule::Min)?;
            Some(ord)
        }
    };
    Ok((Instance::new(d, h, costs), ord))
}

fn require(line: usize, v: Option<usize>, msg: &str) -> Result<usize, FileError> {
    v.map_or_else(|| parse_fail(line, msg), Ok)
}

fn parse_count(line: usize, rest: &[&str], what: &str) -> Result<usize, FileError> {
    if rest.len() != 1 {
        return parse_fail(line, format!("`{what}` takes exactly one count"));
    }
    rest[0]
        .parse()
        .map_err(|_| FileError::Parse {
            line,
            msg: format!("`{}` is not a vertex count", rest[0]),
        })
}

fn parse_arc(line: usize, rest: &[&str], bound: usize, what: &str) -> Result<(usize, usize), FileError> {
    if rest.len() != 2 {
        return parse_fail(line, format!("`{what}` takes exactly two vertices"));
    }
    Ok((
        parse_index(line, rest[0], bound, "tail")?,
        parse_index(line, rest[1], bound, "head")?,
    ))
}

fn parse_index(line: usize, tok: &str, bound: usize, what: &str) -> Result<usize, FileError> {
    let v: usize = tok.parse().map_err(|_| FileError::Parse {
        line,
        msg: format!("`{tok}` is not a {what} index"),
    })?;
    if v >= bound {
        return parse_fail(line, format!("{what} {v} is out of range (size {bound})"));
    }
    Ok(v)
}

fn parse_indices(line: usize, rest: &[&str], bound: usize, what: &str) -> Result<Vec<usize>, FileError> {
    rest.iter()
        .map(|tok| parse_index(line, tok, bound, what))
        .collect()
}

fn parse_cost(line: usize, tok: &str) -> Result<Cost, FileError> {
    if tok == "inf" {
        return Ok(Cost::Infinite);
    }
    if let Ok(i) = tok.parse::<i64>() {
        if i < 0 {
            return parse_fail(line, "costs must be nonnegative");
        }
        return Ok(Cost::Finite(rat_int(i)));
    }
    match Rat::from_str(tok) {
        Ok(r) if r >= rat_int(0) => Ok(Cost::Finite(r)),
        Ok(_) => parse_fail(line, "costs must be nonnegative"),
        Err(_) => parse_fail(line, format!("`{tok}` is not a cost value")),
    }
}

/// Renders an instance (and optionally its ordering) in the file format.
/// Only nonzero costs are written.
pub fn instance_to_string(inst: &Instance, ord: Option<&Ordering>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "h {}", inst.h.n());
    for &(a, b) in inst.h.arcs() {
        let _ = writeln!(out, "ha {a} {b}");
    }
    if let Some(ord) = ord {
        let _ = write!(out, "order");
        for i in 0..ord.p() {
            let _ = write!(out, " {}", ord.at(i));
        }
        let _ = writeln!(out);
        if let Some(ls) = ord.levels() {
            let _ = write!(out, "levels");
            for &l in ls {
                let _ = write!(out, " {l}");
            }
            let _ = writeln!(out);
        }
    }
    let _ = writeln!(out, "d {}", inst.d.n());
    for &(x, y) in inst.d.arcs() {
        let _ = writeln!(out, "da {x} {y}");
    }
    let zero = rat_int(0);
    for x in 0..inst.d.n() {
        for a in 0..inst.h.n() {
            match inst.cost(x, a) {
                Cost::Infinite => {
                    let _ = writeln!(out, "c {x} {a} inf");
                }
                Cost::Finite(r) if *r != zero => {
                    let _ = writeln!(out, "c {x} {a} {r}");
                }
                Cost::Finite(_) => {}
            }
        }
    }
    out
}

/// Writes an instance file. See [`instance_to_string`].
pub fn write_instance(
    path: &Path,
    inst: &Instance,
    ord: Option<&Ordering>,
) -> Result<(), FileError> {
    std::fs::write(path, instance_to_string(inst, ord))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{generate_instance, random_kmin_target, GenConfig};
    use num::BigInt;

    fn big(i: i64) -> BigInt {
        BigInt::from(i)
    }

    #[test]
    fn a_minimal_file_parses_to_one_arc() {
        let (inst, ord) = parse_instance_str("h 2\nha 0 1\nd 2\nda 0 1\n").unwrap();
        assert_eq!(inst.h.arcs(), &[(0, 1)]);
        assert_eq!(inst.d.arcs(), &[(0, 1)]);
        assert!(ord.is_none());
        assert_eq!(inst.cost(0, 0), &Cost::Finite(rat_int(0)));
    }

    #[test]
    fn infinite_costs_leave_the_list() {
        let (inst, _) = parse_instance_str("h 2\nha 0 1\nd 1\nc 0 1 inf\n").unwrap();
        assert_eq!(inst.cost(0, 1), &Cost::Infinite);
        assert_eq!(inst.list(0), vec![0]);
    }

    #[test]
    fn a_bad_order_line_is_rejected() {
        let text = "h 5\nha 0 3\nha 1 2\norder 0 1 2 3 4\nd 1\n";
        match parse_instance_str(text) {
            Err(FileError::BadOrder(_)) => {}
            other => panic!("expected an ordering rejection, got {other:?}"),
        }
    }

    #[test]
    fn a_valid_order_line_attaches() {
        let text = "h 2\nha 1 1\nha 0 1\nha 1 0\norder 1 0\nd 2\nda 0 1\nda 1 0\n";
        let (_, ord) = parse_instance_str(text).unwrap();
        let ord = ord.unwrap();
        assert_eq!(ord.at(0), 1);
        assert_eq!(ord.at(1), 0);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match parse_instance_str("h 2\nha 0\n") {
            Err(FileError::Parse { line: 2, .. }) => {}
            other => panic!("expected a parse error on line 2, got {other:?}"),
        }
        match parse_instance_str("h 2\nha 0 5\n") {
            Err(FileError::Parse { line: 2, .. }) => {}
            other => panic!("expected a range error on line 2, got {other:?}"),
        }
        match parse_instance_str("d 1\n") {
            Err(FileError::Parse { .. }) => {}
            other => panic!("expected a missing-target error, got {other:?}"),
        }
    }

    #[test]
    fn the_sym_flag_closes_both_digraphs() {
        let (inst, _) = parse_instance_str("sym\nh 2\nha 0 1\nd 2\nda 0 1\n").unwrap();
        assert!(inst.h.has_arc(1, 0));
        assert!(inst.d.has_arc(1, 0));
        assert!(inst.h.is_symmetric());
    }

    #[test]
    fn comments_and_rationals_parse() {
        let text = "# cover weights\nh 2\nha 0 1\nd 1\nc 0 0 3/2\nc 0 1 7\n";
        let (inst, _) = parse_instance_str(text).unwrap();
        assert_eq!(
            inst.cost(0, 0),
            &Cost::Finite(Rat::new(big(3), big(2)))
        );
        assert_eq!(inst.cost(0, 1), &Cost::Finite(rat_int(7)));
    }

    #[test]
    fn written_instances_parse_back_identically() {
        let (h, ord) = random_kmin_target(6, 3, 0.6, 5);
        let cfg = GenConfig {
            n: 9,
            density: 0.5,
            inf_prob: 0.25,
            ..GenConfig::default()
        };
        let inst = generate_instance(&h, ord.levels(), &cfg, 4);
        let text = instance_to_string(&inst, Some(&ord));
        let (back, back_ord) = parse_instance_str(&text).unwrap();
        assert_eq!(inst.h.arcs(), back.h.arcs());
        assert_eq!(inst.d.arcs(), back.d.arcs());
        for x in 0..inst.d.n() {
            for a in 0..inst.h.n() {
                assert_eq!(inst.cost(x, a), back.cost(x, a));
            }
        }
        let back_ord = back_ord.unwrap();
        assert_eq!(back_ord.perm(), ord.perm());
        assert_eq!(back_ord.levels(), ord.levels());
    }
}
