use minhom::gen::{generate_instance, random_minmax_target, GenConfig};
use minhom::lp::{build_base_system, extend_min_ordering_system};
use minhom::model::{rat_int, Rat};
use minhom::orderings::build_completion;
use minhom::simplex::{
    presolve, simplex_solve, solve, solve_exact, CoreLp, ExactLpOutcome, LpOutcome, SimplexOutcome,
};
use num::ToPrimitive;

#[test]
fn probe() {
    let (h, ord) = random_minmax_target(5, 0.45, 3);
    let n = 20usize;
    let density = (2.0 * (n as f64).ln() / n as f64).clamp(0.0, 1.0);
    let gcfg = GenConfig {
        n,
        density,
        cost_lo: 5,
        cost_hi: 100_000,
        inf_prob: 0.0,
        symmetric: false,
    };
    let inst = generate_instance(&h, None, &gcfg, 12);
    let comp = build_completion(&inst.h, &ord).unwrap();
    eprintln!("eprime = {:?}", comp.eprime());

    let ext = extend_min_ordering_system(&inst, &ord).unwrap();
    let base = build_base_system(&inst, &ord).unwrap();

    for (tag, model) in [("ext", &ext), ("base", &base)] {
        let solved = match solve(model).unwrap() {
            LpOutcome::Optimal(s) => s,
            LpOutcome::Infeasible => panic!("float {tag} infeasible"),
        };
        eprintln!("{tag}: float value   = {:.6}", solved.value);
        eprintln!(
            "{tag}: certified     = {:.6}",
            solved.certified_lower_bound().to_f64().unwrap()
        );
        let (values, value) = match solve_exact(model).unwrap() {
            ExactLpOutcome::Optimal { values, value } => (values, value),
            ExactLpOutcome::Infeasible => panic!("exact {tag} infeasible"),
        };
        eprintln!("{tag}: exact value   = {:.6}", value.to_f64().unwrap());
        eprintln!(
            "{tag}: integral      = {}",
            values.iter().all(|r| r.is_integer())
        );
        if values.iter().all(|r| r.is_integer()) {
            let dec: Vec<f64> = values.iter().map(|r| r.to_f64().unwrap()).collect();
            let map = model.decode_integral_f64(&dec);
            eprintln!("{tag}: map           = {map:?}");
            eprintln!("{tag}: valid hom     = {:?}", minhom::model::validate_hom(&inst, &map));
            eprintln!(
                "{tag}: eval cost     = {:?}",
                minhom::model::eval_cost(&inst, &map).map(|c| c.to_f64().unwrap())
            );
        }
    }
    eprintln!("H arcs = {:?}", inst.h.arcs());
    eprintln!("ord = {:?}", (0..5).map(|a| ord.pos(a)).collect::<Vec<_>>());

    let cheap = [1usize, 1, 4, 0, 3, 4, 3, 1, 1, 1, 4, 1, 3, 3, 1, 0, 2, 1, 2, 1];
    let mut vals = vec![0i64; ext.nvars()];
    for v in 0..20 {
        let t_img = ext.slot_of_pos(v, ext.ord.pos(cheap[v]));
        for t in 0..=t_img {
            vals[ext.var(v, t) as usize] = 1;
        }
    }
    let mut violations = 0usize;
    for row in &ext.rows {
        let lhs: i64 = row.terms.iter().map(|&(x, c)| vals[x as usize] * c as i64).sum();
        let ok = match row.op {
            minhom::lp::Op::Le => lhs <= row.rhs as i64,
            minhom::lp::Op::Eq => lhs == row.rhs as i64,
        };
        if !ok {
            violations += 1;
            eprintln!(
                "violated {} row: lhs={lhs} {:?} rhs={} terms={:?}",
                row.family, row.op, row.rhs, row.terms
            );
        }
    }
    eprintln!("violations = {violations}");

    let pre = presolve(&ext, &[]).unwrap();
    let core = &pre.core;
    eprintln!(
        "core: rows={} ncols={} dualize={}",
        core.rows.len(),
        core.ncols,
        core.rows.len() > 200 && core.rows.len() > 2 * core.ncols
    );
    let zero_full = pre.full_values::<Rat>(&vec![rat_int(0); core.ncols]);
    let mut core_cheap: Vec<Option<Rat>> = vec![None; core.ncols];
    let mut consistent = true;
    for j in 0..core.ncols {
        let mut unit = vec![rat_int(0); core.ncols];
        unit[j] = rat_int(1);
        let full = pre.full_values::<Rat>(&unit);
        for v in 0..ext.nvars() {
            if full[v] != zero_full[v] {
                let want = rat_int(vals[v]);
                match &core_cheap[j] {
                    Some(prev) if *prev != want => {
                        consistent = false;
                        eprintln!("merge conflict at core col {j}, model var {v}");
                    }
                    _ => core_cheap[j] = Some(want),
                }
            }
        }
    }
    for v in 0..ext.nvars() {
        let mapped: Rat = {
            let mut unit_sum = zero_full[v].clone();
            for (j, c) in core_cheap.iter().enumerate() {
                if let Some(cv) = c {
                    let mut unit = vec![rat_int(0); core.ncols];
                    unit[j] = rat_int(1);
                    let full = pre.full_values::<Rat>(&unit);
                    if full[v] != zero_full[v] {
                        unit_sum = cv.clone();
                    }
                }
            }
            unit_sum
        };
        if mapped != rat_int(vals[v]) {
            consistent = false;
            eprintln!(
                "fix/merge mismatch at model var {v}: presolve pins {mapped}, cheap point has {}",
                vals[v]
            );
        }
    }
    eprintln!("core mapping consistent = {consistent}");
    let core_x: Vec<Rat> = core_cheap.iter().map(|c| c.clone().unwrap_or_else(|| rat_int(0))).collect();
    let mut core_viol = 0usize;
    for (terms, op, rhs) in &core.rows {
        let mut lhs = rat_int(0);
        for (v, c) in terms {
            lhs += c.clone() * core_x[*v as usize].clone();
        }
        let ok = match op {
            minhom::lp::Op::Le => lhs <= *rhs,
            minhom::lp::Op::Eq => lhs == *rhs,
        };
        if !ok {
            core_viol += 1;
        }
    }
    let mut core_obj = pre.shift.clone();
    for (j, c) in core.obj.iter().enumerate() {
        core_obj += c.clone() * core_x[j].clone();
    }
    eprintln!(
        "core point: violations={core_viol} objective+shift={}",
        core_obj.to_f64().unwrap()
    );

    match simplex_solve(core) {
        SimplexOutcome::Optimal { value, .. } => {
            eprintln!("direct exact core optimum = {}", (value + pre.shift.clone()).to_f64().unwrap())
        }
        other => eprintln!("direct exact core outcome = {other:?}"),
    }

    let m = core.rows.len();
    let nc = core.ncols;
    let mut drows: Vec<(Vec<(u32, Rat)>, minhom::lp::Op, Rat)> = (0..nc)
        .map(|j| (Vec::new(), minhom::lp::Op::Eq, core.obj[j].clone()))
        .collect();
    let mut dobj = Vec::new();
    let mut dlo = Vec::new();
    let mut dhi = Vec::new();
    for (i, (terms, op, rhs)) in core.rows.iter().enumerate() {
        for (v, coeff) in terms {
            drows[*v as usize].0.push((i as u32, -coeff.clone()));
        }
        dobj.push(rhs.clone());
        match op {
            minhom::lp::Op::Le => {
                dlo.push(Some(rat_int(0)));
                dhi.push(None);
            }
            minhom::lp::Op::Eq => {
                dlo.push(None);
                dhi.push(None);
            }
        }
    }
    for j in 0..nc {
        let pi = (m + j) as u32;
        drows[j].0.push((pi, rat_int(1)));
        dobj.push(-core.lo[j].clone().unwrap());
        dlo.push(Some(rat_int(0)));
        dhi.push(None);
    }
    for j in 0..nc {
        let nu = (m + nc + j) as u32;
        drows[j].0.push((nu, rat_int(-1)));
        dobj.push(core.hi[j].clone().unwrap());
        dlo.push(Some(rat_int(0)));
        dhi.push(None);
    }
    let dual = CoreLp {
        ncols: m + 2 * nc,
        rows: drows,
        obj: dobj,
        lo: dlo,
        hi: dhi,
    };
    match simplex_solve(&dual) {
        SimplexOutcome::Optimal { value, duals, .. } => {
            eprintln!(
                "dual exact optimum (negated + shift) = {}",
                (-value + pre.shift.clone()).to_f64().unwrap()
            );
            let px: Vec<Rat> = duals.iter().map(|d| -d.clone()).collect();
            let mut pobj = pre.shift.clone();
            for (j, c) in core.obj.iter().enumerate() {
                pobj += c.clone() * px[j].clone();
            }
            eprintln!("recovered primal objective = {}", pobj.to_f64().unwrap());
            let mut pviol = 0usize;
            for (terms, op, rhs) in &core.rows {
                let mut lhs = rat_int(0);
                for (v, c) in terms {
                    lhs += c.clone() * px[*v as usize].clone();
                }
                let ok = match op {
                    minhom::lp::Op::Le => lhs <= *rhs,
                    minhom::lp::Op::Eq => lhs == *rhs,
                };
                if !ok {
                    pviol += 1;
                }
            }
            let bviol = px
                .iter()
                .enumerate()
                .filter(|(j, x)| {
                    core.lo[*j].as_ref().is_some_and(|l| *x < l)
                        || core.hi[*j].as_ref().is_some_and(|h| *x > h)
                })
                .count();
            eprintln!("recovered primal violations: rows={pviol} bounds={bviol}");
        }
        other => eprintln!("dual exact outcome = {other:?}"),
    }
}
