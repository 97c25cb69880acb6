//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

mod common;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use sdpack::analysis::{self, BoundednessCertificate};
use sdpack::linalg::{self, SymMatrix};
use sdpack::model::{parse_problem, CombinedProblem, Criterion, DesignProblem, Experiment, PackingProblem, Problem, Resource, Status};
use sdpack::reduce::{self, lift_solution, project_packing};
use sdpack::solve::{kkt_check, solve_combined_eta, solve_design, solve_packing_lowrank, solve_sdp, solve_socp, SolveOptions};

type Outcome = Result<String, String>;
type Check = (&'static str, fn() -> Outcome);

const UNATTAINED_SUP: &str = r#"{
    "kind": "combined",
    "C": [[2.43, 0.27], [0.27, 0.03]],
    "constraints": [
        {"M": [[0, 0], [0, 0]], "b": 1},
        {"M": [[1, 0], [0, 0]], "b": 1},
        {"M": [[0, 0], [0, 1]], "b": 1}
    ],
    "h0": [-1, -3],
    "h": [[1, 0], [0, 1], [3, 1]]
}"#;

fn unattained_sup() -> CombinedProblem {
    match parse_problem(UNATTAINED_SUP).unwrap() {
        Problem::Combined(p) => p,
        _ => unreachable!(),
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok { Ok(()) } else { Err(msg()) }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn nondecreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0))
}

fn unattained_sup_golden() -> Outcome {
    let p = unattained_sup();
    let mu = [0.1, 2.7, 0.3];
    let s = p.m().iter().zip(mu).fold(DMatrix::zeros(2, 2), |acc, (m, u)| acc + m.as_matrix() * u) - p.c().as_matrix();
    let min_eig = common::min_eig(&s);
    ensure(min_eig >= -1e-9, || format!("dual slack min eigenvalue {min_eig:e}"))?;
    let eq = p.h0() + p.h() * DVector::from_column_slice(&mu);
    ensure(eq.amax() <= 1e-12, || format!("h0 + H mu = {eq:?}"))?;
    let dual: f64 = p.b().iter().zip(mu).map(|(b, u)| b * u).sum();
    ensure((dual - 3.1).abs() <= 1e-12, || format!("mu'b = {dual}"))?;

    let k = 1e6_f64;
    let x = DVector::from_vec(vec![(3.0 + k).sqrt(), k.sqrt()]);
    let lambda = DVector::from_vec(vec![-1.0, k + 2.0]);
    let xx = SymMatrix::outer(&x);
    let viol = p.max_violation(&xx, None, &lambda);
    ensure(viol <= 1e-6, || format!("sequence point violates a constraint by {viol:e}"))?;
    let seq = p.objective(&xx, None, &lambda);
    ensure((seq - 3.1).abs() <= 1e-3, || format!("sequence objective {seq}"))?;

    let out = solve_combined_eta(&p, &SolveOptions::default()).map_err(|e| e.to_string())?;
    let v = &out.solution.path_values;
    ensure(nondecreasing(v), || format!("path values {v:?}"))?;
    let last = v[v.len() - 1];
    ensure((last - 3.1).abs() <= 1e-3, || format!("path limit {last}"))?;
    ensure(out.solution.status == Status::AsymptoticSup, || format!("status {:?}", out.solution.status))?;
    ensure(out.solution.path_ranks.iter().all(|&r| r <= 1), || format!("ranks {:?}", out.solution.path_ranks))?;
    Ok(format!("sequence {seq:.9}, path limit {last:.9}, status {:?}", out.solution.status))
}

fn rank_property() -> Outcome {
    let mut rng = common::rng(2);
    let opts = SolveOptions::default();
    let mut worst = 0.0_f64;
    for case in 0..50 {
        let n = rng.random_range(2..=8);
        let l = rng.random_range(1..=6);
        let r = rng.random_range(1..=3_usize).min(n);
        let p = common::packing(&mut rng, n, l, r);
        let low = solve_packing_lowrank(&p, &opts).map_err(|e| format!("case {case}: {e}"))?;
        let oracle = solve_sdp(&p, &opts).map_err(|e| format!("case {case} oracle: {e}"))?;
        let (v, o) = (low.solution.objective.unwrap(), oracle.report.dual_value);
        worst = worst.max(rel(v, o));
        ensure(rel(v, o) <= 1e-5, || format!("case {case} (n {n}, l {l}, r {r}): value {v} vs oracle {o}"))?;
        let k = linalg::rank_tol(&low.solution.x, Some(1e-6)).unwrap();
        ensure(k <= r, || format!("case {case}: rank {k} > rank C = {r}"))?;
    }
    Ok(format!("50 instances, worst relative gap {worst:.3e}"))
}

fn socp_equivalence() -> Outcome {
    let mut rng = common::rng(3);
    let opts = SolveOptions::default();
    let mut worst = 0.0_f64;
    for case in 0..25 {
        let n = rng.random_range(1..=6);
        let l = rng.random_range(1..=5);
        let p = common::packing(&mut rng, n, l, 1);
        let c = reduce::rank_one_factor(p.c()).map_err(|e| e.to_string())?;
        let s = reduce::to_socp_rank1(&p).map_err(|e| format!("case {case}: {e}"))?;
        let r = solve_socp(&s, &opts).map_err(|e| format!("case {case}: {e}"))?;
        let v = c.dot(&r.x).powi(2);
        let oracle = solve_sdp(&p, &opts).map_err(|e| format!("case {case} oracle: {e}"))?.report.dual_value;
        worst = worst.max(rel(v, oracle));
        ensure(rel(v, oracle) <= 1e-6, || format!("case {case}: (c'x)^2 = {v} vs oracle {oracle}"))?;
        let low = solve_packing_lowrank(&p, &opts).map_err(|e| format!("case {case}: {e}"))?;
        ensure(low.report.route == "socp", || format!("case {case}: route {}", low.report.route))?;
        let k = kkt_check(&p, &low.solution.x, &low.solution.mu, 1e-6);
        ensure(k.pass, || format!("case {case}: KKT residuals {:?}", k.residuals))?;
    }
    Ok(format!("25 instances, worst relative gap {worst:.3e}"))
}

fn certificates() -> Outcome {
    let mut rng = common::rng(4);
    for case in 0..20 {
        let n = rng.random_range(2..=6);
        let k = rng.random_range(1..n);
        let q = common::orthogonal(&mut rng, n);
        let qc = q.columns(0, k).into_owned();
        let qm = q.columns(k, n - k).into_owned();
        let fc = &qc * common::gaussian_like(&mut rng, k, k);
        let c = SymMatrix::new(&fc * fc.transpose()).unwrap();
        let l = rng.random_range(1..=4);
        let ms: Vec<SymMatrix> = (0..l)
            .map(|_| {
                let f = &qm * common::gaussian_like(&mut rng, n - k, n - k);
                SymMatrix::new(&f * f.transpose()).unwrap()
            })
            .collect();
        let b: Vec<f64> = (0..l).map(|_| rng.random_range(0.5..2.0)).collect();
        let p = PackingProblem::from_parts(c, ms, b).unwrap();
        let cert = analysis::check_bounded(&p).map_err(|e| e.to_string())?;
        let BoundednessCertificate::Unbounded { ray, .. } = cert else {
            return Err(format!("unbounded case {case} certified bounded"));
        };
        let h = DVector::from_vec(ray);
        let hn = h.norm();
        for m in p.constraints() {
            let ah = (h.transpose() * m.m.as_matrix() * &h)[0].max(0.0).sqrt();
            ensure(ah <= 1e-8 * hn, || format!("unbounded case {case}: |A_i h| = {ah:e}"))?;
        }
        let x = SymMatrix::outer(&h).scale(1e6);
        for m in p.constraints() {
            ensure(m.m.dot(&x) <= m.b, || format!("unbounded case {case}: 1e6 hh' infeasible"))?;
        }
        let obj = p.objective(&x);
        ensure(obj >= 1e4 * p.c().norm(), || format!("unbounded case {case}: objective {obj} along the ray"))?;
    }
    for case in 0..20 {
        let n = rng.random_range(1..=6);
        let l = rng.random_range(1..=5);
        let r = rng.random_range(1..=n);
        let p = common::packing(&mut rng, n, l, r);
        let BoundednessCertificate::Bounded { lambda, .. } = analysis::check_bounded(&p).map_err(|e| e.to_string())? else {
            return Err(format!("bounded case {case} certified unbounded"));
        };
        let s = p.sum_m().as_matrix() * lambda - p.c().as_matrix();
        let e = common::min_eig(&s);
        ensure(e >= -1e-8, || format!("bounded case {case}: min eigenvalue {e:e}"))?;
    }
    Ok("20 rays and 20 dual scalars verified".into())
}

fn reduction() -> Outcome {
    let mut rng = common::rng(5);
    let opts = SolveOptions::default();
    for case in 0..20 {
        let n = rng.random_range(3..=6);
        let d = rng.random_range(2..n);
        let z = rng.random_range(1..d);
        let q = common::orthogonal(&mut rng, n);
        let u = q.columns(0, d).into_owned();
        let uz = q.columns(0, z).into_owned();
        let lz = rng.random_range(1..=2);
        let lp = rng.random_range(1..=3);
        let mut ms = Vec::new();
        let mut b = Vec::new();
        for _ in 0..lz {
            let f = &uz * common::gaussian_like(&mut rng, z, z);
            ms.push(SymMatrix::new(&f * f.transpose()).unwrap());
            b.push(0.0);
        }
        for _ in 0..lp {
            let f = &u * common::gaussian_like(&mut rng, d, d);
            ms.push(SymMatrix::new(&f * f.transpose()).unwrap());
            b.push(rng.random_range(0.5..2.0));
        }
        let rc = rng.random_range(1..=d);
        let fc = &u * common::gaussian_like(&mut rng, d, rc);
        let p = PackingProblem::from_parts(SymMatrix::new(&fc * fc.transpose()).unwrap(), ms, b).unwrap();
        ensure(common::rank(p.sum_m().as_matrix(), 1e-10) < n, || format!("case {case}: sum of M_i has full rank"))?;

        let (red, map) = project_packing(&p).map_err(|e| format!("case {case}: {e}"))?;
        ensure(red.primal_strict(), || format!("case {case}: reduced problem not strictly primal feasible"))?;
        ensure(red.dual_strict(), || format!("case {case}: reduced problem not strictly dual feasible"))?;
        let inner = red.inner.as_ref().ok_or_else(|| format!("case {case}: empty reduction"))?;

        let zr = common::psd(&mut rng, inner.n(), inner.n());
        let worst = inner.constraints().iter().map(|k| k.m.dot(&zr) / k.b).fold(0.0_f64, f64::max);
        let zr = zr.scale(1.0 / worst);
        let x = lift_solution(&zr, &map).map_err(|e| e.to_string())?;
        let (vr, vx) = (inner.objective(&zr), p.objective(&x));
        ensure((vr - vx).abs() <= 1e-10 * vr.abs().max(1.0), || format!("case {case}: objective {vr} lifts to {vx}"))?;
        for (i, k) in p.constraints().iter().enumerate() {
            let g = k.m.dot(&x) - k.b;
            ensure(g <= 1e-8, || format!("case {case}: lifted point violates constraint {i} by {g:e}"))?;
        }

        let full = solve_packing_lowrank(&p, &opts).map_err(|e| format!("case {case}: {e}"))?.solution.objective.unwrap();
        let small = solve_sdp(inner, &opts).map_err(|e| format!("case {case} reduced: {e}"))?.report.dual_value;
        ensure(rel(full, small) <= 1e-6, || format!("case {case}: optimum {full} vs reduced {small}"))?;
    }
    Ok("20 instances reduced and lifted".into())
}

fn two_experiments(k: DMatrix<f64>, criterion: Criterion, resource: Option<Resource>) -> DesignProblem {
    let exps = vec![
        Experiment { a: None, m: SymMatrix::from_diagonal(&[1.0, 0.0]) },
        Experiment { a: None, m: SymMatrix::from_diagonal(&[0.0, 1.0]) },
    ];
    DesignProblem::new(exps, k, criterion, resource).unwrap()
}

fn designs() -> Outcome {
    let opts = SolveOptions::default();
    let m1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
    let m2 = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);

    let mut grid = (f64::INFINITY, 0.0);
    for k in 1..10_000 {
        let w = k as f64 * 1e-4;
        let v = common::variance_2x2(&(&m1 * w + &m2 * (1.0 - w)), &[1.0, 1.0]);
        if v < grid.0 {
            grid = (v, w);
        }
    }
    let c = solve_design(&two_experiments(DMatrix::from_column_slice(2, 1, &[1.0, 1.0]), Criterion::COptimal, None), &opts).map_err(|e| e.to_string())?;
    ensure((c.value - 4.0).abs() <= 1e-6, || format!("c-optimal variance {}", c.value))?;
    ensure((c.weights[0] - grid.1).abs() <= 1e-3 && (c.weights[1] - (1.0 - grid.1)).abs() <= 1e-3, || format!("c-optimal weights {:?} vs grid {}", c.weights, grid.1))?;
    ensure((c.value - grid.0).abs() <= 1e-3, || format!("c-optimal variance {} vs grid {}", c.value, grid.0))?;

    let a = solve_design(&two_experiments(DMatrix::identity(2, 2), Criterion::AOptimal, None), &opts).map_err(|e| e.to_string())?;
    ensure((a.value - 4.0).abs() <= 1e-6, || format!("A-optimal value {}", a.value))?;
    let e = solve_design(&two_experiments(DMatrix::identity(2, 2), Criterion::EOptimal, None), &opts).map_err(|e| e.to_string())?;
    ensure((e.value - 2.0).abs() <= 1e-6, || format!("E-optimal value {}", e.value))?;
    ensure(e.rank == 2, || format!("E-optimal rank {}", e.rank))?;

    // Two experiments with correlated information and two budget rows.
    let n1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
    let n2 = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 2.0]);
    let pm = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 1.0]);
    let dv = DVector::from_vec(vec![2.0, 3.0]);
    // The variance decreases in each weight, so for each w1 the best w2 is the
    // largest feasible one.
    let mut oracle = f64::INFINITY;
    for k in 0..=10_000 {
        let w1 = k as f64 * 1e-4;
        let w2 = ((dv[0] - pm[(0, 0)] * w1) / pm[(0, 1)]).min((dv[1] - pm[(1, 0)] * w1) / pm[(1, 1)]);
        if w2 < 0.0 {
            continue;
        }
        oracle = oracle.min(common::variance_2x2(&(&n1 * w1 + &n2 * w2), &[1.0, 1.0]));
    }
    let exps = vec![
        Experiment { a: None, m: SymMatrix::new(n1).unwrap() },
        Experiment { a: None, m: SymMatrix::new(n2).unwrap() },
    ];
    let d = DesignProblem::new(exps, DMatrix::from_column_slice(2, 1, &[1.0, 1.0]), Criterion::COptimal, Some(Resource { p: pm, d: dv })).map_err(|e| e.to_string())?;
    let r = solve_design(&d, &opts).map_err(|e| e.to_string())?;
    let rc = r.resource.as_ref().ok_or("resource check missing")?;
    ensure((rc.primal_value - rc.dual_value).abs() <= 1e-6, || format!("resource primal {} vs dual {}", rc.primal_value, rc.dual_value))?;
    ensure((r.value - oracle).abs() <= 1e-3, || format!("resource value {} vs grid {oracle}", r.value))?;
    ensure(rc.feasible, || format!("recovered weights violate Pw <= d by {:e}", rc.max_violation))?;
    Ok(format!("variance {:.9}, trace {:.9}, max eigenvalue {:.9}, resource {:.9} (grid {oracle:.9})", c.value, a.value, e.value, r.value))
}

fn gap_sandwich() -> Outcome {
    let mut rng = common::rng(7);
    let opts = SolveOptions::default();
    let mut tightest = f64::INFINITY;
    for case in 0..10 {
        let l = rng.random_range(1..=5);
        let p = loop {
            let p = common::packing(&mut rng, 2, l, 2);
            if common::rank(p.sum_m().as_matrix(), 1e-8) == 2 {
                break p;
            }
        };
        let v = solve_packing_lowrank(&p, &opts).map_err(|e| format!("case {case}: {e}"))?.solution.objective.unwrap();
        let v1 = common::rank_one_brute_force(&p, 10_000);
        let factor = analysis::nrt_bound(&p).map_err(|e| e.to_string())?.factor.ok_or("degenerate bound")?;
        ensure(v >= v1 - 1e-6, || format!("case {case}: v* = {v} below rank-one value {v1}"))?;
        ensure(v1 >= v / factor - 1e-6, || format!("case {case}: rank-one value {v1} below v*/{factor} = {}", v / factor))?;
        tightest = tightest.min(v1 - v / factor);
    }
    Ok(format!("10 instances, smallest lower-side slack {tightest:.3e}"))
}

fn monotonicity() -> Outcome {
    let mut rng = common::rng(8);
    let opts = SolveOptions::default();
    let mut eps_paths = 0;
    for case in 0..15 {
        let n = rng.random_range(2..=6);
        let l = rng.random_range(1..=5);
        let r = rng.random_range(2..=3_usize).min(n);
        let p = common::packing(&mut rng, n, l, r);
        let s = solve_packing_lowrank(&p, &opts).map_err(|e| format!("case {case}: {e}"))?;
        if let Some(path) = &s.report.path {
            eps_paths += 1;
            ensure(nondecreasing(&path.values), || format!("case {case}: eps-path values {:?}", path.values))?;
        }
    }
    let mut eta_paths = vec![unattained_sup()];
    for _ in 0..3 {
        let n = rng.random_range(2..=4);
        eta_paths.push(CombinedProblem::from_packing(&common::packing(&mut rng, n, 2, 2)));
    }
    for (k, p) in eta_paths.iter().enumerate() {
        let out = solve_combined_eta(p, &opts).map_err(|e| format!("eta case {k}: {e}"))?;
        ensure(nondecreasing(&out.solution.path_values), || format!("eta case {k}: values {:?}", out.solution.path_values))?;
    }
    Ok(format!("{eps_paths} eps-paths, {} eta-paths", eta_paths.len()))
}

fn main() {
    let criteria: [Check; 8] = [
        ("unattained supremum golden values", unattained_sup_golden),
        ("rank property of low-rank solutions", rank_property),
        ("rank-one cone program equivalence", socp_equivalence),
        ("feasibility and boundedness certificates", certificates),
        ("reduction to strictly feasible form", reduction),
        ("optimal design oracles", designs),
        ("rank-one gap sandwich", gap_sandwich),
        ("path monotonicity", monotonicity),
    ];
    let start = Instant::now();
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name} ({secs:.1}s): {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name} ({secs:.1}s): {detail}", k + 1);
            }
        }
    }
    println!("acceptance: {} of 8 passed in {:.1}s", 8 - failed, start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
