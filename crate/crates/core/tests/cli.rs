use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::DVector;
use serde_json::Value;
use sdpack::model::{parse_problem, parse_solution, Problem};
use sdpack::reduce::ReducedBundle;
use tempfile::TempDir;

const RANK_ONE: &str = r#"{"kind":"packing","C":[[1,1],[1,1]],
    "constraints":[{"M":[[1,0],[0,0]],"b":1},{"M":[[0,0],[0,1]],"b":1}]}"#;

const RANK_TWO: &str = r#"{"kind":"packing","C":[[2,0.5,0],[0.5,1,0],[0,0,0]],
    "constraints":[{"M":[[1,0,0],[0,1,0],[0,0,1]],"b":1},{"M":[[1,0.2,0],[0.2,1,0],[0,0,0]],"b":0.8}]}"#;

const UNATTAINED_SUP: &str = r#"{"kind":"combined","C":[[2.43,0.27],[0.27,0.03]],
    "constraints":[{"M":[[0,0],[0,0]],"b":1},{"M":[[1,0],[0,0]],"b":1},{"M":[[0,0],[0,1]],"b":1}],
    "h0":[-1,-3],"h":[[1,0],[0,1],[3,1]]}"#;

const ORTHOGONAL_RANGES: &str = r#"{"kind":"packing","C":[[1,0,0],[0,2,1],[0,1,1]],
    "constraints":[{"M":[[1,0,0],[0,0,0],[0,0,0]],"b":1}]}"#;

const ZERO_RHS: &str = r#"{"kind":"packing","C":[[0,0],[0,1]],
    "constraints":[{"M":[[1,0],[0,0]],"b":0},{"M":[[1,0],[0,1]],"b":1}]}"#;

struct Dir(TempDir);

impl Dir {
    fn new() -> Self {
        Dir(TempDir::new().unwrap())
    }

    fn file(&self, name: &str, body: &str) -> PathBuf {
        let p = self.0.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }
}

fn sdpack(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sdpack"));
    cmd.args(args).env_remove("SDPACK_TOL");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn run(args: &[&str]) -> (i32, Value) {
    let out = sdpack(args, &[]);
    let text = String::from_utf8(out.stdout).unwrap();
    let v = serde_json::from_str(&text).unwrap_or_else(|e| panic!("not JSON ({e}): {text}"));
    (out.status.code().unwrap(), v)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn num(v: &Value) -> f64 {
    v.as_f64().unwrap_or_else(|| panic!("not a number: {v}"))
}

#[test]
fn analyze_bounded() {
    let d = Dir::new();
    let (code, r) = run(&["analyze", s(&d.file("p.json", RANK_ONE))]);
    assert_eq!(code, 0);
    assert_eq!(r["feasible"], true);
    assert_eq!(r["bounded"], true);
    assert!((num(&r["lambda"]) - 2.0).abs() < 1e-10);
    assert_eq!(r["rank_c"], 1);
    assert_eq!(r["rank_sum_m"], 2);
    assert_eq!(r["barvinok_pataki"], 1);
    assert!((num(&r["gap_bound"]["factor"]) - 2.0 * 4f64.ln()).abs() < 1e-12);
}

#[test]
fn analyze_negative_rhs() {
    let d = Dir::new();
    let doc = r#"{"kind":"packing","C":[[1]],"constraints":[{"M":[[1]],"b":1},{"M":[[1]],"b":-1}]}"#;
    let (code, r) = run(&["analyze", s(&d.file("p.json", doc))]);
    assert_eq!(code, 0);
    assert_eq!(r["feasible"], false);
    assert_eq!(r["index"], 1);
}

#[test]
fn analyze_ray_reads_back() {
    let d = Dir::new();
    let path = d.file("p.json", ORTHOGONAL_RANGES);
    let (code, r) = run(&["analyze", s(&path)]);
    assert_eq!(code, 0);
    assert_eq!(r["bounded"], false);
    let h: Vec<f64> = serde_json::from_value(r["ray"].clone()).unwrap();
    let h = DVector::from_vec(h);
    let Problem::Packing(p) = parse_problem(ORTHOGONAL_RANGES).unwrap() else { unreachable!() };
    for k in p.constraints() {
        assert!((k.m.as_matrix() * &h).amax() < 1e-12);
    }
    // Best kernel direction: top eigenvalue of [[2,1],[1,1]], (3 + √5)/2.
    let curvature = p.c().quad(&h);
    assert!((curvature - (3.0 + 5f64.sqrt()) / 2.0).abs() < 1e-10, "{curvature}");
}

#[test]
fn reduce_bundles() {
    let d = Dir::new();
    let (code, r) = run(&["reduce", s(&d.file("id.json", RANK_ONE))]);
    assert_eq!(code, 0);
    let (bundle, inner) = ReducedBundle::parse(&r.to_string()).unwrap();
    assert!(bundle.lift.is_identity());
    assert_eq!(inner.unwrap().n(), 2);

    let (code, r) = run(&["reduce", s(&d.file("z.json", ZERO_RHS))]);
    assert_eq!(code, 0);
    let (bundle, inner) = ReducedBundle::parse(&r.to_string()).unwrap();
    let inner = inner.unwrap();
    assert_eq!(inner.n(), 1);
    assert!((inner.c()[(0, 0)] - 1.0).abs() < 1e-12);
    assert_eq!(bundle.zero_rhs, vec![0]);

    let (code, r) = run(&["reduce", s(&d.file("u.json", ORTHOGONAL_RANGES))]);
    assert_eq!(code, 3);
    assert_eq!(r["error"]["certificate"]["kind"], "unbounded");
}

#[test]
fn solve_rank_one_auto() {
    let d = Dir::new();
    let (code, r) = run(&["solve", "--oracle", s(&d.file("p.json", RANK_ONE))]);
    assert_eq!(code, 0);
    assert_eq!(r["route"], "socp");
    assert_eq!(r["status"], "optimal");
    assert!((num(&r["value"]) - 4.0).abs() < 1e-7);
    assert!(num(&r["oracle"]["diff"]) <= 1e-6);
    assert_eq!(r["rank"], 1);
}

#[test]
fn solve_unattained_sup() {
    let d = Dir::new();
    let (code, r) = run(&["solve", s(&d.file("sup.json", UNATTAINED_SUP))]);
    assert_eq!(code, 0);
    assert_eq!(r["status"], "asymptotic_sup");
    assert!((num(&r["value"]) - 3.1).abs() < 1e-3);
}

#[test]
fn solve_bm_against_oracle() {
    let d = Dir::new();
    let (code, r) = run(&["solve", "--route", "bm", "--oracle", s(&d.file("p.json", RANK_TWO))]);
    assert_eq!(code, 0);
    assert_eq!(r["route"], "bm");
    let diff = num(&r["oracle"]["diff"]);
    assert!(diff <= 1e-4 || r["status"] == "non_certified", "{r}");
}

#[test]
fn solve_eps_path_rank_two() {
    let d = Dir::new();
    let (code, r) = run(&["solve", "--route", "eps-path", "--oracle", s(&d.file("p.json", RANK_TWO))]);
    assert_eq!(code, 0);
    assert_eq!(r["status"], "optimal");
    assert!(num(&r["oracle"]["diff"]) <= 1e-6);
    assert!(r["rank"].as_u64().unwrap() <= 2);
}

#[test]
fn solve_socp_route_rejects_rank_two() {
    let d = Dir::new();
    let (code, r) = run(&["solve", "--route", "socp", s(&d.file("p.json", RANK_TWO))]);
    assert_eq!(code, 2);
    assert_eq!(r["error"]["kind"], "rank_not_one");
}

#[test]
fn solve_is_deterministic() {
    let d = Dir::new();
    let path = d.file("p.json", RANK_TWO);
    let a = sdpack(&["solve", s(&path)], &[]).stdout;
    let b = sdpack(&["solve", s(&path)], &[]).stdout;
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn solve_exit_codes() {
    let d = Dir::new();
    let (code, r) = run(&["solve", s(&d.file("u.json", ORTHOGONAL_RANGES))]);
    assert_eq!(code, 3);
    assert_eq!(r["exit_code"], 3);
    let neg = r#"{"kind":"packing","C":[[1]],"constraints":[{"M":[[1]],"b":-1}]}"#;
    let (code, r) = run(&["solve", s(&d.file("n.json", neg))]);
    assert_eq!(code, 4);
    assert_eq!(r["error"]["index"], 0);
    let (code, r) = run(&["solve", s(&d.file("bad.json", "{\"kind\":\"packing\""))]);
    assert_eq!(code, 2);
    assert_eq!(r["error"]["kind"], "schema");
    let (code, _) = run(&["solve", s(&d.0.path().join("missing.json"))]);
    assert_eq!(code, 2);
}

#[test]
fn tolerance_from_environment() {
    let d = Dir::new();
    let path = d.file("p.json", RANK_ONE);
    let out = sdpack(&["solve", s(&path)], &[("SDPACK_TOL", "1e-7")]);
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(num(&r["options"]["tol"]), 1e-7);
    let out = sdpack(&["solve", "--tol", "1e-9", s(&path)], &[("SDPACK_TOL", "1e-7")]);
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(num(&r["options"]["tol"]), 1e-9);
    let out = sdpack(&["solve", s(&path)], &[("SDPACK_TOL", "-1")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn batch_keeps_input_order() {
    let d = Dir::new();
    let a = d.file("a.json", RANK_TWO);
    let b = d.file("b.json", ORTHOGONAL_RANGES);
    let c = d.file("c.json", RANK_ONE);
    let (code, r) = run(&["solve", s(&a), s(&b), s(&c)]);
    assert_eq!(code, 3);
    let items = r.as_array().unwrap();
    assert_eq!(items.len(), 3);
    for (item, path) in items.iter().zip([&a, &b, &c]) {
        assert_eq!(item["file"], s(path));
    }
    assert_eq!(items[0]["exit_code"], 0);
    assert_eq!(items[1]["exit_code"], 3);
    assert_eq!(items[2]["report"]["route"], "socp");
    // Same reports as one file at a time.
    let (_, single) = run(&["solve", s(&a)]);
    assert_eq!(items[0]["report"], single);
}

#[test]
fn design_reports() {
    let d = Dir::new();
    let m = r#""M":[[[1,0],[0,0]],[[0,0],[0,1]]]"#;
    let c = d.file("c.json", &format!(r#"{{"kind":"design",{m},"K":[[1],[1]],"criterion":"c"}}"#));
    let (code, r) = run(&["design", s(&c)]);
    assert_eq!(code, 0, "{r}");
    let w: Vec<f64> = serde_json::from_value(r["weights"].clone()).unwrap();
    assert!((w[0] - 0.5).abs() < 1e-6 && (w[1] - 0.5).abs() < 1e-6);
    assert!((num(&r["value"]) - 4.0).abs() < 1e-6);

    let a = d.file("a.json", &format!(r#"{{"kind":"design",{m},"K":[[1,0],[0,1]],"criterion":"a"}}"#));
    let (_, r) = run(&["design", s(&a)]);
    assert!((num(&r["value"]) - 4.0).abs() < 1e-6);
    assert!((num(&r["criterion_at_weights"]) - 4.0).abs() < 1e-5);

    let e = d.file("e.json", &format!(r#"{{"kind":"design",{m},"K":[[1,0],[0,1]],"criterion":"e"}}"#));
    let (_, r) = run(&["design", s(&e)]);
    assert!((num(&r["value"]) - 2.0).abs() < 1e-6);
    assert_eq!(r["rank"], 2);

    let res = d.file(
        "r.json",
        &format!(r#"{{"kind":"design",{m},"K":[[1],[1]],"criterion":"c","resource":{{"P":[[1,0],[0,1]],"d":[1,1]}}}}"#),
    );
    let (code, r) = run(&["design", s(&res)]);
    assert_eq!(code, 0, "{r}");
    assert_eq!(r["resource"]["feasible"], true);
}

#[test]
fn verify_pairs() {
    let d = Dir::new();
    let problem = d.file("p.json", RANK_ONE);
    // X = [1 1; 1 1], μ = (2, 2): 2I − C ⪰ 0 with (2I − C)X = 0.
    let exact = d.file("s.json", r#"{"kind":"solution","X":[[1,1],[1,1]],"objective":4,"numerical_rank":1,"mu":[2,2],"status":"optimal"}"#);
    let (code, r) = run(&["verify", s(&problem), s(&exact)]);
    assert_eq!(code, 0);
    assert_eq!(r["pass"], true);
    assert_eq!(num(&r["residuals"]["dual"]), 0.0);

    let off = d.file("o.json", r#"{"kind":"solution","X":[[1,1],[1,1]],"objective":4,"numerical_rank":1,"mu":[2,1.5],"status":"optimal"}"#);
    let (_, r) = run(&["verify", s(&problem), s(&off)]);
    assert_eq!(r["pass"], false);
    // S = diag(2, 1.5) − C has eigenvalue (1.5 − √4.25)/2 ≈ −0.28 and SX has
    // an entry −0.5, so complementarity is the worst residual.
    assert_eq!(r["worst"], "complementarity");
    assert!(num(&r["residuals"]["dual"]) > 0.0);

    let small = d.file("m.json", r#"{"kind":"solution","X":[[1]],"objective":1,"numerical_rank":1,"mu":[1,1],"status":"optimal"}"#);
    let (code, r) = run(&["verify", s(&problem), s(&small)]);
    assert_eq!(code, 2);
    assert_eq!(r["error"]["kind"], "dimension_mismatch");
}

#[test]
fn verify_socp_solution() {
    let d = Dir::new();
    let problem = d.file("p.json", RANK_TWO.replace("[[2,0.5,0],[0.5,1,0],[0,0,0]]", "[[4,2,0],[2,1,0],[0,0,0]]").as_str());
    let (_, r) = run(&["solve", s(&problem)]);
    assert_eq!(r["route"], "socp");
    let sol = d.file("s.json", &r["solution"].to_string());
    parse_solution(&r["solution"].to_string()).unwrap();
    let (code, v) = run(&["verify", "--tol", "1e-6", s(&problem), s(&sol)]);
    assert_eq!(code, 0);
    assert_eq!(v["pass"], true, "{v}");
}

#[test]
fn gap_bound_report() {
    let d = Dir::new();
    let doc = r#"{"kind":"packing","C":[[1,0,0],[0,0,0],[0,0,0]],"constraints":[{"M":[[1,0,0],[0,1,0],[0,0,1]],"b":1},{"M":[[2,0,0],[0,1,0],[0,0,1]],"b":1}]}"#;
    let (code, r) = run(&["gap-bound", s(&d.file("g.json", doc))]);
    assert_eq!(code, 0);
    assert_eq!(r["mu_bar"], 2);
    assert!((num(&r["factor"]) - 2.0 * 8f64.ln()).abs() < 1e-12);
    let zero = r#"{"kind":"packing","C":[[0]],"constraints":[{"M":[[0]],"b":1}]}"#;
    let (_, r) = run(&["gap-bound", s(&d.file("z.json", zero))]);
    assert_eq!(r["degenerate"], true);
    assert!(r["factor"].is_null());
}

#[test]
fn text_report_rounds() {
    let d = Dir::new();
    let out = sdpack(&["solve", "--report", "text", s(&d.file("sup.json", UNATTAINED_SUP))], &[]);
    let text = String::from_utf8(out.stdout).unwrap();
    let line = text.lines().find(|l| l.starts_with("value: ")).unwrap();
    let digits: String = line["value: ".len()..].chars().filter(|c| c.is_ascii_digit()).collect();
    assert!(digits.len() <= 9, "{line}");
    assert!(line.starts_with("value: 3.09999"), "{line}");
}

#[test]
fn output_file() {
    let d = Dir::new();
    let out = d.0.path().join("out.json");
    let o = sdpack(&["gap-bound", "-o", s(&out), s(&d.file("p.json", RANK_ONE))], &[]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(v["kind"], "gap_bound");
}

#[test]
fn usage_errors() {
    assert_eq!(sdpack(&[], &[]).status.code(), Some(2));
    assert_eq!(sdpack(&["solve"], &[]).status.code(), Some(2));
    assert_eq!(sdpack(&["--help"], &[]).status.code(), Some(0));
}
