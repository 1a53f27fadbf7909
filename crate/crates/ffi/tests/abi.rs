use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use ruleagg_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> Option<String> {
    let p = ruleagg_last_error();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

// Running example: all three worksFor rules predict wf(e_d, e_g).
const TRIPLES: &str = "e_g\tcooperatesWith\te_u\ne_u\tcooperatesWith\te_g\ne_d\tinternAt\te_g\ne_d\tstudentAt\te_u\ne_u\tlocIn\tcity\ne_g\tlocIn\tcity\n";
const RULES: &str = "0.64\t0\t0\twf(X,Y) <= internAt(X,Y)\n0.44\t0\t0\twf(X,Y) <= studentAt(X,A), locIn(A,B), locIn(Y,B)\n0.41\t0\t0\twf(X,Y) <= studentAt(X,A), cooperatesWith(A,Y)\n";

struct Fixture {
    _dir: tempfile::TempDir,
    engine: *mut RuleaggEngine,
}

impl Drop for Fixture {
    fn drop(&mut self) {
        unsafe { ruleagg_engine_free(self.engine) };
    }
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let kg = dir.path().join("train.tsv");
    let rules = dir.path().join("rules.tsv");
    std::fs::write(&kg, TRIPLES).unwrap();
    std::fs::write(&rules, RULES).unwrap();
    let engine = ruleagg_engine_new();
    unsafe {
        assert_eq!(
            ruleagg_engine_load_triples(engine, c(kg.to_str().unwrap()).as_ptr()),
            RuleaggStatus::Ok
        );
        assert_eq!(
            ruleagg_engine_load_rules(engine, c(rules.to_str().unwrap()).as_ptr(), c("canonical").as_ptr()),
            RuleaggStatus::Ok
        );
    }
    Fixture { _dir: dir, engine }
}

fn answer(f: &Fixture, strategy: RuleaggStrategy) -> Vec<(String, f64)> {
    let mut ranking = ptr::null_mut();
    unsafe {
        let st = ruleagg_engine_answer(
            f.engine,
            c("wf").as_ptr(),
            c("e_d").as_ptr(),
            RuleaggDirection::Tail,
            strategy,
            2,
            200,
            42,
            &mut ranking,
        );
        assert_eq!(st, RuleaggStatus::Ok, "{:?}", last_error());
        let n = ruleagg_ranking_len(ranking);
        let out = (0..n)
            .map(|i| {
                let label = CStr::from_ptr(ruleagg_ranking_label(ranking, i))
                    .to_string_lossy()
                    .into_owned();
                let mut s = 0.0;
                assert_eq!(ruleagg_ranking_score(ranking, i, &mut s), RuleaggStatus::Ok);
                (label, s)
            })
            .collect();
        assert!(ruleagg_ranking_label(ranking, n).is_null());
        let mut s = 0.0;
        assert_eq!(ruleagg_ranking_score(ranking, n, &mut s), RuleaggStatus::OutOfRange);
        ruleagg_ranking_free(ranking);
        out
    }
}

#[test]
fn engine_loads_and_answers() {
    let f = fixture();
    unsafe {
        assert_eq!(ruleagg_engine_num_triples(f.engine), 6);
        assert_eq!(ruleagg_engine_num_rules(f.engine), 3);
        let mut found = false;
        let st = ruleagg_engine_contains(
            f.engine,
            c("e_d").as_ptr(),
            c("internAt").as_ptr(),
            c("e_g").as_ptr(),
            &mut found,
        );
        assert_eq!(st, RuleaggStatus::Ok);
        assert!(found);
        let st = ruleagg_engine_contains(
            f.engine,
            c("e_d").as_ptr(),
            c("wf").as_ptr(),
            c("e_g").as_ptr(),
            &mut found,
        );
        assert_eq!(st, RuleaggStatus::Ok);
        assert!(!found);
        let st = ruleagg_engine_contains(
            f.engine,
            c("nobody").as_ptr(),
            c("wf").as_ptr(),
            c("e_g").as_ptr(),
            &mut found,
        );
        assert_eq!(st, RuleaggStatus::Ok);
        assert!(!found);
    }
    // c2 also predicts e_u, which is located with itself
    assert_eq!(
        answer(&f, RuleaggStrategy::Max),
        vec![("e_g".to_string(), 0.64), ("e_u".to_string(), 0.44)]
    );
    let no = answer(&f, RuleaggStrategy::NoisyOr);
    assert_eq!(no.len(), 2);
    assert_eq!(no[0].0, "e_g");
    assert!((no[0].1 - 0.881056).abs() < 1e-12);
    let top2 = answer(&f, RuleaggStrategy::NoisyOrTopH);
    assert!((top2[0].1 - 0.7984).abs() < 1e-12);
}

#[test]
fn unknown_anchor_gives_empty_ranking() {
    let f = fixture();
    let mut ranking = ptr::null_mut();
    unsafe {
        let st = ruleagg_engine_answer(
            f.engine,
            c("wf").as_ptr(),
            c("stranger").as_ptr(),
            RuleaggDirection::Head,
            RuleaggStrategy::Max,
            1,
            10,
            0,
            &mut ranking,
        );
        assert_eq!(st, RuleaggStatus::Ok);
        assert_eq!(ruleagg_ranking_len(ranking), 0);
        ruleagg_ranking_free(ranking);
    }
}

#[test]
fn error_codes_and_messages() {
    unsafe {
        assert_eq!(
            ruleagg_engine_load_triples(ptr::null_mut(), c("x").as_ptr()),
            RuleaggStatus::NullPointer
        );
        assert!(last_error().unwrap().contains("engine"));
        let engine = ruleagg_engine_new();
        assert_eq!(
            ruleagg_engine_load_triples(engine, c("/nonexistent/file.tsv").as_ptr()),
            RuleaggStatus::Io
        );
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.tsv");
        std::fs::write(&bad, "a\tb\n").unwrap();
        assert_eq!(
            ruleagg_engine_load_triples(engine, c(bad.to_str().unwrap()).as_ptr()),
            RuleaggStatus::Parse
        );
        assert!(last_error().unwrap().contains("line 1"), "{:?}", last_error());
        let rules = dir.path().join("rules.tsv");
        std::fs::write(&rules, RULES).unwrap();
        assert_eq!(
            ruleagg_engine_load_rules(engine, c(rules.to_str().unwrap()).as_ptr(), c("prolog").as_ptr()),
            RuleaggStatus::InvalidArgument
        );
        std::fs::write(&bad, "0.5\t0\t0\twf(X,Y) <=\n").unwrap();
        assert_eq!(
            ruleagg_engine_load_rules(engine, c(bad.to_str().unwrap()).as_ptr(), c("canonical").as_ptr()),
            RuleaggStatus::Parse
        );
        let mut ranking = ptr::null_mut();
        let st = ruleagg_engine_answer(
            engine,
            c("wf").as_ptr(),
            c("e_d").as_ptr(),
            RuleaggDirection::Tail,
            RuleaggStrategy::Max,
            1,
            0,
            0,
            &mut ranking,
        );
        assert_eq!(st, RuleaggStatus::InvalidArgument);
        assert!(ranking.is_null());
        // success clears the message
        let mut s = 0.0;
        assert_eq!(ruleagg_score_max([0.5].as_ptr(), 1, &mut s), RuleaggStatus::Ok);
        assert!(last_error().is_none());
        ruleagg_engine_free(engine);
        ruleagg_engine_free(ptr::null_mut());
        ruleagg_ranking_free(ptr::null_mut());
    }
}

#[test]
fn scoring_functions() {
    let anna = [0.64, 0.44, 0.41];
    let mut s = 0.0;
    unsafe {
        assert_eq!(ruleagg_score_max(anna.as_ptr(), 3, &mut s), RuleaggStatus::Ok);
        assert_eq!(s, 0.64);
        assert_eq!(ruleagg_score_noisy_or(anna.as_ptr(), 3, &mut s), RuleaggStatus::Ok);
        assert!((s - 0.881056).abs() < 1e-12);
        assert_eq!(
            ruleagg_score_noisy_or_top_h(anna.as_ptr(), 3, 2, &mut s),
            RuleaggStatus::Ok
        );
        assert!((s - 0.7984).abs() < 1e-12);
        assert_eq!(
            ruleagg_score_noisy_or_top_h(anna.as_ptr(), 3, 0, &mut s),
            RuleaggStatus::InvalidArgument
        );
        assert_eq!(
            ruleagg_score_logistic([0.8, 0.7, 0.5].as_ptr(), 3, &mut s),
            RuleaggStatus::Ok
        );
        assert!((s - 0.9032).abs() <= 0.0005);
        assert_eq!(
            ruleagg_score_logistic([1.0].as_ptr(), 1, &mut s),
            RuleaggStatus::DegenerateValue
        );
        assert_eq!(
            ruleagg_score_max(ptr::null(), 0, &mut s),
            RuleaggStatus::EmptyPrediction
        );
        assert_eq!(ruleagg_score_max(ptr::null(), 2, &mut s), RuleaggStatus::NullPointer);
        assert_eq!(
            ruleagg_score_max(anna.as_ptr(), 3, ptr::null_mut()),
            RuleaggStatus::NullPointer
        );

        assert_eq!(ruleagg_frechet_upper(0.64, 0.44, &mut s), RuleaggStatus::Ok);
        assert!((s - 0.66).abs() <= 0.01);
        assert_eq!(ruleagg_frechet_upper(1.0, 0.44, &mut s), RuleaggStatus::DegenerateValue);

        let mut z = [0.0; 4];
        assert_eq!(
            ruleagg_max_corr_z(anna.as_ptr(), 3, z.as_mut_ptr(), 4),
            RuleaggStatus::Ok
        );
        for (a, b) in z.iter().zip([0.36, 0.20, 0.03, 0.41]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(
            ruleagg_max_corr_z(anna.as_ptr(), 3, z.as_mut_ptr(), 3),
            RuleaggStatus::OutOfRange
        );
        assert_eq!(
            ruleagg_max_corr_z([0.4, 0.5].as_ptr(), 2, z.as_mut_ptr(), 4),
            RuleaggStatus::InvalidArgument
        );
    }
}

#[test]
fn header_declares_the_interface() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/ruleagg.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "ruleagg_engine_new",
        "ruleagg_engine_free",
        "ruleagg_engine_load_triples",
        "ruleagg_engine_load_rules",
        "ruleagg_engine_contains",
        "ruleagg_engine_answer",
        "ruleagg_ranking_len",
        "ruleagg_ranking_label",
        "ruleagg_ranking_score",
        "ruleagg_ranking_free",
        "ruleagg_score_noisy_or",
        "ruleagg_max_corr_z",
        "ruleagg_last_error",
        "RULEAGG_STATUS_OK",
        "typedef struct RuleaggEngine RuleaggEngine",
    ] {
        assert!(text.contains(name), "missing {name}");
    }
    // syntax-check the header with a C compiler when one is installed
    if let Ok(status) = Command::new("cc")
        .args(["-fsyntax-only", "-x", "c"])
        .arg(&header)
        .status()
    {
        assert!(status.success());
    }
}
