//! One line per acceptance criterion. Checks 6–10 run twice with the same
//! seeds in single-thread mode; the second run feeds the determinism check.
//!
//! Criteria can be selected by number:
//! `cargo test -p wiretap-validation --test acceptance -- 1 2 9`.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use wiretap_validation::*;

fn file_check(id: usize, root: &Path) -> Verdict {
    let dir = root.join(format!("c{id}"));
    std::fs::create_dir_all(&dir).expect("create check directory");
    match id {
        6 => cnbmm_vs_oracle(&dir),
        7 => estimator_comparison(&dir),
        8 => uhf_ablation(&dir),
        9 => bounds_suite(&dir),
        _ => hash_design(&dir),
    }
}

fn main() -> ExitCode {
    std::env::set_var("WIRETAP_THREADS", "1");
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |id: usize| selected.is_empty() || selected.contains(&id);
    let root = tempfile::tempdir().expect("temporary directory");
    let (a, b) = (root.path().join("run_a"), root.path().join("run_b"));

    let mut verdicts = Vec::new();
    let mut report = |v: Verdict| {
        println!("{v}");
        verdicts.push(v);
    };
    let quick: [fn() -> Verdict; 5] = [uhf_correctness, bch_15_5, oracle_endpoints, vclub_gap_identity, autodiff];
    for (i, check) in quick.into_iter().enumerate() {
        if wanted(i + 1) {
            report(check());
        }
    }
    for id in 6..=10 {
        if wanted(id) {
            report(file_check(id, &a));
        }
    }
    if wanted(11) {
        let start = Instant::now();
        for id in 6..=10 {
            file_check(id, &b);
            if !wanted(id) {
                file_check(id, &a);
            }
        }
        report(determinism(&a, &b, start.elapsed()));
    }

    let failed: Vec<usize> = verdicts.iter().filter(|v| !v.passed).map(|v| v.id).collect();
    println!("acceptance: {}/{} criteria pass", verdicts.len() - failed.len(), verdicts.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failing criteria: {failed:?}");
        ExitCode::FAILURE
    }
}
