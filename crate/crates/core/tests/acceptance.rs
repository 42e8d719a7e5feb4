//! Runs every built-in scenario and prints one PASS/FAIL line per acceptance
//! criterion. Criteria with a runtime budget also fail when they exceed it.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use jumpset_core::experiments::{run_scenario, Report, Scenario, BUILTINS};

fn budget(criterion: u32) -> Option<Duration> {
    match criterion {
        1 => Some(Duration::from_secs(5)),
        3 => Some(Duration::from_secs(30)),
        9 => Some(Duration::from_secs(120)),
        _ => None,
    }
}

#[test]
fn acceptance() {
    let mut by_criterion: BTreeMap<u32, (Vec<Report>, Duration)> = BTreeMap::new();
    for &(name, criterion) in BUILTINS {
        let start = Instant::now();
        let report = run_scenario(&Scenario::builtin(name).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
        let entry = by_criterion.entry(criterion).or_default();
        entry.1 += start.elapsed();
        entry.0.push(report);
    }

    let mut failed = Vec::new();
    for (criterion, (reports, elapsed)) in &by_criterion {
        let over = budget(*criterion).filter(|b| elapsed > b);
        let ok = reports.iter().all(|r| r.passed) && over.is_none();
        let names: Vec<&str> = reports.iter().map(|r| r.scenario.as_str()).collect();
        println!(
            "criterion {criterion:2}: {} [{}] {:.1}s",
            if ok { "PASS" } else { "FAIL" },
            names.join(", "),
            elapsed.as_secs_f64()
        );
        for r in reports {
            for m in &r.metrics {
                let mark = if m.pass { " " } else { "!" };
                let err = m.error.as_deref().map(|e| format!(" ({e})")).unwrap_or_default();
                println!("   {mark} {}/{} = {:e} [{}]{err}", r.scenario, m.name, m.value, m.limit);
            }
        }
        if let Some(b) = over {
            println!("   ! runtime {:.1}s exceeds {:.0}s", elapsed.as_secs_f64(), b.as_secs_f64());
        }
        if !ok {
            failed.push(*criterion);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
