use resync_wasm::{documents_json, simulate_json, sweep_json, SERIES_SAMPLES};
use serde_json::Value;

fn parse(json: String) -> Value {
    serde_json::from_str(&json).unwrap()
}

#[test]
fn simulate_returns_summary_series_and_cycles() {
    let v = parse(simulate_json(50, 1.0, 10.0, "incremental", 4, 300.0).unwrap());
    assert_eq!(v["counts"]["changes"], 300);
    assert_eq!(v["summary"]["final_consistency"], 1.0);
    let series = v["series"].as_array().unwrap();
    assert_eq!(series.len(), SERIES_SAMPLES + 1);
    assert_eq!(series[0][0], 0.0);
    assert_eq!(series[SERIES_SAMPLES][0], 300.0);
    assert!(series.iter().all(|p| (0.0..=1.0).contains(&p[1].as_f64().unwrap())));
    let cycles = v["cycles"].as_array().unwrap();
    assert_eq!(cycles.len() as u64, v["counts"]["sync_cycles"].as_u64().unwrap() + 1);
}

#[test]
fn simulate_matches_native_run() {
    let a = simulate_json(30, 0.5, 10.0, "baseline", 2, 120.0).unwrap();
    assert_eq!(a, simulate_json(30, 0.5, 10.0, "baseline", 2, 120.0).unwrap());
}

#[test]
fn bad_input_is_reported() {
    let e = simulate_json(10, 0.0, 10.0, "baseline", 1, 100.0).unwrap_err();
    assert!(e.to_string().starts_with("change_interval:"), "{e}");
    let e = simulate_json(10, 1.0, 10.0, "eventually", 1, 100.0).unwrap_err();
    assert!(e.to_string().starts_with("mode:"), "{e}");
    assert!(simulate_json(20_000, 1.0, 10.0, "baseline", 1, 100.0).is_err());
    assert!(sweep_json("10,x", 1.0, 10.0, 1, 100.0).is_err());
    assert!(sweep_json("", 1.0, 10.0, 1, 100.0).is_err());
}

#[test]
fn sweep_covers_both_modes() {
    let v = parse(sweep_json("10, 40", 1.0, 10.0, 1, 120.0).unwrap());
    let rows = v["rows"].as_array().unwrap();
    let keys: Vec<(u64, &str)> =
        rows.iter().map(|r| (r["resource_count"].as_u64().unwrap(), r["mode"].as_str().unwrap())).collect();
    assert_eq!(keys, [(10, "baseline"), (10, "incremental"), (40, "baseline"), (40, "incremental")]);
    assert_eq!(v["csv"].as_str().unwrap().lines().count(), 5);
}

#[test]
fn documents_are_well_formed() {
    let v = parse(documents_json(3, 4, 1).unwrap());
    let rl = v["resource_list"].as_str().unwrap();
    assert_eq!(rl.matches("<url>").count(), 3);
    let cl = v["change_list"].as_str().unwrap();
    assert_eq!(cl.matches("<url>").count(), 4);
    assert!(v["capability_list"].as_str().unwrap().contains("http://sim/resourcelist.xml"));
    assert!(documents_json(500, 1, 1).is_err());
}
