//! Cross-module behavior on whole models: exponential support clipping,
//! priority-AND order sensitivity, and gate/target structure.

use timesplit::dbm::Bound;
use timesplit::importance::build_time_sensitive;
use timesplit::kepler;
use timesplit::model::{FlatModel, FlattenOptions};
use timesplit::rational::rat_to_f64;
use timesplit::res::{cmc, res_estimate, Budget};
use timesplit::scg::{initial_class, ExpandOptions};

fn flatten(text: &str, clip: f64) -> FlatModel {
    kepler::compile(&kepler::parse(text).unwrap(), clip)
        .flatten(&FlattenOptions::default())
        .unwrap()
}

#[test]
fn exponential_timers_run_through_the_whole_pipeline() {
    let text = r#"
toplevel "G";
"G" pand "A" "B";
"A" fail~exponential(1) repair~uniform(0,0.5);
"B" fail~uniform(2,9)   repair~uniform(0,0.5);
"RBOX" rbox prio "A" "B";
"#;
    let m = flatten(text, 1e-5);
    // the clipped band of an exponential(1) timer reaches ln(1e5)
    let sc = initial_class(&m);
    let a_fail = m
        .timers
        .iter()
        .position(|t| t.name == "A.fail")
        .map(|i| timesplit::dbm::TimerId(i as u32))
        .unwrap();
    match sc.domain.upper_of(a_fail).unwrap() {
        Bound::Finite(ub) => {
            let expect = -(1e-5f64).ln();
            let got = rat_to_f64(&ub);
            assert!(got >= expect && got - expect < 1e-5, "clip band {got}");
        }
        Bound::Infinity => panic!("exponential band must be clipped"),
    }
    // the analysis and the estimators accept the model
    let imp = build_time_sensitive(&m, 4, &ExpandOptions::default()).unwrap();
    let e = res_estimate(&m, &imp, "res-time-4", 8, 12.0, Budget::Runs(2_000), 3, 0.05).unwrap();
    assert!((0.0..=1.0).contains(&e.value));
    // sampling is UNclipped: some draw exceeds the band eventually
    let mut rng = timesplit::sim::stream_rng(9, 0);
    let dist = &m.timer(a_fail).dist;
    let band = -(1e-5f64).ln();
    let mut seen_above = false;
    for _ in 0..2_000_000 {
        if dist.sample(&mut rng) > band {
            seen_above = true;
            break;
        }
    }
    assert!(seen_above, "true distribution must keep its tail");
}

#[test]
fn pand_child_order_changes_the_probability() {
    // overlapping failure supports: A fails first with probability 7/8
    let forward = r#"
toplevel "TLE";
"TLE" pand "A" "B";
"A" fail~uniform(1,3) repair~uniform(10,20);
"B" fail~uniform(2,4) repair~uniform(10,20);
"RBOX" rbox fcfs "A" "B";
"#;
    let swapped = r#"
toplevel "TLE";
"TLE" pand "B" "A";
"A" fail~uniform(1,3) repair~uniform(10,20);
"B" fail~uniform(2,4) repair~uniform(10,20);
"RBOX" rbox fcfs "A" "B";
"#;
    let n = 200_000u64;
    let bound = 5.0;
    let p1 = cmc(&flatten(forward, 1e-5), bound, Budget::Runs(n), 8, 0.05).unwrap();
    let p2 = cmc(&flatten(swapped, 1e-5), bound, Budget::Runs(n), 8, 0.05).unwrap();
    let sigma = ((p1.value * (1.0 - p1.value) + p2.value * (1.0 - p2.value)) / n as f64).sqrt();
    assert!(
        (p1.value - p2.value).abs() > 5.0 * sigma,
        "order must matter: {} vs {}",
        p1.value,
        p2.value
    );
    // both probabilities agree with their closed forms P(A<B) = 7/8 and 1/8
    assert!((p1.value - 0.875).abs() < 0.01, "{}", p1.value);
    assert!((p2.value - 0.125).abs() < 0.01, "{}", p2.value);
}

#[test]
fn forced_order_pand_matches_product_form_oracle() {
    // disjoint supports force A to fail before B; push repairs past the
    // horizon so each event fails at most once
    let text = r#"
toplevel "G";
"G" pand "A" "B";
"A" fail~uniform(0,2) repair~uniform(100000,200000);
"B" fail~uniform(1,2) repair~uniform(100000,200000);
"RBOX" rbox prio "A" "B";
"#;
    let m = flatten(text, 1e-5);
    let bound = 1.5;
    // closed form: P(A < B and B <= 1.5) for A ~ U(0,2), B ~ U(1,2), by
    // quadrature as an independent oracle
    let steps = 4000;
    let mut oracle = 0.0;
    for i in 0..steps {
        let y = 1.0 + (i as f64 + 0.5) / steps as f64; // B value in [1,2]
        if y <= bound {
            oracle += (y / 2.0) / steps as f64; // P(A < y) = y/2
        }
    }
    assert!((oracle - 5.0 / 16.0).abs() < 1e-3, "oracle {oracle}");
    let n = 200_000u64;
    let e = cmc(&m, bound, Budget::Runs(n), 21, 0.05).unwrap();
    let sigma = (oracle * (1.0 - oracle) / n as f64).sqrt();
    assert!(
        (e.value - oracle).abs() < 3.0 * sigma,
        "cmc {} vs oracle {oracle}",
        e.value
    );
}

#[test]
fn cascade_targets_are_exactly_toplevel_failures() {
    let text = std::fs::read_to_string(
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models/cascade.dft"),
    )
    .unwrap();
    let m = flatten(&text, 1e-5);
    let out_var = m
        .var_names
        .iter()
        .position(|n| n == "PAND1.out")
        .unwrap();
    for loc in &m.locations {
        assert_eq!(loc.is_target, loc.vars[out_var] == 1);
    }
    assert!(m.target_locations().count() > 0);
}
