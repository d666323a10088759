use mqtt_testbed::bench::{
    run_scenario, run_suite, BenchError, Endpoint, Scenario, Sustained, ROW_NAMES,
};
use mqtt_testbed::codec::QoS;
use mqtt_testbed::simgen::PayloadMode;

fn small(total: u64, batches: u64, sleep: u64) -> Scenario {
    let mut s = Scenario::new(total, batches, sleep, 4);
    s.verifier.settle_ms = 100;
    s
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn repetitions_use_fresh_brokers() {
    let mut s = small(1_000, 2, 20);
    s.repetitions = 3;
    let suite = run_scenario(&s).await.unwrap();
    assert_eq!(suite.runs.len(), 3);
    for (i, r) in suite.runs.iter().enumerate() {
        assert_eq!(r.repetition, i as u32);
        assert_eq!(r.broker_routed_at_start, Some(0));
        assert_eq!((r.loss, r.duplicates, r.total_messages), (0, 0, 1_000));
        assert!(r.overall_duration_ms >= 20.0);
        let identity = r.messages_per_second * r.overall_duration_ms / 1000.0;
        assert!(
            (identity - r.total_messages as f64).abs()
                <= 0.05 * r.overall_duration_ms / 1000.0 + 1e-9
        );
    }
    assert!(suite.passed);
    assert!(suite.linearity.is_none());
    assert!((0.0..=1.0).contains(&suite.throughput_relative_spread));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn json_report_has_table_rows() {
    let suite = run_scenario(&small(500, 1, 0)).await.unwrap();
    let v = serde_json::to_value(&suite).unwrap();
    for name in ROW_NAMES {
        assert!(v["runs"][0].get(name).is_some(), "{name}");
    }
    assert_eq!(v["runs"][0]["Number of different devices"], 10);
}

#[tokio::test]
async fn unreachable_endpoint_is_connectivity_error() {
    let mut s = small(10, 1, 0);
    s.endpoint = Endpoint::External("127.0.0.1:1".into());
    let err = run_scenario(&s).await.unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
}

#[tokio::test]
async fn invalid_scenario_is_config_error() {
    let s = small(0, 1, 0);
    let err = run_scenario(&s).await.unwrap_err();
    assert!(matches!(err, BenchError::Config(_)));
    assert_eq!(err.exit_code(), 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn thresholds_fail_the_suite() {
    let mut s = small(200, 1, 0);
    s.thresholds.min_throughput = Some(1e12);
    let suite = run_scenario(&s).await.unwrap();
    assert!(!suite.passed);
    assert!(suite
        .checks
        .iter()
        .any(|c| !c.pass && c.name.ends_with("throughput")));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn suite_over_distinct_totals_checks_linearity() {
    let suite = run_suite(&[small(400, 2, 10), small(800, 4, 10)])
        .await
        .unwrap();
    let l = suite.linearity.expect("two distinct totals");
    assert_eq!(l.threshold, 0.10);
    assert!(suite.checks.iter().any(|c| c.name == "linearity"));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn sustained_scenario_reports_requirement() {
    let mut s = small(1, 1, 0);
    s.mode = PayloadMode::Sequenced;
    s.sustained = Some(Sustained {
        rate_per_sec: 100.0,
        window_ms: 500,
    });
    let suite = run_scenario(&s).await.unwrap();
    let r = &suite.runs[0];
    assert_eq!(r.total_messages, 50);
    let check = r.sustained.expect("sustained result");
    assert!(check.pass && check.margin > 4.0);
    assert!(suite.passed);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn qos0_and_level4_scenario() {
    let mut s = small(1_000, 2, 0);
    s.qos = QoS::AtMostOnce;
    s.protocol_level = mqtt_testbed::codec::ProtocolLevel::V311;
    s.mode = PayloadMode::Sequenced;
    let suite = run_scenario(&s).await.unwrap();
    assert_eq!(suite.runs[0].loss, 0);
}
