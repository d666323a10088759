use std::collections::HashSet;
use std::time::Duration;

use mqtt_testbed::broker::{self, BrokerConfig};
use mqtt_testbed::codec::QoS;
use mqtt_testbed::simgen::{
    build_plan, run_publishers, run_sustained, Catalog, PayloadMode, PublisherOptions,
    SustainedPlan,
};
use mqtt_testbed::verify::{start_verifier, VerifierConfig};

fn quick_verifier(mode: PayloadMode) -> VerifierConfig {
    VerifierConfig {
        mode,
        settle: Duration::from_millis(100),
        ..VerifierConfig::default()
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn canonical_run_is_lossless_and_fair() {
    let broker = broker::start(BrokerConfig::ephemeral()).await.unwrap();
    let catalog = Catalog::canonical();
    let mut cfg = quick_verifier(PayloadMode::Canonical);
    cfg.expected_payloads = Some(
        catalog
            .entries()
            .iter()
            .map(|t| t.payload.clone())
            .collect::<HashSet<_>>(),
    );
    let verifier = start_verifier(&broker.endpoint(), cfg).await.unwrap();

    let plan = build_plan(5_000, 5, 20, 10).unwrap();
    let log = run_publishers(
        &plan,
        &catalog,
        &broker.endpoint(),
        QoS::AtLeastOnce,
        PayloadMode::Canonical,
        Default::default(),
    )
    .await
    .unwrap();
    assert_eq!(log.total_sent(), 5_000);
    assert_eq!(log.total_acked(), 5_000);
    assert_eq!(log.batch_durations.len(), 5);
    assert!(log.duration() >= Duration::from_millis(80));
    assert_eq!((log.payload_min, log.payload_max), (Some(19), Some(126)));
    assert!(log.per_topic.values().all(|&n| n == 500));

    verifier
        .wait_quiescent(5_000, Duration::from_secs(10))
        .await;
    let report = verifier.finalize(&log).await.unwrap();
    assert_eq!(report.sent, 5_000);
    assert_eq!(report.unique_received, 5_000);
    assert_eq!(report.loss, 0);
    assert_eq!(report.duplicates, 0);
    assert_eq!(report.unknown_payloads, 0);
    assert!(report
        .per_topic
        .values()
        .all(|t| t.sent == 500 && t.received == 500));
    broker.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn sequenced_run_accounts_for_every_message() {
    let broker = broker::start(BrokerConfig::ephemeral()).await.unwrap();
    let verifier = start_verifier(&broker.endpoint(), quick_verifier(PayloadMode::Sequenced))
        .await
        .unwrap();
    let plan = build_plan(3_001, 3, 0, 7).unwrap();
    let log = run_publishers(
        &plan,
        &Catalog::canonical(),
        &broker.endpoint(),
        QoS::AtLeastOnce,
        PayloadMode::Sequenced,
        Default::default(),
    )
    .await
    .unwrap();
    verifier
        .wait_quiescent(3_001, Duration::from_secs(10))
        .await;
    let report = verifier.finalize(&log).await.unwrap();
    assert_eq!(report.unique_received, 3_001);
    assert_eq!(report.loss, 0);
    assert_eq!(report.out_of_order, 0);
    assert!(report.missing_sample.is_empty());
    assert!(report.latency.is_some());
    broker.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn qos0_run_completes() {
    let broker = broker::start(BrokerConfig::ephemeral()).await.unwrap();
    let mut cfg = quick_verifier(PayloadMode::Sequenced);
    cfg.qos = QoS::AtMostOnce;
    let verifier = start_verifier(&broker.endpoint(), cfg).await.unwrap();
    let plan = build_plan(2_000, 2, 10, 4).unwrap();
    let log = run_publishers(
        &plan,
        &Catalog::canonical(),
        &broker.endpoint(),
        QoS::AtMostOnce,
        PayloadMode::Sequenced,
        Default::default(),
    )
    .await
    .unwrap();
    assert_eq!(log.total_sent(), 2_000);
    assert_eq!(log.total_acked(), 0);
    verifier
        .wait_quiescent(2_000, Duration::from_secs(10))
        .await;
    let report = verifier.finalize(&log).await.unwrap();
    assert_eq!(report.unique_received, 2_000);
    broker.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn sustained_paces_evenly() {
    let broker = broker::start(BrokerConfig::ephemeral()).await.unwrap();
    let verifier = start_verifier(&broker.endpoint(), quick_verifier(PayloadMode::Sequenced))
        .await
        .unwrap();
    let plan = SustainedPlan {
        rate_per_sec: 200.0,
        window: Duration::from_millis(500),
        workers: 3,
    };
    let log = run_sustained(
        &plan,
        &Catalog::canonical(),
        &broker.endpoint(),
        QoS::AtLeastOnce,
        PayloadMode::Sequenced,
        PublisherOptions::default(),
    )
    .await
    .unwrap();
    assert_eq!(log.total_sent(), 100);
    let d = log.duration();
    assert!(
        d >= Duration::from_millis(480) && d < Duration::from_millis(900),
        "{d:?}"
    );
    verifier.wait_quiescent(100, Duration::from_secs(5)).await;
    let report = verifier.finalize(&log).await.unwrap();
    assert_eq!(report.loss, 0);
    assert_eq!(report.unique_received, 100);
    broker.stop().await;
}

#[tokio::test]
async fn finalize_requires_quiescence() {
    let broker = broker::start(BrokerConfig::ephemeral()).await.unwrap();
    let cfg = VerifierConfig {
        settle: Duration::from_secs(30),
        ..VerifierConfig::default()
    };
    let verifier = start_verifier(&broker.endpoint(), cfg).await.unwrap();
    let plan = build_plan(10, 1, 0, 1).unwrap();
    let log = run_publishers(
        &plan,
        &Catalog::canonical(),
        &broker.endpoint(),
        QoS::AtLeastOnce,
        PayloadMode::Canonical,
        Default::default(),
    )
    .await
    .unwrap();
    assert!(matches!(
        verifier.finalize(&log).await,
        Err(mqtt_testbed::verify::VerifyError::NotQuiescent { .. })
    ));
    broker.stop().await;
}

#[tokio::test]
async fn idle_verifier_reports_zero() {
    let broker = broker::start(BrokerConfig::ephemeral()).await.unwrap();
    let verifier = start_verifier(&broker.endpoint(), quick_verifier(PayloadMode::Canonical))
        .await
        .unwrap();
    tokio::time::sleep(Duration::from_millis(150)).await;
    assert_eq!(verifier.snapshot().received, 0);
    let errors = verifier.shutdown().await;
    assert!(errors.is_empty(), "{errors:?}");
    broker.stop().await;
}
