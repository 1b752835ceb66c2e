mod common;

use std::time::Duration;

#[test]
fn federated_queries_match_the_centralized_table() {
    common::check_query_equivalence(200, 11, Duration::from_secs(60)).unwrap();
}

#[test]
fn fedavg_algebra() {
    common::check_fedavg_algebra(200, 3).unwrap();
}

#[test]
fn one_round_equals_a_centralized_step() {
    common::check_one_round_equivalence().unwrap();
}

#[test]
fn gradients_match_finite_differences() {
    common::check_gradients(50, 5).unwrap();
}

#[test]
fn accuracy_band_on_the_default_cohort() {
    common::check_accuracy_band(200, Duration::from_secs(300)).unwrap();
}

#[test]
fn preprocessing_properties() {
    common::check_preprocessing(9).unwrap();
}

#[test]
fn metrics_recompute_from_confusion() {
    common::check_metrics(300, 13).unwrap();
}

#[test]
fn node_responses_leak_no_sentinels() {
    common::check_privacy().unwrap();
}
