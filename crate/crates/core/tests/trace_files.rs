use litichain::workload::{load_trace_file, save_trace_file, WorkloadError};
use litichain::*;

#[test]
fn sampled_trace_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let trace = sample_trace(
        &MixtureSpec::default(),
        2000,
        ArrivalModel::Poisson(0.7),
        21,
    )
    .unwrap();
    save_trace_file(&trace, &path).unwrap();
    let loaded = load_trace_file(&path).unwrap();
    assert_eq!(loaded.records, trace.records);

    let text = std::fs::read_to_string(&path).unwrap();
    assert!(!text.contains('\r'));
    assert_eq!(text.lines().count(), 2001);

    // a loaded trace drives the same run as the in-memory one
    let params = SimParams::new(VariantSpec::new(VariantKind::SVariant, 3), 40).with_difficulty(0);
    assert_eq!(
        run(&loaded, &params).unwrap(),
        run(&trace, &params).unwrap()
    );
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_trace_file(&dir.path().join("absent.csv")).unwrap_err();
    assert!(matches!(err, WorkloadError::Io(_)), "{err}");
}
