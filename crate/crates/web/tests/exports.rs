use layerwise_web::{basin_json, basin_table, bcsgd_json, bcsgd_runs, depth_sweep_curves, depth_sweep_json};

#[test]
fn depth_curves_decrease_and_deeper_is_faster() {
    let curves = depth_sweep_curves(8, 2, 60, &[1, 4, 16], 5, 2).unwrap();
    assert_eq!(curves.len(), 3);
    for c in &curves {
        assert_eq!(c.relative.len(), 5);
        assert!(c.relative.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "{c:?}");
    }
    let first: Vec<f64> = curves.iter().map(|c| c.relative[0]).collect();
    assert!(first[2] < first[0], "{first:?}");
}

#[test]
fn basin_table_shapes() {
    let (lr, margin) = basin_table(50);
    assert_eq!(lr.len(), 50);
    assert!(lr.iter().all(|v| *v > 0.0 && v.is_finite()));
    assert!(margin.iter().all(|v| v.is_finite()));
    let text = basin_json(3).unwrap();
    assert!(text.starts_with("{\"l_times_r\":["));
    assert!(basin_json(0).is_err());
}

#[test]
fn bcsgd_trace_is_deterministic_with_finite_floor() {
    let a = bcsgd_runs(0.5, 0.1, 300, 3, 1).unwrap();
    let b = bcsgd_runs(0.5, 0.1, 300, 3, 1).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.mean_dist.len(), 300);
    assert!(a.oracle_loss > 0.0);
    assert!(a.tail_mean.is_finite() && a.tail_mean > 0.0);
    let lo = a.floor_lower.expect("bracket present");
    assert!(lo >= 0.0);
    assert!(a.floor_upper.unwrap() >= lo);
}

#[test]
fn json_exports_validate_inputs() {
    assert!(depth_sweep_json(4, 2, 10, &[0], 3, 0).is_err());
    assert!(depth_sweep_json(4, 2, 10, &[2], 0, 0).is_err());
    let text = depth_sweep_json(4, 2, 10, &[1, 3], 2, 0).unwrap();
    assert!(text.starts_with("[{\"depth\":1,\"relative\":["));
    assert!(bcsgd_json(2.5, 0.1, 10, 1, 0).is_err());
    assert!(bcsgd_json(0.5, -1.0, 10, 1, 0).is_err());
    let text = bcsgd_json(0.5, 0.1, 20, 1, 0).unwrap();
    assert!(text.contains("\"floor_lower\":"));
}
