use lorentzlab::geodesic::{integrate_geodesic, GeodesicOptions, StopReason};
use lorentzlab_bench::schwarzschild_start;

// The timed geodesic must run to the end of its range outside the horizon.
#[test]
fn benchmark_geodesic_reaches_its_end() {
    let (m, x, v) = schwarzschild_start();
    let path = integrate_geodesic(&m, &x, &v, (0.0, 20.0), &GeodesicOptions::with_tol(1e-10)).unwrap();
    assert_eq!(path.stop_reason(), StopReason::Reached);
    assert!((path.t_max() - 20.0).abs() < 1e-12);
    assert!(path.position(20.0)[1] > 2.0);
    assert!(path.norm_drift(20.0) < 1e-8);
}
