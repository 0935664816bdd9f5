//! Bifurcation entropy of holomorphic families of polynomials.
//!
//! Numerical estimators for the entropy of the bifurcation locus, computed
//! from separated sets of the parametric Bowen metric, the bifurcation
//! measure `μ_bif = dd^c L` on a parameter grid, Brin–Katok local entropy,
//! pointwise dimension and the volume growth of critical-orbit graphs.
//!
//! Every numerical routine is generic over [`Real`] (`f64` or `f32`); the
//! `*64` aliases below fix the default precision.
//!
//! ```
//! use bifent::{lyapunov_l, make_unicritical, Parameter64};
//!
//! let f = make_unicritical(2).unwrap();
//! let l = lyapunov_l(&f, &Parameter64::from_re_im(-1.0, 0.0), 1e-10).unwrap();
//! assert!((l.value - 2f64.ln()).abs() < 1e-9);
//! ```

// `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod entropy;
pub mod error;
pub mod family;
pub mod measure;
pub mod metric;
pub mod orbit;
pub mod scalar;
pub mod sphere;

pub use num_complex::Complex;

pub use entropy::{
    brin_katok, brin_katok_sample, estimate_h_bif, estimate_h_metric, graph_volume_growth,
    pointwise_dimension, report_on_table, BallMethod, BrinKatokReport, DimensionReport,
    EntropyReport, MetricEntropyReport, Region, VolumeGrowthReport,
};
pub use error::{Error, Result};
pub use family::{make_cubic_two_critical, make_unicritical, Family, MarkedFamily};
pub use measure::{
    ball_mass, bowen_ball_mass, bowen_profile_refined, build_measure_grid, kappa_trim,
    sample_measure, GridSpec, MeasureGrid, Stencil,
};
pub use metric::{
    bif_dist, bif_dist_tilde, greedy_separated, packing_curve, DistanceKind, PackingResult,
    SampleCloud,
};
pub use orbit::{
    critical_lyapunov_exponent, green_function, lyapunov_backward_mc, lyapunov_l, orbit_table,
    ExponentStatus, OrbitTable,
};
pub use scalar::Real;
pub use sphere::{chordal_dist, param_dist, Parameter, Rect, SpherePoint};

pub type SpherePoint64 = SpherePoint<f64>;
pub type SpherePoint32 = SpherePoint<f32>;
pub type Parameter64 = Parameter<f64>;
pub type Parameter32 = Parameter<f32>;
pub type OrbitTable64 = OrbitTable<f64>;
pub type OrbitTable32 = OrbitTable<f32>;
pub type SampleCloud64 = SampleCloud<f64>;
pub type MeasureGrid64 = MeasureGrid<f64>;
pub type MeasureGrid32 = MeasureGrid<f32>;
