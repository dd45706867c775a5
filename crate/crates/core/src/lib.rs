//! Internal DLA on the lattice cylinder: growth processes, discrete harmonic
//! pairings, ensemble statistics, and the divisible sandpile with its
//! obstacle-problem identity.

/// Crate version, exposed so downstream tools can record it in run metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod growth;
pub mod harmonic;
pub mod lattice;
pub mod output;
pub mod rng;
pub mod sandpile;
pub mod stats;

pub use growth::{
    band_width, detect_thin_tentacle, estimate_harmonic_measure, grow_cylinder,
    grow_cylinder_poisson, grow_cylinder_with, grow_cylinder_poisson_with, grow_directed_propp,
    grow_planar, FloorMode, GrowthError, GrowthTrace, KernelSet, PlanarCluster, WalkConfig,
    DEFAULT_STEP_CAP,
};
pub use harmonic::{
    circle_mode_weight, discrepancy_pairing, gff_green_kernel, lateness_pairing, psi0, solve_q,
    theoretical_variance_circle, theoretical_variance_gff, HarmonicError, HarmonicModes, Mode,
    ModeSpec, Profile, ProfileSpec, ScaledReal, TestFunction, TestFunctionSpec,
};
pub use lattice::{discrete_laplacian, neighbors, wrap_col, CylinderCluster, RowGrid, Site};
pub use output::{
    classify_symmetric_difference, cluster_csv, fmt_float, grid_csv, grid_pgm,
    harmonic_measure_csv, scaling_csv, symmetric_difference_csv, symmetric_difference_ppm,
    SymmetricDifference,
};
pub use rng::{StreamRng, RNG_ALGORITHM};
pub use sandpile::{
    obstacle_solve, optimal_overrelax, poisson_solve, rasterize_sum, smash_sum,
    smash_sum_stochastic, stabilize, verify_odometer_identity, Grid2, OdometerIdentityReport,
    Raster, SandpileError, SandpileGrid, Schedule, Shape, SmashSum, SolveParams, StabilizeParams,
    StabilizeReport, StochasticSmash,
};
pub use stats::{
    heyde_brown_diagnostics, heyde_brown_from_moments, ks_critical_1pct, ks_statistic,
    run_ensemble, sample_moments, scaling_study, track_martingale, Ensemble, EnsembleConfig,
    EnsembleSummary, HeydeBrownReport, MartingaleRecord, Moments, RunOutcome, ScalingRow,
    StatsError, Statistic, SCALING_EXCEED_CONSTANT,
};
