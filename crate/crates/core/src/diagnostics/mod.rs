//! Training-stability diagnostics and compute calculators.

mod footprint;
mod growth;
mod spike;
mod width;

pub use footprint::{flops_estimate, footprint, Footprint, FootprintInput};
pub use growth::{
    growth_exponent, growth_from_vectors, growth_of_params, random_docs, GrowthReport,
};
pub use spike::{spike_score, window_stats, SeriesReport, DEFAULT_SIGMA, DEFAULT_WINDOW};
pub use width::{pearson, width_scaling_correlation, WidthScalingReport};
