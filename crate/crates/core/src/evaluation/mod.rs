//! Image quality metrics, bit accounting and the SNR sweep.

mod metrics;
mod sweep;

pub use metrics::{mse, ssim};
pub use sweep::{
    bit_reduction, bits_per_image, djscc_roundtrip, run_sweep, RoundTrip, Scheme, SweepConfig,
    SweepResult, SweepRow,
};
