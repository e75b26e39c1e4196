//! Static guidance: bias bands and minimum enactment gaps per model class.

use serde::Serialize;

use crate::estimators::ModelClass;
use crate::metrics::{NON_NULL_BAND_EDGES, NULL_BAND_EDGES};
use crate::policy::GapCondition;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    /// Gap (years) beyond which the AR model's omitted-policy bias is small.
    pub ar_min_gap_years: [u32; 2],
    pub did_min_gap_years: [u32; 2],
    /// Relative bias (%) edges: none / small / moderate / large.
    pub rel_bias_band_edges_pct: [f64; 3],
    /// Standardized bias (effect-size units) edges: small / moderate / large.
    pub std_bias_band_edges: [f64; 2],
}

pub const THRESHOLDS: Thresholds = Thresholds {
    ar_min_gap_years: [3, 4],
    did_min_gap_years: [6, 7],
    rel_bias_band_edges_pct: NON_NULL_BAND_EDGES,
    std_bias_band_edges: NULL_BAND_EDGES,
};

/// Compact JSON encoding of [`THRESHOLDS`]; identical on every call.
pub fn thresholds_json() -> String {
    serde_json::to_string(&THRESHOLDS).expect("thresholds serialize")
}

impl Thresholds {
    /// Whether a gap condition clears the minimum for `model`: its lower end
    /// must reach the lower end of the model's recommended range.
    pub fn gap_sufficient(&self, model: ModelClass, gap: &GapCondition) -> bool {
        let min = match model {
            ModelClass::Ar => self.ar_min_gap_years[0],
            ModelClass::Did => self.did_min_gap_years[0],
        };
        gap.low >= min as f64
    }
}
