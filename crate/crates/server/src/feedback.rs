use std::collections::BTreeMap;

use gesa_core::objectives::check_simplex;
use gesa_core::{GesaError, Result};
use serde::{Deserialize, Serialize};

pub const DEFAULT_ETA: f64 = 0.2;

/// Selection weights adjusted by administrators, plus override counts per
/// reason category.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackState {
    pub weights: [f64; 3],
    pub eta: f64,
    #[serde(default)]
    pub override_counts: BTreeMap<String, u64>,
}

impl Default for FeedbackState {
    fn default() -> Self {
        Self { weights: [0.4, 0.3, 0.3], eta: DEFAULT_ETA, override_counts: BTreeMap::new() }
    }
}

/// `(1 − η)·old + η·adjusted`, computed as `old + η·(adjusted − old)` so a
/// repeated point is a fixed point bit for bit.
pub fn apply_feedback(state: &FeedbackState, adjusted: [f64; 3]) -> Result<FeedbackState> {
    check_simplex("adjusted weights", &adjusted)?;
    if !(state.eta > 0.0 && state.eta <= 1.0) {
        return Err(GesaError::InvalidArgument("eta must lie in (0, 1]".into()));
    }
    let eta = state.eta;
    let mut weights = [0.0; 3];
    for (k, w) in weights.iter_mut().enumerate() {
        *w = if eta == 1.0 { adjusted[k] } else { state.weights[k] + eta * (adjusted[k] - state.weights[k]) };
    }
    Ok(FeedbackState { weights, ..state.clone() })
}
