use serde::{Deserialize, Serialize};

/// Scalar Kalman filter with a random-walk process model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorFilter {
    pub estimate: f64,
    pub variance: f64,
    /// Process noise variance per step.
    pub q: f64,
    /// Measurement noise variance.
    pub r: f64,
}

impl SensorFilter {
    pub fn new(q: f64, r: f64, initial_estimate: f64, initial_variance: f64) -> Self {
        assert!(q >= 0.0 && r > 0.0 && initial_variance >= 0.0);
        Self {
            estimate: initial_estimate,
            variance: initial_variance,
            q,
            r,
        }
    }

    /// Predict-update with one measurement; returns the posterior estimate.
    pub fn update(&mut self, measurement: f64) -> f64 {
        let prior = self.variance + self.q;
        let gain = prior / (prior + self.r);
        self.estimate += gain * (measurement - self.estimate);
        self.variance = (1.0 - gain) * prior;
        self.estimate
    }
}

pub fn filter_step(filter: &SensorFilter, measurement: f64) -> (SensorFilter, f64) {
    let mut next = *filter;
    let est = next.update(measurement);
    (next, est)
}
