//! Roofline machine model and precision-speedup prediction.
//!
//! A machine is a set of compute ceilings (GFLOP/s per arithmetic class)
//! and memory ceilings (GB/s). Attainable throughput at arithmetic
//! intensity `ai` (flops per byte) is the lesser of the class's compute
//! peak and the slowest memory roof times `ai` — the conservative reading
//! when the working set's residence is unknown. Halving the storage width
//! doubles the intensity of the same flop stream; the predicted speedup of
//! a single-precision version is the ratio of the two attainable rates.
//! Memory-bound both ways that ratio is exactly 2; compute-bound it is the
//! ratio of the vector peaks.

use serde::{Deserialize, Serialize};

use crate::context::KernelCounters;
use crate::error::{Error, Result};

/// Arithmetic class a compute ceiling applies to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComputeClass {
    SpVector,
    DpVector,
    Scalar,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComputeRoof {
    pub name: String,
    pub class: ComputeClass,
    pub gflops: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryRoof {
    pub name: String,
    pub gbps: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineModel {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    pub compute: Vec<ComputeRoof>,
    pub memory: Vec<MemoryRoof>,
}

/// Which ceiling limited an attainable rate. Exact ties count as compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Bound {
    Compute,
    Memory,
}

impl MachineModel {
    pub fn from_json(json: &str) -> Result<Self> {
        let model: MachineModel =
            serde_json::from_str(json).map_err(|e| Error::MachineModel(e.to_string()))?;
        model.validate()?;
        Ok(model)
    }

    /// The model shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_json(include_str!("../assets/xeon-e5-2690.json"))
            .expect("bundled machine model must be valid")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::MachineModel(msg));
        if self.compute.is_empty() {
            return bad("machine model needs at least one compute roof".into());
        }
        if self.memory.is_empty() {
            return bad("machine model needs at least one memory roof".into());
        }
        for r in &self.compute {
            if !(r.gflops > 0.0 && r.gflops.is_finite()) {
                return bad(format!("compute roof `{}` has unusable rate {}", r.name, r.gflops));
            }
        }
        for r in &self.memory {
            if !(r.gbps > 0.0 && r.gbps.is_finite()) {
                return bad(format!("memory roof `{}` has unusable rate {}", r.name, r.gbps));
            }
        }
        // a wider vector cannot be slower, and vectors cannot lose to scalar
        let sp = self.class_peak(ComputeClass::SpVector);
        let dp = self.class_peak(ComputeClass::DpVector);
        let sc = self.class_peak(ComputeClass::Scalar);
        if let (Some(sp), Some(dp)) = (sp, dp) {
            if sp < dp {
                return bad(format!("sp_vector peak {sp} below dp_vector peak {dp}"));
            }
        }
        if let (Some(dp), Some(sc)) = (dp, sc) {
            if dp < sc {
                return bad(format!("dp_vector peak {dp} below scalar peak {sc}"));
            }
        }
        Ok(())
    }

    /// Highest compute ceiling of the class, if any roof declares it.
    pub fn class_peak(&self, class: ComputeClass) -> Option<f64> {
        self.compute
            .iter()
            .filter(|r| r.class == class)
            .map(|r| r.gflops)
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
    }

    /// Slowest memory roof.
    pub fn min_bandwidth(&self) -> f64 {
        self.memory.iter().map(|r| r.gbps).fold(f64::INFINITY, f64::min)
    }

    /// Attainable GFLOP/s for `class` work at intensity `ai` (flops/byte).
    pub fn attainable(&self, class: ComputeClass, ai: f64) -> Result<f64> {
        if !(ai > 0.0 && ai.is_finite()) {
            return Err(Error::Roofline(format!("arithmetic intensity {ai} unusable")));
        }
        let peak = self.class_peak(class).ok_or_else(|| {
            Error::Roofline(format!("machine model has no {class:?} compute roof"))
        })?;
        Ok(peak.min(self.min_bandwidth() * ai))
    }

    /// Attainable rate plus which ceiling bound it.
    pub fn classify(&self, class: ComputeClass, ai: f64) -> Result<(f64, Bound)> {
        let rate = self.attainable(class, ai)?;
        let peak = self.class_peak(class).expect("attainable checked the class");
        let bound = if rate >= peak { Bound::Compute } else { Bound::Memory };
        Ok((rate, bound))
    }

    /// Memory ceilings per roof at intensity `ai`, for reporting.
    pub fn memory_ceilings(&self, ai: f64) -> Vec<(String, f64)> {
        self.memory.iter().map(|r| (r.name.clone(), r.gbps * ai)).collect()
    }

    /// Predicted speedup of running the same flop stream single precision:
    /// attainable(sp, 2*ai) / attainable(dp, ai). Requires both vector
    /// classes in the model.
    pub fn predict_precision_gain(&self, ai_dp: f64) -> Result<f64> {
        let dp = self.attainable(ComputeClass::DpVector, ai_dp)?;
        let sp = self.attainable(ComputeClass::SpVector, 2.0 * ai_dp)?;
        Ok(sp / dp)
    }
}

/// Flops per byte of a counter set.
pub fn arithmetic_intensity(c: &KernelCounters) -> Result<f64> {
    if c.bytes() == 0 {
        return Err(Error::Roofline("no memory traffic recorded".into()));
    }
    if c.flops() == 0 {
        return Err(Error::Roofline("no flops recorded".into()));
    }
    Ok(c.flops() as f64 / c.bytes() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> MachineModel {
        MachineModel::bundled()
    }

    #[test]
    fn bundled_model_is_valid() {
        let m = model();
        assert_eq!(m.name.as_deref(), Some("xeon-e5-2690"));
        assert_eq!(m.class_peak(ComputeClass::SpVector), Some(24.06));
        assert_eq!(m.class_peak(ComputeClass::DpVector), Some(12.58));
        assert_eq!(m.class_peak(ComputeClass::Scalar), Some(3.17));
        assert_eq!(m.min_bandwidth(), 51.2);
        assert!(m.notes.is_some());
    }

    #[test]
    fn attainable_takes_the_lesser_roof() {
        let m = model();
        // memory side: scaling by a power of two keeps the product exact
        assert_eq!(m.attainable(ComputeClass::DpVector, 0.125).unwrap(), 6.4);
        // compute side
        assert_eq!(m.attainable(ComputeClass::DpVector, 100.0).unwrap(), 12.58);
        assert_eq!(m.attainable(ComputeClass::SpVector, 100.0).unwrap(), 24.06);
        // rejects nonsense intensities
        assert!(m.attainable(ComputeClass::DpVector, 0.0).is_err());
        assert!(m.attainable(ComputeClass::DpVector, -1.0).is_err());
        assert!(m.attainable(ComputeClass::DpVector, f64::NAN).is_err());
    }

    #[test]
    fn classification_with_tie_going_to_compute() {
        let m = MachineModel::from_json(
            r#"{"compute":[{"name":"dp","class":"dp_vector","gflops":10.0}],
                "memory":[{"name":"ram","gbps":50.0}]}"#,
        )
        .unwrap();
        let (rate, bound) = m.classify(ComputeClass::DpVector, 0.1).unwrap();
        assert_eq!((rate, bound), (5.0, Bound::Memory));
        let (rate, bound) = m.classify(ComputeClass::DpVector, 0.2).unwrap();
        assert_eq!((rate, bound), (10.0, Bound::Compute)); // 50*0.2 == peak: tie
        let (rate, bound) = m.classify(ComputeClass::DpVector, 1.0).unwrap();
        assert_eq!((rate, bound), (10.0, Bound::Compute));
    }

    #[test]
    fn memory_bound_gain_is_exactly_two() {
        let m = model();
        // sp stays memory-bound up to 2*ai = 24.06/51.2
        for ai in [0.01, 0.05, 0.1, 0.2, 0.23] {
            assert_eq!(m.predict_precision_gain(ai).unwrap(), 2.0, "ai={ai}");
        }
    }

    #[test]
    fn compute_bound_gain_is_the_peak_ratio() {
        let m = model();
        let g = m.predict_precision_gain(10.0).unwrap();
        assert_eq!(g, 24.06 / 12.58);
        assert!((g - 1.9126).abs() < 5e-4);
    }

    #[test]
    fn gain_transitions_monotonically_between_regimes() {
        let m = model();
        let band = m.predict_precision_gain(0.24).unwrap();
        assert!(band < 2.0 && band > 24.06 / 12.58, "band gain {band}");
        let gains: Vec<f64> = [0.1, 0.235, 0.24, 0.245, 0.5, 10.0]
            .iter()
            .map(|&ai| m.predict_precision_gain(ai).unwrap())
            .collect();
        for w in gains.windows(2) {
            assert!(w[1] <= w[0] + 1e-15, "gain must not rise with intensity: {gains:?}");
        }
    }

    #[test]
    fn validation_rejects_malformed_models() {
        let cases = [
            // no compute
            r#"{"compute":[],"memory":[{"name":"m","gbps":1.0}]}"#,
            // no memory
            r#"{"compute":[{"name":"c","class":"dp_vector","gflops":1.0}],"memory":[]}"#,
            // nonpositive rate
            r#"{"compute":[{"name":"c","class":"dp_vector","gflops":0.0}],"memory":[{"name":"m","gbps":1.0}]}"#,
            r#"{"compute":[{"name":"c","class":"dp_vector","gflops":1.0}],"memory":[{"name":"m","gbps":-2.0}]}"#,
            // ordering violations
            r#"{"compute":[{"name":"s","class":"sp_vector","gflops":1.0},{"name":"d","class":"dp_vector","gflops":2.0}],"memory":[{"name":"m","gbps":1.0}]}"#,
            r#"{"compute":[{"name":"d","class":"dp_vector","gflops":1.0},{"name":"x","class":"scalar","gflops":2.0}],"memory":[{"name":"m","gbps":1.0}]}"#,
            // unknown class / unknown field / broken json
            r#"{"compute":[{"name":"c","class":"quad","gflops":1.0}],"memory":[{"name":"m","gbps":1.0}]}"#,
            r#"{"compute":[{"name":"c","class":"dp_vector","gflops":1.0}],"memory":[{"name":"m","gbps":1.0}],"extra":1}"#,
            "not json",
        ];
        for json in cases {
            assert!(MachineModel::from_json(json).is_err(), "{json}");
        }
    }

    #[test]
    fn gain_requires_both_vector_classes() {
        let m = MachineModel::from_json(
            r#"{"compute":[{"name":"d","class":"dp_vector","gflops":10.0}],
                "memory":[{"name":"m","gbps":50.0}]}"#,
        )
        .unwrap();
        assert!(m.predict_precision_gain(1.0).is_err());
        assert!(m.attainable(ComputeClass::DpVector, 1.0).is_ok());
        assert!(m.attainable(ComputeClass::SpVector, 1.0).is_err());
    }

    #[test]
    fn intensity_from_counters() {
        let c = KernelCounters {
            flops_add: 300,
            flops_mul: 100,
            bytes_read: 600,
            bytes_written: 200,
            ..KernelCounters::default()
        };
        assert_eq!(arithmetic_intensity(&c).unwrap(), 0.5);
        assert!(arithmetic_intensity(&KernelCounters::default()).is_err());
    }

    #[test]
    fn memory_ceilings_report_every_roof() {
        let m = model();
        let c = m.memory_ceilings(0.5);
        assert_eq!(c.len(), 4);
        assert_eq!(c[0], ("L1".to_string(), 218.55));
        assert_eq!(c[3], ("DRAM".to_string(), 25.6));
    }
}
