//! Scripted disturbances applied during a scenario.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::consensus::LinkFaultModel;
use crate::error::{param_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioEvent {
    /// Multiplies the true voltage magnitude of 1-based `bus` by
    /// `1 - fraction` at `step`.
    LoadDrop {
        bus: usize,
        fraction: f64,
        step: usize,
    },
    /// Link drops with probability `rate` from `start` until `end` (exclusive).
    PacketLoss {
        rate: f64,
        start: usize,
        #[serde(default)]
        end: Option<usize>,
    },
}

impl ScenarioEvent {
    pub fn validate(&self, horizon: usize, buses: Option<usize>) -> Result<()> {
        match *self {
            ScenarioEvent::LoadDrop {
                bus,
                fraction,
                step,
            } => {
                if !(fraction > 0.0 && fraction < 1.0) {
                    return param_err("load-drop fraction must lie in (0, 1)");
                }
                if step >= horizon {
                    return param_err(format!("load drop at step {step} beyond horizon {horizon}"));
                }
                match buses {
                    Some(nb) if bus >= 1 && bus <= nb => {}
                    Some(nb) => return param_err(format!("bus {bus} outside 1..={nb}")),
                    None => return param_err("load drop needs a power-system model"),
                }
            }
            ScenarioEvent::PacketLoss { rate, start, end } => {
                if !(rate > 0.0 && rate < 1.0) {
                    return param_err("packet-loss rate must lie in (0, 1)");
                }
                if start >= horizon {
                    return param_err(format!(
                        "packet loss starts at {start}, beyond horizon {horizon}"
                    ));
                }
                if matches!(end, Some(e) if e <= start) {
                    return param_err("packet-loss window is empty");
                }
            }
        }
        Ok(())
    }

    pub fn fault_model(&self) -> Option<LinkFaultModel> {
        match *self {
            ScenarioEvent::PacketLoss { rate, start, end } => Some(LinkFaultModel {
                drop_probability: rate,
                start,
                end,
            }),
            _ => None,
        }
    }

    /// Applies a load drop to a power-system truth state (magnitudes first)
    /// when `step` matches. Returns whether the state changed.
    pub fn apply_to_truth(&self, truth: &mut DVector<f64>, step: usize) -> bool {
        match *self {
            ScenarioEvent::LoadDrop {
                bus,
                fraction,
                step: at,
            } if at == step => {
                truth[bus - 1] *= 1.0 - fraction;
                true
            }
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_drop_fires_once() {
        let e = ScenarioEvent::LoadDrop {
            bus: 8,
            fraction: 0.15,
            step: 40,
        };
        let mut x = DVector::from_element(27, 1.0);
        assert!(!e.apply_to_truth(&mut x, 39));
        assert!(e.apply_to_truth(&mut x, 40));
        assert_eq!(x[7], 0.85);
        assert_eq!(x.iter().filter(|&&v| v != 1.0).count(), 1);
    }

    #[test]
    fn validation() {
        let e = ScenarioEvent::LoadDrop {
            bus: 15,
            fraction: 0.15,
            step: 40,
        };
        assert!(e.validate(100, Some(14)).is_err());
        assert!(ScenarioEvent::PacketLoss {
            rate: 0.3,
            start: 100,
            end: None
        }
        .validate(100, None)
        .is_err());
        assert!(ScenarioEvent::PacketLoss {
            rate: 0.3,
            start: 100,
            end: None
        }
        .validate(200, None)
        .is_ok());
    }
}
