//! Two-room building model: room temperatures `(T1, T2)` with a heater in
//! room 1 that is either off (mode 0) or on (mode 1).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::system::{ModeDynamics, SwitchedSystem};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalParams {
    /// Outside temperature.
    pub te: f64,
    /// Heater temperature.
    pub tf: f64,
    pub a21: f64,
    pub a12: f64,
    pub ae1: f64,
    pub ae2: f64,
    pub af: f64,
}

impl Default for ThermalParams {
    fn default() -> Self {
        ThermalParams {
            te: 10.0,
            tf: 50.0,
            a21: 5e-2,
            a12: 5e-2,
            ae1: 5e-3,
            ae2: 3.3e-3,
            af: 8.3e-3,
        }
    }
}

impl ThermalParams {
    pub fn mode(&self, heater_on: bool) -> Result<ModeDynamics> {
        let p = if heater_on { 1.0 } else { 0.0 };
        let a = DMatrix::from_row_slice(
            2,
            2,
            &[-self.a21 - self.ae1 - self.af * p, self.a21, self.a12, -self.a12 - self.ae2],
        );
        let b = DVector::from_vec(vec![self.ae1 * self.te + self.af * self.tf * p, self.ae2 * self.te]);
        ModeDynamics::affine(a, b)
    }

    pub fn system(&self) -> Result<SwitchedSystem> {
        SwitchedSystem::new(vec![self.mode(false)?, self.mode(true)?])
    }
}
