//! Analytical collective variables and their closed-form Jacobians.
//!
//! These are the ground truth the surrogate is trained against and validated
//! with. Both CVs measure distances with the minimum-image convention so that
//! they agree with the wrap layer the surrogate applies to its inputs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{atom, norm, SimBox};

/// A scalar function of a flat coordinate vector with a known gradient.
///
/// Implemented by the analytical CVs below and by the trained surrogate, so
/// the evaluation harness can treat either as "the model".
pub trait CvFunction: Send + Sync {
    fn name(&self) -> &str;

    fn input_dim(&self) -> usize;

    fn value(&self, coords: &[f64]) -> Result<f64>;

    fn jacobian(&self, coords: &[f64]) -> Result<Vec<f64>>;

    fn value_and_jacobian(&self, coords: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.value(coords)?, self.jacobian(coords)?))
    }

    /// Values for many rows. Surrogates override this with a batched pass.
    fn values(&self, rows: &[&[f64]]) -> Result<Vec<f64>> {
        rows.iter().map(|r| self.value(r)).collect()
    }

    fn jacobians(&self, rows: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.jacobian(r)).collect()
    }
}

pub(crate) fn check_dim(expected: usize, coords: &[f64]) -> Result<()> {
    if coords.len() != expected {
        return Err(Error::Dimension {
            expected,
            got: coords.len(),
        });
    }
    Ok(())
}

/// Which of the two built-in CVs a dataset or model refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CvKind {
    #[serde(alias = "d")]
    Distance,
    #[serde(alias = "cn")]
    Coordination,
}

impl CvKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CvKind::Distance => "distance",
            CvKind::Coordination => "coordination",
        }
    }

    /// Build the analytical oracle with default parameters.
    pub fn oracle(&self, sim_box: SimBox) -> Box<dyn CvFunction> {
        match self {
            CvKind::Distance => Box::new(DistanceCv::new(sim_box)),
            CvKind::Coordination => Box::new(CoordinationCv::new(sim_box)),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            CvKind::Distance => 6,
            CvKind::Coordination => 3 + 3 * DEFAULT_N_OXYGENS,
        }
    }

    /// Atomic masses (amu) of the atoms the CV reads, in input order.
    pub fn atom_masses(&self) -> Vec<f64> {
        match self {
            CvKind::Distance => vec![MASS_MG, MASS_CL],
            CvKind::Coordination => {
                let mut m = vec![MASS_MG];
                m.extend(std::iter::repeat_n(MASS_O, DEFAULT_N_OXYGENS));
                m
            }
        }
    }
}

impl fmt::Display for CvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "distance" | "d" => Ok(CvKind::Distance),
            "coordination" | "cn" => Ok(CvKind::Coordination),
            other => Err(Error::InvalidArgument(format!("unknown cv '{other}'"))),
        }
    }
}

/// Standard atomic weights, amu.
pub const MASS_MG: f64 = 24.305;
pub const MASS_CL: f64 = 35.453;
pub const MASS_O: f64 = 15.999;
pub const MASS_H: f64 = 1.008;

/// Mg–Cl distance. Input layout `[x_Mg, y_Mg, z_Mg, x_Cl, y_Cl, z_Cl]`.
#[derive(Debug, Clone)]
pub struct DistanceCv {
    sim_box: SimBox,
}

impl DistanceCv {
    pub fn new(sim_box: SimBox) -> Self {
        DistanceCv { sim_box }
    }

    fn displacement(&self, coords: &[f64]) -> Result<[f64; 3]> {
        check_dim(6, coords)?;
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("distance input".into()));
        }
        Ok(self.sim_box.displacement(atom(coords, 0), atom(coords, 1)))
    }
}

impl CvFunction for DistanceCv {
    fn name(&self) -> &str {
        "distance"
    }

    fn input_dim(&self) -> usize {
        6
    }

    fn value(&self, coords: &[f64]) -> Result<f64> {
        Ok(norm(self.displacement(coords)?))
    }

    fn jacobian(&self, coords: &[f64]) -> Result<Vec<f64>> {
        let delta = self.displacement(coords)?;
        let d = norm(delta);
        if d == 0.0 {
            return Err(Error::Singular("Mg and Cl coincide; distance gradient undefined".into()));
        }
        let u = [delta[0] / d, delta[1] / d, delta[2] / d];
        Ok(vec![u[0], u[1], u[2], -u[0], -u[1], -u[2]])
    }
}

pub const DEFAULT_R0: f64 = 0.265;
pub const DEFAULT_K: f64 = 30.0;
pub const DEFAULT_N_OXYGENS: usize = 20;

/// Largest |k (r0 - d)| fed to cosh; beyond it sech² underflows to zero anyway.
const SECH_ARG_CLAMP: f64 = 350.0;

/// Smooth count of oxygens in the first hydration shell of Mg:
/// `C = Σ ½ {1 + tanh[k (r0 − d_i)]}`.
///
/// Input layout `[x_Mg, y_Mg, z_Mg, x_O1, y_O1, z_O1, …]`.
#[derive(Debug, Clone)]
pub struct CoordinationCv {
    sim_box: SimBox,
    r0: f64,
    k: f64,
    n_oxygens: usize,
}

impl CoordinationCv {
    pub fn new(sim_box: SimBox) -> Self {
        CoordinationCv {
            sim_box,
            r0: DEFAULT_R0,
            k: DEFAULT_K,
            n_oxygens: DEFAULT_N_OXYGENS,
        }
    }

    pub fn with_params(sim_box: SimBox, r0: f64, k: f64, n_oxygens: usize) -> Result<Self> {
        if !(r0 > 0.0 && k > 0.0 && n_oxygens > 0) {
            return Err(Error::InvalidArgument(format!(
                "coordination parameters must be positive (r0={r0}, k={k}, n={n_oxygens})"
            )));
        }
        Ok(CoordinationCv {
            sim_box,
            r0,
            k,
            n_oxygens,
        })
    }

    pub fn r0(&self) -> f64 {
        self.r0
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn n_oxygens(&self) -> usize {
        self.n_oxygens
    }

    /// Switching contribution of one neighbour at distance `d`,
    /// ½(1 + tanh z) with z = k (r0 − d). Evaluated as 1/(1 + e^(−2z)),
    /// which is the same function but keeps full relative precision in the
    /// far tail where 1 + tanh z cancels.
    pub fn switch(&self, d: f64) -> f64 {
        let z = self.k * (self.r0 - d);
        1.0 / (1.0 + (-2.0 * z).exp())
    }

    /// d(switch)/dd = −(k/2) sech²(k (r0 − d)).
    pub fn switch_derivative(&self, d: f64) -> f64 {
        let z = (self.k * (self.r0 - d)).clamp(-SECH_ARG_CLAMP, SECH_ARG_CLAMP);
        let c = z.cosh();
        -0.5 * self.k / (c * c)
    }

    fn check(&self, coords: &[f64]) -> Result<()> {
        check_dim(3 + 3 * self.n_oxygens, coords)?;
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("coordination input".into()));
        }
        Ok(())
    }
}

impl CvFunction for CoordinationCv {
    fn name(&self) -> &str {
        "coordination"
    }

    fn input_dim(&self) -> usize {
        3 + 3 * self.n_oxygens
    }

    fn value(&self, coords: &[f64]) -> Result<f64> {
        self.check(coords)?;
        let mg = atom(coords, 0);
        Ok((1..=self.n_oxygens)
            .map(|i| self.switch(self.sim_box.distance(atom(coords, i), mg)))
            .sum())
    }

    fn jacobian(&self, coords: &[f64]) -> Result<Vec<f64>> {
        self.check(coords)?;
        let mg = atom(coords, 0);
        let mut jac = vec![0.0; coords.len()];
        let mut mg_block = [0.0; 3];
        for i in 1..=self.n_oxygens {
            let delta = self.sim_box.displacement(atom(coords, i), mg);
            let d = norm(delta);
            if d == 0.0 {
                return Err(Error::Singular(format!(
                    "oxygen {i} coincides with Mg; coordination gradient undefined"
                )));
            }
            let scale = self.switch_derivative(d) / d;
            for a in 0..3 {
                let g = scale * delta[a];
                jac[3 * i + a] = g;
                mg_block[a] -= g;
            }
        }
        jac[..3].copy_from_slice(&mg_block);
        Ok(jac)
    }
}
