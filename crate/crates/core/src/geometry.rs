//! Cubic periodic box: coordinate wrapping and minimum-image displacements.

use crate::error::{Error, Result};

/// Box edge used for the MgCl2/water system (nm).
pub const DEFAULT_BOX_LENGTH: f64 = 2.7;

/// A cubic periodic simulation box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimBox {
    length: f64,
}

impl SimBox {
    pub fn new(length: f64) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "box length must be finite and positive, got {length}"
            )));
        }
        Ok(SimBox { length })
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.length
    }

    /// Map `x` into the primary image `[-L/2, L/2)`.
    ///
    /// Equivalent to `remainder(x + L/2, L) - L/2` with a floored (non-negative)
    /// remainder. Values already in the primary image are returned untouched,
    /// and every other shift is computed exactly, so `wrap(x + L)` equals
    /// `wrap(x)` bit for bit whenever `x + L` itself is representable.
    #[inline]
    pub fn wrap(&self, x: f64) -> f64 {
        let l = self.length;
        let half = 0.5 * l;
        if (-half..half).contains(&x) {
            return x;
        }
        let k = ((x + half) / l).floor();
        let mut r = if k == 1.0 {
            x - l
        } else if k == -1.0 {
            x + l
        } else {
            // fused, so k·l is never rounded on its own; for |k| >= 2 the
            // true result is a multiple of ulp(L) below L and thus exact
            (-k).mul_add(l, x)
        };
        // floor of a rounded quotient can be off by one near the edges
        if r >= half {
            r -= l;
        } else if r < -half {
            r += l;
        }
        r
    }

    /// Checked variant of [`SimBox::wrap`].
    pub fn wrap_coordinate(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::NonFinite(format!("coordinate {x}")));
        }
        Ok(self.wrap(x))
    }

    /// True when `x` is an image of the wrap discontinuity at `±L/2`.
    pub fn on_wrap_boundary(&self, x: f64) -> bool {
        x.is_finite() && self.wrap(x) == -0.5 * self.length
    }

    /// Minimum-image displacement `a - b`, componentwise wrapped.
    #[inline]
    pub fn displacement(&self, a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
        [
            self.wrap(a[0] - b[0]),
            self.wrap(a[1] - b[1]),
            self.wrap(a[2] - b[2]),
        ]
    }

    /// Checked variant of [`SimBox::displacement`].
    pub fn min_image_displacement(&self, a: [f64; 3], b: [f64; 3]) -> Result<[f64; 3]> {
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("displacement endpoint".into()));
        }
        Ok(self.displacement(a, b))
    }

    pub fn distance(&self, a: [f64; 3], b: [f64; 3]) -> f64 {
        norm(self.displacement(a, b))
    }
}

impl Default for SimBox {
    fn default() -> Self {
        SimBox {
            length: DEFAULT_BOX_LENGTH,
        }
    }
}

#[inline]
pub fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Flat coordinate vector for the atoms a CV reads, in nm.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    coords: Vec<f64>,
    sim_box: SimBox,
}

impl Configuration {
    pub fn new(coords: Vec<f64>, sim_box: SimBox) -> Result<Self> {
        if coords.is_empty() || !coords.len().is_multiple_of(3) {
            return Err(Error::InvalidArgument(format!(
                "coordinate vector length {} is not a positive multiple of 3",
                coords.len()
            )));
        }
        Ok(Configuration { coords, sim_box })
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn sim_box(&self) -> SimBox {
        self.sim_box
    }

    pub fn n_atoms(&self) -> usize {
        self.coords.len() / 3
    }

    pub fn atom(&self, i: usize) -> [f64; 3] {
        atom(&self.coords, i)
    }
}

#[inline]
pub(crate) fn atom(coords: &[f64], i: usize) -> [f64; 3] {
    [coords[3 * i], coords[3 * i + 1], coords[3 * i + 2]]
}
