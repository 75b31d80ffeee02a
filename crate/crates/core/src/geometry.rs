//! Coordinate systems, array element placement and user-to-element distances.
//!
//! The array is a uniform linear array on the y-axis with its reference
//! element at the origin; users lie in the half-plane `y > 0`, described in
//! polar coordinates by a range `d` from the reference element and an azimuth
//! `theta` measured from the x-axis.

use std::f64::consts::PI;

use thiserror::Error;

use crate::SPEED_OF_LIGHT;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("range must be positive and finite, got {0}")]
    InvalidRange(f64),
    #[error("azimuth must lie strictly inside (0, pi), got {0}")]
    AngleOutOfRange(f64),
    #[error("position coincides with the array reference point")]
    OriginDegenerate,
    #[error("antenna index {index} out of range for {count} elements")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("antenna spacing must be positive, got {0}")]
    InvalidSpacing(f64),
    #[error("array needs at least one element")]
    EmptyArray,
}

/// User position in polar coordinates relative to the array reference element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarPosition {
    /// Range from the reference element, meters. Always positive.
    pub d: f64,
    /// Azimuth from the x-axis, radians, strictly inside (0, pi).
    pub theta: f64,
}

impl PolarPosition {
    pub fn new(d: f64, theta: f64) -> Result<Self, GeometryError> {
        if !d.is_finite() || d <= 0.0 {
            return Err(GeometryError::InvalidRange(d));
        }
        if !theta.is_finite() || theta <= 0.0 || theta >= PI {
            return Err(GeometryError::AngleOutOfRange(theta));
        }
        Ok(Self { d, theta })
    }

    /// `x = d cos(theta)`, `y = d sin(theta)`.
    pub fn to_cartesian(self) -> CartesianPosition {
        CartesianPosition {
            x: self.d * self.theta.cos(),
            y: self.d * self.theta.sin(),
        }
    }
}

/// Position in the plane of the array, meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartesianPosition {
    pub x: f64,
    pub y: f64,
}

impl CartesianPosition {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Inverse of [`PolarPosition::to_cartesian`]. Fails at the origin and
    /// for points outside the front half-plane (`theta` outside (0, pi)).
    pub fn to_polar(self) -> Result<PolarPosition, GeometryError> {
        if self.x == 0.0 && self.y == 0.0 {
            return Err(GeometryError::OriginDegenerate);
        }
        let d = self.x.hypot(self.y);
        let theta = self.y.atan2(self.x);
        if theta <= 0.0 || theta >= PI {
            return Err(GeometryError::AngleOutOfRange(theta));
        }
        PolarPosition::new(d, theta)
    }

    pub fn distance_to(self, other: CartesianPosition) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Uniform linear array along the y-axis; element `n` (0-based) sits at
/// `(0, n * spacing)`, so the reference element has offset zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    spacing: f64,
    offsets: Vec<f64>,
}

impl ArrayGeometry {
    pub fn ula(n_antennas: usize, spacing: f64) -> Result<Self, GeometryError> {
        if n_antennas == 0 {
            return Err(GeometryError::EmptyArray);
        }
        if !spacing.is_finite() || spacing <= 0.0 {
            return Err(GeometryError::InvalidSpacing(spacing));
        }
        let offsets = (0..n_antennas).map(|n| n as f64 * spacing).collect();
        Ok(Self { spacing, offsets })
    }

    pub fn n_antennas(&self) -> usize {
        self.offsets.len()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Element offsets along the array axis, meters. The first entry is zero.
    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    /// Physical aperture `(N - 1) * spacing`, meters.
    pub fn aperture(&self) -> f64 {
        *self.offsets.last().expect("non-empty array")
    }

    /// Distance from a user to element `n` (0-based):
    /// `sqrt(r_n^2 + d^2 - 2 r_n d cos(theta))`.
    pub fn element_distance(&self, p: PolarPosition, n: usize) -> Result<f64, GeometryError> {
        let r = *self
            .offsets
            .get(n)
            .ok_or(GeometryError::IndexOutOfRange {
                index: n,
                count: self.offsets.len(),
            })?;
        Ok(element_distance_raw(p.d, p.theta.cos(), r))
    }

    /// Distances to every element, written into `out` (length `N`).
    pub fn element_distances_into(&self, p: PolarPosition, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.offsets.len());
        let cos_theta = p.theta.cos();
        for (dst, &r) in out.iter_mut().zip(&self.offsets) {
            *dst = element_distance_raw(p.d, cos_theta, r);
        }
    }

    /// Fraunhofer distance `2 D^2 / lambda` with `D = (N - 1) * spacing`.
    /// Positions closer than this are in the radiating near field.
    pub fn fraunhofer_distance(&self, carrier_hz: f64) -> f64 {
        let aperture = self.aperture();
        let lambda = SPEED_OF_LIGHT / carrier_hz;
        2.0 * aperture * aperture / lambda
    }
}

#[inline]
pub(crate) fn element_distance_raw(d: f64, cos_theta: f64, r: f64) -> f64 {
    (r * r + d * d - 2.0 * r * d * cos_theta).sqrt()
}
