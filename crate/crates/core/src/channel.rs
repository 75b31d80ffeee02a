//! Wideband OFDM near-field channel synthesis: subcarrier grid, path gains,
//! spherical-wavefront steering vectors with analytic derivatives, pilot
//! symbols and noisy antenna-domain snapshots.

use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::geometry::{ArrayGeometry, PolarPosition};
use crate::SPEED_OF_LIGHT;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("invalid band: {0}")]
    InvalidBand(String),
    #[error("users must be non-empty and distinct")]
    InvalidUsers,
    #[error("noise variance must be positive, got {0}")]
    InvalidNoiseVariance(f64),
    #[error("cannot derive a noise level from an all-zero signal")]
    ZeroSignal,
}

/// Subcarrier grid: `M` frequencies spanning `[f_c - B/2, f_c + B/2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandPlan {
    carrier_hz: f64,
    bandwidth_hz: f64,
    freqs: Vec<f64>,
}

impl BandPlan {
    /// Uniform grid with both band edges included: for `M >= 2`,
    /// `f_m = f_c - B/2 + (m-1) B/(M-1)`; a single subcarrier sits at `f_c`.
    pub fn uniform(carrier_hz: f64, bandwidth_hz: f64, n_subcarriers: usize) -> Result<Self, ChannelError> {
        if n_subcarriers == 0 {
            return Err(ChannelError::InvalidBand("need at least one subcarrier".into()));
        }
        if !bandwidth_hz.is_finite() || bandwidth_hz < 0.0 {
            return Err(ChannelError::InvalidBand(format!(
                "bandwidth must be non-negative, got {bandwidth_hz}"
            )));
        }
        if !carrier_hz.is_finite() || carrier_hz <= bandwidth_hz / 2.0 {
            return Err(ChannelError::InvalidBand(format!(
                "carrier {carrier_hz} must exceed half the bandwidth {bandwidth_hz}"
            )));
        }
        if n_subcarriers > 1 && bandwidth_hz == 0.0 {
            return Err(ChannelError::InvalidBand(
                "zero bandwidth allows only a single subcarrier".into(),
            ));
        }
        let freqs = if n_subcarriers == 1 {
            vec![carrier_hz]
        } else {
            let step = bandwidth_hz / (n_subcarriers - 1) as f64;
            (0..n_subcarriers)
                .map(|m| carrier_hz - bandwidth_hz / 2.0 + m as f64 * step)
                .collect()
        };
        Ok(Self { carrier_hz, bandwidth_hz, freqs })
    }

    /// Band plan from an explicit strictly increasing frequency list.
    pub fn from_frequencies(carrier_hz: f64, freqs: Vec<f64>) -> Result<Self, ChannelError> {
        if freqs.is_empty() {
            return Err(ChannelError::InvalidBand("need at least one subcarrier".into()));
        }
        if freqs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ChannelError::InvalidBand(
                "frequencies must be strictly increasing".into(),
            ));
        }
        if freqs[0] <= 0.0 {
            return Err(ChannelError::InvalidBand("frequencies must be positive".into()));
        }
        let bandwidth_hz = freqs.last().unwrap() - freqs[0];
        Ok(Self { carrier_hz, bandwidth_hz, freqs })
    }

    pub fn carrier_hz(&self) -> f64 {
        self.carrier_hz
    }

    pub fn bandwidth_hz(&self) -> f64 {
        self.bandwidth_hz
    }

    pub fn n_subcarriers(&self) -> usize {
        self.freqs.len()
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }
}

/// The users to localize, each at a distinct polar position.
#[derive(Debug, Clone, PartialEq)]
pub struct UserSet {
    positions: Vec<PolarPosition>,
}

impl UserSet {
    pub fn new(positions: Vec<PolarPosition>) -> Result<Self, ChannelError> {
        if positions.is_empty() {
            return Err(ChannelError::InvalidUsers);
        }
        for (i, a) in positions.iter().enumerate() {
            for b in positions.iter().skip(i + 1) {
                if a == b {
                    return Err(ChannelError::InvalidUsers);
                }
            }
        }
        Ok(Self { positions })
    }

    pub fn single(position: PolarPosition) -> Self {
        Self { positions: vec![position] }
    }

    pub fn n_users(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[PolarPosition] {
        &self.positions
    }
}

/// Free-space gain `c / (4 pi f d)`.
pub fn path_gain(freq_hz: f64, distance_m: f64) -> f64 {
    SPEED_OF_LIGHT / (4.0 * PI * freq_hz * distance_m)
}

/// Propagation phase `2 pi f d / c`, radians, unwrapped.
pub fn wave_phase(freq_hz: f64, distance_m: f64) -> f64 {
    TAU * freq_hz * distance_m / SPEED_OF_LIGHT
}

/// Per-subcarrier steering matrices and their analytic derivatives.
///
/// For each subcarrier `m`, `steering[m]` is the `N x K` matrix with entries
/// `alpha_{m,k} exp(-j v_{m,k,n})`; `range_deriv[m]` and `azimuth_deriv[m]`
/// hold the element-wise derivatives with respect to the user range and
/// azimuth.
#[derive(Debug, Clone)]
pub struct SteeringSet {
    pub steering: Vec<DMatrix<Complex64>>,
    pub range_deriv: Vec<DMatrix<Complex64>>,
    pub azimuth_deriv: Vec<DMatrix<Complex64>>,
}

impl SteeringSet {
    pub fn n_subcarriers(&self) -> usize {
        self.steering.len()
    }

    pub fn n_antennas(&self) -> usize {
        self.steering[0].nrows()
    }

    pub fn n_users(&self) -> usize {
        self.steering[0].ncols()
    }
}

/// Builds the steering matrices and their derivatives for every subcarrier.
pub fn steering_set(band: &BandPlan, users: &UserSet, geometry: &ArrayGeometry) -> SteeringSet {
    steering_for_positions(band, users.positions(), geometry)
}

/// Steering set for an explicit position list; unlike [`UserSet`] the list
/// may contain repeats (useful for transient position estimates).
pub fn steering_for_positions(
    band: &BandPlan,
    positions: &[PolarPosition],
    geometry: &ArrayGeometry,
) -> SteeringSet {
    let n = geometry.n_antennas();
    let k = positions.len();
    let m_count = band.n_subcarriers();

    let mut steering = vec![DMatrix::zeros(n, k); m_count];
    let mut range_deriv = vec![DMatrix::zeros(n, k); m_count];
    let mut azimuth_deriv = vec![DMatrix::zeros(n, k); m_count];

    let mut dist = vec![0.0; n];
    for (col, user) in positions.iter().enumerate() {
        geometry.element_distances_into(*user, &mut dist);
        let (sin_theta, cos_theta) = user.theta.sin_cos();
        for (m, &f) in band.freqs().iter().enumerate() {
            let alpha = path_gain(f, user.d);
            let alpha_over_d = alpha / user.d;
            for (row, &r) in geometry.offsets().iter().enumerate() {
                let phase = wave_phase(f, dist[row]);
                let phasor = Complex64::from_polar(1.0, -phase);
                steering[m][(row, col)] = alpha * phasor;
                // d/dd: -e^{-jv} ( c/(4 pi f d^2) + j (d - r cos)/(2 d d_n) )
                let re = alpha_over_d;
                let im = (user.d - r * cos_theta) / (2.0 * user.d * dist[row]);
                range_deriv[m][(row, col)] = -phasor * Complex64::new(re, im);
                // d/dtheta: -e^{-jv} j r sin / (2 d_n)
                let im = r * sin_theta / (2.0 * dist[row]);
                azimuth_deriv[m][(row, col)] = -phasor * Complex64::new(0.0, im);
            }
        }
    }

    SteeringSet { steering, range_deriv, azimuth_deriv }
}

/// Per-subcarrier noise variances.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    variances: Vec<f64>,
}

impl NoiseModel {
    pub fn new(variances: Vec<f64>) -> Result<Self, ChannelError> {
        for &v in &variances {
            if !v.is_finite() || v <= 0.0 {
                return Err(ChannelError::InvalidNoiseVariance(v));
            }
        }
        Ok(Self { variances })
    }

    /// Noiseless synthesis (all variances zero).
    pub fn noiseless(n_subcarriers: usize) -> Self {
        Self { variances: vec![0.0; n_subcarriers] }
    }

    /// Derives each subcarrier's variance from a target SNR in dB, using the
    /// deterministic all-ones symbol reference `x_m = sum_k s_{m,k}`:
    /// `sigma_m^2 = ||x_m||^2 / (N 10^(snr/10))`.
    pub fn from_snr(snr_db: f64, steering: &SteeringSet) -> Result<Self, ChannelError> {
        let n = steering.n_antennas() as f64;
        let scale = n * 10f64.powf(snr_db / 10.0);
        let variances = steering
            .steering
            .iter()
            .map(|s| {
                let reference = s.column_sum();
                let power = reference.norm_squared();
                if power == 0.0 {
                    Err(ChannelError::ZeroSignal)
                } else {
                    Ok(power / scale)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { variances })
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }
}

/// Variance for one subcarrier given its noiseless antenna-domain vector.
pub fn noise_variance_from_snr(snr_db: f64, noiseless: &[Complex64]) -> Result<f64, ChannelError> {
    let power: f64 = noiseless.iter().map(|z| z.norm_sqr()).sum();
    if power == 0.0 {
        return Err(ChannelError::ZeroSignal);
    }
    Ok(power / (noiseless.len() as f64 * 10f64.powf(snr_db / 10.0)))
}

/// Antenna-domain pilot observations: per subcarrier an `N x L` matrix of
/// snapshots, plus the `K x L` symbol matrix shared across subcarriers.
#[derive(Debug, Clone, PartialEq)]
pub struct AntennaSnapshot {
    pub signals: Vec<DMatrix<Complex64>>,
    pub symbols: DMatrix<Complex64>,
}

impl AntennaSnapshot {
    pub fn n_samples(&self) -> usize {
        self.symbols.ncols()
    }
}

/// Draws `L` pilot snapshots: unit-modulus symbols with i.i.d. uniform random
/// phase (one draw per user and sample, shared across subcarriers), plus
/// circularly symmetric complex Gaussian noise of the configured variance.
/// Deterministic for a fixed seed.
pub fn synthesize_snapshots(
    steering: &SteeringSet,
    noise: &NoiseModel,
    n_samples: usize,
    seed: u64,
) -> AntennaSnapshot {
    let k = steering.n_users();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut symbols = DMatrix::zeros(k, n_samples);
    for l in 0..n_samples {
        for u in 0..k {
            let phase: f64 = rng.gen_range(0.0..TAU);
            symbols[(u, l)] = Complex64::from_polar(1.0, phase);
        }
    }
    synthesize_with_symbols(steering, noise, &symbols, &mut rng)
}

/// Synthesis with caller-provided symbols; noise drawn from `rng`.
pub fn synthesize_with_symbols(
    steering: &SteeringSet,
    noise: &NoiseModel,
    symbols: &DMatrix<Complex64>,
    rng: &mut ChaCha8Rng,
) -> AntennaSnapshot {
    assert_eq!(symbols.nrows(), steering.n_users(), "symbol row count");
    let n = steering.n_antennas();
    let n_samples = symbols.ncols();

    let signals = steering
        .steering
        .iter()
        .zip(noise.variances())
        .map(|(s, &var)| {
            let mut x = s * symbols;
            if var > 0.0 {
                let scale = (var / 2.0).sqrt();
                for l in 0..n_samples {
                    for row in 0..n {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        x[(row, l)] += Complex64::new(re * scale, im * scale);
                    }
                }
            }
            x
        })
        .collect();

    AntennaSnapshot { signals, symbols: symbols.clone() }
}
