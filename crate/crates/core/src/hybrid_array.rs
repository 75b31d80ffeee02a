//! The TTD-based hybrid analog combiner.
//!
//! `N` antennas feed `N_d` RF chains through a two-stage analog network:
//! every antenna has its own phase shifter, groups of `N_s` phase shifters
//! share a true-time delayer, and groups of `N_t` delayers share an RF chain.
//! The per-subcarrier combining matrix is `Q_m = T_m A` where `A` is the
//! block-diagonal phase-shifter matrix (frequency independent) and `T_m`
//! carries the delay phasors `exp(j 2 pi f_m t)`.

use std::f64::consts::TAU;
use std::ops::Range;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

use crate::channel::{AntennaSnapshot, BandPlan};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArrayError {
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("delay {0} outside [0, {1}]")]
    DelayOutOfRange(f64, f64),
}

/// Partition of the array: `N = n_rf * n_ttd * n_ps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CombinerLayout {
    /// RF chains (digital outputs).
    pub n_rf: usize,
    /// True-time delayers per RF chain.
    pub n_ttd: usize,
    /// Phase shifters (antennas) per delayer.
    pub n_ps: usize,
}

impl CombinerLayout {
    pub fn new(n_rf: usize, n_ttd: usize, n_ps: usize) -> Result<Self, ArrayError> {
        if n_rf == 0 || n_ttd == 0 || n_ps == 0 {
            return Err(ArrayError::LayoutMismatch(
                "all layout counts must be positive".into(),
            ));
        }
        Ok(Self { n_rf, n_ttd, n_ps })
    }

    pub fn n_antennas(&self) -> usize {
        self.n_rf * self.n_ttd * self.n_ps
    }

    /// Total delayer count `n_rf * n_ttd`; also the row count of `A`.
    pub fn n_blocks(&self) -> usize {
        self.n_rf * self.n_ttd
    }

    /// Delayer block feeding antenna `n` (all indices 0-based).
    pub fn block_of(&self, antenna: usize) -> usize {
        antenna / self.n_ps
    }

    pub fn chain_of_block(&self, block: usize) -> usize {
        block / self.n_ttd
    }

    pub fn antennas_of_block(&self, block: usize) -> Range<usize> {
        block * self.n_ps..(block + 1) * self.n_ps
    }

    pub fn antennas_of_chain(&self, chain: usize) -> Range<usize> {
        let per_chain = self.n_ttd * self.n_ps;
        chain * per_chain..(chain + 1) * per_chain
    }
}

/// Per-antenna phase-shifter settings, radians, stored canonically in
/// `[0, 2 pi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseBank {
    phases: Vec<f64>,
}

impl PhaseBank {
    pub fn new(phases: Vec<f64>) -> Self {
        let phases = phases.into_iter().map(|p| p.rem_euclid(TAU)).collect();
        Self { phases }
    }

    pub fn zeros(n: usize) -> Self {
        Self { phases: vec![0.0; n] }
    }

    pub fn random<R: Rng>(n: usize, rng: &mut R) -> Self {
        Self {
            phases: (0..n).map(|_| rng.gen_range(0.0..TAU)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    /// Unit-modulus coefficients `exp(j phi_n)`.
    pub fn coefficients(&self) -> Vec<Complex64> {
        self.phases
            .iter()
            .map(|&p| Complex64::from_polar(1.0, p))
            .collect()
    }
}

/// Per-delayer time delays, seconds, each within `[0, t_max]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayBank {
    delays: Vec<f64>,
    n_ttd: usize,
    t_max: f64,
}

impl DelayBank {
    pub fn new(delays: Vec<f64>, n_ttd: usize, t_max: f64) -> Result<Self, ArrayError> {
        if n_ttd == 0 || delays.len() % n_ttd != 0 {
            return Err(ArrayError::LayoutMismatch(format!(
                "{} delays do not tile into rows of {}",
                delays.len(),
                n_ttd
            )));
        }
        for &t in &delays {
            if !t.is_finite() || t < 0.0 || t > t_max {
                return Err(ArrayError::DelayOutOfRange(t, t_max));
            }
        }
        Ok(Self { delays, n_ttd, t_max })
    }

    pub fn zeros(n_rf: usize, n_ttd: usize, t_max: f64) -> Self {
        Self {
            delays: vec![0.0; n_rf * n_ttd],
            n_ttd,
            t_max,
        }
    }

    pub fn random<R: Rng>(n_rf: usize, n_ttd: usize, t_max: f64, rng: &mut R) -> Self {
        let delays = (0..n_rf * n_ttd)
            .map(|_| if t_max > 0.0 { rng.gen_range(0.0..=t_max) } else { 0.0 })
            .collect();
        Self { delays, n_ttd, t_max }
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn get(&self, chain: usize, ttd: usize) -> f64 {
        self.delays[chain * self.n_ttd + ttd]
    }

    pub fn set(&mut self, chain: usize, ttd: usize, delay: f64) {
        debug_assert!(delay >= 0.0 && delay <= self.t_max);
        self.delays[chain * self.n_ttd + ttd] = delay;
    }

    /// Row-major `(chain, ttd)` view; index `b` is the delayer block index.
    pub fn as_slice(&self) -> &[f64] {
        &self.delays
    }

    pub fn is_zero(&self) -> bool {
        self.delays.iter().all(|&t| t == 0.0)
    }
}

/// Immutable analog configuration: phases plus delays over a fixed layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalogCombiner {
    layout: CombinerLayout,
    phases: PhaseBank,
    delays: DelayBank,
}

impl AnalogCombiner {
    pub fn new(
        layout: CombinerLayout,
        phases: PhaseBank,
        delays: DelayBank,
    ) -> Result<Self, ArrayError> {
        if phases.len() != layout.n_antennas() {
            return Err(ArrayError::LayoutMismatch(format!(
                "{} phases for {} antennas",
                phases.len(),
                layout.n_antennas()
            )));
        }
        if delays.as_slice().len() != layout.n_blocks() || delays.n_ttd != layout.n_ttd {
            return Err(ArrayError::LayoutMismatch(format!(
                "{} delays for {} delayer blocks",
                delays.as_slice().len(),
                layout.n_blocks()
            )));
        }
        Ok(Self { layout, phases, delays })
    }

    /// Random phases uniform on `[0, 2 pi)` and delays uniform on `[0, t_max]`.
    pub fn random<R: Rng>(layout: CombinerLayout, t_max: f64, rng: &mut R) -> Self {
        let phases = PhaseBank::random(layout.n_antennas(), rng);
        let delays = DelayBank::random(layout.n_rf, layout.n_ttd, t_max, rng);
        Self { layout, phases, delays }
    }

    pub fn layout(&self) -> CombinerLayout {
        self.layout
    }

    pub fn phases(&self) -> &PhaseBank {
        &self.phases
    }

    pub fn delays(&self) -> &DelayBank {
        &self.delays
    }

    pub fn with_phases(&self, phases: PhaseBank) -> Result<Self, ArrayError> {
        Self::new(self.layout, phases, self.delays.clone())
    }

    pub fn with_delays(&self, delays: DelayBank) -> Result<Self, ArrayError> {
        Self::new(self.layout, self.phases.clone(), delays)
    }

    /// True when every delay is exactly zero; the combiner is then identical
    /// for all subcarriers (narrowband processing).
    pub fn is_delay_free(&self) -> bool {
        self.delays.is_zero()
    }

    /// Dense phase-shifter matrix `A`, `(n_rf n_ttd) x N`, block diagonal with
    /// one unit-modulus row segment per delayer block.
    pub fn phase_matrix(&self) -> DMatrix<Complex64> {
        let coeff = self.phases.coefficients();
        let mut a = DMatrix::zeros(self.layout.n_blocks(), self.layout.n_antennas());
        for block in 0..self.layout.n_blocks() {
            for n in self.layout.antennas_of_block(block) {
                a[(block, n)] = coeff[n];
            }
        }
        a
    }

    /// Dense delay matrix `T_m`, `n_rf x (n_rf n_ttd)`, block diagonal with
    /// entries `exp(j 2 pi f t)`.
    pub fn delay_matrix(&self, freq_hz: f64) -> DMatrix<Complex64> {
        let mut t = DMatrix::zeros(self.layout.n_rf, self.layout.n_blocks());
        for block in 0..self.layout.n_blocks() {
            let chain = self.layout.chain_of_block(block);
            t[(chain, block)] = Complex64::from_polar(1.0, TAU * freq_hz * self.delays.delays[block]);
        }
        t
    }

    /// Dense combined matrix `Q_m = T_m A`, `n_rf x N`.
    pub fn matrix(&self, freq_hz: f64) -> DMatrix<Complex64> {
        self.delay_matrix(freq_hz) * self.phase_matrix()
    }

    /// Per-block delay phasors `exp(j 2 pi f t_b)` at one subcarrier.
    pub fn delay_phasors(&self, freq_hz: f64) -> Vec<Complex64> {
        self.delays
            .delays
            .iter()
            .map(|&t| Complex64::from_polar(1.0, TAU * freq_hz * t))
            .collect()
    }

    /// Structured application `y = Q_m x` without materializing `Q_m`.
    ///
    /// `coeff` must be `phases().coefficients()` and `phasors` the per-block
    /// phasors for the target subcarrier. With all delays at zero the sum runs
    /// in plain antenna order per chain, so the result does not depend on how
    /// the chain is partitioned into delayer blocks.
    pub fn apply_with(
        &self,
        coeff: &[Complex64],
        phasors: &[Complex64],
        x: &[Complex64],
        out: &mut [Complex64],
    ) {
        debug_assert_eq!(x.len(), self.layout.n_antennas());
        debug_assert_eq!(out.len(), self.layout.n_rf);
        if self.is_delay_free() {
            for (chain, y) in out.iter_mut().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for n in self.layout.antennas_of_chain(chain) {
                    acc += coeff[n] * x[n];
                }
                *y = acc;
            }
        } else {
            for (chain, y) in out.iter_mut().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for l in 0..self.layout.n_ttd {
                    let block = chain * self.layout.n_ttd + l;
                    let mut partial = Complex64::new(0.0, 0.0);
                    for n in self.layout.antennas_of_block(block) {
                        partial += coeff[n] * x[n];
                    }
                    acc += phasors[block] * partial;
                }
                *y = acc;
            }
        }
    }

    /// `y = Q_m x` for one subcarrier.
    pub fn apply(&self, freq_hz: f64, x: &[Complex64]) -> Result<Vec<Complex64>, ArrayError> {
        if x.len() != self.layout.n_antennas() {
            return Err(ArrayError::DimensionMismatch {
                expected: self.layout.n_antennas(),
                got: x.len(),
            });
        }
        let coeff = self.phases.coefficients();
        let phasors = self.delay_phasors(freq_hz);
        let mut out = vec![Complex64::new(0.0, 0.0); self.layout.n_rf];
        self.apply_with(&coeff, &phasors, x, &mut out);
        Ok(out)
    }

    /// Combines antenna snapshots into digital observations and their sample
    /// covariances `R_m = (1/L) sum_l y_m(l) y_m(l)^H`.
    pub fn combine(
        &self,
        band: &BandPlan,
        snapshot: &AntennaSnapshot,
    ) -> Result<ObservationBatch, ArrayError> {
        if snapshot.signals.len() != band.n_subcarriers() {
            return Err(ArrayError::DimensionMismatch {
                expected: band.n_subcarriers(),
                got: snapshot.signals.len(),
            });
        }
        let n_rf = self.layout.n_rf;
        let n_samples = snapshot.n_samples();
        let coeff = self.phases.coefficients();
        let mut observations = Vec::with_capacity(band.n_subcarriers());
        let mut covariances = Vec::with_capacity(band.n_subcarriers());
        let mut y = vec![Complex64::new(0.0, 0.0); n_rf];
        for (x, &f) in snapshot.signals.iter().zip(band.freqs()) {
            if x.nrows() != self.layout.n_antennas() {
                return Err(ArrayError::DimensionMismatch {
                    expected: self.layout.n_antennas(),
                    got: x.nrows(),
                });
            }
            let phasors = self.delay_phasors(f);
            let mut obs = DMatrix::zeros(n_rf, n_samples);
            let mut cov = DMatrix::zeros(n_rf, n_rf);
            for l in 0..n_samples {
                let col = x.column(l);
                self.apply_with(&coeff, &phasors, col.as_slice(), &mut y);
                for (i, &yi) in y.iter().enumerate() {
                    obs[(i, l)] = yi;
                    for (j, &yj) in y.iter().enumerate() {
                        cov[(i, j)] += yi * yj.conj();
                    }
                }
            }
            cov /= Complex64::new(n_samples as f64, 0.0);
            observations.push(obs);
            covariances.push(cov);
        }
        Ok(ObservationBatch {
            observations,
            covariances,
            n_samples,
        })
    }
}

/// Combined digital-domain observations: per subcarrier an `n_rf x L` matrix
/// of snapshots plus the Hermitian sample covariance `R_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBatch {
    pub observations: Vec<DMatrix<Complex64>>,
    pub covariances: Vec<DMatrix<Complex64>>,
    pub n_samples: usize,
}

impl ObservationBatch {
    pub fn n_subcarriers(&self) -> usize {
        self.covariances.len()
    }

    pub fn n_rf(&self) -> usize {
        self.covariances[0].nrows()
    }
}
