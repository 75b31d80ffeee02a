//! Maximum-likelihood localization from combined observations.
//!
//! The likelihood of the combined snapshots concentrates into the projection
//! objective `sum_m tr(P[Q_m S_m(eta)] R_m)`, maximized one user at a time by
//! alternating projection: each user update projects its combined steering
//! vector onto the orthogonal complement of the other users' subspace and
//! maximizes the residual objective over a coarse-to-fine grid.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::channel::BandPlan;
use crate::geometry::{element_distance_raw, ArrayGeometry, PolarPosition};
use crate::hybrid_array::{AnalogCombiner, ObservationBatch};
use crate::SPEED_OF_LIGHT;

/// Relative singular-value cutoff below which directions are treated as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Residuals smaller than this fraction of the pre-projection energy are
/// treated as annihilated and contribute nothing to the objective.
const ZERO_RESIDUAL_TOL: f64 = 1e-20;

/// Coarse-to-fine search domain for one user's `(d, theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchGrid {
    /// Range window, meters; lower bound must be positive.
    pub d_range: (f64, f64),
    /// Azimuth window, radians, inside (0, pi).
    pub theta_range: (f64, f64),
    /// Lattice size per level `(G_d, G_theta)`.
    pub coarse: (usize, usize),
    /// Refinement levels after the coarse pass.
    pub levels: usize,
    /// Window shrink factor applied per refinement level.
    pub shrink: f64,
}

impl Default for SearchGrid {
    fn default() -> Self {
        Self {
            d_range: (1.0, 20.0),
            theta_range: (0.1 * std::f64::consts::PI, 0.9 * std::f64::consts::PI),
            coarse: (64, 64),
            levels: 3,
            shrink: 0.15,
        }
    }
}

impl SearchGrid {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.d_range.0 > 0.0 && self.d_range.1 > self.d_range.0) {
            return Err(format!("invalid range window {:?}", self.d_range));
        }
        if !(self.theta_range.0 > 0.0
            && self.theta_range.1 > self.theta_range.0
            && self.theta_range.1 < std::f64::consts::PI)
        {
            return Err(format!("invalid azimuth window {:?}", self.theta_range));
        }
        if self.coarse.0 < 2 || self.coarse.1 < 2 {
            return Err("grid needs at least 2 points per axis".into());
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(format!("shrink factor {} outside (0, 1)", self.shrink));
        }
        Ok(())
    }
}

/// Rank-revealing orthogonal projector onto the column space of a matrix.
#[derive(Debug, Clone)]
pub struct Projector {
    /// The projector matrix `P = U_r U_r^H`.
    pub matrix: DMatrix<Complex64>,
    /// Numerical rank at the given tolerance.
    pub rank: usize,
    /// True when the numerical rank fell short of the column count.
    pub deficient: bool,
}

/// Builds `P = X (X^H X)^-1 X^H` through an SVD of `X`, dropping singular
/// directions below `tol` times the largest singular value.
pub fn projector(x: &DMatrix<Complex64>, tol: f64) -> Projector {
    let basis = orthonormal_basis(x, tol);
    let rank = basis.ncols();
    Projector {
        matrix: &basis * basis.adjoint(),
        rank,
        deficient: rank < x.ncols(),
    }
}

/// Orthonormal basis of the numerical column space.
pub fn orthonormal_basis(x: &DMatrix<Complex64>, tol: f64) -> DMatrix<Complex64> {
    if x.ncols() == 0 {
        return DMatrix::zeros(x.nrows(), 0);
    }
    let svd = x.clone().svd(true, false);
    let u = svd.u.as_ref().expect("svd with u");
    let s_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > tol * s_max && s > 0.0)
        .map(|(i, _)| i)
        .collect();
    let mut basis = DMatrix::zeros(x.nrows(), keep.len());
    for (dst, &src) in keep.iter().enumerate() {
        basis.set_column(dst, &u.column(src));
    }
    basis
}

/// Residual of the combined steering vector after removing the component in
/// the range of the complement projectors: `(I - P_m) Q_m s_m(eta)`.
pub fn residual_steering(
    position: PolarPosition,
    complement: &[DMatrix<Complex64>],
    combiner: &AnalogCombiner,
    band: &BandPlan,
    geometry: &ArrayGeometry,
) -> Vec<DVector<Complex64>> {
    let steering = crate::channel::steering_set(
        band,
        &crate::channel::UserSet::single(position),
        geometry,
    );
    band.freqs()
        .iter()
        .enumerate()
        .map(|(m, &f)| {
            let s: Vec<Complex64> = steering.steering[m].column(0).iter().cloned().collect();
            let y = DVector::from_vec(combiner.apply(f, &s).expect("dimensions match"));
            &y - &complement[m] * &y
        })
        .collect()
}

/// Projection objective for one user against the complement projectors:
/// `sum_m tr(P[residual_m] R_m)`. Annihilated residuals contribute zero.
pub fn single_user_objective(
    position: PolarPosition,
    complement: &[DMatrix<Complex64>],
    combiner: &AnalogCombiner,
    band: &BandPlan,
    geometry: &ArrayGeometry,
    batch: &ObservationBatch,
) -> f64 {
    let residuals = residual_steering(position, complement, combiner, band, geometry);
    residuals
        .iter()
        .zip(&batch.covariances)
        .map(|(res, r)| {
            let norm2 = res.norm_squared();
            if norm2 <= f64::MIN_POSITIVE {
                return 0.0;
            }
            let quad = (res.adjoint() * r * res)[(0, 0)].re;
            quad / norm2
        })
        .sum()
}

/// Localization output: final positions, the per-iteration trajectory
/// (initialization plus one entry per sweep) and the concentrated likelihood
/// after each iteration. `design_objective_trace` is populated only by the
/// joint localization-and-design loop.
#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub positions: Vec<PolarPosition>,
    pub trajectory: Vec<Vec<PolarPosition>>,
    pub likelihood_trace: Vec<f64>,
    pub design_objective_trace: Vec<f64>,
}

/// Precomputed state for repeated objective evaluations against one
/// combiner/observation pair: folded phase coefficients, per-subcarrier delay
/// phasors and the orthonormal complement bases to project out.
pub struct SweepContext<'a> {
    geometry: &'a ArrayGeometry,
    band: &'a BandPlan,
    combiner: &'a AnalogCombiner,
    batch: &'a ObservationBatch,
    coeff: Vec<Complex64>,
    phasors: Vec<Vec<Complex64>>,
    complement: Vec<DMatrix<Complex64>>,
    uniform_step: Option<f64>,
    // scratch buffers for the grid sweep
    dist: Vec<f64>,
    phasor: Vec<Complex64>,
    step: Vec<Complex64>,
    folded: Vec<Complex64>,
    resid: Vec<Complex64>,
}

impl<'a> SweepContext<'a> {
    pub fn new(
        geometry: &'a ArrayGeometry,
        band: &'a BandPlan,
        combiner: &'a AnalogCombiner,
        batch: &'a ObservationBatch,
    ) -> Self {
        assert_eq!(geometry.n_antennas(), combiner.layout().n_antennas());
        assert_eq!(batch.n_subcarriers(), band.n_subcarriers());
        let n = geometry.n_antennas();
        let n_rf = combiner.layout().n_rf;
        let phasors = band
            .freqs()
            .iter()
            .map(|&f| combiner.delay_phasors(f))
            .collect();
        let freqs = band.freqs();
        let uniform_step = if freqs.len() < 2 {
            Some(0.0)
        } else {
            let df = freqs[1] - freqs[0];
            let uniform = freqs
                .windows(2)
                .all(|w| ((w[1] - w[0]) - df).abs() <= 1e-9 * df.abs().max(1.0));
            uniform.then_some(df)
        };
        let complement = (0..band.n_subcarriers())
            .map(|_| DMatrix::zeros(n_rf, 0))
            .collect();
        Self {
            geometry,
            band,
            combiner,
            batch,
            coeff: combiner.phases().coefficients(),
            phasors,
            complement,
            uniform_step,
            dist: vec![0.0; n],
            phasor: vec![Complex64::default(); n],
            step: vec![Complex64::default(); n],
            folded: vec![Complex64::default(); n_rf],
            resid: vec![Complex64::default(); n_rf],
        }
    }

    /// Rebuilds the per-subcarrier complement bases from the combined steering
    /// vectors of the given (already estimated) users.
    pub fn set_complement_from(&mut self, positions: &[PolarPosition]) {
        let n_rf = self.combiner.layout().n_rf;
        if positions.is_empty() {
            for c in &mut self.complement {
                *c = DMatrix::zeros(n_rf, 0);
            }
            return;
        }
        let columns = self.combined_steering_columns(positions);
        for (m, cols) in columns.into_iter().enumerate() {
            self.complement[m] = orthonormal_basis(&cols, DEFAULT_RANK_TOL);
        }
    }

    /// Combined steering vectors (common gain omitted; the projection
    /// objective is scale free) for a candidate position, one vector per
    /// subcarrier.
    pub fn combined_steering(&mut self, position: PolarPosition) -> Vec<DVector<Complex64>> {
        self.prepare_phasors(position.d, position.theta);
        (0..self.band.n_subcarriers())
            .map(|m| {
                self.fold_subcarrier(m);
                DVector::from_column_slice(&self.folded)
            })
            .collect()
    }

    fn combined_steering_columns(&mut self, positions: &[PolarPosition]) -> Vec<DMatrix<Complex64>> {
        let n_rf = self.combiner.layout().n_rf;
        let mut columns = vec![DMatrix::zeros(n_rf, positions.len()); self.band.n_subcarriers()];
        for (j, &p) in positions.iter().enumerate() {
            self.prepare_phasors(p.d, p.theta);
            for (m, col) in columns.iter_mut().enumerate() {
                self.fold_subcarrier_into(m);
                for i in 0..n_rf {
                    col[(i, j)] = self.folded[i];
                }
            }
        }
        columns
    }

    fn prepare_phasors(&mut self, d: f64, theta: f64) {
        let cos_theta = theta.cos();
        let f0 = self.band.freqs()[0];
        let rate0 = -TAU * f0 / SPEED_OF_LIGHT;
        match self.uniform_step {
            Some(df) => {
                let rate_step = -TAU * df / SPEED_OF_LIGHT;
                for (n, &r) in self.geometry.offsets().iter().enumerate() {
                    let dist = element_distance_raw(d, cos_theta, r);
                    self.dist[n] = dist;
                    self.phasor[n] = Complex64::from_polar(1.0, rate0 * dist);
                    self.step[n] = Complex64::from_polar(1.0, rate_step * dist);
                }
            }
            None => {
                for (n, &r) in self.geometry.offsets().iter().enumerate() {
                    self.dist[n] = element_distance_raw(d, cos_theta, r);
                }
            }
        }
    }

    fn fold_subcarrier_into(&mut self, m: usize) {
        self.fold_subcarrier(m);
    }

    /// Folds the current per-antenna phasors through the analog network for
    /// subcarrier `m`, leaving the chain outputs in `self.folded`. Under the
    /// uniform-grid recurrence the phasors advance to the next subcarrier as a
    /// side effect, so subcarriers must be visited in ascending order starting
    /// from a fresh `prepare_phasors` call.
    fn fold_subcarrier(&mut self, m: usize) {
        if self.uniform_step.is_none() {
            let rate = -TAU * self.band.freqs()[m] / SPEED_OF_LIGHT;
            for n in 0..self.dist.len() {
                self.phasor[n] = Complex64::from_polar(1.0, rate * self.dist[n]);
            }
        }
        let layout = self.combiner.layout();
        let advance = self.uniform_step.is_some() && m + 1 < self.band.n_subcarriers();
        if self.combiner.is_delay_free() {
            // Plain antenna-order sums keep the result independent of how the
            // chain is partitioned into delayer blocks.
            for chain in 0..layout.n_rf {
                let mut acc = Complex64::new(0.0, 0.0);
                for n in layout.antennas_of_chain(chain) {
                    acc += self.coeff[n] * self.phasor[n];
                }
                self.folded[chain] = acc;
            }
        } else {
            let phasors = &self.phasors[m];
            for chain in 0..layout.n_rf {
                let mut acc = Complex64::new(0.0, 0.0);
                for l in 0..layout.n_ttd {
                    let block = chain * layout.n_ttd + l;
                    let mut partial = Complex64::new(0.0, 0.0);
                    for n in layout.antennas_of_block(block) {
                        partial += self.coeff[n] * self.phasor[n];
                    }
                    acc += phasors[block] * partial;
                }
                self.folded[chain] = acc;
            }
        }
        if advance {
            for n in 0..self.phasor.len() {
                self.phasor[n] *= self.step[n];
            }
        }
    }

    /// Residual projection objective for a candidate `(d, theta)`.
    pub fn objective(&mut self, d: f64, theta: f64) -> f64 {
        self.prepare_phasors(d, theta);
        let n_rf = self.combiner.layout().n_rf;
        let mut total = 0.0;
        for m in 0..self.band.n_subcarriers() {
            self.fold_subcarrier(m);
            let pre_norm2: f64 = self.folded.iter().map(|z| z.norm_sqr()).sum();
            self.resid.copy_from_slice(&self.folded);
            let basis = &self.complement[m];
            for col in 0..basis.ncols() {
                let mut dot = Complex64::new(0.0, 0.0);
                for i in 0..n_rf {
                    dot += basis[(i, col)].conj() * self.resid[i];
                }
                for i in 0..n_rf {
                    self.resid[i] -= dot * basis[(i, col)];
                }
            }
            let norm2: f64 = self.resid.iter().map(|z| z.norm_sqr()).sum();
            if norm2 <= ZERO_RESIDUAL_TOL * pre_norm2.max(f64::MIN_POSITIVE) {
                continue;
            }
            let r = &self.batch.covariances[m];
            let mut quad = Complex64::new(0.0, 0.0);
            for j in 0..n_rf {
                let mut t = Complex64::new(0.0, 0.0);
                for i in 0..n_rf {
                    t += self.resid[i].conj() * r[(i, j)];
                }
                quad += t * self.resid[j];
            }
            total += quad.re / norm2;
        }
        total
    }

    pub fn objective_at(&mut self, position: PolarPosition) -> f64 {
        self.objective(position.d, position.theta)
    }

    /// Coarse-to-fine maximization of the residual objective. Returns the best
    /// lattice point seen across all levels and its objective value. Exact
    /// ties resolve to the smaller `(d, theta)`.
    pub fn maximize(&mut self, grid: &SearchGrid) -> (PolarPosition, f64) {
        let (gd, gt) = grid.coarse;
        let mut d_window = grid.d_range;
        let mut t_window = grid.theta_range;
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for level in 0..=grid.levels {
            for di in 0..gd {
                let d = lattice_point(d_window, di, gd);
                for ti in 0..gt {
                    let theta = lattice_point(t_window, ti, gt);
                    let obj = self.objective(d, theta);
                    if obj > best.0 {
                        best = (obj, d, theta);
                    }
                }
            }
            if level < grid.levels {
                d_window = shrink_window(d_window, grid.d_range, best.1, grid.shrink);
                t_window = shrink_window(t_window, grid.theta_range, best.2, grid.shrink);
            }
        }
        let position = PolarPosition::new(best.1, best.2).expect("grid points are valid positions");
        (position, best.0)
    }

    /// Full concentrated likelihood `sum_m tr(P[S_m(eta)] R_m)` for a complete
    /// set of user positions.
    pub fn full_likelihood(&mut self, positions: &[PolarPosition]) -> f64 {
        let columns = self.combined_steering_columns(positions);
        columns
            .iter()
            .zip(&self.batch.covariances)
            .map(|(cols, r)| {
                let basis = orthonormal_basis(cols, DEFAULT_RANK_TOL);
                (0..basis.ncols())
                    .map(|c| {
                        let u = basis.column(c);
                        (u.adjoint() * r * u)[(0, 0)].re
                    })
                    .sum::<f64>()
            })
            .sum()
    }
}

fn lattice_point(window: (f64, f64), index: usize, count: usize) -> f64 {
    window.0 + (window.1 - window.0) * index as f64 / (count - 1) as f64
}

fn shrink_window(window: (f64, f64), outer: (f64, f64), center: f64, shrink: f64) -> (f64, f64) {
    let half = (window.1 - window.0) * shrink / 2.0;
    let lo = (center - half).max(outer.0);
    let hi = (center + half).min(outer.1);
    (lo, hi)
}

/// Alternating-projection localization of `n_users` users.
///
/// The initialization pass adds users one at a time, each maximized against
/// the projector of the users found so far. Each refinement sweep then
/// re-maximizes every user against the complement of the *other* users'
/// current estimates, rebuilt from scratch, keeping the incumbent whenever the
/// fresh search does not improve on it.
pub fn ap_localize(
    batch: &ObservationBatch,
    combiner: &AnalogCombiner,
    geometry: &ArrayGeometry,
    band: &BandPlan,
    n_users: usize,
    grid: &SearchGrid,
    sweeps: usize,
) -> EstimationResult {
    assert!(n_users >= 1);
    let mut ctx = SweepContext::new(geometry, band, combiner, batch);
    let mut positions: Vec<PolarPosition> = Vec::with_capacity(n_users);
    for _ in 0..n_users {
        ctx.set_complement_from(&positions);
        let (est, _) = ctx.maximize(grid);
        positions.push(est);
    }
    let mut trajectory = vec![positions.clone()];
    let mut likelihood_trace = vec![ctx.full_likelihood(&positions)];
    for _ in 0..sweeps {
        refine_sweep(&mut ctx, &mut positions, grid);
        trajectory.push(positions.clone());
        likelihood_trace.push(ctx.full_likelihood(&positions));
    }
    EstimationResult {
        positions,
        trajectory,
        likelihood_trace,
        design_objective_trace: Vec::new(),
    }
}

/// One alternating-projection refinement sweep over all users, in place.
pub fn refine_sweep(ctx: &mut SweepContext, positions: &mut [PolarPosition], grid: &SearchGrid) {
    for k in 0..positions.len() {
        let others: Vec<PolarPosition> = positions
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .map(|(_, &p)| p)
            .collect();
        ctx.set_complement_from(&others);
        let (candidate, cand_obj) = ctx.maximize(grid);
        let incumbent_obj = ctx.objective_at(positions[k]);
        if cand_obj > incumbent_obj {
            positions[k] = candidate;
        }
    }
}
