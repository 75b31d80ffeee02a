//! Analog-coefficient optimization: choose phase-shifter settings and TTD
//! delays to maximize the weighted trace of the Fisher information at assumed
//! user positions.
//!
//! The objective `sum_m w_m tr(T_m A U_m U_m^H A^H T_m^H)` is maximized by
//! alternation: Riemannian conjugate gradient over the product of `N` unit
//! circles for the phases (the vectorized objective collapses to a quadratic
//! form through the block structure), and cyclic one-dimensional grid search
//! for the delays.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use crate::channel::{BandPlan, NoiseModel, SteeringSet};
use crate::hybrid_array::{AnalogCombiner, CombinerLayout, DelayBank, PhaseBank};

/// Direction matrices and weights defining a design objective.
#[derive(Debug, Clone)]
pub struct DesignObjective {
    /// Per subcarrier: `N x K'` matrix whose columns are the directions whose
    /// combined energy the design maximizes.
    pub directions: Vec<DMatrix<Complex64>>,
    /// Per-subcarrier weights, `1/sigma_m^2` when a noise model is given.
    pub weights: Vec<f64>,
}

impl DesignObjective {
    /// Combined-derivative surrogate `U_m = D_m + B_m`.
    pub fn surrogate(steering: &SteeringSet, noise: Option<&NoiseModel>) -> Self {
        let directions = steering
            .range_deriv
            .iter()
            .zip(&steering.azimuth_deriv)
            .map(|(d, b)| d + b)
            .collect();
        Self {
            directions,
            weights: Self::weights_from(noise, steering.n_subcarriers()),
        }
    }

    /// Exact trace of the averaged information matrix: stacking `[D_m  B_m]`
    /// splits the objective into the two Gram terms without cross products.
    pub fn exact_trace(steering: &SteeringSet, noise: Option<&NoiseModel>) -> Self {
        let directions = steering
            .range_deriv
            .iter()
            .zip(&steering.azimuth_deriv)
            .map(|(d, b)| {
                let mut u = DMatrix::zeros(d.nrows(), d.ncols() + b.ncols());
                u.columns_mut(0, d.ncols()).copy_from(d);
                u.columns_mut(d.ncols(), b.ncols()).copy_from(b);
                u
            })
            .collect();
        Self {
            directions,
            weights: Self::weights_from(noise, steering.n_subcarriers()),
        }
    }

    fn weights_from(noise: Option<&NoiseModel>, n_subcarriers: usize) -> Vec<f64> {
        match noise {
            Some(n) => n.variances().iter().map(|&v| 1.0 / v).collect(),
            None => vec![1.0; n_subcarriers],
        }
    }

    pub fn n_subcarriers(&self) -> usize {
        self.directions.len()
    }
}

/// `sum_m w_m sum_k ||Q_m u_{m,k}||^2` through the structured combiner.
pub fn design_objective_value(
    combiner: &AnalogCombiner,
    band: &BandPlan,
    objective: &DesignObjective,
) -> f64 {
    let mut total = 0.0;
    for (m, &f) in band.freqs().iter().enumerate() {
        let u = &objective.directions[m];
        let mut acc = 0.0;
        for k in 0..u.ncols() {
            let col: Vec<Complex64> = u.column(k).iter().cloned().collect();
            let y = combiner.apply(f, &col).expect("dimensions match");
            acc += y.iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        total += objective.weights[m] * acc;
    }
    total
}

/// Gram matrix `H = sum_{m,k} w_m W~_{m,k}^H W~_{m,k}` of the vectorized
/// phase problem: `g(a) = a^H H a` for the unit-modulus coefficient vector.
/// Entry `(n, n')` is nonzero only when both antennas feed the same RF chain.
pub fn phase_gram(
    combiner: &AnalogCombiner,
    band: &BandPlan,
    objective: &DesignObjective,
) -> DMatrix<Complex64> {
    let layout = combiner.layout();
    let n = layout.n_antennas();
    let mut h = DMatrix::zeros(n, n);
    let mut weighted = vec![Complex64::default(); n];
    for (m, &f) in band.freqs().iter().enumerate() {
        let phasors = combiner.delay_phasors(f);
        let u = &objective.directions[m];
        let w = objective.weights[m];
        for k in 0..u.ncols() {
            for antenna in 0..n {
                weighted[antenna] = u[(antenna, k)] * phasors[layout.block_of(antenna)];
            }
            for chain in 0..layout.n_rf {
                let range = layout.antennas_of_chain(chain);
                for row in range.clone() {
                    let lhs = weighted[row].conj() * w;
                    for col in range.clone() {
                        h[(row, col)] += lhs * weighted[col];
                    }
                }
            }
        }
    }
    h
}

/// Quadratic objective `a^H H a` (real by Hermitian symmetry of `H`).
pub fn gram_objective(h: &DMatrix<Complex64>, a: &DVector<Complex64>) -> f64 {
    (a.adjoint() * h * a)[(0, 0)].re
}

/// Euclidean gradient `2 H a` of the quadratic objective.
pub fn euclidean_gradient(h: &DMatrix<Complex64>, a: &DVector<Complex64>) -> DVector<Complex64> {
    h * a * Complex64::new(2.0, 0.0)
}

/// Orthogonal projection onto the tangent space of the unit-circle product at
/// `a`: `v - Re(v o a*) o a`.
pub fn tangent_project(v: &DVector<Complex64>, a: &DVector<Complex64>) -> DVector<Complex64> {
    DVector::from_fn(v.nrows(), |i, _| {
        let radial = (v[i] * a[i].conj()).re;
        v[i] - a[i] * radial
    })
}

/// Entrywise normalization retraction back onto the unit circles.
pub fn retract(v: &DVector<Complex64>) -> DVector<Complex64> {
    DVector::from_fn(v.nrows(), |i, _| {
        let n = v[i].norm();
        if n > 0.0 {
            v[i] / n
        } else {
            Complex64::new(1.0, 0.0)
        }
    })
}

fn re_inner(a: &DVector<Complex64>, b: &DVector<Complex64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// Armijo parameters for the ascent line search.
const ARMIJO_INITIAL_STEP: f64 = 1.0;
const ARMIJO_BACKTRACK: f64 = 0.5;
const ARMIJO_SUFFICIENT: f64 = 1e-4;
const ARMIJO_MAX_BACKTRACKS: usize = 30;

/// Riemannian conjugate-gradient state over the unit-modulus phase vector.
#[derive(Debug, Clone)]
pub struct RcgState {
    /// Current unit-modulus iterate.
    pub phases: DVector<Complex64>,
    /// Riemannian gradient at the iterate.
    pub gradient: DVector<Complex64>,
    /// Conjugate ascent direction at the iterate.
    pub direction: DVector<Complex64>,
    /// Objective at the iterate.
    pub objective: f64,
    /// Last accepted Armijo step.
    pub step: f64,
    /// Last Polak-Ribiere coefficient (clipped at zero).
    pub beta: f64,
    /// Iterations performed.
    pub iteration: usize,
    /// Set when the line search could not find an ascent step.
    pub stalled: bool,
}

impl RcgState {
    pub fn new(initial: DVector<Complex64>, gram: &DMatrix<Complex64>) -> Self {
        let phases = retract(&initial);
        let objective = gram_objective(gram, &phases);
        let gradient = tangent_project(&euclidean_gradient(gram, &phases), &phases);
        let direction = gradient.clone();
        Self {
            phases,
            gradient,
            direction,
            objective,
            step: ARMIJO_INITIAL_STEP,
            beta: 0.0,
            iteration: 0,
            stalled: false,
        }
    }
}

/// One ascent step: Armijo backtracking along the conjugate direction,
/// normalization retraction, then a Polak-Ribiere direction update with
/// projection-based vector transport. The objective never decreases; if no
/// step passes the sufficient-increase test the state is returned unchanged
/// with the stall flag set.
pub fn riemannian_step(state: &mut RcgState, gram: &DMatrix<Complex64>) {
    let slope = re_inner(&state.gradient, &state.direction);
    let slope = if slope > 0.0 {
        slope
    } else {
        // Reset to steepest ascent when the transported direction turned away.
        state.direction = state.gradient.clone();
        re_inner(&state.gradient, &state.gradient)
    };
    if slope == 0.0 {
        state.stalled = true;
        return;
    }

    let mut eps = ARMIJO_INITIAL_STEP;
    let mut accepted = None;
    for _ in 0..ARMIJO_MAX_BACKTRACKS {
        let candidate = retract(&(&state.phases + &state.direction * Complex64::new(eps, 0.0)));
        let objective = gram_objective(gram, &candidate);
        if objective >= state.objective + ARMIJO_SUFFICIENT * eps * slope {
            accepted = Some((candidate, objective, eps));
            break;
        }
        eps *= ARMIJO_BACKTRACK;
    }
    let Some((next, objective, eps)) = accepted else {
        state.stalled = true;
        return;
    };

    let new_gradient = tangent_project(&euclidean_gradient(gram, &next), &next);
    let transported_gradient = tangent_project(&state.gradient, &next);
    let denom = re_inner(&state.gradient, &state.gradient);
    let beta = if denom > 0.0 {
        (re_inner(&new_gradient, &(&new_gradient - &transported_gradient)) / denom).max(0.0)
    } else {
        0.0
    };
    let transported_direction = tangent_project(&state.direction, &next);
    let direction = &new_gradient + &transported_direction * Complex64::new(beta, 0.0);

    state.phases = next;
    state.gradient = new_gradient;
    state.direction = direction;
    state.objective = objective;
    state.step = eps;
    state.beta = beta;
    state.iteration += 1;
    state.stalled = false;
}

/// Maximizes the phase objective for fixed delays. Returns the optimized
/// phase bank and the attained objective value.
pub fn optimize_phases(
    combiner: &AnalogCombiner,
    band: &BandPlan,
    objective: &DesignObjective,
    max_iters: usize,
    tol: f64,
) -> (PhaseBank, f64) {
    let h = phase_gram(combiner, band, objective);
    // Normalize so the Armijo step sizes are scale free; the diagonal of a
    // PSD Gram matrix bounds its spectrum up to the chain size.
    let scale = (0..h.nrows())
        .map(|i| h[(i, i)].re)
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let h_scaled = &h / Complex64::new(scale, 0.0);

    let initial = DVector::from_vec(combiner.phases().coefficients());
    let mut state = RcgState::new(initial, &h_scaled);
    for _ in 0..max_iters {
        let before = state.objective;
        riemannian_step(&mut state, &h_scaled);
        if state.stalled || (state.objective - before).abs() <= tol * before.abs() {
            break;
        }
    }
    let phases = PhaseBank::new(state.phases.iter().map(|z| z.arg()).collect());
    (phases, state.objective * scale)
}

/// Delay grid-search configuration: candidates are the `Q + 1` uniform
/// samples `{0, t_max/Q, ..., t_max}`, swept in row-major `(chain, delayer)`
/// order until no coordinate changes or the sweep budget is exhausted.
#[derive(Debug, Clone, PartialEq)]
pub struct DelaySearchConfig {
    pub grid_samples: usize,
    pub max_sweeps: usize,
}

impl Default for DelaySearchConfig {
    fn default() -> Self {
        Self {
            grid_samples: 64,
            max_sweeps: 8,
        }
    }
}

/// The delay candidate set, including both interval endpoints.
pub fn delay_search_set(t_max: f64, grid_samples: usize) -> Vec<f64> {
    if t_max == 0.0 {
        return vec![0.0];
    }
    (0..=grid_samples)
        .map(|q| t_max * q as f64 / grid_samples as f64)
        .collect()
}

/// Coordinate-wise delay optimization for fixed phases. Each update replaces
/// one delay by the best grid candidate, keeping the incumbent on ties, so
/// the objective never decreases. Returns the delay bank and the objective.
pub fn optimize_delays(
    combiner: &AnalogCombiner,
    band: &BandPlan,
    objective: &DesignObjective,
    config: &DelaySearchConfig,
) -> (DelayBank, f64) {
    let layout = combiner.layout();
    let t_max = combiner.delays().t_max();
    let candidates = delay_search_set(t_max, config.grid_samples);
    let coeff = combiner.phases().coefficients();
    let m_count = band.n_subcarriers();

    // Per-block folded directions rho[m][k][block]; delays only multiply these.
    let widths: Vec<usize> = objective.directions.iter().map(|u| u.ncols()).collect();
    let mut rho = vec![Vec::new(); m_count];
    for m in 0..m_count {
        let u = &objective.directions[m];
        let mut per_k = vec![vec![Complex64::default(); layout.n_blocks()]; widths[m]];
        for (k, row) in per_k.iter_mut().enumerate() {
            for block in 0..layout.n_blocks() {
                let mut acc = Complex64::default();
                for antenna in layout.antennas_of_block(block) {
                    acc += coeff[antenna] * u[(antenna, k)];
                }
                row[block] = acc;
            }
        }
        rho[m] = per_k;
    }

    let mut delays = combiner.delays().clone();
    let phasor = |f: f64, t: f64| Complex64::from_polar(1.0, TAU * f * t);

    for _sweep in 0..config.max_sweeps {
        // Chain sums rebuilt from scratch each sweep to shed rounding drift.
        let mut sums = vec![Vec::new(); m_count];
        for m in 0..m_count {
            let f = band.freqs()[m];
            let mut per_k = vec![vec![Complex64::default(); layout.n_rf]; widths[m]];
            for (k, row) in per_k.iter_mut().enumerate() {
                for chain in 0..layout.n_rf {
                    let mut acc = Complex64::default();
                    for l in 0..layout.n_ttd {
                        let block = chain * layout.n_ttd + l;
                        acc += phasor(f, delays.as_slice()[block]) * rho[m][k][block];
                    }
                    row[chain] = acc;
                }
            }
            sums[m] = per_k;
        }

        let mut changed = false;
        for chain in 0..layout.n_rf {
            for l in 0..layout.n_ttd {
                let block = chain * layout.n_ttd + l;
                let incumbent = delays.as_slice()[block];
                let chain_value = |sums: &Vec<Vec<Vec<Complex64>>>, t: f64| -> f64 {
                    let mut total = 0.0;
                    for m in 0..m_count {
                        let f = band.freqs()[m];
                        let old = phasor(f, incumbent);
                        let new = phasor(f, t);
                        let mut acc = 0.0;
                        for k in 0..widths[m] {
                            let without = sums[m][k][chain] - old * rho[m][k][block];
                            acc += (without + new * rho[m][k][block]).norm_sqr();
                        }
                        total += objective.weights[m] * acc;
                    }
                    total
                };
                let mut best_t = incumbent;
                let mut best_val = chain_value(&sums, incumbent);
                for &t in &candidates {
                    let val = chain_value(&sums, t);
                    if val > best_val {
                        best_val = val;
                        best_t = t;
                    }
                }
                if best_t != incumbent {
                    changed = true;
                    for m in 0..m_count {
                        let f = band.freqs()[m];
                        let delta = phasor(f, best_t) - phasor(f, incumbent);
                        for k in 0..widths[m] {
                            let contrib = delta * rho[m][k][block];
                            sums[m][k][chain] += contrib;
                        }
                    }
                    delays.set(chain, l, best_t);
                }
            }
        }
        if !changed {
            break;
        }
    }

    let updated = combiner.with_delays(delays.clone()).expect("same layout");
    let value = design_objective_value(&updated, band, objective);
    (delays, value)
}

/// Knobs for the alternating coefficient design.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignConfig {
    pub rcg_max_iters: usize,
    pub rcg_tol: f64,
    pub delay: DelaySearchConfig,
    pub outer_iters: usize,
    pub outer_tol: f64,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            rcg_max_iters: 150,
            rcg_tol: 1e-6,
            delay: DelaySearchConfig::default(),
            outer_iters: 8,
            outer_tol: 1e-5,
        }
    }
}

/// Random starting point for the alternating design: phases uniform on
/// `[0, 2 pi)` and delays drawn from the delay search grid, so every
/// subsequent coordinate update searches a set containing its incumbent.
pub fn random_design_start<R: Rng>(
    layout: CombinerLayout,
    t_max: f64,
    grid_samples: usize,
    rng: &mut R,
) -> AnalogCombiner {
    let phases = PhaseBank::random(layout.n_antennas(), rng);
    let set = delay_search_set(t_max, grid_samples);
    let delays: Vec<f64> = (0..layout.n_blocks())
        .map(|_| set[rng.gen_range(0..set.len())])
        .collect();
    let delays = DelayBank::new(delays, layout.n_ttd, t_max).expect("grid within bounds");
    AnalogCombiner::new(layout, phases, delays).expect("consistent layout")
}

/// Alternates phase and delay optimization until the relative objective
/// change drops below `outer_tol`. Returns the designed combiner, its final
/// objective and the objective trace across outer iterations.
pub fn alternate_design(
    initial: &AnalogCombiner,
    band: &BandPlan,
    objective: &DesignObjective,
    config: &DesignConfig,
) -> (AnalogCombiner, f64, Vec<f64>) {
    let mut combiner = initial.clone();
    let mut trace = vec![design_objective_value(&combiner, band, objective)];
    for _ in 0..config.outer_iters {
        let (phases, _) = optimize_phases(
            &combiner,
            band,
            objective,
            config.rcg_max_iters,
            config.rcg_tol,
        );
        combiner = combiner.with_phases(phases).expect("same layout");
        let (delays, value) = optimize_delays(&combiner, band, objective, &config.delay);
        combiner = combiner.with_delays(delays).expect("same layout");
        let before = *trace.last().unwrap();
        trace.push(value);
        if (value - before).abs() <= config.outer_tol * before.abs() {
            break;
        }
    }
    let final_value = *trace.last().unwrap();
    (combiner, final_value, trace)
}
