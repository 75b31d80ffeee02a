//! Joint localization and beamfocusing without prior position knowledge.
//!
//! Starting from a random analog configuration, each outer iteration runs one
//! alternating-projection sweep with the current combiner, redesigns the
//! phases and delays around the fresh position estimates, and draws new pilot
//! snapshots through the updated combiner. Antenna-domain signals are never
//! reused across combiner updates: a hybrid array cannot retroactively
//! re-combine past snapshots.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::analog_design::{
    alternate_design, optimize_delays, optimize_phases, random_design_start, DesignConfig,
    DesignObjective,
};
use crate::channel::{
    steering_for_positions, steering_set, synthesize_snapshots, BandPlan, ChannelError,
    NoiseModel, SteeringSet, UserSet,
};
use crate::estimator::{ap_localize, refine_sweep, EstimationResult, SearchGrid, SweepContext};
use crate::geometry::{ArrayGeometry, PolarPosition};
use crate::hybrid_array::{AnalogCombiner, CombinerLayout};

/// Full simulation description shared by the joint algorithm and the
/// experiment harness.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub geometry: ArrayGeometry,
    pub band: BandPlan,
    pub users: UserSet,
    pub layout: CombinerLayout,
    pub t_max: f64,
    pub snr_db: f64,
    pub n_samples: usize,
}

impl Scenario {
    pub fn steering(&self) -> SteeringSet {
        steering_set(&self.band, &self.users, &self.geometry)
    }

    pub fn noise(&self, steering: &SteeringSet) -> Result<NoiseModel, ChannelError> {
        NoiseModel::from_snr(self.snr_db, steering)
    }

    pub fn n_users(&self) -> usize {
        self.users.n_users()
    }
}

/// Knobs for the alternating localization-and-design loop.
#[derive(Debug, Clone)]
pub struct JointConfig {
    /// Outer iterations after the initial estimate.
    pub outer_iters: usize,
    pub grid: SearchGrid,
    pub design: DesignConfig,
    /// Refinement sweeps of the plain localization pass used for reference
    /// runs; the joint loop itself performs one sweep per outer iteration.
    pub seed: u64,
}

impl JointConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            outer_iters: 10,
            grid: SearchGrid::default(),
            design: DesignConfig::default(),
            seed,
        }
    }
}

/// Alternating localization and beamfocusing from a random initial analog
/// configuration.
pub fn joint_localize(scenario: &Scenario, cfg: &JointConfig) -> EstimationResult {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let initial = AnalogCombiner::random(scenario.layout, scenario.t_max, &mut rng);
    run_joint(scenario, cfg, initial, rng)
}

/// Joint loop whose initial combiner is designed at a noisy prior of the
/// user positions: each Cartesian coordinate is perturbed by a zero-mean
/// Gaussian of the given standard deviation. A zero deviation reproduces the
/// perfect-knowledge initialization.
pub fn warm_start_with_prior(
    scenario: &Scenario,
    prior_error_std: f64,
    cfg: &JointConfig,
) -> EstimationResult {
    assert!(prior_error_std >= 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let assumed: Vec<PolarPosition> = scenario
        .users
        .positions()
        .iter()
        .map(|p| {
            let c = p.to_cartesian();
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            perturbed_position(c.x + prior_error_std * dx, c.y + prior_error_std * dy)
        })
        .collect();
    let initial = design_at(scenario, &assumed, &cfg.design, &mut rng);
    run_joint(scenario, cfg, initial, rng)
}

/// Clamps a perturbed Cartesian point back into the valid front half-plane.
fn perturbed_position(x: f64, y: f64) -> PolarPosition {
    let y = y.max(1e-3);
    let p = crate::geometry::CartesianPosition::new(x, y)
        .to_polar()
        .expect("y > 0 keeps the azimuth inside (0, pi)");
    PolarPosition::new(p.d.max(1e-2), p.theta).expect("clamped position valid")
}

/// Full alternating coefficient design at assumed positions, starting from a
/// random point.
pub fn design_at<R: Rng>(
    scenario: &Scenario,
    positions: &[PolarPosition],
    design: &DesignConfig,
    rng: &mut R,
) -> AnalogCombiner {
    let steering = scenario.steering();
    let noise = scenario.noise(&steering).expect("nonzero reference signal");
    let assumed = steering_for_positions(&scenario.band, positions, &scenario.geometry);
    let objective = DesignObjective::surrogate(&assumed, Some(&noise));
    let start = random_design_start(
        scenario.layout,
        scenario.t_max,
        design.delay.grid_samples,
        rng,
    );
    alternate_design(&start, &scenario.band, &objective, design).0
}

fn run_joint(
    scenario: &Scenario,
    cfg: &JointConfig,
    initial: AnalogCombiner,
    mut rng: ChaCha8Rng,
) -> EstimationResult {
    let steering = scenario.steering();
    let noise = scenario.noise(&steering).expect("nonzero reference signal");
    let k = scenario.n_users();

    let mut combiner = initial;
    let snapshot_seed: u64 = rng.gen();
    let snap = synthesize_snapshots(&steering, &noise, scenario.n_samples, snapshot_seed);
    let mut batch = combiner
        .combine(&scenario.band, &snap)
        .expect("scenario dimensions consistent");

    // Initial estimate: the sequential-add pass with the random combiner.
    let init = ap_localize(
        &batch,
        &combiner,
        &scenario.geometry,
        &scenario.band,
        k,
        &cfg.grid,
        0,
    );
    let mut positions = init.positions;
    let mut trajectory = vec![positions.clone()];
    let mut likelihood_trace = init.likelihood_trace;
    let mut design_objective_trace = Vec::with_capacity(cfg.outer_iters);

    for _ in 0..cfg.outer_iters {
        {
            let mut ctx =
                SweepContext::new(&scenario.geometry, &scenario.band, &combiner, &batch);
            refine_sweep(&mut ctx, &mut positions, &cfg.grid);
            likelihood_trace.push(ctx.full_likelihood(&positions));
        }
        trajectory.push(positions.clone());

        // Refocus the analog coefficients at the current estimates: one phase
        // pass, then one delay pass.
        let assumed = steering_for_positions(&scenario.band, &positions, &scenario.geometry);
        let objective = DesignObjective::surrogate(&assumed, Some(&noise));
        let (phases, _) = optimize_phases(
            &combiner,
            &scenario.band,
            &objective,
            cfg.design.rcg_max_iters,
            cfg.design.rcg_tol,
        );
        combiner = combiner.with_phases(phases).expect("same layout");
        let (delays, value) =
            optimize_delays(&combiner, &scenario.band, &objective, &cfg.design.delay);
        combiner = combiner.with_delays(delays).expect("same layout");
        design_objective_trace.push(value);

        // New pilots observed through the updated combiner.
        let seed: u64 = rng.gen();
        let snap = synthesize_snapshots(&steering, &noise, scenario.n_samples, seed);
        batch = combiner
            .combine(&scenario.band, &snap)
            .expect("scenario dimensions consistent");
    }

    EstimationResult {
        positions,
        trajectory,
        likelihood_trace,
        design_objective_trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analog_design::DelaySearchConfig;
    use std::f64::consts::PI;

    fn small_scenario() -> Scenario {
        Scenario {
            geometry: ArrayGeometry::ula(32, 0.05).unwrap(),
            band: BandPlan::uniform(3e9, 300e6, 4).unwrap(),
            users: UserSet::new(vec![
                PolarPosition::new(5.0, PI / 3.0).unwrap(),
                PolarPosition::new(4.0, PI / 4.0).unwrap(),
            ])
            .unwrap(),
            layout: CombinerLayout::new(4, 2, 4).unwrap(),
            t_max: 5e-9,
            snr_db: 5.0,
            n_samples: 32,
        }
    }

    fn quick_cfg(seed: u64) -> JointConfig {
        JointConfig {
            outer_iters: 3,
            grid: SearchGrid {
                d_range: (2.0, 12.0),
                theta_range: (0.15 * PI, 0.85 * PI),
                coarse: (32, 32),
                levels: 2,
                shrink: 0.2,
            },
            design: DesignConfig {
                rcg_max_iters: 60,
                rcg_tol: 1e-6,
                delay: DelaySearchConfig {
                    grid_samples: 16,
                    max_sweeps: 3,
                },
                outer_iters: 3,
                outer_tol: 1e-6,
            },
            seed,
        }
    }

    #[test]
    fn zero_outer_iterations_is_the_initial_estimate() {
        let scenario = small_scenario();
        let mut cfg = quick_cfg(7);
        cfg.outer_iters = 0;
        let result = joint_localize(&scenario, &cfg);
        assert_eq!(result.trajectory.len(), 1);
        assert_eq!(result.positions, result.trajectory[0]);
        assert!(result.design_objective_trace.is_empty());
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let scenario = small_scenario();
        let cfg = quick_cfg(21);
        let a = joint_localize(&scenario, &cfg);
        let b = joint_localize(&scenario, &cfg);
        assert_eq!(a.positions, b.positions);
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.likelihood_trace, b.likelihood_trace);
        assert_eq!(a.design_objective_trace, b.design_objective_trace);
        let c = joint_localize(&scenario, &quick_cfg(22));
        assert_ne!(a.positions, c.positions);
    }

    #[test]
    fn trajectory_bookkeeping() {
        let scenario = small_scenario();
        let cfg = quick_cfg(3);
        let result = joint_localize(&scenario, &cfg);
        assert_eq!(result.trajectory.len(), cfg.outer_iters + 1);
        assert_eq!(result.likelihood_trace.len(), cfg.outer_iters + 1);
        assert_eq!(result.design_objective_trace.len(), cfg.outer_iters);
        for step in &result.trajectory {
            assert_eq!(step.len(), scenario.n_users());
        }
    }

    #[test]
    fn perfect_prior_converges_close_to_truth() {
        let scenario = small_scenario();
        let mut cfg = quick_cfg(11);
        cfg.outer_iters = 2;
        let result = warm_start_with_prior(&scenario, 0.0, &cfg);
        for truth in scenario.users.positions() {
            let err = result
                .positions
                .iter()
                .map(|e| truth.to_cartesian().distance_to(e.to_cartesian()))
                .fold(f64::INFINITY, f64::min);
            assert!(err < 0.35, "estimate off by {err} m");
        }
    }

    #[test]
    fn joint_improves_on_the_random_initialization() {
        let scenario = small_scenario();
        let cfg = quick_cfg(5);
        let result = joint_localize(&scenario, &cfg);
        let error = |positions: &[PolarPosition]| -> f64 {
            scenario
                .users
                .positions()
                .iter()
                .map(|t| {
                    positions
                        .iter()
                        .map(|e| t.to_cartesian().distance_to(e.to_cartesian()))
                        .fold(f64::INFINITY, f64::min)
                })
                .sum::<f64>()
        };
        let start = error(&result.trajectory[0]);
        let end = error(&result.positions);
        assert!(
            end <= start + 1e-9,
            "joint loop degraded the estimate: {start} -> {end}"
        );
    }

    #[test]
    fn perturbation_clamp_keeps_positions_valid() {
        let p = perturbed_position(-3.0, -5.0);
        assert!(p.d > 0.0 && p.theta > 0.0 && p.theta < PI);
        let q = perturbed_position(0.0, 0.0);
        assert!(q.d > 0.0);
    }
}
