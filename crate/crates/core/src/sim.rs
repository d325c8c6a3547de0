//! Closed-loop simulation of the encrypted control system.
//!
//! Each control instant runs, in order:
//!
//! 1. control unit `i` sends its block of the encrypted controller state to
//!    entity `i` under the downlink layer; the entity decrypts the echo input;
//! 2. entity `i` measures, quantizes and sends `col(y^a_i, y^b_i)` to control
//!    unit `i` under the uplink layer (entities work in parallel);
//! 3. the control units strip the uplink layer and evaluate the law on the
//!    pooled Paillier ciphertexts;
//! 4. actuation ciphertexts go back to each entity under the downlink layer;
//! 5. the plant advances with the decrypted actuation.
//!
//! A plaintext quantized copy of the loop (the shadow) runs on its own plant
//! state and must agree bit for bit.

pub mod config;
pub mod report;
pub mod trajectory;

use std::sync::Arc;
use std::time::Instant;

use num_rational::BigRational;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::codec::{self, CodecError, OuterCiphertext, OuterDual};
use crate::controller::{stabilizer_law, ControllerError, EncryptedController, LinearLaw, PlainController, StabilizerLayout};
use crate::fixedpoint::{Fixed, GridParams};
use crate::keyring::{self, Keyring, KeyringError, SecurityParams};
use crate::linalg::rational_to_f64;
use crate::plant::{LinearPlant, PlantError, PlantModel, PlantState};
use crate::synthesis::{self, SynthesisError, DEFAULT_ENVELOPE_POWERS};

pub use config::{ConfigError, RunConfig, RunSection, Scenario};
pub use report::{bound_check, equivalence_audit, BoundReport, EquivalenceReport};
pub use trajectory::{PhaseTimings, ShadowRecord, SignalDims, StepRecord, Trajectory};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("key provisioning failed: {0}")]
    Provision(#[from] KeyringError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error("overflow at step {step} in {signal}: {detail}")]
    Overflow { step: usize, signal: String, detail: String },
    #[error("encrypted loop diverged from the plaintext shadow at step {step}")]
    EquivalenceMismatch { step: usize, trajectory: Box<Trajectory> },
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Entities per run are limited so per-step RNG streams never collide.
pub const MAX_PARTIES: usize = 1023;
const STEP_STREAMS: u64 = 1024;
const INIT_STREAM: u64 = u64::MAX - 1;
const KEY_STREAM: u64 = u64::MAX;

fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Randomness for `party` (0 = controller, `i` = entity `i`) at step `k`.
fn step_rng(seed: u64, k: usize, party: usize) -> ChaCha20Rng {
    stream_rng(seed, k as u64 * STEP_STREAMS + party as u64)
}

/// Generates the keyring a config describes. Deterministic in the key seed.
pub fn provision_keys(config: &RunConfig, scenario: &Scenario) -> Result<Keyring, SimError> {
    let params = SecurityParams {
        paillier_bits: config.keys.paillier_bits,
        rsa_bits: config.keys.rsa_bits,
        grid: scenario.grid,
    };
    let bound = synthesis::required_paillier_bound(&scenario.gains, scenario.grid.word_bits());
    let mut rng = stream_rng(config.key_seed(), KEY_STREAM);
    Ok(keyring::provision(scenario.plant.parties() as u32, params, &bound, &mut rng)?)
}

/// Provisions keys and runs the config.
pub fn run(config: &RunConfig) -> Result<Trajectory, SimError> {
    let scenario = config.scenario()?;
    let keyring = provision_keys(config, &scenario)?;
    Simulation::new(scenario, config.run.clone(), keyring)?.run()
}

/// Runs the config with an existing keyring.
pub fn run_with_keyring(config: &RunConfig, keyring: Keyring) -> Result<Trajectory, SimError> {
    Simulation::new(config.scenario()?, config.run.clone(), keyring)?.run()
}

pub struct Simulation {
    scenario: Scenario,
    run: RunSection,
    keyring: Keyring,
    plant: Arc<dyn PlantModel>,
    law: LinearLaw,
    layout: StabilizerLayout,
}

fn norm(values: impl Iterator<Item = f64>) -> f64 {
    values.map(|v| v * v).sum::<f64>().sqrt()
}

fn to_rationals(v: &[Fixed]) -> Vec<BigRational> {
    v.iter().map(Fixed::to_rational).collect()
}

fn quantize_all(values: &[BigRational], grid: GridParams, step: usize, signal: &str) -> Result<Vec<Fixed>, SimError> {
    values
        .iter()
        .map(|v| {
            Fixed::quantize(v, grid).map_err(|e| SimError::Overflow {
                step,
                signal: signal.to_string(),
                detail: e.to_string(),
            })
        })
        .collect()
}

fn frames_of_duals(c: &[OuterDual]) -> String {
    c.iter()
        .flat_map(|d| [d.plus.to_frame().to_hex(), d.minus.to_frame().to_hex()])
        .collect::<Vec<_>>()
        .join(":")
}

fn frames_of(c: &[OuterCiphertext]) -> String {
    c.iter().map(|c| c.to_frame().to_hex()).collect::<Vec<_>>().join(":")
}

/// Signals measured by the entities at one step, before encryption.
struct Measurement {
    measured_raw: Vec<BigRational>,
    echo_raw: Vec<BigRational>,
    measured: Vec<Fixed>,
    echo: Vec<Fixed>,
}

impl Simulation {
    pub fn new(scenario: Scenario, run: RunSection, keyring: Keyring) -> Result<Self, SimError> {
        let parties = scenario.plant.parties();
        if parties > MAX_PARTIES {
            return Err(ConfigError::Invalid(format!("at most {MAX_PARTIES} entities are supported")).into());
        }
        if keyring.parties() as usize != parties {
            return Err(KeyringError::Inconsistent(format!(
                "keyring serves {} entities, plant has {parties}",
                keyring.parties()
            ))
            .into());
        }
        let (law, layout) = stabilizer_law(&scenario.plant, &scenario.gains)?;
        let plant = Arc::new(LinearPlant::new(scenario.plant.clone()));
        Ok(Self {
            scenario,
            run,
            keyring,
            plant,
            law,
            layout,
        })
    }

    /// Replaces the plant dynamics; the design matrices still define the
    /// controller and the certificate.
    pub fn with_plant(mut self, plant: Arc<dyn PlantModel>) -> Result<Self, SimError> {
        let p = &self.scenario.plant;
        if (plant.state_dim(), plant.input_dim(), plant.output_dim()) != (p.state_dim(), p.input_dim(), p.output_dim()) {
            return Err(PlantError::Dimension {
                what: "plant model",
                expected: p.state_dim(),
                found: plant.state_dim(),
            }
            .into());
        }
        self.plant = plant;
        Ok(self)
    }

    pub fn law(&self) -> &LinearLaw {
        &self.law
    }

    pub fn keyring(&self) -> &Keyring {
        &self.keyring
    }

    fn measure(&self, x: &[BigRational], zeta: &[Fixed], step: usize) -> Result<Measurement, SimError> {
        let gains = &self.scenario.gains;
        let grid = self.scenario.grid;
        let measured_raw: Vec<BigRational> = self
            .plant
            .output(x)?
            .into_iter()
            .map(|v| v * &gains.output_scale)
            .collect();
        let echo_raw: Vec<BigRational> = zeta.iter().map(|v| v.to_rational() * &gains.echo_scale).collect();
        let measured = quantize_all(&measured_raw, grid, step, "measured output")?;
        let echo = quantize_all(&echo_raw, grid, step, "echo output")?;
        Ok(Measurement {
            measured_raw,
            echo_raw,
            measured,
            echo,
        })
    }

    /// The controller input vector in message order.
    fn message(&self, measured: &[Fixed], echo: &[Fixed]) -> Vec<Fixed> {
        let mut w = Vec::with_capacity(measured.len() + echo.len());
        for i in 0..self.layout.parties() {
            w.extend_from_slice(&measured[self.layout.measured[i].clone()]);
            w.extend_from_slice(&echo[self.layout.echo[i].clone()]);
        }
        w
    }

    fn guard(&self, zeta: &[Fixed], inputs: &[Fixed], step: usize) -> Result<(), SimError> {
        let report = self.law.range_guard(zeta, inputs, self.scenario.grid)?;
        if report.is_inside() {
            Ok(())
        } else {
            Err(SimError::Overflow {
                step,
                signal: "controller".into(),
                detail: report.to_string(),
            })
        }
    }

    pub fn run(&self) -> Result<Trajectory, SimError> {
        let sc = &self.scenario;
        let grid = sc.grid;
        let exec = self.run.execution;
        let seed = self.run.seed;
        let parties = self.layout.parties();
        let pk = self.keyring.paillier_public().clone();

        let bounds = synthesis::stability_bounds(&sc.plant, &sc.gains, grid, DEFAULT_ENVELOPE_POWERS)?;
        let initial_norm = norm(
            sc.initial_state
                .iter()
                .map(rational_to_f64)
                .chain(sc.initial_controller.iter().map(Fixed::to_f64)),
        );
        let mut warnings = Vec::new();
        let region = match synthesis::operating_region(&bounds, &sc.gains, &sc.plant) {
            Ok(region) => {
                if !region.admits(initial_norm) {
                    warnings.push(format!(
                        "initial condition norm {initial_norm:.4} exceeds the certified radius {:.4}; \
                         overflow is not ruled out",
                        region.radius
                    ));
                }
                Some(region)
            }
            Err(e) => {
                warnings.push(format!("{e}; overflow is not ruled out"));
                None
            }
        };

        let mut init_rng = stream_rng(seed, INIT_STREAM);
        let initial = codec::encrypt_dual(&sc.initial_controller, &pk, &mut init_rng)?;
        let mut controller = EncryptedController::new(self.law.clone(), initial, pk.clone(), self.run.rerandomize)?;
        let mut state = PlantState::new(sc.initial_state.clone());

        let mut shadow = if self.run.shadow {
            let ctrl = PlainController::new(self.law.clone(), sc.initial_controller.clone(), grid)?;
            Some((ctrl, PlantState::new(sc.initial_state.clone())))
        } else {
            None
        };

        let mut traj = Trajectory {
            dims: SignalDims {
                state: sc.plant.state_dim(),
                controller: self.law.state_dim(),
                input: sc.plant.input_dim(),
                output: sc.plant.output_dim(),
            },
            records: Vec::with_capacity(self.run.horizon),
            bounds,
            region,
            initial_norm,
            warnings,
            trace: Vec::new(),
            record_timings: self.run.record_timings,
        };

        for k in 0..self.run.horizon {
            let mut timings = PhaseTimings::default();

            // shadow loop on the same clock
            let shadow_step = match shadow.as_mut() {
                Some((ctrl, sstate)) => {
                    let zeta = ctrl.state().to_vec();
                    let m = self.measure(&sstate.x, &zeta, k)?;
                    let inputs = self.message(&m.measured, &m.echo);
                    self.guard(&zeta, &inputs, k)?;
                    let actuation = ctrl.step(&inputs)?;
                    let record = ShadowRecord {
                        x: sstate.x.clone(),
                        zeta,
                        actuation: actuation.clone(),
                        measured: m.measured,
                        echo: m.echo,
                    };
                    let x = self.plant.transition(&sstate.x, &to_rationals(&actuation))?;
                    *sstate = PlantState { x, k: sstate.k + 1 };
                    Some(record)
                }
                None => None,
            };

            // 1. echo of the controller state, decrypted by each entity
            let t = Instant::now();
            let echo_wire = exec.try_map(parties, |i| {
                let idx = i as u32 + 1;
                codec::encrypt_downlink(idx, &controller.echo(self.layout.echo[i].clone()), self.keyring.downlink_public(idx))
            })?;
            let echo_plain = exec.try_map(parties, |i| {
                let idx = i as u32 + 1;
                codec::decrypt_downlink(self.keyring.entity(idx), idx, &echo_wire[i], grid)
            })?;
            let zeta: Vec<Fixed> = echo_plain.concat();
            timings.decrypt += t.elapsed();
            for (i, w) in echo_wire.iter().enumerate() {
                traj.trace.push(format!("{k} echo control-{0}>entity-{0} {1}", i + 1, frames_of(w)));
            }

            // 2. measurement and quantization
            let t = Instant::now();
            let m = self.measure(&state.x, &zeta, k)?;
            let inputs = self.message(&m.measured, &m.echo);
            timings.quantize += t.elapsed();

            let t = Instant::now();
            let uplink = exec.try_map(parties, |i| {
                let idx = i as u32 + 1;
                let mut rng = step_rng(seed, k, idx as usize);
                codec::encrypt_uplink(
                    idx,
                    &inputs[self.layout.message[i].clone()],
                    &pk,
                    self.keyring.uplink_public(idx),
                    &mut rng,
                )
            })?;
            timings.encrypt += t.elapsed();
            for (i, w) in uplink.iter().enumerate() {
                traj.trace.push(format!("{k} uplink entity-{0}>control-{0} {1}", i + 1, frames_of_duals(w)));
            }

            // 3. control units: strip the uplink layer, evaluate on the pool
            self.guard(&zeta, &inputs, k)?;
            let t = Instant::now();
            let stripped = exec.try_map(parties, |i| {
                let idx = i as u32 + 1;
                let kp = self
                    .keyring
                    .control_unit(idx)
                    .uplink_private(idx)
                    .ok_or_else(|| KeyringError::Inconsistent(format!("control unit {idx} lacks its uplink key")))?;
                codec::strip_uplink(idx, &uplink[i], kp, &pk).map_err(SimError::from)
            })?;
            let pooled: Vec<_> = stripped.concat();
            codec::expect_grid(&pooled, grid)?;
            let mut ctrl_rng = step_rng(seed, k, 0);
            let outputs = controller.step(&pooled, exec, &mut ctrl_rng)?;
            let downlink = exec.try_map(parties, |i| {
                let idx = i as u32 + 1;
                codec::encrypt_downlink(idx, &outputs[self.layout.actuation[i].clone()], self.keyring.downlink_public(idx))
            })?;
            timings.control += t.elapsed();
            for (i, w) in downlink.iter().enumerate() {
                traj.trace.push(format!("{k} actuation control-{0}>entity-{0} {1}", i + 1, frames_of(w)));
            }

            // 4. entities decrypt the actuation
            let t = Instant::now();
            let actuation: Vec<Fixed> = exec
                .try_map(parties, |i| {
                    let idx = i as u32 + 1;
                    codec::decrypt_downlink(self.keyring.entity(idx), idx, &downlink[i], grid)
                })?
                .concat();
            timings.decrypt += t.elapsed();

            let norm_xc = norm(
                state
                    .x
                    .iter()
                    .map(rational_to_f64)
                    .chain(zeta.iter().map(Fixed::to_f64)),
            );
            let record = StepRecord {
                k,
                x: state.x.clone(),
                zeta: zeta.clone(),
                actuation: actuation.clone(),
                echo_input: zeta,
                measured_raw: m.measured_raw,
                echo_raw: m.echo_raw,
                measured: m.measured,
                echo: m.echo,
                shadow: shadow_step,
                bound: traj.bounds.state_bound(k, initial_norm),
                norm_xc,
                timings,
            };
            let equivalent = record.equivalent();
            traj.records.push(record);
            if equivalent == Some(false) {
                return Err(SimError::EquivalenceMismatch {
                    step: k,
                    trajectory: Box::new(traj),
                });
            }

            // 5. actuate
            let x = self.plant.transition(&state.x, &to_rationals(&actuation))?;
            state = PlantState { x, k: state.k + 1 };
        }
        Ok(traj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{PaillierKeypair, RsaKeypair};
    use crate::exec::Execution;
    use crate::fixtures::q;

    fn example(m: u32, horizon: usize) -> RunConfig {
        let text = crate::fixtures::EXAMPLE
            .replace("m = 6", &format!("m = {m}"))
            .replace("horizon = 51", &format!("horizon = {horizon}"));
        RunConfig::from_toml(&text).unwrap()
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let traj = run(&example(6, 2)).unwrap();
        let r0 = &traj.records[0];
        assert_eq!(r0.x, vec![q(10, 1), q(20, 1)]);
        assert_eq!(r0.zeta.iter().map(Fixed::raw).collect::<Vec<_>>(), vec![768, 1472]);
        assert_eq!(r0.measured.iter().map(Fixed::raw).collect::<Vec<_>>(), vec![64, 128]);
        assert_eq!(r0.echo.iter().map(Fixed::raw).collect::<Vec<_>>(), vec![76, 147]);
        assert_eq!(r0.actuation.iter().map(Fixed::raw).collect::<Vec<_>>(), vec![50, -6410]);
        let r1 = &traj.records[1];
        assert_eq!(r1.zeta.iter().map(Fixed::raw).collect::<Vec<_>>(), vec![2603, -5390]);
        // x1 = A x0 + B u0 with u0 = (50, -6410)/64
        let u = [q(50, 64), q(-6410, 64)];
        assert_eq!(r1.x, vec![q(30, 1) + &u[0] / q(2, 1), q(20, 1) + &u[0] + &u[1]]);
        assert_eq!(r0.equivalent(), Some(true));
    }

    #[test]
    fn zero_initial_condition_stays_zero() {
        let mut cfg = example(6, 8);
        cfg.initial.state = vec![config::Ratio::integer(0); 2];
        cfg.initial.controller = vec![config::Ratio::integer(0); 2];
        let traj = run(&cfg).unwrap();
        for r in &traj.records {
            assert!(r.x.iter().all(|v| *v == q(0, 1)));
            assert!(r.zeta.iter().chain(&r.actuation).all(Fixed::is_zero));
        }
    }

    #[test]
    fn zero_horizon_is_empty_and_vacuously_equivalent() {
        let traj = run(&example(6, 0)).unwrap();
        assert!(traj.records.is_empty());
        assert!(equivalence_audit(&traj).holds());
        assert!(bound_check(&traj).holds());
        assert_eq!(traj.to_csv_string().lines().count(), 1);
    }

    #[test]
    fn quantization_error_in_half_open_interval() {
        let traj = run(&example(6, 20)).unwrap();
        let step = q(1, 64);
        for r in &traj.records {
            for d in r.quantization_error() {
                assert!(d > -step.clone() && d <= q(0, 1), "{d}");
            }
        }
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let mut a = example(6, 6);
        a.run.execution = Execution::Sequential;
        let mut b = a.clone();
        b.run.execution = Execution::Parallel;
        let (ta, tb) = (run(&a).unwrap(), run(&b).unwrap());
        assert_eq!(ta.to_csv_string(), tb.to_csv_string());
        assert_eq!(ta.trace, tb.trace);
    }

    #[test]
    fn rerandomization_changes_ciphertexts_only() {
        let a = example(6, 5);
        let mut b = a.clone();
        b.run.rerandomize = true;
        let (ta, tb) = (run(&a).unwrap(), run(&b).unwrap());
        assert_eq!(ta.to_csv_string(), tb.to_csv_string());
        assert_ne!(ta.trace, tb.trace);
    }

    #[test]
    fn no_shadow_leaves_flags_empty() {
        let mut cfg = example(6, 3);
        cfg.run.shadow = false;
        let traj = run(&cfg).unwrap();
        assert!(traj.records.iter().all(|r| r.equivalent().is_none()));
        assert_eq!(equivalence_audit(&traj).unchecked, 3);
    }

    #[test]
    fn overflow_aborts_with_step() {
        let mut cfg = example(6, 10);
        cfg.grid.n = 14;
        cfg.keys.paillier_bits = 48;
        match run(&cfg) {
            Err(SimError::Overflow { step, .. }) => assert!(step < 10),
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn undersized_paillier_modulus_breaks_equivalence() {
        let cfg = example(6, 51);
        let scenario = cfg.scenario().unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        // 2^24 < n_P < 115 · 2^24
        let paillier = loop {
            let kp = PaillierKeypair::generate(28, &mut rng).unwrap();
            if kp.public.bits() == 28 {
                break kp;
            }
        };
        let uplink = (0..2).map(|_| RsaKeypair::generate(128, &mut rng).unwrap()).collect();
        let downlink = (0..2).map(|_| RsaKeypair::generate(128, &mut rng).unwrap()).collect();
        let bound = synthesis::required_paillier_bound(&scenario.gains, 24);
        assert!(Keyring::assemble(scenario.grid, paillier.clone(), Vec::new(), Vec::new(), &bound).is_err());
        let keyring = Keyring::assemble_unchecked(paillier, uplink, downlink).unwrap();
        match run_with_keyring(&cfg, keyring) {
            Err(SimError::EquivalenceMismatch { step, trajectory }) => {
                assert_eq!(trajectory.records.len(), step + 1);
                assert_eq!(equivalence_audit(&trajectory).first_mismatch, Some(step));
            }
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn inflated_trajectory_fails_bound_check() {
        let mut traj = run(&example(6, 6)).unwrap();
        assert!(bound_check(&traj).holds());
        traj.records[4].norm_xc = traj.records[4].bound * 2.0;
        let report = bound_check(&traj);
        assert_eq!(report.first_violation, Some(4));
        assert!(!report.within[4]);
    }
}
