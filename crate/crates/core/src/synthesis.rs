//! Gain integerization, closed-loop matrices and the stability certificates.
//!
//! The observer-based stabilizer works on three integer gains and two
//! positive scales:
//!
//! * `control_gain` maps the echoed controller state to the plant input,
//! * `injection_gain` feeds measurements into the controller state,
//! * `observer_gain` feeds the echoed state back into the controller state,
//! * `output_scale` scales measurements, `echo_scale` scales the echo.
//!
//! Norms and eigenvalues are evaluated in `f64`. They only produce
//! certificates, never control-path values.

use std::ops::Range;

use nalgebra::DMatrix;
use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::fixedpoint::GridParams;
use crate::linalg::{rational_to_f64, spectral_norm, spectral_radius, IntMatrix, LinalgError, RatMatrix};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("closed loop is not Schur (spectral radius {spectral_radius:.6})")]
    NotSchur { spectral_radius: f64 },
    #[error("spectral radius {spectral_radius:.6} plus margin {margin} is not below 1")]
    BadMargin { spectral_radius: f64, margin: f64 },
    #[error("decay envelope not certified within {k_max} powers")]
    EnvelopeNotCertified { k_max: usize },
    #[error("{0} must be an integer matrix")]
    NonIntegralGain(&'static str),
    #[error("{0} must be positive")]
    NonPositiveScale(&'static str),
    #[error(
        "no admissible initial condition: operating radius {radius:.6} <= 0 for n={n}, m={m}; \
         increase the word length n or decrease the fractional bits m"
    )]
    NoOperatingRegion { radius: f64, n: u32, m: u32 },
    #[error("pair is not controllable")]
    Uncontrollable,
}

/// Block sizes of one entity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EntityDims {
    pub state: usize,
    pub input: usize,
    pub output: usize,
}

/// Linear plant: `x+ = A x + B u`, measurement `C x` with `C` block diagonal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlantMatrices {
    a: RatMatrix,
    b: RatMatrix,
    c: RatMatrix,
    entities: Vec<EntityDims>,
}

fn offsets(sizes: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut out = vec![0];
    for s in sizes {
        out.push(out.last().unwrap() + s);
    }
    out
}

fn dim_err(msg: String) -> SynthesisError {
    SynthesisError::Dimension(msg)
}

impl PlantMatrices {
    /// `B` may couple any input into any state; `C` must be block diagonal.
    pub fn new(a: RatMatrix, b: RatMatrix, c: RatMatrix, entities: Vec<EntityDims>) -> Result<Self, SynthesisError> {
        if entities.is_empty() {
            return Err(dim_err("at least one entity is required".into()));
        }
        let s: usize = entities.iter().map(|e| e.state).sum();
        let p: usize = entities.iter().map(|e| e.input).sum();
        let q: usize = entities.iter().map(|e| e.output).sum();
        if a.shape() != (s, s) {
            return Err(dim_err(format!("A is {:?}, expected {s}x{s}", a.shape())));
        }
        if b.shape() != (s, p) {
            return Err(dim_err(format!("B is {:?}, expected {s}x{p}", b.shape())));
        }
        if c.shape() != (q, s) {
            return Err(dim_err(format!("C is {:?}, expected {q}x{s}", c.shape())));
        }
        let plant = Self { a, b, c, entities };
        for i in 0..plant.entities.len() {
            let rows = plant.output_range(i);
            for r in rows {
                for col in 0..s {
                    if !plant.state_range(i).contains(&col) && !plant.c[(r, col)].is_zero() {
                        return Err(dim_err(format!("C is not block diagonal at ({r}, {col})")));
                    }
                }
            }
        }
        Ok(plant)
    }

    /// One entity per state coordinate, each with one input and one output.
    pub fn scalar_entities(a: RatMatrix, b: RatMatrix, c: RatMatrix) -> Result<Self, SynthesisError> {
        let n = a.rows();
        let dims = EntityDims {
            state: 1,
            input: 1,
            output: 1,
        };
        Self::new(a, b, c, vec![dims; n])
    }

    pub fn a(&self) -> &RatMatrix {
        &self.a
    }

    pub fn b(&self) -> &RatMatrix {
        &self.b
    }

    pub fn c(&self) -> &RatMatrix {
        &self.c
    }

    pub fn entities(&self) -> &[EntityDims] {
        &self.entities
    }

    pub fn parties(&self) -> usize {
        self.entities.len()
    }

    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.rows()
    }

    pub fn state_range(&self, i: usize) -> Range<usize> {
        let o = offsets(self.entities.iter().map(|e| e.state));
        o[i]..o[i + 1]
    }

    pub fn input_range(&self, i: usize) -> Range<usize> {
        let o = offsets(self.entities.iter().map(|e| e.input));
        o[i]..o[i + 1]
    }

    pub fn output_range(&self, i: usize) -> Range<usize> {
        let o = offsets(self.entities.iter().map(|e| e.output));
        o[i]..o[i + 1]
    }

    /// The diagonal block `C_i`.
    pub fn output_block(&self, i: usize) -> RatMatrix {
        let r = self.output_range(i);
        let s = self.state_range(i);
        self.c.block(r.start, s.start, r.len(), s.len())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ControllerGains {
    /// Scale applied to measurements before quantization.
    pub output_scale: BigRational,
    /// Scale applied to the echoed controller state.
    pub echo_scale: BigRational,
    /// Echoed state to plant input (`inputs x states`).
    pub control_gain: IntMatrix,
    /// Measurements into the controller state (`states x outputs`).
    pub injection_gain: IntMatrix,
    /// Echoed state into the controller state (`states x states`).
    pub observer_gain: IntMatrix,
}

impl ControllerGains {
    pub fn validate(&self, plant: &PlantMatrices) -> Result<(), SynthesisError> {
        if !self.output_scale.is_positive() {
            return Err(SynthesisError::NonPositiveScale("output scale"));
        }
        if !self.echo_scale.is_positive() {
            return Err(SynthesisError::NonPositiveScale("echo scale"));
        }
        let (s, p, q) = (plant.state_dim(), plant.input_dim(), plant.output_dim());
        let check = |name: &str, m: &IntMatrix, want: (usize, usize)| {
            if m.shape() != want {
                Err(dim_err(format!("{name} is {:?}, expected {want:?}", m.shape())))
            } else {
                Ok(())
            }
        };
        check("control gain", &self.control_gain, (p, s))?;
        check("injection gain", &self.injection_gain, (s, q))?;
        check("observer gain", &self.observer_gain, (s, s))?;
        Ok(())
    }

    /// Largest absolute row sum over the control-gain rows and the rows of
    /// `[observer_gain injection_gain]`.
    pub fn max_row_abs_sum(&self) -> u128 {
        let control = (0..self.control_gain.rows()).map(|i| self.control_gain.row_abs_sum(i));
        let update = (0..self.observer_gain.rows())
            .map(|i| self.observer_gain.row_abs_sum(i) + self.injection_gain.row_abs_sum(i));
        control.chain(update).max().unwrap_or(0)
    }
}

/// Lower bound the Paillier modulus must strictly exceed so that no
/// homomorphic sum wraps around: `2^n` times the largest absolute row sum.
pub fn required_paillier_bound(gains: &ControllerGains, n: u32) -> BigUint {
    BigUint::from(gains.max_row_abs_sum()) << n
}

fn lcm_of_denominators(ms: &[&RatMatrix]) -> BigInt {
    use num_integer::Integer;
    ms.iter().fold(BigInt::one(), |acc, m| acc.lcm(&m.denominator_lcm()))
}

/// Turns rational feedback `K` (`u = K x̂`) and observer `L` gains into the
/// integer form, choosing the largest scales that make every gain integral.
pub fn integerize(plant: &PlantMatrices, k: &RatMatrix, l: &RatMatrix) -> Result<ControllerGains, SynthesisError> {
    let (s, p, q) = (plant.state_dim(), plant.input_dim(), plant.output_dim());
    if k.shape() != (p, s) {
        return Err(dim_err(format!("K is {:?}, expected {p}x{s}", k.shape())));
    }
    if l.shape() != (s, q) {
        return Err(dim_err(format!("L is {:?}, expected {s}x{q}", l.shape())));
    }
    let bk = plant.b.try_mul(k)?;
    let lc = l.try_mul(&plant.c)?;
    let observer = plant.a.try_add(&bk)?.try_add(&lc)?;
    let echo_den = lcm_of_denominators(&[k, &observer]);
    let out_den = lcm_of_denominators(&[l]);
    let echo_scale = BigRational::new(BigInt::one(), echo_den.clone());
    let output_scale = BigRational::new(BigInt::one(), out_den.clone());
    let to_int = |m: &RatMatrix, factor: &BigInt, name| {
        IntMatrix::from_rational(&m.scale(&BigRational::from_integer(factor.clone())))
            .ok_or(SynthesisError::NonIntegralGain(name))
    };
    let gains = ControllerGains {
        control_gain: to_int(k, &echo_den, "control gain")?,
        injection_gain: to_int(&-l, &out_den, "injection gain")?,
        observer_gain: to_int(&observer, &echo_den, "observer gain")?,
        output_scale,
        echo_scale,
    };
    let closed = build_closed_loop(plant, &gains)?;
    let sr = spectral_radius(&closed.a_c.to_f64());
    if sr >= 1.0 {
        return Err(SynthesisError::NotSchur { spectral_radius: sr });
    }
    Ok(gains)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClosedLoop {
    /// State matrix of `col(x, ζ)`.
    pub a_c: RatMatrix,
    /// Input matrix of the quantization errors `col(δ_meas, δ_echo)`.
    pub b_c: RatMatrix,
}

pub fn build_closed_loop(plant: &PlantMatrices, gains: &ControllerGains) -> Result<ClosedLoop, SynthesisError> {
    gains.validate(plant)?;
    let control = gains.control_gain.to_rational();
    let injection = gains.injection_gain.to_rational();
    let observer = gains.observer_gain.to_rational();
    let b_phi = plant.b.try_mul(&control)?;
    let a_c = RatMatrix::block2(
        &plant.a,
        &b_phi.scale(&gains.echo_scale),
        &injection.try_mul(&plant.c)?.scale(&gains.output_scale),
        &observer.scale(&gains.echo_scale),
    )?;
    let b_c = RatMatrix::block2(
        &RatMatrix::zeros(plant.state_dim(), plant.output_dim()),
        &b_phi,
        &injection,
        &observer,
    )?;
    Ok(ClosedLoop { a_c, b_c })
}

/// Constants with `‖A^k‖ <= gain · rate^k` for every `k >= 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayEnvelope {
    pub spectral_radius: f64,
    pub margin: f64,
    pub rate: f64,
    pub gain: f64,
    /// Smallest `K >= 1` with `‖A^K‖ <= rate^K`.
    pub certificate_power: usize,
}

impl DecayEnvelope {
    pub fn at(&self, k: usize) -> f64 {
        self.gain * self.rate.powi(k as i32)
    }
}

pub const DEFAULT_ENVELOPE_POWERS: usize = 5000;

/// Computes `(M, ρ)` with `ρ = spectral radius + margin`.
///
/// Certificate: once `‖A^K‖ <= ρ^K`, every `k = qK + r` satisfies
/// `‖A^k‖ <= ‖A^K‖^q ‖A^r‖ <= ρ^k · max_{r<K} ‖A^r‖/ρ^r`, so `M` is that
/// maximum. `margin` defaults to a tenth of the distance to 1.
pub fn decay_envelope(a: &RatMatrix, k_max: usize, margin: Option<f64>) -> Result<DecayEnvelope, SynthesisError> {
    if a.rows() != a.cols() {
        return Err(dim_err(format!("envelope needs a square matrix, got {:?}", a.shape())));
    }
    let af = a.to_f64();
    let sr = spectral_radius(&af);
    if sr >= 1.0 {
        return Err(SynthesisError::NotSchur { spectral_radius: sr });
    }
    let margin = margin.unwrap_or((1.0 - sr) / 10.0);
    let rate = sr + margin;
    if margin <= 0.0 || rate >= 1.0 {
        return Err(SynthesisError::BadMargin {
            spectral_radius: sr,
            margin,
        });
    }
    let n = af.nrows();
    let mut power = DMatrix::<f64>::identity(n, n);
    let mut gain = 1.0f64;
    let mut rate_k = 1.0f64;
    for k in 1..=k_max {
        power = &power * &af;
        rate_k *= rate;
        let norm = spectral_norm(&power);
        if norm <= rate_k {
            return Ok(DecayEnvelope {
                spectral_radius: sr,
                margin,
                rate,
                gain,
                certificate_power: k,
            });
        }
        gain = gain.max(norm / rate_k);
    }
    Err(SynthesisError::EnvelopeNotCertified { k_max })
}

/// First `k <= horizon` where `‖A^k‖` exceeds the envelope, if any.
pub fn envelope_violation(a: &RatMatrix, env: &DecayEnvelope, horizon: usize) -> Option<usize> {
    let af = a.to_f64();
    let n = af.nrows();
    let mut power = DMatrix::<f64>::identity(n, n);
    for k in 0..=horizon {
        if k > 0 {
            power = &power * &af;
        }
        let allowed = env.at(k);
        if spectral_norm(&power) > allowed * (1.0 + 1e-9) {
            return Some(k);
        }
    }
    None
}

/// Closed-loop certificate for a fixed grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StabilityBounds {
    pub envelope: DecayEnvelope,
    /// `‖B_c‖ · d`.
    pub sigma: f64,
    /// Number of quantized channels.
    pub error_dim: usize,
    /// Asymptotic residual `M σ 2^-m / (1 - ρ)`.
    pub residual: f64,
    pub grid: GridParams,
}

impl StabilityBounds {
    /// `M ρ^k ‖x_c(0)‖ + M σ 2^-m / (1 - ρ)`.
    pub fn state_bound(&self, k: usize, initial_norm: f64) -> f64 {
        self.envelope.at(k) * initial_norm + self.residual
    }
}

pub fn residual_term(envelope: &DecayEnvelope, sigma: f64, grid: GridParams) -> f64 {
    envelope.gain * sigma * 2f64.powi(-(grid.frac_bits() as i32)) / (1.0 - envelope.rate)
}

pub fn stability_bounds(
    plant: &PlantMatrices,
    gains: &ControllerGains,
    grid: GridParams,
    k_max: usize,
) -> Result<StabilityBounds, SynthesisError> {
    let closed = build_closed_loop(plant, gains)?;
    let envelope = decay_envelope(&closed.a_c, k_max, None)?;
    let error_dim = closed.b_c.cols();
    let sigma = spectral_norm(&closed.b_c.to_f64()) * error_dim as f64;
    Ok(StabilityBounds {
        envelope,
        sigma,
        error_dim,
        residual: residual_term(&envelope, sigma, grid),
        grid,
    })
}

/// Initial conditions with `‖x_c(0)‖ <= radius` keep every signal on the grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatingRegion {
    /// Bound on `‖x_c(k)‖` over the whole run, at its supremum.
    pub beta: f64,
    pub radius: f64,
}

impl OperatingRegion {
    pub fn admits(&self, initial_norm: f64) -> bool {
        initial_norm <= self.radius
    }
}

pub fn operating_region(
    bounds: &StabilityBounds,
    gains: &ControllerGains,
    plant: &PlantMatrices,
) -> Result<OperatingRegion, SynthesisError> {
    let grid = bounds.grid;
    let (n, m) = (grid.word_bits(), grid.frac_bits());
    let g1 = rational_to_f64(&gains.output_scale);
    let g2 = rational_to_f64(&gains.echo_scale);
    let control = gains.control_gain.to_rational().to_f64();
    let mut factor = 1.0f64.min(1.0 / g2);
    for i in 0..plant.parties() {
        let rows = plant.input_range(i);
        let phi_i = spectral_norm(&control.rows(rows.start, rows.len()).into_owned());
        if phi_i > 0.0 {
            factor = factor.min((1.0 - phi_i * 2f64.powi(1 - n as i32)) / (g2 * phi_i));
        }
        let c_i = spectral_norm(&plant.output_block(i).to_f64());
        if c_i > 0.0 {
            factor = factor.min(1.0 / (g1 * c_i));
        }
    }
    let beta = 2f64.powi((n - m - 1) as i32) * factor;
    let env = &bounds.envelope;
    let radius = beta / env.gain - bounds.sigma * 2f64.powi(-(m as i32)) / (1.0 - env.rate);
    if radius <= 0.0 {
        return Err(SynthesisError::NoOperatingRegion { radius, n, m });
    }
    Ok(OperatingRegion { beta, radius })
}

/// Single-input state feedback `K` (1 x s) placing the eigenvalues of
/// `A + b K` at `poles` (Ackermann's formula).
pub fn place_poles(a: &RatMatrix, b: &RatMatrix, poles: &[BigRational]) -> Result<RatMatrix, SynthesisError> {
    let s = a.rows();
    if a.cols() != s || b.shape() != (s, 1) || poles.len() != s {
        return Err(dim_err("pole placement needs square A, column b and one pole per state".into()));
    }
    let mut ctrb = RatMatrix::zeros(s, s);
    let mut col = b.clone();
    for j in 0..s {
        for i in 0..s {
            ctrb[(i, j)] = col[(i, 0)].clone();
        }
        col = a.try_mul(&col)?;
    }
    let inv = ctrb.inverse().map_err(|_| SynthesisError::Uncontrollable)?;
    // desired characteristic polynomial evaluated at A
    let mut p_a = RatMatrix::identity(s);
    for pole in poles {
        let shifted = a.try_add(&RatMatrix::identity(s).scale(&-pole))?;
        p_a = p_a.try_mul(&shifted)?;
    }
    let last = inv.block(s - 1, 0, 1, s);
    Ok(-&last.try_mul(&p_a)?)
}

/// Single-output observer gain `L` (s x 1) placing the eigenvalues of `A + L c`.
pub fn place_observer(a: &RatMatrix, c: &RatMatrix, poles: &[BigRational]) -> Result<RatMatrix, SynthesisError> {
    Ok(place_poles(&a.transpose(), &c.transpose(), poles)?.transpose())
}
