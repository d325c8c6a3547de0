//! Integer-coefficient linear control laws, evaluated either on grid values
//! or homomorphically on dual Paillier ciphertexts.
//!
//! A law acts on `w = col(ζ, inputs)`:
//!
//! ```text
//! out   = F w        (output rows)
//! ζ+    = G w        (update rows)
//! ```
//!
//! Encrypted evaluation of a row `Σ a_j w_j` is the product of
//! [`dual_power`] factors, which picks the `+w_j` or `-w_j` ciphertext by the
//! sign of `a_j` and raises it to `|a_j|`. Decryption then reduces mod `2^n`,
//! which turns the non-negative integer sum back into the signed result as
//! long as the plaintext sum stays below the Paillier modulus.

use std::ops::Range;

use num_bigint::BigUint;
use num_rational::BigRational;
use rand::RngCore;

use crate::codec::DualCiphertext;
use crate::crypto::{CryptoError, PaillierCiphertext, PaillierPublicKey};
use crate::exec::Execution;
use crate::fixedpoint::{Fixed, GridParams};
use crate::linalg::IntMatrix;
use crate::synthesis::{ControllerGains, PlantMatrices};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum ControllerError {
    #[error("{0}")]
    Dimension(String),
    #[error("{}", .0)]
    Overflow(RangeReport),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Which family of law rows a value came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LawRow {
    Output,
    Update,
}

/// A law row whose exact value leaves the grid range.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Breach {
    pub row: LawRow,
    pub index: usize,
    pub value: BigRational,
}

/// Result of checking that every output and update row stays on the grid.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct RangeReport {
    pub breaches: Vec<Breach>,
}

impl RangeReport {
    pub fn is_inside(&self) -> bool {
        self.breaches.is_empty()
    }
}

impl std::fmt::Display for RangeReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.breaches.is_empty() {
            return f.write_str("all controller signals inside the grid range");
        }
        write!(f, "controller signals leave the grid range:")?;
        for b in &self.breaches {
            let kind = match b.row {
                LawRow::Output => "output",
                LawRow::Update => "state update",
            };
            write!(f, " {kind}[{}] = {}", b.index, crate::linalg::format_rational(&b.value))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinearLaw {
    state_dim: usize,
    input_dim: usize,
    output: IntMatrix,
    update: IntMatrix,
}

impl LinearLaw {
    pub fn new(state_dim: usize, input_dim: usize, output: IntMatrix, update: IntMatrix) -> Result<Self, ControllerError> {
        let width = state_dim + input_dim;
        if output.cols() != width || update.cols() != width || update.rows() != state_dim {
            return Err(ControllerError::Dimension(format!(
                "law over {state_dim} states and {input_dim} inputs needs {width} columns and {state_dim} update rows"
            )));
        }
        Ok(Self {
            state_dim,
            input_dim,
            output,
            update,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output.rows()
    }

    pub fn output_matrix(&self) -> &IntMatrix {
        &self.output
    }

    pub fn update_matrix(&self) -> &IntMatrix {
        &self.update
    }

    pub fn max_row_abs_sum(&self) -> u128 {
        (0..self.output.rows())
            .map(|i| self.output.row_abs_sum(i))
            .chain((0..self.update.rows()).map(|i| self.update.row_abs_sum(i)))
            .max()
            .unwrap_or(0)
    }

    /// `2^n` times the largest absolute row sum; the Paillier modulus must exceed it.
    pub fn required_paillier_bound(&self, n: u32) -> BigUint {
        BigUint::from(self.max_row_abs_sum()) << n
    }

    fn check_dims(&self, state: usize, inputs: usize) -> Result<(), ControllerError> {
        if state != self.state_dim || inputs != self.input_dim {
            return Err(ControllerError::Dimension(format!(
                "law expects {} states and {} inputs, got {state} and {inputs}",
                self.state_dim, self.input_dim
            )));
        }
        Ok(())
    }

    fn exact_rows(m: &IntMatrix, w: &[i64]) -> Vec<i128> {
        (0..m.rows())
            .map(|i| m.row(i).iter().zip(w).map(|(&a, &v)| a as i128 * v as i128).sum())
            .collect()
    }

    /// Exact scaled-integer outputs and updates, before any range check.
    pub fn evaluate_raw(&self, state: &[Fixed], inputs: &[Fixed]) -> Result<(Vec<i128>, Vec<i128>), ControllerError> {
        self.check_dims(state.len(), inputs.len())?;
        let w: Vec<i64> = state.iter().chain(inputs).map(Fixed::raw).collect();
        Ok((Self::exact_rows(&self.output, &w), Self::exact_rows(&self.update, &w)))
    }

    /// Checks that every row value lies in the grid range.
    pub fn range_guard(&self, state: &[Fixed], inputs: &[Fixed], grid: GridParams) -> Result<RangeReport, ControllerError> {
        let (out, upd) = self.evaluate_raw(state, inputs)?;
        let scale = BigRational::from_integer(num_bigint::BigInt::from(1u64 << grid.frac_bits()));
        let breaches = out
            .iter()
            .enumerate()
            .map(|(i, &v)| (LawRow::Output, i, v))
            .chain(upd.iter().enumerate().map(|(i, &v)| (LawRow::Update, i, v)))
            .filter(|&(_, _, v)| !grid.contains_raw(v))
            .map(|(row, index, v)| Breach {
                row,
                index,
                value: BigRational::from_integer(v.into()) / &scale,
            })
            .collect();
        Ok(RangeReport { breaches })
    }

    /// Plain evaluation; errors if any row leaves the grid.
    pub fn evaluate_plain(
        &self,
        state: &[Fixed],
        inputs: &[Fixed],
        grid: GridParams,
    ) -> Result<(Vec<Fixed>, Vec<Fixed>), ControllerError> {
        let report = self.range_guard(state, inputs, grid)?;
        if !report.is_inside() {
            return Err(ControllerError::Overflow(report));
        }
        let (out, upd) = self.evaluate_raw(state, inputs)?;
        let to_fixed = |v: Vec<i128>| -> Vec<Fixed> {
            v.into_iter()
                .map(|r| Fixed::from_raw_wide(r, grid).expect("range checked"))
                .collect()
        };
        Ok((to_fixed(out), to_fixed(upd)))
    }

    /// Homomorphic evaluation. Returns the output ciphertexts and the dual
    /// encryption of the next state; the `-ζ+` half uses negated coefficients.
    pub fn evaluate_encrypted(
        &self,
        pk: &PaillierPublicKey,
        state: &[DualCiphertext],
        inputs: &[DualCiphertext],
        exec: Execution,
    ) -> Result<(Vec<PaillierCiphertext>, Vec<DualCiphertext>), ControllerError> {
        self.check_dims(state.len(), inputs.len())?;
        let grid = match state.iter().chain(inputs).next() {
            Some(d) => d.grid,
            None => {
                return Ok((vec![pk.one(); self.output.rows()], Vec::new()));
            }
        };
        let w: Vec<&DualCiphertext> = state.iter().chain(inputs).collect();
        let n_out = self.output.rows();
        let n_upd = self.update.rows();
        // rows: outputs, then +updates, then -updates
        let rows = exec.try_map(n_out + 2 * n_upd, |r| {
            if r < n_out {
                combine(pk, &w, self.output.row(r), false)
            } else if r < n_out + n_upd {
                combine(pk, &w, self.update.row(r - n_out), false)
            } else {
                combine(pk, &w, self.update.row(r - n_out - n_upd), true)
            }
        })?;
        let mut rows = rows.into_iter();
        let outputs: Vec<_> = rows.by_ref().take(n_out).collect();
        let plus: Vec<_> = rows.by_ref().take(n_upd).collect();
        let next = plus
            .into_iter()
            .zip(rows)
            .map(|(plus, minus)| DualCiphertext { plus, minus, grid })
            .collect();
        Ok((outputs, next))
    }
}

/// `E(sgn(a)·v)^|a|`: the `+v` half for `a > 0`, the `-v` half for `a < 0`,
/// and the neutral ciphertext 1 for `a = 0`.
pub fn dual_power(pk: &PaillierPublicKey, c: &DualCiphertext, a: i64) -> Result<PaillierCiphertext, CryptoError> {
    let half = match a.signum() {
        0 => return Ok(pk.one()),
        1 => &c.plus,
        _ => &c.minus,
    };
    if a.unsigned_abs() == 1 {
        pk.add(half, &pk.one())
    } else {
        pk.scale(half, &BigUint::from(a.unsigned_abs()))
    }
}

fn combine(
    pk: &PaillierPublicKey,
    w: &[&DualCiphertext],
    coeffs: &[i64],
    negate: bool,
) -> Result<PaillierCiphertext, ControllerError> {
    let mut acc = pk.one();
    for (c, &a) in w.iter().zip(coeffs) {
        if a == 0 {
            continue;
        }
        let a = if negate { -a } else { a };
        acc = pk.add(&acc, &dual_power(pk, c, a)?)?;
    }
    Ok(acc)
}

/// How the stabilizer's signals are laid out per entity.
///
/// Entity `i` sends `col(measured_i, echo_i)`; the controller state is split
/// so entity `i` receives the state block matching its own plant state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StabilizerLayout {
    pub measured: Vec<Range<usize>>,
    pub echo: Vec<Range<usize>>,
    pub actuation: Vec<Range<usize>>,
    /// Position of entity `i`'s message inside the controller's input vector.
    pub message: Vec<Range<usize>>,
}

impl StabilizerLayout {
    pub fn parties(&self) -> usize {
        self.message.len()
    }
}

/// Builds the integer law `u = φ y_echo`, `ζ+ = ϕ_o y_echo + ϕ y_meas` over the
/// per-entity message layout.
pub fn stabilizer_law(plant: &PlantMatrices, gains: &ControllerGains) -> Result<(LinearLaw, StabilizerLayout), ControllerError> {
    gains
        .validate(plant)
        .map_err(|e| ControllerError::Dimension(e.to_string()))?;
    let s = plant.state_dim();
    let (p, q) = (plant.input_dim(), plant.output_dim());
    let mut layout = StabilizerLayout {
        measured: Vec::new(),
        echo: Vec::new(),
        actuation: Vec::new(),
        message: Vec::new(),
    };
    // column in w of each measured and echoed channel
    let mut meas_col = vec![0; q];
    let mut echo_col = vec![0; s];
    let mut offset = 0;
    for i in 0..plant.parties() {
        let (o, st) = (plant.output_range(i), plant.state_range(i));
        let start = offset;
        for (k, j) in o.clone().enumerate() {
            meas_col[j] = s + offset + k;
        }
        offset += o.len();
        for (k, j) in st.clone().enumerate() {
            echo_col[j] = s + offset + k;
        }
        offset += st.len();
        layout.measured.push(o);
        layout.echo.push(st);
        layout.actuation.push(plant.input_range(i));
        layout.message.push(start..offset);
    }
    let width = s + q + s;
    let mut output = vec![vec![0i64; width]; p];
    for (r, row) in output.iter_mut().enumerate() {
        for j in 0..s {
            row[echo_col[j]] = gains.control_gain.get(r, j);
        }
    }
    let mut update = vec![vec![0i64; width]; s];
    for (r, row) in update.iter_mut().enumerate() {
        for j in 0..s {
            row[echo_col[j]] = gains.observer_gain.get(r, j);
        }
        for j in 0..q {
            row[meas_col[j]] = gains.injection_gain.get(r, j);
        }
    }
    let law = LinearLaw::new(
        s,
        q + s,
        IntMatrix::from_rows(output).expect("rectangular"),
        IntMatrix::from_rows(update).expect("rectangular"),
    )?;
    Ok((law, layout))
}

/// The plaintext quantized reference controller.
#[derive(Clone, Debug)]
pub struct PlainController {
    law: LinearLaw,
    state: Vec<Fixed>,
    grid: GridParams,
}

impl PlainController {
    pub fn new(law: LinearLaw, initial: Vec<Fixed>, grid: GridParams) -> Result<Self, ControllerError> {
        if initial.len() != law.state_dim() {
            return Err(ControllerError::Dimension(format!(
                "initial state has {} entries, law expects {}",
                initial.len(),
                law.state_dim()
            )));
        }
        Ok(Self {
            law,
            state: initial,
            grid,
        })
    }

    pub fn state(&self) -> &[Fixed] {
        &self.state
    }

    pub fn law(&self) -> &LinearLaw {
        &self.law
    }

    /// Advances the state and returns the outputs; on overflow the state is
    /// left unchanged.
    pub fn step(&mut self, inputs: &[Fixed]) -> Result<Vec<Fixed>, ControllerError> {
        let (out, next) = self.law.evaluate_plain(&self.state, inputs, self.grid)?;
        self.state = next;
        Ok(out)
    }
}

/// The homomorphic controller holding `(E(ζ), E(-ζ))`.
#[derive(Clone, Debug)]
pub struct EncryptedController {
    law: LinearLaw,
    state: Vec<DualCiphertext>,
    pk: PaillierPublicKey,
    rerandomize: bool,
}

impl EncryptedController {
    pub fn new(
        law: LinearLaw,
        initial: Vec<DualCiphertext>,
        pk: PaillierPublicKey,
        rerandomize: bool,
    ) -> Result<Self, ControllerError> {
        if initial.len() != law.state_dim() {
            return Err(ControllerError::Dimension(format!(
                "initial state has {} entries, law expects {}",
                initial.len(),
                law.state_dim()
            )));
        }
        Ok(Self {
            law,
            state: initial,
            pk,
            rerandomize,
        })
    }

    pub fn state(&self) -> &[DualCiphertext] {
        &self.state
    }

    /// The `+ζ` ciphertexts of the state entries in `range`.
    pub fn echo(&self, range: Range<usize>) -> Vec<PaillierCiphertext> {
        self.state[range].iter().map(|d| d.plus.clone()).collect()
    }

    pub fn step<R: RngCore + ?Sized>(
        &mut self,
        inputs: &[DualCiphertext],
        exec: Execution,
        rng: &mut R,
    ) -> Result<Vec<PaillierCiphertext>, ControllerError> {
        let (mut out, mut next) = self.law.evaluate_encrypted(&self.pk, &self.state, inputs, exec)?;
        if self.rerandomize {
            for c in &mut out {
                *c = self.pk.rerandomize(c, rng)?;
            }
            for d in &mut next {
                d.plus = self.pk.rerandomize(&d.plus, rng)?;
                d.minus = self.pk.rerandomize(&d.minus, rng)?;
            }
        }
        self.state = next;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{decrypt_inner, encrypt_dual, encrypt_dual_one};
    use crate::crypto::PaillierKeypair;
    use crate::fixtures::{example_gains, example_plant};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn grid() -> GridParams {
        GridParams::new(24, 6).unwrap()
    }

    fn fx(raw: i64) -> Fixed {
        Fixed::from_raw(raw, grid()).unwrap()
    }

    fn keys() -> PaillierKeypair {
        PaillierKeypair::generate(64, &mut ChaCha20Rng::seed_from_u64(42)).unwrap()
    }

    #[test]
    fn dual_power_cases() {
        let kp = keys();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let d = encrypt_dual_one(fx(5), &kp.public, &mut rng).unwrap();
        assert_eq!(dual_power(&kp.public, &d, 0).unwrap().value(), &BigUint::from(1u32));
        assert_eq!(dual_power(&kp.public, &d, 1).unwrap(), d.plus);
        let c = dual_power(&kp.public, &d, -3).unwrap();
        assert_eq!(decrypt_inner(&[c.clone()], &kp.private, grid()).unwrap(), vec![fx(-15)]);
        // raw plaintext is 3 * I(-5 * 2^-6) = 3 * (2^24 - 5)
        assert_eq!(kp.private.decrypt(&c).unwrap(), BigUint::from(3 * ((1u64 << 24) - 5)));
    }

    #[test]
    fn stabilizer_layout_for_two_scalar_entities() {
        let (law, layout) = stabilizer_law(&example_plant(), &example_gains()).unwrap();
        assert_eq!(layout.message, vec![0..2, 2..4]);
        // w = (ζ1, ζ2, ya1, yb1, ya2, yb2)
        assert_eq!(law.output_matrix().to_rows(), vec![vec![0, 0, 0, 20, 0, -10], vec![0, 0, 0, -65, 0, -10]]);
        assert_eq!(law.update_matrix().to_rows(), vec![vec![0, 0, -10, 30, -12, 17], vec![0, 0, 10, -55, 20, -30]]);
        assert_eq!(law.max_row_abs_sum(), 115);
    }

    #[test]
    fn zero_signals_give_zero_outputs() {
        let (law, _) = stabilizer_law(&example_plant(), &example_gains()).unwrap();
        let zeros = vec![fx(0); 4];
        let mut ctl = PlainController::new(law, vec![fx(0); 2], grid()).unwrap();
        assert_eq!(ctl.step(&zeros).unwrap(), vec![fx(0); 2]);
        assert_eq!(ctl.state(), &[fx(0), fx(0)]);
    }

    #[test]
    fn first_step_matches_exact_rational_evaluation() {
        // x(0) = (10, 20), ζ(0) = (12, 23), scales 1/10:
        // ya = (1, 2), yb = (1.2, 2.3) -> quantized yb = (76/64, 147/64)
        let (law, _) = stabilizer_law(&example_plant(), &example_gains()).unwrap();
        let inputs = [fx(64), fx(76), fx(128), fx(147)];
        let state = [fx(12 * 64), fx(23 * 64)];
        let mut ctl = PlainController::new(law, state.to_vec(), grid()).unwrap();
        let u = ctl.step(&inputs).unwrap();
        // u1 = 20*76/64 - 10*147/64 = 50/64; u2 = -65*76/64 - 10*147/64 = -6410/64
        assert_eq!(u, vec![fx(50), fx(-6410)]);
        // ζ1+ = 30*76 + 17*147 - 10*64 - 12*128 = 2603 (/64); ζ2+ = -55*76 - 30*147 + 10*64 + 20*128 = -5390 (/64)
        assert_eq!(ctl.state(), &[fx(2603), fx(-5390)]);
    }

    #[test]
    fn overflow_is_reported_and_state_kept() {
        let law = LinearLaw::new(1, 1, IntMatrix::from_slices(&[&[0, 2]]), IntMatrix::from_slices(&[&[1, 0]])).unwrap();
        let g = grid();
        let mut ctl = PlainController::new(law, vec![fx(0)], g).unwrap();
        let big = Fixed::from_raw(g.max_raw() / 2 + 1, g).unwrap();
        match ctl.step(&[big]) {
            Err(ControllerError::Overflow(report)) => {
                assert_eq!(report.breaches.len(), 1);
                assert_eq!(report.breaches[0].row, LawRow::Output);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(ctl.state(), &[fx(0)]);
    }

    #[test]
    fn boundary_value_with_identity_gain_is_inside() {
        let law = LinearLaw::new(1, 1, IntMatrix::from_slices(&[&[0, 1]]), IntMatrix::from_slices(&[&[0, 1]])).unwrap();
        let top = Fixed::from_raw(grid().max_raw(), grid()).unwrap();
        assert!(law.range_guard(&[fx(0)], &[top], grid()).unwrap().is_inside());
    }

    #[test]
    fn encrypted_step_matches_plain_step() {
        let kp = keys();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let (law, _) = stabilizer_law(&example_plant(), &example_gains()).unwrap();
        let inputs = [fx(64), fx(76), fx(128), fx(147)];
        let state = [fx(12 * 64), fx(23 * 64)];
        let mut plain = PlainController::new(law.clone(), state.to_vec(), grid()).unwrap();
        let enc_state = encrypt_dual(&state, &kp.public, &mut rng).unwrap();
        let mut enc = EncryptedController::new(law, enc_state, kp.public.clone(), false).unwrap();
        let enc_inputs = encrypt_dual(&inputs, &kp.public, &mut rng).unwrap();
        for exec in [Execution::Sequential, Execution::Parallel] {
            let mut enc = enc.clone();
            let v = enc.step(&enc_inputs, exec, &mut rng).unwrap();
            assert_eq!(decrypt_inner(&v, &kp.private, grid()).unwrap(), vec![fx(50), fx(-6410)]);
        }
        let v = enc.step(&enc_inputs, Execution::Sequential, &mut rng).unwrap();
        let u = plain.step(&inputs).unwrap();
        assert_eq!(decrypt_inner(&v, &kp.private, grid()).unwrap(), u);
        let plus: Vec<_> = enc.state().iter().map(|d| d.plus.clone()).collect();
        let minus: Vec<_> = enc.state().iter().map(|d| d.minus.clone()).collect();
        assert_eq!(decrypt_inner(&plus, &kp.private, grid()).unwrap(), plain.state());
        let neg: Vec<_> = plain.state().iter().map(|v| v.checked_neg().unwrap()).collect();
        assert_eq!(decrypt_inner(&minus, &kp.private, grid()).unwrap(), neg);
    }

    #[test]
    fn rerandomized_step_decrypts_identically() {
        let kp = keys();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let (law, _) = stabilizer_law(&example_plant(), &example_gains()).unwrap();
        let inputs = encrypt_dual(&[fx(64), fx(76), fx(128), fx(147)], &kp.public, &mut rng).unwrap();
        let state = encrypt_dual(&[fx(768), fx(1472)], &kp.public, &mut rng).unwrap();
        let mut a = EncryptedController::new(law.clone(), state.clone(), kp.public.clone(), false).unwrap();
        let mut b = EncryptedController::new(law, state, kp.public.clone(), true).unwrap();
        let va = a.step(&inputs, Execution::Sequential, &mut rng).unwrap();
        let vb = b.step(&inputs, Execution::Sequential, &mut rng).unwrap();
        assert_ne!(va, vb);
        assert_eq!(
            decrypt_inner(&va, &kp.private, grid()).unwrap(),
            decrypt_inner(&vb, &kp.private, grid()).unwrap()
        );
    }

    #[test]
    fn zero_law_outputs_zero() {
        let kp = keys();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let law = LinearLaw::new(2, 2, IntMatrix::zeros(1, 4), IntMatrix::zeros(2, 4)).unwrap();
        let state = encrypt_dual(&[fx(9), fx(-9)], &kp.public, &mut rng).unwrap();
        let inputs = encrypt_dual(&[fx(3), fx(4)], &kp.public, &mut rng).unwrap();
        let (v, next) = law.evaluate_encrypted(&kp.public, &state, &inputs, Execution::Sequential).unwrap();
        assert_eq!(decrypt_inner(&v, &kp.private, grid()).unwrap(), vec![fx(0)]);
        for d in next {
            assert_eq!(decrypt_inner(&[d.plus, d.minus], &kp.private, grid()).unwrap(), vec![fx(0), fx(0)]);
        }
    }

    #[test]
    fn state_coefficients_select_dual_halves() {
        // general form: state enters outputs and updates with signed coefficients
        let kp = keys();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut trial = ChaCha20Rng::seed_from_u64(6);
        for _ in 0..40 {
            let coeff = |r: &mut ChaCha20Rng| -> Vec<i64> { (0..4).map(|_| r.gen_range(-7..=7)).collect() };
            let law = LinearLaw::new(
                2,
                2,
                IntMatrix::from_rows(vec![coeff(&mut trial)]).unwrap(),
                IntMatrix::from_rows(vec![coeff(&mut trial), coeff(&mut trial)]).unwrap(),
            )
            .unwrap();
            let vals: Vec<Fixed> = (0..4).map(|_| fx(trial.gen_range(-5000..5000))).collect();
            let (state, inputs) = vals.split_at(2);
            let (u, next) = law.evaluate_plain(state, inputs, grid()).unwrap();
            let es = encrypt_dual(state, &kp.public, &mut rng).unwrap();
            let ei = encrypt_dual(inputs, &kp.public, &mut rng).unwrap();
            let (v, enext) = law.evaluate_encrypted(&kp.public, &es, &ei, Execution::Parallel).unwrap();
            assert_eq!(decrypt_inner(&v, &kp.private, grid()).unwrap(), u);
            for (d, want) in enext.iter().zip(&next) {
                let got = decrypt_inner(&[d.plus.clone(), d.minus.clone()], &kp.private, grid()).unwrap();
                assert_eq!(got, vec![*want, want.checked_neg().unwrap()]);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn homomorphic_row_equals_signed_sum(
            coeffs in proptest::collection::vec(-40i64..=40, 3),
            raws in proptest::collection::vec(-20000i64..20000, 3),
            seed: u64,
        ) {
            let kp = keys();
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let vals: Vec<Fixed> = raws.iter().map(|&r| fx(r)).collect();
            let duals = encrypt_dual(&vals, &kp.public, &mut rng).unwrap();
            let refs: Vec<&DualCiphertext> = duals.iter().collect();
            let c = combine(&kp.public, &refs, &coeffs, false).unwrap();
            let want: i64 = coeffs.iter().zip(&raws).map(|(a, r)| a * r).sum();
            prop_assert_eq!(decrypt_inner(&[c], &kp.private, grid()).unwrap(), vec![fx(want)]);
        }
    }
}
