//! Plant dynamics in exact rational arithmetic.

use num_rational::BigRational;
use num_traits::{Signed, Zero};

use crate::linalg::LinalgError;
use crate::synthesis::PlantMatrices;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum PlantError {
    #[error("expected {expected} {what} entries, got {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

fn check_len(what: &'static str, v: &[BigRational], expected: usize) -> Result<(), PlantError> {
    if v.len() != expected {
        return Err(PlantError::Dimension {
            what,
            expected,
            found: v.len(),
        });
    }
    Ok(())
}

/// State transition `x+ = f(x, u)` and measurement `h(x)`.
pub trait PlantModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn transition(&self, x: &[BigRational], u: &[BigRational]) -> Result<Vec<BigRational>, PlantError>;
    fn output(&self, x: &[BigRational]) -> Result<Vec<BigRational>, PlantError>;
}

/// `x+ = A x + B u`, `h(x) = C x`.
#[derive(Clone, Debug)]
pub struct LinearPlant {
    matrices: PlantMatrices,
}

impl LinearPlant {
    pub fn new(matrices: PlantMatrices) -> Self {
        Self { matrices }
    }

    pub fn matrices(&self) -> &PlantMatrices {
        &self.matrices
    }
}

impl PlantModel for LinearPlant {
    fn state_dim(&self) -> usize {
        self.matrices.state_dim()
    }

    fn input_dim(&self) -> usize {
        self.matrices.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.matrices.output_dim()
    }

    fn transition(&self, x: &[BigRational], u: &[BigRational]) -> Result<Vec<BigRational>, PlantError> {
        check_len("state", x, self.state_dim())?;
        check_len("input", u, self.input_dim())?;
        let ax = self.matrices.a().mul_vec(x)?;
        let bu = self.matrices.b().mul_vec(u)?;
        Ok(ax.into_iter().zip(bu).map(|(a, b)| a + b).collect())
    }

    fn output(&self, x: &[BigRational]) -> Result<Vec<BigRational>, PlantError> {
        check_len("state", x, self.state_dim())?;
        Ok(self.matrices.c().mul_vec(x)?)
    }
}

/// Linear plant whose actuators clip inputs to `[-limit, limit]`.
#[derive(Clone, Debug)]
pub struct SaturatingPlant {
    inner: LinearPlant,
    limit: BigRational,
}

impl SaturatingPlant {
    pub fn new(inner: LinearPlant, limit: BigRational) -> Self {
        Self {
            inner,
            limit: limit.abs(),
        }
    }
}

impl PlantModel for SaturatingPlant {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }

    fn transition(&self, x: &[BigRational], u: &[BigRational]) -> Result<Vec<BigRational>, PlantError> {
        let neg = -self.limit.clone();
        let clipped: Vec<BigRational> = u.iter().map(|v| v.clone().clamp(neg.clone(), self.limit.clone())).collect();
        self.inner.transition(x, &clipped)
    }

    fn output(&self, x: &[BigRational]) -> Result<Vec<BigRational>, PlantError> {
        self.inner.output(x)
    }
}

/// Ignores its input and jumps to a fixed state; measures the state directly.
#[derive(Clone, Debug)]
pub struct ConstantPlant {
    state: Vec<BigRational>,
    inputs: usize,
}

impl ConstantPlant {
    pub fn new(state: Vec<BigRational>, inputs: usize) -> Self {
        Self { state, inputs }
    }
}

impl PlantModel for ConstantPlant {
    fn state_dim(&self) -> usize {
        self.state.len()
    }

    fn input_dim(&self) -> usize {
        self.inputs
    }

    fn output_dim(&self) -> usize {
        self.state.len()
    }

    fn transition(&self, x: &[BigRational], u: &[BigRational]) -> Result<Vec<BigRational>, PlantError> {
        check_len("state", x, self.state_dim())?;
        check_len("input", u, self.inputs)?;
        Ok(self.state.clone())
    }

    fn output(&self, x: &[BigRational]) -> Result<Vec<BigRational>, PlantError> {
        check_len("state", x, self.state_dim())?;
        Ok(x.to_vec())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlantState {
    pub x: Vec<BigRational>,
    pub k: u64,
}

impl PlantState {
    pub fn new(x: Vec<BigRational>) -> Self {
        Self { x, k: 0 }
    }

    pub fn is_zero(&self) -> bool {
        self.x.iter().all(Zero::is_zero)
    }
}

/// Unquantized signals the entities send at one step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlantOutputs {
    /// `output_scale · h(x)`.
    pub measured: Vec<BigRational>,
    /// `echo_scale · u_echo`.
    pub echo: Vec<BigRational>,
}

/// Measures the current state with the given scales.
pub fn measure(
    plant: &dyn PlantModel,
    state: &PlantState,
    echo: &[BigRational],
    output_scale: &BigRational,
    echo_scale: &BigRational,
) -> Result<PlantOutputs, PlantError> {
    let measured = plant.output(&state.x)?.into_iter().map(|v| v * output_scale).collect();
    let echo = echo.iter().map(|v| v * echo_scale).collect();
    Ok(PlantOutputs { measured, echo })
}

/// One step: outputs at `k` from `x(k)` and the echo, then `x(k+1)` from the actuation.
pub fn plant_step(
    plant: &dyn PlantModel,
    state: &PlantState,
    actuation: &[BigRational],
    echo: &[BigRational],
    output_scale: &BigRational,
    echo_scale: &BigRational,
) -> Result<(PlantState, PlantOutputs), PlantError> {
    let outputs = measure(plant, state, echo, output_scale, echo_scale)?;
    let x = plant.transition(&state.x, actuation)?;
    Ok((PlantState { x, k: state.k + 1 }, outputs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{example_plant, q};
    use crate::linalg::RatMatrix;
    use proptest::prelude::*;

    fn ints(v: &[i64]) -> Vec<BigRational> {
        v.iter().map(|&x| q(x, 1)).collect()
    }

    #[test]
    fn example_dynamics_by_hand() {
        let plant = LinearPlant::new(example_plant());
        let state = PlantState::new(ints(&[10, 20]));
        let u = vec![q(3, 2), q(-5, 4)];
        let (next, out) = plant_step(&plant, &state, &u, &ints(&[12, 23]), &q(1, 10), &q(1, 10)).unwrap();
        // x1+ = 10 + 20 + 0.5*1.5 = 30.75; x2+ = 20 + 1.5 - 1.25 = 20.25
        assert_eq!(next.x, vec![q(123, 4), q(81, 4)]);
        assert_eq!(next.k, 1);
        assert_eq!(out.measured, ints(&[1, 2]));
        assert_eq!(out.echo, vec![q(6, 5), q(23, 10)]);
    }

    #[test]
    fn identity_plant_without_input_is_constant() {
        let m = PlantMatrices::scalar_entities(RatMatrix::identity(2), RatMatrix::identity(2), RatMatrix::identity(2))
            .unwrap();
        let plant = LinearPlant::new(m);
        let mut state = PlantState::new(vec![q(7, 3), q(-1, 9)]);
        for _ in 0..5 {
            state = plant_step(&plant, &state, &ints(&[0, 0]), &[], &q(1, 1), &q(1, 1)).unwrap().0;
        }
        assert_eq!(state.x, vec![q(7, 3), q(-1, 9)]);
    }

    #[test]
    fn dimension_errors() {
        let plant = LinearPlant::new(example_plant());
        assert!(plant.transition(&ints(&[1]), &ints(&[0, 0])).is_err());
        assert!(plant.transition(&ints(&[1, 2]), &ints(&[0])).is_err());
    }

    #[test]
    fn alternative_models_step() {
        let sat = SaturatingPlant::new(LinearPlant::new(example_plant()), q(1, 1));
        let x = sat.transition(&ints(&[0, 0]), &ints(&[100, -100])).unwrap();
        assert_eq!(x, vec![q(1, 2), q(0, 1)]);
        let constant = ConstantPlant::new(ints(&[4, 5]), 2);
        assert_eq!(constant.transition(&ints(&[0, 0]), &ints(&[9, 9])).unwrap(), ints(&[4, 5]));
        assert_eq!(constant.output(&ints(&[1, 2])).unwrap(), ints(&[1, 2]));
    }

    fn small() -> impl Strategy<Value = BigRational> {
        (-50i64..50, 1i64..9).prop_map(|(n, d)| q(n, d))
    }

    proptest! {
        #[test]
        fn superposition(
            x1 in proptest::collection::vec(small(), 2),
            x2 in proptest::collection::vec(small(), 2),
            u1 in proptest::collection::vec(small(), 2),
            u2 in proptest::collection::vec(small(), 2),
        ) {
            let plant = LinearPlant::new(example_plant());
            let add = |a: &[BigRational], b: &[BigRational]| -> Vec<BigRational> {
                a.iter().zip(b).map(|(x, y)| x + y).collect()
            };
            let joint = plant.transition(&add(&x1, &x2), &add(&u1, &u2)).unwrap();
            let split = add(&plant.transition(&x1, &u1).unwrap(), &plant.transition(&x2, &u2).unwrap());
            prop_assert_eq!(joint, split);
        }
    }
}
