//! Shared test data: the two-entity reference plant and its gains.

use num_rational::BigRational;

use crate::linalg::{IntMatrix, RatMatrix};
use crate::synthesis::{ControllerGains, PlantMatrices};

pub fn q(n: i64, d: i64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

pub fn example_plant() -> PlantMatrices {
    PlantMatrices::scalar_entities(
        RatMatrix::from_integers(&[&[1, 1], &[0, 1]]),
        RatMatrix::from_ratios(&[&[(1, 2), (0, 1)], &[(1, 1), (1, 1)]]),
        RatMatrix::identity(2),
    )
    .unwrap()
}

pub fn example_gains() -> ControllerGains {
    ControllerGains {
        output_scale: q(1, 10),
        echo_scale: q(1, 10),
        control_gain: IntMatrix::from_slices(&[&[20, -10], &[-65, -10]]),
        injection_gain: IntMatrix::from_slices(&[&[-10, -12], &[10, 20]]),
        observer_gain: IntMatrix::from_slices(&[&[30, 17], &[-55, -30]]),
    }
}

/// The two-entity reference run as a config file.
pub const EXAMPLE: &str = r#"
[grid]
n = 24
m = 6

[keys]
paillier_bits = 64
rsa_bits = 256

[plant]
a = [[1, 1], [0, 1]]
b = [["1/2", 0], [1, 1]]
c = [[1, 0], [0, 1]]

[gains]
output_scale = "1/10"
echo_scale = [1, 10]
control = [[20, -10], [-65, -10]]
injection = [[-10, -12], [10, 20]]
observer = [[30, 17], [-55, -30]]

[initial]
state = [10, 20]
controller = [12, 23]

[run]
horizon = 51
seed = 7
"#;
