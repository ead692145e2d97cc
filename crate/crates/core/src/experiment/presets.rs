//! Reference models and noise specs used by the default configurations.

use crate::noise::NoiseSpec;
use crate::rde::{LinearModel, NonlinearModel, Nonlinearity};

/// Gaussian multiplicative noises every default configuration is checked
/// against. All have `D = 0.5` or `D = 2` and a bounded ratio
/// `exp(p^2 sum sigma_i^2 tau_i^2)` for `p <= 2`.
pub fn shipped_gaussian_specs() -> Vec<(&'static str, NoiseSpec)> {
    vec![
        ("ou", NoiseSpec::ou(1.0, 0.5)),
        (
            "ou_pair",
            NoiseSpec::superposition(&[(1.0, 1.0), (2.0, 0.25)]),
        ),
        (
            "geometric",
            NoiseSpec::geometric_superposition(0.25, 2.0, 4, 0.5, 0.5).expect("valid preset"),
        ),
    ]
}

/// `a = 1`, `zeta ~ OU(1, 0.5)` (so `D = 0.5`, critical exponent 2),
/// `phi ~ OU(0.5, 0.5)`.
pub fn reference_model(x0: f64) -> LinearModel {
    LinearModel {
        a: 1.0,
        multiplicative: NoiseSpec::ou(1.0, 0.5),
        additive: NoiseSpec::ou(0.5, 0.5),
        x0,
    }
}

/// The reference model without additive forcing, `X_t = x0 A_t`.
pub fn homogeneous_model(x0: f64) -> LinearModel {
    LinearModel {
        additive: NoiseSpec::Zero,
        ..reference_model(x0)
    }
}

/// Sine-modulated nonlinear counterpart of [`reference_model`].
pub fn reference_nonlinear(x0: f64) -> NonlinearModel {
    NonlinearModel {
        a: 1.0,
        multiplicative: NoiseSpec::ou(1.0, 0.5),
        envelope: NoiseSpec::ou(0.5, 0.5),
        nonlinearity: Nonlinearity::SinModulated,
        x0,
    }
}
