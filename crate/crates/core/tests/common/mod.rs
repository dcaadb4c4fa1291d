//! Shared instance builders for the integration tests.
#![allow(dead_code)]

use jiio_core::jiio::{jiio_solve, AugmentedState, Damping, Init, InputOptProblem, JiioConfig, JiioSolution};
use jiio_core::layer::{contraction_rescale, EquilibriumLayer, LayerKind, LayerParams};
use jiio_core::loss::{InnerLoss, OutputHead};
use jiio_core::rng::SeededRng;
use jiio_core::solver::SolverConfig;

pub fn random_layer(kind: LayerKind, n: usize, d: usize, gamma: f64, rng: &mut SeededRng) -> EquilibriumLayer {
    let raw = LayerParams::random(n, d, 0.9, 1.0, rng).unwrap();
    EquilibriumLayer::new(kind, contraction_rescale(&raw, gamma).unwrap())
}

/// Latent-fitting instance with an overdetermined head (`p ≥ d`), so the
/// optimum over `x` is isolated.
pub fn latent_instance(kind: LayerKind, n: usize, d: usize, p: usize, seed: u64) -> InputOptProblem {
    let mut rng = SeededRng::new(seed);
    let layer = random_layer(kind, n, d, 0.6, &mut rng);
    let head = OutputHead::random(p, n, &mut rng);
    let target = rng.normal_vec(p).iter().map(|v| 0.5 * v).collect();
    InputOptProblem::latent(layer, head, InnerLoss::squared(target)).unwrap()
}

/// Solves to a tight KKT residual, optionally warm-started.
pub fn solve_tight(problem: &InputOptProblem, warm: Option<&AugmentedState>) -> JiioSolution {
    let cfg = JiioConfig {
        damping: Damping::new(0.8, 0.6, 0.2),
        solver: SolverConfig::anderson(3000, 1e-13, 20),
        selection: 1.0,
    };
    let init = warm.map_or(Init::Zeros, |v| Init::Warm(v.clone()));
    jiio_solve(problem, &init, &cfg).unwrap()
}

/// Polishes `z` to the forward fixed point at the problem input for `x`, so
/// that losses evaluated at it carry no first-order solver error.
pub fn polish_forward(problem: &InputOptProblem, z: &[f64], x: &[f64]) -> Vec<f64> {
    let input = problem.layer_input(x);
    let mut z = z.to_vec();
    for _ in 0..2000 {
        let next = problem.layer.eval(&z, &input).unwrap();
        let change = next.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        z = next;
        if change == 0.0 {
            break;
        }
    }
    z
}
