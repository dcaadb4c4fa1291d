//! L2 adversarial attacks on DEQ classifiers and adversarial training.

use crate::baselines::{deq_loss_grad, forward_solve, pgd_attack, AdjointConfig};
use crate::error::{Error, Result};
use crate::jiio::{jiio_solve, ConstraintSet, Damping, Init, InputOptProblem, JiioConfig, JiioSolution, DEFAULT_SELECTION};
use crate::loss::{loss_eval, InnerLoss};
use crate::outer::{grad_theta_reuse, OuterLoss};
use crate::solver::{EvalCounters, SolverConfig};

use super::data::Dataset;
use super::model::{train_loop, ItemGrad, Model, TrainConfig, TrainOutcome};

/// One-hot encoding of `label` over `classes`.
pub fn one_hot(label: usize, classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; classes];
    v[label] = 1.0;
    v
}

/// How perturbations are computed.
#[derive(Debug, Clone, PartialEq)]
pub enum Adversary {
    /// Joint solve over `(z, μ, δ)`.
    Jiio(JiioConfig),
    /// Sequential projected gradient ascent.
    Pgd { steps: usize, step_size: f64 },
}

impl Adversary {
    /// The joint attack with adversarial damping, Anderson memory 20 and an
    /// 80-iteration budget.
    pub fn jiio_default() -> Self {
        Adversary::Jiio(JiioConfig {
            damping: Damping::adversarial(),
            solver: SolverConfig::anderson(80, 1e-10, 20),
            selection: DEFAULT_SELECTION,
        })
    }

    /// 20 projected steps of length `eps / 4`.
    pub fn pgd_default(eps: f64) -> Self {
        Adversary::Pgd {
            steps: 20,
            step_size: eps / 4.0,
        }
    }
}

/// Settings for classifier forward solves.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub forward: SolverConfig,
    pub adjoint: AdjointConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            forward: SolverConfig::anderson(100, 1e-10, 10),
            adjoint: AdjointConfig::default(),
        }
    }
}

/// Perturbation `δ*` with `‖δ*‖₂ ≤ eps` maximizing the cross-entropy at
/// `x + δ`, from the joint solve.
pub fn jiio_attack(
    model: &Model,
    x: &[f64],
    label: &[f64],
    eps: f64,
    cfg: &JiioConfig,
) -> Result<(Vec<f64>, JiioSolution)> {
    let problem = attack_problem(model, x, label, eps)?;
    let sol = jiio_solve(&problem, &Init::Zeros, cfg)?;
    Ok((sol.state.x.clone(), sol))
}

fn attack_problem(model: &Model, x: &[f64], label: &[f64], eps: f64) -> Result<InputOptProblem> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!("attack radius must be nonnegative, got {eps}")));
    }
    InputOptProblem::perturbation(
        model.layer.clone(),
        model.head.clone(),
        InnerLoss::cross_entropy(label.to_vec()).negated(),
        x.to_vec(),
        ConstraintSet::l2_ball(x.len(), eps),
    )
}

/// Perturbation from `adversary`; `δ = 0` when `eps == 0`.
pub fn attack(
    model: &Model,
    x: &[f64],
    label: &[f64],
    eps: f64,
    adversary: &Adversary,
    classifier: &ClassifierConfig,
) -> Result<Vec<f64>> {
    if eps == 0.0 {
        return Ok(vec![0.0; x.len()]);
    }
    match adversary {
        Adversary::Jiio(cfg) => Ok(jiio_attack(model, x, label, eps, cfg)?.0),
        Adversary::Pgd { steps, step_size } => Ok(pgd_attack(
            &model.layer,
            &model.head,
            x,
            label,
            eps,
            *steps,
            *step_size,
            &classifier.forward,
        )?
        .0),
    }
}

/// Cross-entropy of the classifier at `input` and whether its argmax is
/// `label`.
pub fn classify(model: &Model, input: &[f64], label: usize, cfg: &ClassifierConfig) -> Result<(f64, bool)> {
    let (z, _) = forward_solve(&model.layer, input, None, &cfg.forward)?;
    let logits = model.head.apply(&z)?;
    let loss = loss_eval(
        &InnerLoss::cross_entropy(one_hot(label, logits.len())),
        &model.head,
        &z,
    )?;
    let best = logits
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i);
    Ok((loss, best == label))
}

/// Mean attacked cross-entropy and accuracy under attack over `dataset`.
pub fn robust_eval(
    model: &Model,
    dataset: &Dataset,
    eps: f64,
    adversary: &Adversary,
    cfg: &ClassifierConfig,
) -> Result<(f64, f64)> {
    let labels = labels_of(dataset)?;
    let classes = model.output_dim();
    use rayon::prelude::*;
    let results: Vec<Result<(f64, bool)>> = (0..dataset.len())
        .into_par_iter()
        .map(|i| {
            let x = &dataset.items[i];
            let delta = attack(model, x, &one_hot(labels[i], classes), eps, adversary, cfg)?;
            let input: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + b).collect();
            classify(model, &input, labels[i], cfg)
        })
        .collect();
    let (mut loss, mut correct) = (0.0, 0usize);
    for r in results {
        let (l, ok) = r?;
        loss += l;
        correct += ok as usize;
    }
    let count = dataset.len().max(1) as f64;
    Ok((loss / count, correct as f64 / count))
}

fn labels_of(dataset: &Dataset) -> Result<&[usize]> {
    dataset
        .labels
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("classification needs a labeled dataset".into()))
}

/// Trains the classifier on `x + δ(x)` with `δ` from `adversary` (clean
/// training when `adversary` is `None` or `eps == 0`).
///
/// With the joint adversary the gradient reuses the attack's dual under the
/// negated loss; with PGD it is the standard implicit gradient at the
/// perturbed input.
pub fn adv_train(
    dataset: &Dataset,
    eps: f64,
    model: Model,
    cfg: &TrainConfig,
    adversary: Option<&Adversary>,
    classifier: &ClassifierConfig,
) -> Result<TrainOutcome> {
    let labels = labels_of(dataset)?;
    let classes = model.output_dim();
    train_loop(dataset.len(), model, cfg, |model, idx, _rng| {
        let x = &dataset.items[idx];
        let label = one_hot(labels[idx], classes);
        let mut counters = EvalCounters::default();
        match adversary {
            Some(Adversary::Jiio(jcfg)) if eps > 0.0 => {
                let problem = attack_problem(model, x, &label, eps)?;
                let sol = jiio_solve(&problem, &Init::Zeros, jcfg)?;
                let grad = grad_theta_reuse(&problem, &sol.state, &OuterLoss::NegOfInner)?;
                Ok(ItemGrad {
                    loss: -sol.cost(),
                    reg: 0.0,
                    grad,
                    counters: sol.counters(),
                })
            }
            _ => {
                let delta = match adversary {
                    Some(adv) => attack(model, x, &label, eps, adv, classifier)?,
                    None => vec![0.0; x.len()],
                };
                let input: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + b).collect();
                let loss = InnerLoss::cross_entropy(label);
                let (value, grad, _) = deq_loss_grad(
                    &model.layer,
                    &model.head,
                    &loss,
                    &input,
                    &classifier.forward,
                    &classifier.adjoint,
                    &mut counters,
                )?;
                Ok(ItemGrad {
                    loss: value,
                    reg: 0.0,
                    grad,
                    counters,
                })
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::LayerKind;
    use crate::linalg::norm2;
    use crate::tasks::data::spirals;

    fn classifier() -> Model {
        Model::random(LayerKind::Tanh, 8, 2, 2, 0.6, 11).unwrap()
    }

    #[test]
    fn zero_radius_gives_zero_perturbation() {
        let m = classifier();
        let (delta, _) = jiio_attack(&m, &[0.3, -0.2], &[1.0, 0.0], 0.0, &JiioConfig::latent(20)).unwrap();
        assert_eq!(delta, vec![0.0, 0.0]);
    }

    #[test]
    fn attacks_are_feasible_and_raise_the_loss() {
        let m = classifier();
        let data = spirals(10, 3);
        let cfg = ClassifierConfig::default();
        for (x, &l) in data.items.iter().zip(data.labels.as_ref().unwrap()) {
            let label = one_hot(l, 2);
            let (clean, _) = classify(&m, x, l, &cfg).unwrap();
            for adv in [Adversary::jiio_default(), Adversary::pgd_default(0.3)] {
                let delta = attack(&m, x, &label, 0.3, &adv, &cfg).unwrap();
                assert!(norm2(&delta) <= 0.3 + 1e-12);
                let input: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + b).collect();
                let (attacked, _) = classify(&m, &input, l, &cfg).unwrap();
                assert!(attacked >= clean - 1e-9, "{attacked} < {clean}");
            }
        }
    }

    #[test]
    fn zero_radius_training_equals_clean_training() {
        let data = spirals(8, 4);
        let cfg = TrainConfig {
            steps: 3,
            batch: 4,
            ..TrainConfig::default()
        };
        let c = ClassifierConfig::default();
        let clean = adv_train(&data, 0.0, classifier(), &cfg, None, &c).unwrap();
        for adv in [Adversary::jiio_default(), Adversary::pgd_default(0.1)] {
            let other = adv_train(&data, 0.0, classifier(), &cfg, Some(&adv), &c).unwrap();
            assert_eq!(clean.trajectory, other.trajectory);
        }
    }
}
