mod common;

use gatebench::gradcheck::{check_gradients_against, check_model_gradients, finite_diff, DEFAULT_EPSILON};
use gatebench::model::{bptt, sequence_nll, SequenceModel};
use gatebench::params::Parameters;
use gatebench::Execution;

use common::{grad_combos, grad_instance, GRAD_SEEDS};

/// Relative agreement, with an absolute allowance for the roundoff of a
/// central difference at this epsilon.
fn agrees(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-5 * a.abs().max(b.abs()) + 1e-9
}

#[test]
fn bptt_matches_finite_differences_on_every_combination() {
    for (kind, head, variant) in grad_combos() {
        for seed in 0..GRAD_SEEDS {
            let (model, item) = grad_instance(kind, head, variant, seed);
            let (analytic, _) = bptt(&model, &item).unwrap();
            let numeric = finite_diff(
                |m: &SequenceModel| sequence_nll(m, &item),
                &model,
                DEFAULT_EPSILON,
                Execution::default(),
            )
            .unwrap();
            for (a, n) in analytic.tensors().iter().zip(numeric.tensors()) {
                for (i, (&x, &y)) in a.values.iter().zip(n.values).enumerate() {
                    assert!(
                        agrees(x, y),
                        "{kind}/{}/{} seed {seed}: {}[{i}] analytic {x:e} numeric {y:e}",
                        head.name(),
                        variant.as_str(),
                        a.name
                    );
                }
            }
        }
    }
}

#[test]
fn large_gradient_entries_meet_the_relative_bound() {
    for (kind, head, variant) in grad_combos() {
        for seed in 0..GRAD_SEEDS {
            let (model, item) = grad_instance(kind, head, variant, seed);
            let (analytic, _) = bptt(&model, &item).unwrap();
            let report = check_gradients_against(&model, &item, &analytic, DEFAULT_EPSILON, Execution::default()).unwrap();
            assert!(report.num_checked > 0);
            // every offender is an entry too small for the difference quotient to resolve
            if !report.passes(1e-5) {
                assert!(report.worst_analytic.abs() < 1e-4, "{:?}", report.worst_parameter);
            }
            let via_model = check_model_gradients(&model, &item, DEFAULT_EPSILON).unwrap();
            assert_eq!(via_model.violations(1e-5, 1e-9), 0);
        }
    }
}
