//! Analytic gradients against central finite differences on a tiny config.

mod common;

use common::grads::{self, Named, TOL};

fn assert_within_tolerance(checks: Named) {
    for (name, c) in checks {
        assert!(c.entries > 0, "{name}: no parameters checked");
        assert!(c.max_rel_error < TOL, "{name}: relative error {} at {:?}", c.max_rel_error, c.worst);
    }
}

#[test]
fn encoder() {
    assert_within_tolerance(grads::encoder_probe());
}

#[test]
fn decoder_in_every_feedback_mode() {
    assert_within_tolerance(grads::decoder_probes());
}

#[test]
fn discriminator_logits_and_features() {
    assert_within_tolerance(grads::discriminator_probe());
}

#[test]
fn recurrent_generator_and_classifier() {
    assert_within_tolerance(grads::generator_and_classifier_probes());
}

#[test]
fn physiogan_generator_terms() {
    assert_within_tolerance(grads::physiogan_terms());
}

#[test]
fn discriminator_and_baseline_objectives() {
    assert_within_tolerance(grads::baseline_objectives());
}
