//! Autograd against central finite differences in f64 on tiny models.

mod support;

use support::gradcheck::{self, GradReport};

fn ok(r: GradReport, min_checked: usize) {
    assert!(r.mismatches.is_empty(), "{:#?}", r.mismatches);
    assert!(r.checked >= min_checked, "only {} entries checked", r.checked);
}

#[test]
fn codec_gradients_match_finite_differences() {
    ok(gradcheck::codec(), 100);
}

#[test]
fn snr_module_gradients_match_finite_differences() {
    ok(gradcheck::snr_module(), 4 * 17);
}

#[test]
fn dncnn_gradients_match_finite_differences() {
    ok(gradcheck::dncnn(), 4 * 9);
}
