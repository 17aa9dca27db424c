//! Analytic loss gradients against central finite differences.

mod support;

use support::{gradient_errors, GradInstance};

const EPS: f64 = 1e-4;

#[test]
fn every_term_matches_finite_differences() {
    let mut saw_norm = false;
    let mut saw_plane = false;
    for seed in 0..20 {
        let inst = GradInstance::new(seed);
        let e = gradient_errors(&inst, EPS);
        println!("seed {seed}: {e:?}");
        assert!(e.norm < 1e-4, "normal loss, seed {seed}: {}", e.norm);
        assert!(e.plane < 1e-4, "co-planar loss, seed {seed}: {}", e.plane);
        assert!(e.smooth < 1e-4, "smoothness, seed {seed}: {}", e.smooth);
        assert!(e.photo < 1e-3, "photometric, seed {seed}: {}", e.photo);
        assert!(e.total < 1e-4, "total, seed {seed}: {}", e.total);
        saw_norm |= e.active_norm;
        saw_plane |= e.active_plane;
    }
    assert!(saw_norm && saw_plane, "structural terms never active");
}
