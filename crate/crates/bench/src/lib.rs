//! Fixtures shared by the benchmarks.

use l2relax::simulation::{gen_panel, DgpSpec};
use l2relax::{compute_gram, GramPair, TimePanel};

/// A strong-factor panel with `n` controls, `t1` training and 50 evaluation periods.
pub fn panel(n: usize, t1: usize) -> TimePanel {
    let spec: DgpSpec = "strong-homo".parse().expect("known design");
    gen_panel(spec, n, t1, 50, 11, 0)
        .expect("simulated panel")
        .panel
}

pub fn gram(n: usize, t1: usize) -> GramPair {
    compute_gram(&panel(n, t1)).expect("gram")
}
