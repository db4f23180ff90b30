//! Fixtures shared by the benchmarks.

use drbayes::simulation::generate;
use drbayes::{Dataset, Design, DesignSpec, Purpose, StreamKey};

/// One Design I sample of size `n` with `p` covariates.
pub fn design_one(n: usize, p: usize, seed: u64) -> Dataset {
    let spec = DesignSpec::new(Design::I, n, p, seed).expect("valid design");
    generate(&spec, &mut StreamKey::new(seed).stream(Purpose::Data, 0)).expect("generation succeeds")
}
