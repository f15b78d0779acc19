//! Fixtures shared by the benchmarks in `benches/`.

use glmm_mispredict::rng::stream;
use glmm_mispredict::simlab::{find_scenario, generate};
use glmm_mispredict::{Dataset, Theta};

/// Data set and true parameter for a catalog scenario, drawn with a fixed seed.
pub fn scenario_data(name: &str) -> (Dataset, Theta) {
    let s = find_scenario(name).expect("catalog scenario");
    let data = generate(&s, &mut stream(2024, "bench", 0)).expect("generate");
    (data.dataset, s.truth_theta().expect("truth"))
}
