// Shared fixtures for tests and the acceptance suite.

#pragma once

#include <cmath>

#include "netsurv/lifetable.hpp"
#include "netsurv/simulation.hpp"

namespace fixtures {

// Synthetic population mortality at realistic registry magnitudes:
// Gompertz-Makeham in age, a male/female split, and a mild secular
// improvement across calendar years. Spans every (age, year) a simulated
// patient can reach (diagnosis 1990-2010, ages 35-75, 15-year follow-up).
inline const netsurv::RateTable& sim_table() {
    static const netsurv::RateTable table = netsurv::RateTable::filled(
        0, 110, 1975, 2030, [](netsurv::Sex sex, int age, int year) {
            const double base = 5e-5 * std::exp(0.087 * age) + 6e-4;
            const double sex_factor = sex == netsurv::Sex::male ? 1.25 : 0.75;
            const double year_factor = std::exp(-0.004 * (year - 1995));
            return base * sex_factor * year_factor;
        });
    return table;
}

inline const netsurv::RateTable& zero_table() {
    static const netsurv::RateTable table = netsurv::RateTable::constant(0.0);
    return table;
}

// The desk-scale generation setup shared by the metric and test grids:
// excess ~ Exponential(mean 10), censoring ~ Exponential(mean 20) capped at
// 15 years, diagnosis uniform on 1990-2010, ages uniform on 35-75.
inline netsurv::ScenarioConfig metrics_config(std::size_t n, std::size_t reps,
                                              std::uint64_t seed) {
    netsurv::ScenarioConfig cfg;
    cfg.kind = netsurv::ScenarioConfig::Kind::metrics;
    cfg.n = n;
    cfg.reps = reps;
    cfg.seed = seed;
    cfg.groups = {netsurv::GroupSpec{"all", 10.0, 35.0, 75.0}};
    return cfg;
}

// Two equal groups of n/2. Scenario 1: identical age ranges; scenario 2:
// ages 35-65 versus 65-75. Excess means depend on the tested hypothesis.
inline netsurv::ScenarioConfig logrank_config(int scenario, double mean_a, double mean_b,
                                              std::size_t n, std::size_t reps,
                                              std::uint64_t seed) {
    netsurv::ScenarioConfig cfg;
    cfg.kind = netsurv::ScenarioConfig::Kind::logrank;
    cfg.n = n;
    cfg.reps = reps;
    cfg.seed = seed;
    if (scenario == 1) {
        cfg.groups = {netsurv::GroupSpec{"A", mean_a, 35.0, 75.0},
                      netsurv::GroupSpec{"B", mean_b, 35.0, 75.0}};
    } else {
        cfg.groups = {netsurv::GroupSpec{"A", mean_a, 35.0, 65.0},
                      netsurv::GroupSpec{"B", mean_b, 65.0, 75.0}};
    }
    return cfg;
}

} // namespace fixtures
