#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "netsurv/simulation.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace netsurv;
using Catch::Matchers::WithinAbs;

TEST_CASE("cohort generation is deterministic per (seed, replicate)", "[simulation]") {
    auto cfg = fixtures::metrics_config(200, 1, 12);
    const auto spec = CopulaSpec::from_tau(CopulaFamily::frank, 0.3);
    const auto a = generate_cohort(cfg, fixtures::sim_table(), spec, 3);
    const auto b = generate_cohort(cfg, fixtures::sim_table(), spec, 3);
    const auto c = generate_cohort(cfg, fixtures::sim_table(), spec, 4);
    REQUIRE(a.size() == 200);
    bool same = true, diff = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        same = same && a.patients[i].time == b.patients[i].time &&
               a.patients[i].status == b.patients[i].status &&
               a.patients[i].demo.age_at_diagnosis == b.patients[i].demo.age_at_diagnosis;
        diff = diff || a.patients[i].time != c.patients[i].time;
    }
    REQUIRE(same);
    REQUIRE(diff);
    REQUIRE(a.latent.has_value());
    for (std::size_t i = 0; i < a.size(); ++i) {
        const auto& p = a.patients[i];
        const auto& lat = *a.latent;
        REQUIRE(p.time ==
                std::min({lat.excess_time[i], lat.population_time[i], lat.censor_time[i]}));
        REQUIRE(p.status == (std::min(lat.excess_time[i], lat.population_time[i]) <=
                                     lat.censor_time[i]
                                 ? 1
                                 : 0));
    }
}

TEST_CASE("uncensored excess-only generation matches the exponential law", "[simulation]") {
    // independence, zero population hazard, no random censoring: T = E up to
    // the administrative cut, so P(T > 5) = exp(-0.5)
    auto cfg = fixtures::metrics_config(10000, 1, 99);
    cfg.censor_mean = 0.0;
    const auto cohort = generate_cohort(cfg, fixtures::zero_table(), CopulaSpec::independence(), 0);
    double alive = 0.0;
    for (const auto& p : cohort.patients) alive += p.time > 5.0 ? 1.0 : 0.0;
    const double expected = std::exp(-0.5);
    const double se = std::sqrt(expected * (1.0 - expected) / 10000.0);
    REQUIRE_THAT(alive / 10000.0, WithinAbs(expected, 3.0 * se));
}

TEST_CASE("censoring fraction sits near one third", "[simulation]") {
    auto cfg = fixtures::metrics_config(10000, 1, 7);
    const auto cohort = generate_cohort(cfg, fixtures::sim_table(), CopulaSpec::independence(), 0);
    double censored = 0.0;
    for (const auto& p : cohort.patients) censored += p.status == 0 ? 1.0 : 0.0;
    REQUIRE_THAT(censored / 10000.0, WithinAbs(1.0 / 3.0, 0.05));
}

TEST_CASE("joint tail of (E, P) follows the survival copula", "[simulation][heavy]") {
    const auto spec = CopulaSpec::from_tau(CopulaFamily::clayton, 0.3);
    auto cfg = fixtures::metrics_config(10000, 1, 31);
    const auto cohort = generate_cohort(cfg, fixtures::sim_table(), spec, 0);
    const auto& lat = *cohort.latent;

    // expected P(E>5, P>5) averaged over demographics
    double expected = 0.0, observed = 0.0;
    const double se5 = std::exp(-0.5);
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        const auto path = hazard_path(fixtures::sim_table(), cohort.patients[i].demo, 16.0);
        expected += copula_cdf(spec, {se5, population_survival(path, 5.0)});
        observed += lat.excess_time[i] > 5.0 && lat.population_time[i] > 5.0 ? 1.0 : 0.0;
    }
    expected /= static_cast<double>(cohort.size());
    observed /= static_cast<double>(cohort.size());
    const double se = std::sqrt(expected * (1.0 - expected) / static_cast<double>(cohort.size()));
    REQUIRE_THAT(observed, WithinAbs(expected, 3.0 * se));
}

TEST_CASE("metric grid shape, determinism, and degenerate edges", "[simulation]") {
    auto cfg = fixtures::metrics_config(60, 4, 2025);
    cfg.true_copulas = {CopulaSpec::independence(), CopulaSpec::from_tau(CopulaFamily::frank, 0.3)};
    cfg.hyp_copulas = {CopulaSpec::independence(), CopulaSpec::from_tau(CopulaFamily::clayton, -0.3)};
    cfg.eval_times = {5.0, 15.0};
    cfg.threads = 2;

    const auto grid = run_metric_grid(cfg, fixtures::sim_table());
    REQUIRE(grid.rows.size() == 2 * 2 * 2);
    for (const auto& row : grid.rows) {
        REQUIRE(row.reps == 4);
        REQUIRE(row.failures == 0);
        REQUIRE(row.ecr >= 0.0);
        REQUIRE(row.ecr <= 1.0);
        REQUIRE(row.rmse >= std::abs(row.bias) - 1e-12);
        REQUIRE(std::isfinite(row.bias));
    }

    const auto again = run_metric_grid(cfg, fixtures::sim_table());
    for (std::size_t i = 0; i < grid.rows.size(); ++i) {
        REQUIRE(grid.rows[i].bias == again.rows[i].bias);
        REQUIRE(grid.rows[i].rmse == again.rows[i].rmse);
        REQUIRE(grid.rows[i].ecr == again.rows[i].ecr);
    }

    SECTION("a single replicate emits NaN-free metrics with binary coverage") {
        auto one = fixtures::metrics_config(50, 1, 8);
        one.true_copulas = {CopulaSpec::independence()};
        one.hyp_copulas = {CopulaSpec::independence()};
        one.eval_times = {5.0};
        const auto g1 = run_metric_grid(one, fixtures::sim_table());
        REQUIRE(g1.rows.size() == 1);
        REQUIRE(std::isfinite(g1.rows[0].bias));
        REQUIRE(std::isfinite(g1.rows[0].rmse));
        REQUIRE((g1.rows[0].ecr == 0.0 || g1.rows[0].ecr == 1.0));
    }

    SECTION("curve ratios are emitted when requested") {
        auto c = fixtures::metrics_config(50, 2, 8);
        c.true_copulas = {CopulaSpec::independence()};
        c.hyp_copulas = {CopulaSpec::independence()};
        c.eval_times = {5.0};
        c.emit_curves = true;
        c.curve_step = 5.0;
        const auto g = run_metric_grid(c, fixtures::sim_table());
        REQUIRE(g.curves.size() == 2u * 3u);  // 2 reps x t in {5, 10, 15}
        for (const auto& pt : g.curves) REQUIRE(pt.ratio > 0.0);
    }
}

TEST_CASE("test grid produces calibrated-looking output and is deterministic", "[simulation]") {
    auto cfg = fixtures::logrank_config(1, 5.0, 5.0, 80, 3, 501);
    cfg.true_copulas = {CopulaSpec::independence()};
    cfg.hyp_copulas = {CopulaSpec::independence()};
    cfg.eval_times = {10.0, 15.0};
    cfg.threads = 2;

    const auto grid = run_test_grid(cfg, fixtures::sim_table());
    REQUIRE(grid.cells.size() == 2);
    for (const auto& cell : grid.cells) {
        REQUIRE(cell.reps == 3);
        REQUIRE(cell.rate >= 0.0);
        REQUIRE(cell.rate <= 1.0);
        REQUIRE(cell.ci_half >= 0.0);
    }
    REQUIRE(grid.p_values.size() == 2 * 3);
    for (const auto& pv : grid.p_values) {
        REQUIRE(pv.p >= 0.0);
        REQUIRE(pv.p <= 1.0);
    }

    const auto again = run_test_grid(cfg, fixtures::sim_table());
    for (std::size_t i = 0; i < grid.p_values.size(); ++i)
        REQUIRE(grid.p_values[i].p == again.p_values[i].p);

    REQUIRE_THROWS_AS(run_metric_grid(cfg, fixtures::sim_table()), std::invalid_argument);
}

TEST_CASE("oracle and observable tests usually agree when well specified",
          "[simulation][heavy]") {
    const auto spec = CopulaSpec::from_tau(CopulaFamily::clayton, 0.3);
    auto cfg = fixtures::logrank_config(2, 5.0, 5.0, 300, 1, 888);
    std::size_t agree = 0;
    const std::size_t reps = 40;
    for (std::size_t rep = 0; rep < reps; ++rep) {
        const auto cohort = generate_cohort(cfg, fixtures::sim_table(), spec, rep);
        const auto mesh = build_mesh(cohort, 15.0);
        const auto obs =
            logrank_observable(cohort, fixtures::sim_table(), spec, mesh, 15.0);
        const auto orc = logrank_oracle(cohort, fixtures::sim_table(), mesh, 15.0);
        if ((obs.p_value < 0.05) == (orc.p_value < 0.05)) ++agree;
    }
    REQUIRE(agree >= reps * 9 / 10);
}

TEST_CASE("equal-strength family mismatch keeps the level acceptable when groups share "
          "demographics", "[simulation][heavy]") {
    // With identical population mortality in both groups, a wrong copula
    // family at the right Kendall tau biases both group fits the same way,
    // so the type-1 error stays near the nominal level.
    auto cfg = fixtures::logrank_config(1, 5.0, 5.0, 500, 200, 271828);
    cfg.true_copulas = {CopulaSpec::from_tau(CopulaFamily::frank, 0.3)};
    cfg.hyp_copulas = {CopulaSpec::from_tau(CopulaFamily::clayton, 0.3)};
    cfg.eval_times = {15.0};
    const auto grid = run_test_grid(cfg, fixtures::sim_table());
    INFO("rejection " << grid.cells.front().rate);
    REQUIRE(grid.cells.front().rate >= 0.02);
    REQUIRE(grid.cells.front().rate <= 0.10);
}

TEST_CASE("well-specified p-values are close to uniform", "[simulation][heavy]") {
    // Scenario-2 style groups (different population mortality), matched
    // copulas: the null p-value distribution should pass a 1% KS test.
    const auto spec = CopulaSpec::from_tau(CopulaFamily::clayton, 0.3);
    auto cfg = fixtures::logrank_config(2, 5.0, 5.0, 500, 400, 31337);
    cfg.true_copulas = {spec};
    cfg.hyp_copulas = {spec};
    cfg.eval_times = {15.0};
    const auto grid = run_test_grid(cfg, fixtures::sim_table());
    std::vector<double> pvals;
    for (const auto& pv : grid.p_values) pvals.push_back(pv.p);
    REQUIRE(pvals.size() == 400);
    const double ks = oracle::ks_uniform_distance(pvals);
    INFO("KS distance " << ks);
    REQUIRE(ks < 1.628 / std::sqrt(400.0));
}

TEST_CASE("scenario files parse into configs", "[simulation]") {
    const std::string text = R"(# a small scenario
kind = logrank
n = 500
reps = 400
seed = 31337
censor_mean = 20
admin_cut = 15
diagnosis = 1990 2010
times = 5 10 15
alpha = 0.05
true_copulas = clayton(tau=0.3), frank(tau=-0.3)
hyp_copulas = indep
group = A mean=5 age=35:65
group = B mean=5 age=65:75
)";
    std::istringstream in(text);
    const auto cfg = parse_scenario(in);
    REQUIRE(cfg.kind == ScenarioConfig::Kind::logrank);
    REQUIRE(cfg.n == 500);
    REQUIRE(cfg.reps == 400);
    REQUIRE(cfg.seed == 31337);
    REQUIRE(cfg.true_copulas.size() == 2);
    REQUIRE(cfg.true_copulas[0].family == CopulaFamily::clayton);
    REQUIRE(cfg.hyp_copulas.size() == 1);
    REQUIRE(cfg.eval_times == std::vector<double>{5.0, 10.0, 15.0});
    REQUIRE(cfg.groups.size() == 2);
    REQUIRE(cfg.groups[1].label == "B");
    REQUIRE(cfg.groups[1].age_lo == 65.0);

    SECTION("errors carry line context") {
        std::istringstream bad("kind = metrics\nbogus_key = 3\n");
        REQUIRE_THROWS_WITH(parse_scenario(bad), Catch::Matchers::ContainsSubstring("line 2"));
        std::istringstream nokind("n = 10\ntrue_copulas = indep\nhyp_copulas = indep\n");
        REQUIRE_THROWS_AS(parse_scenario(nokind), std::invalid_argument);
        std::istringstream badgroup("kind = metrics\ngroup = A mean=5\n");
        REQUIRE_THROWS_AS(parse_scenario(badgroup), std::invalid_argument);
    }
}
