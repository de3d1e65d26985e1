// Simulation harness: dependent-competing-risks cohort generation with known
// ground truth, the (true copula x hypothesized copula) metric grid, and the
// two-group log-rank rejection grids.
//
// Generation follows the survival-copula model: (U_E, U_P) is drawn from the
// true copula C0 and mapped through the inverse survival functions,
//   E = -mu * log(U_E),   P = S_P^{-1}(U_P) from the rate table,
// so that P(E > s, P > t) = C0(S_E(s), S_P(t)). Censoring is an independent
// exponential capped by an administrative cut.
//
// Every random draw is keyed by (seed, replicate, patient), so grids are
// bit-reproducible regardless of how work is scheduled across threads.

#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "netsurv/cohort.hpp"
#include "netsurv/copula.hpp"
#include "netsurv/estimator.hpp"
#include "netsurv/inference.hpp"
#include "netsurv/lifetable.hpp"
#include "netsurv/parallel.hpp"
#include "netsurv/rng.hpp"

namespace netsurv {

struct GroupSpec {
    std::string label = "all";
    double excess_mean = 10.0;  // mean of the exponential excess law, years
    double age_lo = 35.0, age_hi = 75.0;
};

struct ScenarioConfig {
    enum class Kind { metrics, logrank };

    Kind kind = Kind::metrics;
    std::size_t n = 500;
    std::size_t reps = 200;
    std::uint64_t seed = 1;
    double censor_mean = 20.0;  // <= 0 disables random censoring
    double admin_cut = 15.0;    // administrative censoring horizon, years
    double diag_lo = 1990.0, diag_hi = 2010.0;
    std::vector<CopulaSpec> true_copulas;
    std::vector<CopulaSpec> hyp_copulas;
    std::vector<double> eval_times{5.0, 10.0, 15.0};
    std::vector<GroupSpec> groups{GroupSpec{}};
    double alpha = 0.05;
    double mesh_step_days = 1.0;
    int threads = 0;
    bool emit_curves = false;
    double curve_step = 0.25;  // years between emitted ratio-curve points

    void validate() const {
        if (n < 1 || reps < 1) throw std::invalid_argument("scenario: n and reps must be >= 1");
        if (!(admin_cut > 0.0)) throw std::invalid_argument("scenario: admin_cut must be > 0");
        if (true_copulas.empty() || hyp_copulas.empty())
            throw std::invalid_argument("scenario: need true_copulas and hyp_copulas");
        if (groups.empty()) throw std::invalid_argument("scenario: need at least one group");
        for (const auto& g : groups) {
            if (!(g.excess_mean > 0.0))
                throw std::invalid_argument("scenario: group excess mean must be > 0");
            if (!(g.age_hi >= g.age_lo) || g.age_lo < 0.0)
                throw std::invalid_argument("scenario: bad group age range");
        }
        if (kind == Kind::metrics && groups.size() != 1)
            throw std::invalid_argument("scenario: metrics runs use a single group");
        if (kind == Kind::logrank && groups.size() < 2)
            throw std::invalid_argument("scenario: log-rank runs need >= 2 groups");
        for (double t : eval_times)
            if (t <= 0.0 || t > admin_cut + 1e-12)
                throw std::invalid_argument("scenario: eval times must lie in (0, admin_cut]");
        if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("scenario: alpha in (0,1)");
    }
};

// One simulated dataset with latent truth attached. Patients are assigned to
// the configured groups in equal contiguous blocks.
inline Cohort generate_cohort(const ScenarioConfig& config, const RateTable& table,
                              const CopulaSpec& true_copula, std::uint64_t rep_index) {
    const std::size_t n = config.n;
    const std::size_t G = config.groups.size();
    const double horizon = config.admin_cut + 1.0;

    Cohort cohort;
    cohort.patients.resize(n);
    LatentTruth latent;
    latent.true_copula = true_copula;
    latent.excess_time.resize(n);
    latent.population_time.resize(n);
    latent.censor_time.resize(n);
    latent.excess_mean.resize(n);

    const CounterRng root = CounterRng(config.seed).derive(rep_index);
    for (std::size_t i = 0; i < n; ++i) {
        CounterRng rng = root.derive(i);
        const GroupSpec& grp = config.groups[i * G / n];

        PatientRecord& p = cohort.patients[i];
        p.demo.sex = rng.bernoulli(0.5) ? Sex::male : Sex::female;
        p.demo.diagnosis_date = rng.uniform(config.diag_lo, config.diag_hi);
        p.demo.age_at_diagnosis = rng.uniform(grp.age_lo, grp.age_hi);
        if (G > 1) p.group = grp.label;

        const UnitPair uv = sample_pair(true_copula, rng);
        const double e_time = -grp.excess_mean * std::log(uv.u);
        const auto path = hazard_path(table, p.demo, horizon);
        const double p_time = sample_population_time(path, uv.v);
        const double c_raw =
            config.censor_mean > 0.0 ? rng.exponential(config.censor_mean) : config.admin_cut;
        const double c_time = std::min(c_raw, config.admin_cut);

        p.time = std::min(std::min(e_time, p_time), c_time);
        p.status = std::min(e_time, p_time) <= c_time ? 1 : 0;

        latent.excess_time[i] = e_time;
        latent.population_time[i] = p_time;
        latent.censor_time[i] = c_time;
        latent.excess_mean[i] = grp.excess_mean;
    }
    cohort.latent = std::move(latent);
    return cohort;
}

// ---- metric grid -----------------------------------------------------------

struct MetricsRow {
    std::string true_copula, hyp_copula;
    double t = 0.0;
    double bias = 0.0, rmse = 0.0, ecr = 0.0;
    std::size_t reps = 0, n = 0;
    std::size_t failures = 0;
    bool flagged = false;  // more than 5% of fits failed in the cell
};

struct CurvePoint {
    std::string true_copula, hyp_copula;
    std::uint64_t rep = 0;
    double t = 0.0;
    double ratio = 0.0;  // estimated survival over the true one
};

struct MetricsGridResult {
    std::vector<MetricsRow> rows;
    std::vector<CurvePoint> curves;
};

inline MetricsGridResult run_metric_grid(const ScenarioConfig& config, const RateTable& table) {
    config.validate();
    if (config.kind != ScenarioConfig::Kind::metrics)
        throw std::invalid_argument("metric grid: scenario kind must be metrics");
    const std::size_t R = config.true_copulas.size();
    const std::size_t Hn = config.hyp_copulas.size();
    const std::size_t N = config.reps;
    const double mu = config.groups[0].excess_mean;
    const std::size_t nt = config.eval_times.size();

    std::vector<double> curve_times;
    if (config.emit_curves)
        for (double t = config.curve_step; t <= config.admin_cut + 1e-12; t += config.curve_step)
            curve_times.push_back(t);

    // slot per (row, hyp, rep): survival and sd at each eval time, or failure
    struct Slot {
        std::vector<double> s, sd, curve;
        bool failed = false;
    };
    std::vector<Slot> slots(R * Hn * N);

    SolverConfig inner;
    inner.threads = 1;
    detail::parallel_for(R * N, config.threads, [&](std::size_t item) {
        const std::size_t row = item / N, rep = item % N;
        const Cohort cohort = generate_cohort(config, table, config.true_copulas[row], rep);
        const Mesh mesh = build_mesh(cohort, config.admin_cut, config.mesh_step_days);
        for (std::size_t hyp = 0; hyp < Hn; ++hyp) {
            Slot& slot = slots[(row * Hn + hyp) * N + rep];
            try {
                const auto fit =
                    fit_generalized(cohort, table, config.hyp_copulas[hyp], mesh, inner);
                slot.s.resize(nt);
                slot.sd.resize(nt);
                for (std::size_t j = 0; j < nt; ++j) {
                    slot.s[j] = fit.survival_at(config.eval_times[j]);
                    slot.sd[j] = fit.sd_at(config.eval_times[j]);
                }
                for (double t : curve_times)
                    slot.curve.push_back(fit.survival_at(t) / std::exp(-t / mu));
            } catch (const std::exception&) {
                slot.failed = true;
            }
        }
    });

    MetricsGridResult out;
    for (std::size_t row = 0; row < R; ++row)
        for (std::size_t hyp = 0; hyp < Hn; ++hyp) {
            std::size_t failures = 0;
            for (std::size_t rep = 0; rep < N; ++rep)
                failures += slots[(row * Hn + hyp) * N + rep].failed ? 1 : 0;
            for (std::size_t j = 0; j < nt; ++j) {
                const double t = config.eval_times[j];
                const double s_true = std::exp(-t / mu);
                double bias = 0.0, mse = 0.0, cover = 0.0;
                std::size_t good = 0;
                for (std::size_t rep = 0; rep < N; ++rep) {
                    const Slot& slot = slots[(row * Hn + hyp) * N + rep];
                    if (slot.failed) continue;
                    ++good;
                    const double err = slot.s[j] - s_true;
                    bias += err;
                    mse += err * err;
                    cover += std::abs(std::log(s_true) - std::log(slot.s[j])) <=
                                     z_975 * slot.sd[j]
                                 ? 1.0
                                 : 0.0;
                }
                MetricsRow r;
                r.true_copula = config.true_copulas[row].to_string();
                r.hyp_copula = config.hyp_copulas[hyp].to_string();
                r.t = t;
                r.reps = good;
                r.n = config.n;
                r.failures = failures;
                r.flagged = failures * 20 > N;
                if (good > 0) {
                    r.bias = bias / static_cast<double>(good);
                    r.rmse = std::sqrt(mse / static_cast<double>(good));
                    r.ecr = cover / static_cast<double>(good);
                }
                out.rows.push_back(std::move(r));
            }
            if (config.emit_curves)
                for (std::size_t rep = 0; rep < N; ++rep) {
                    const Slot& slot = slots[(row * Hn + hyp) * N + rep];
                    if (slot.failed) continue;
                    for (std::size_t ci = 0; ci < curve_times.size(); ++ci)
                        out.curves.push_back({config.true_copulas[row].to_string(),
                                              config.hyp_copulas[hyp].to_string(), rep,
                                              curve_times[ci], slot.curve[ci]});
                }
        }
    return out;
}

// ---- log-rank rejection grid ------------------------------------------------

struct RejectionCell {
    std::string true_copula, hyp_copula;
    double T = 0.0;
    double rate = 0.0;       // rejection frequency at level alpha
    double ci_half = 0.0;    // Gaussian half-width z_{1-alpha/2} sqrt(r(1-r)/N)
    std::size_t reps = 0;
    std::size_t failures = 0;
    bool flagged = false;
};

struct PValueRecord {
    std::string true_copula, hyp_copula;
    double T = 0.0;
    std::uint64_t rep = 0;
    double p = 1.0;
};

struct TestGridResult {
    std::vector<RejectionCell> cells;
    std::vector<PValueRecord> p_values;
};

inline TestGridResult run_test_grid(const ScenarioConfig& config, const RateTable& table) {
    config.validate();
    if (config.kind != ScenarioConfig::Kind::logrank)
        throw std::invalid_argument("test grid: scenario kind must be logrank");
    const std::size_t R = config.true_copulas.size();
    const std::size_t Hn = config.hyp_copulas.size();
    const std::size_t N = config.reps;
    const std::size_t nt = config.eval_times.size();

    // slot per (row, rep): p-value for each (hyp, T), NaN on failure
    std::vector<std::vector<double>> slots(R * N);

    SolverConfig inner;
    inner.threads = 1;
    detail::parallel_for(R * N, config.threads, [&](std::size_t item) {
        const std::size_t row = item / N, rep = item % N;
        const Cohort cohort = generate_cohort(config, table, config.true_copulas[row], rep);
        const Mesh mesh = build_mesh(cohort, config.admin_cut, config.mesh_step_days);
        auto& slot = slots[row * N + rep];
        slot.assign(Hn * nt, std::numeric_limits<double>::quiet_NaN());
        const std::size_t G = cohort.group_labels().size();
        for (std::size_t hyp = 0; hyp < Hn; ++hyp) {
            try {
                const auto results = logrank_observable_multi(
                    cohort, table, std::vector<CopulaSpec>(G, config.hyp_copulas[hyp]), mesh,
                    config.eval_times, inner);
                for (std::size_t j = 0; j < nt; ++j) slot[hyp * nt + j] = results[j].p_value;
            } catch (const std::exception&) {
                // leave NaN: counted as a failure below
            }
        }
    });

    const double z = normal_quantile(1.0 - config.alpha / 2.0);
    TestGridResult out;
    for (std::size_t row = 0; row < R; ++row)
        for (std::size_t hyp = 0; hyp < Hn; ++hyp)
            for (std::size_t j = 0; j < nt; ++j) {
                std::size_t good = 0, reject = 0, failures = 0;
                for (std::size_t rep = 0; rep < N; ++rep) {
                    const double p = slots[row * N + rep][hyp * nt + j];
                    if (std::isnan(p)) {
                        ++failures;
                        continue;
                    }
                    ++good;
                    if (p < config.alpha) ++reject;
                    out.p_values.push_back({config.true_copulas[row].to_string(),
                                            config.hyp_copulas[hyp].to_string(),
                                            config.eval_times[j], rep, p});
                }
                RejectionCell cell;
                cell.true_copula = config.true_copulas[row].to_string();
                cell.hyp_copula = config.hyp_copulas[hyp].to_string();
                cell.T = config.eval_times[j];
                cell.reps = good;
                cell.failures = failures;
                cell.flagged = failures * 20 > N;
                if (good > 0) {
                    cell.rate = static_cast<double>(reject) / static_cast<double>(good);
                    cell.ci_half = z * std::sqrt(cell.rate * (1.0 - cell.rate) /
                                                 static_cast<double>(good));
                }
                out.cells.push_back(std::move(cell));
            }
    return out;
}

// ---- scenario files ----------------------------------------------------------
//
// Line-oriented "key = value" text; '#' starts a comment. Lists are
// comma-separated (copulas) or space-separated (numbers). Groups are declared
// one per line:  group = <label> mean=<years> age=<lo>:<hi>

inline ScenarioConfig parse_scenario(std::istream& in) {
    ScenarioConfig cfg;
    cfg.groups.clear();
    bool kind_seen = false;

    std::string line;
    std::size_t lineno = 0;
    auto fail = [&](const std::string& why) {
        throw std::invalid_argument("scenario line " + std::to_string(lineno) + ": " + why);
    };

    auto parse_copula_list = [&](const std::string& v) {
        std::vector<CopulaSpec> specs;
        std::istringstream ss(v);
        std::string item;
        while (std::getline(ss, item, ',')) {
            const auto b = item.find_first_not_of(" \t");
            const auto e = item.find_last_not_of(" \t");
            if (b == std::string::npos) continue;
            specs.push_back(CopulaSpec::parse(item.substr(b, e - b + 1)));
        }
        if (specs.empty()) fail("empty copula list");
        return specs;
    };
    auto parse_numbers = [&](const std::string& v) {
        std::vector<double> out;
        std::istringstream ss(v);
        double x;
        while (ss >> x) out.push_back(x);
        if (out.empty()) fail("expected numbers");
        return out;
    };

    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        const auto eq = line.find('=');
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        if (eq == std::string::npos) fail("expected key = value");
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (value.empty()) fail("empty value for '" + key + "'");

        try {
            if (key == "kind") {
                if (value == "metrics") cfg.kind = ScenarioConfig::Kind::metrics;
                else if (value == "logrank") cfg.kind = ScenarioConfig::Kind::logrank;
                else fail("kind must be metrics or logrank");
                kind_seen = true;
            } else if (key == "n") cfg.n = std::stoul(value);
            else if (key == "reps") cfg.reps = std::stoul(value);
            else if (key == "seed") cfg.seed = std::stoull(value);
            else if (key == "censor_mean") cfg.censor_mean = std::stod(value);
            else if (key == "admin_cut") cfg.admin_cut = std::stod(value);
            else if (key == "alpha") cfg.alpha = std::stod(value);
            else if (key == "step_days") cfg.mesh_step_days = std::stod(value);
            else if (key == "threads") cfg.threads = std::stoi(value);
            else if (key == "emit_curves") cfg.emit_curves = (value == "true" || value == "1");
            else if (key == "curve_step") cfg.curve_step = std::stod(value);
            else if (key == "diagnosis") {
                const auto v = parse_numbers(value);
                if (v.size() != 2) fail("diagnosis takes two years");
                cfg.diag_lo = v[0];
                cfg.diag_hi = v[1];
            } else if (key == "times") cfg.eval_times = parse_numbers(value);
            else if (key == "true_copulas") cfg.true_copulas = parse_copula_list(value);
            else if (key == "hyp_copulas") cfg.hyp_copulas = parse_copula_list(value);
            else if (key == "group") {
                GroupSpec g;
                std::istringstream ss(value);
                std::string tok;
                ss >> g.label;
                bool mean_seen = false, age_seen = false;
                while (ss >> tok) {
                    if (tok.rfind("mean=", 0) == 0) {
                        g.excess_mean = std::stod(tok.substr(5));
                        mean_seen = true;
                    } else if (tok.rfind("age=", 0) == 0) {
                        const auto colon = tok.find(':');
                        if (colon == std::string::npos) fail("age=<lo>:<hi>");
                        g.age_lo = std::stod(tok.substr(4, colon - 4));
                        g.age_hi = std::stod(tok.substr(colon + 1));
                        age_seen = true;
                    } else fail("unknown group attribute '" + tok + "'");
                }
                if (!mean_seen || !age_seen) fail("group needs mean= and age=");
                cfg.groups.push_back(std::move(g));
            } else fail("unknown key '" + key + "'");
        } catch (const std::invalid_argument&) {
            throw;
        } catch (const std::exception&) {
            fail("cannot parse value for '" + key + "'");
        }
    }
    if (!kind_seen) throw std::invalid_argument("scenario: missing 'kind'");
    if (cfg.groups.empty()) cfg.groups.push_back(GroupSpec{});
    cfg.validate();
    return cfg;
}

} // namespace netsurv
