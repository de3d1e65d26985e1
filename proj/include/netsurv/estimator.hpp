// Non-parametric excess-hazard estimation.
//
// Counting-process setup: N_i jumps at uncensored deaths, Y_i(t) = 1{T_i >= t}.
// The excess cumulative hazard solves, on a dense mesh containing every
// event time,
//
//   dL(t) = [ sum_i dN_i(t)/a_i(t) - sum_i b_i(t) Y_i(t)/(a_i(t) c_i(t)) dt ]
//           / [ sum_i Y_i(t)/c_i(t) ],
//
// with coefficients built from the hypothesized survival copula C and the
// individual population survivals S_Pi:
//
//   a_i = C1(S_E, S_Pi)    b_i = C2(S_E, S_Pi) * lambda_Pi * S_Pi / S_E
//   c_i = C(S_E, S_Pi) / S_E              where S_E = exp(-L).
//
// Because a_i, b_i, c_i depend on the unknown S_E at the current time, each
// implicit-Euler step solves a scalar fixed point in L. Under independence
// the coefficients collapse to a_i = c_i = S_Pi, b_i = lambda_Pi S_Pi, the
// equation separates, and fit_pohar_perme computes it directly without any
// plug-in; that closed path doubles as the oracle for the generalized solver.
//
// Variance is the plug-in
//   sigma^2(t) = int_0^t [ sum_i dN_i/a_i^2 ] / [ sum_i Y_i/c_i ]^2.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "netsurv/cohort.hpp"
#include "netsurv/copula.hpp"
#include "netsurv/lifetable.hpp"
#include "netsurv/parallel.hpp"
#include "netsurv/rng.hpp"

namespace netsurv {

// Strictly increasing times from 0 to the horizon; contains every distinct
// observed event time and has no step larger than the requested one.
struct Mesh {
    std::vector<double> points;

    std::size_t size() const { return points.size(); }
    double horizon() const { return points.back(); }

    // Largest index k with points[k] <= t (+ tolerance).
    std::size_t index_at(double t) const {
        if (t < -1e-12 || t > points.back() + 1e-9)
            throw std::out_of_range("mesh: time outside [0, horizon]");
        const auto it = std::upper_bound(points.begin(), points.end(), t + 1e-12);
        return static_cast<std::size_t>(it - points.begin()) - 1;
    }
};

// Union of a regular day grid over [0, horizon] and all distinct event times,
// deduplicated within 1e-12 years.
inline Mesh build_mesh(const Cohort& cohort, double horizon, double step_days = 1.0) {
    if (cohort.patients.empty()) throw std::invalid_argument("mesh: empty cohort");
    if (!(horizon > 0.0)) throw std::invalid_argument("mesh: horizon must be > 0");
    if (!(step_days > 0.0)) throw std::invalid_argument("mesh: step must be > 0");

    const double step = step_days / days_per_year;
    std::vector<double> pts;
    pts.reserve(static_cast<std::size_t>(horizon / step) + cohort.size() + 2);
    for (double t = 0.0; t < horizon; t += step) pts.push_back(t);
    pts.push_back(horizon);
    for (const auto& p : cohort.patients)
        if (p.time < horizon) pts.push_back(p.time);
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end(),
                          [](double a, double b) { return b - a <= 1e-12; }),
              pts.end());
    if (pts.back() < horizon) pts.back() = horizon;
    return Mesh{std::move(pts)};
}

struct SolverConfig {
    double coefficient_floor = 1e-10;  // floor on a_i and c_i
    double tolerance = 1e-12;          // fixed-point tolerance on L
    int max_iterations = 100;
    bool explicit_euler = false;       // diagnostic mode: coefficients at L_{k-1}
    int threads = 0;                   // bootstrap workers; 0 = hardware
};

struct FitDiagnostics {
    std::uint64_t floor_hits = 0;          // times a or c was raised to the floor
    std::uint64_t survival_above_one = 0;  // mesh points with S_E > 1
    std::uint64_t total_iterations = 0;
    int max_step_iterations = 0;
    std::uint64_t bisection_fallbacks = 0;
    bool truncated = false;       // risk set emptied before the horizon
    double last_risk_time = 0.0;  // last mesh time with a positive risk set
};

struct NetSurvivalFit {
    Mesh mesh;
    std::vector<double> cum_hazard;  // L at each mesh point, L(0) = 0
    std::vector<double> survival;    // exp(-L), exactly
    std::vector<double> variance;    // plug-in sigma^2, non-decreasing

    // Per-point aggregates at the converged coefficients; time-step k covers
    // (points[k-1], points[k]] and entry k describes that step (entry 0 is 0).
    struct Coefficients {
        std::vector<double> jump;      // sum over deaths at k of 1/a_i
        std::vector<double> jump_sq;   // sum over deaths at k of 1/a_i^2
        std::vector<double> weight;    // sum over at-risk of Y_i/c_i
        std::vector<double> drift;     // sum over at-risk of b_i Y_i/(a_i c_i)
    } coeffs;

    FitDiagnostics diagnostics;

    double survival_at(double t) const { return survival[mesh.index_at(t)]; }
    double cum_hazard_at(double t) const { return cum_hazard[mesh.index_at(t)]; }
    double sd_at(double t) const { return std::sqrt(variance[mesh.index_at(t)]); }
};

namespace detail {

// Follow-up state shared by both fitters: per-patient population hazard
// marched along the mesh, and events grouped by mesh index.
struct CohortOnMesh {
    std::size_t n = 0;
    std::vector<HazardPath> paths;
    std::vector<std::size_t> order;       // patient ids sorted by exit index
    std::vector<std::size_t> exit_index;  // mesh index of min(T_i, horizon)
    std::vector<char> dies;               // status at exit (0 beyond horizon)

    // marching state, indexed by patient id
    std::vector<std::size_t> seg;
    std::vector<double> seg_time;
    std::vector<double> pop_cumhaz;

    CohortOnMesh(const Cohort& cohort, const RateTable& table, const Mesh& mesh) {
        n = cohort.size();
        const double horizon = mesh.horizon();
        paths.reserve(n);
        exit_index.resize(n);
        dies.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& p = cohort.patients[i];
            paths.push_back(hazard_path(table, p.demo, horizon));
            if (p.time >= horizon) {
                exit_index[i] = mesh.size() - 1;
                dies[i] = static_cast<char>(p.time <= horizon + 1e-12 ? p.status : 0);
            } else {
                const std::size_t k = mesh.index_at(p.time);
                if (std::abs(mesh.points[k] - p.time) > 1e-9)
                    throw std::invalid_argument("fit: mesh does not contain event time " +
                                                std::to_string(p.time));
                exit_index[i] = k;
                dies[i] = static_cast<char>(p.status);
            }
        }
        order.resize(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::sort(order.begin(), order.end(),
                  [&](std::size_t a, std::size_t b) { return exit_index[a] < exit_index[b]; });
        seg.assign(n, 0);
        seg_time.assign(n, 0.0);
        pop_cumhaz.assign(n, 0.0);
    }

    // Advance patient i's population cumulative hazard to time t (monotone).
    void advance(std::size_t i, double t) {
        const auto& path = paths[i];
        std::size_t j = seg[i];
        double cur = seg_time[i], h = pop_cumhaz[i];
        while (j + 1 < path.rates.size() && path.times[j + 1] < t) {
            h += path.rates[j] * (path.times[j + 1] - cur);
            cur = path.times[j + 1];
            ++j;
        }
        h += path.rates[j] * (t - cur);
        seg[i] = j;
        seg_time[i] = t;
        pop_cumhaz[i] = h;
    }

    double rate_now(std::size_t i, double t) const {
        const auto& path = paths[i];
        std::size_t j = seg[i];
        while (j + 1 < path.rates.size() && path.times[j + 1] <= t) ++j;
        return path.rates[j];
    }
};

} // namespace detail

// The estimator under the independence hypothesis (classical Pohar Perme
// weighting, dL = [sum dN_i/S_Pi - sum lambda_Pi Y_i/S_Pi dt] / [sum Y_i/S_Pi]).
// Direct closed-form stepping, no plug-in: this is the reference path the
// generalized solver is checked against.
inline NetSurvivalFit fit_pohar_perme(const Cohort& cohort, const RateTable& table,
                                      const Mesh& mesh) {
    detail::CohortOnMesh st(cohort, table, mesh);
    const std::size_t m = mesh.size();

    NetSurvivalFit fit;
    fit.mesh = mesh;
    fit.cum_hazard.assign(m, 0.0);
    fit.survival.assign(m, 1.0);
    fit.variance.assign(m, 0.0);
    fit.coeffs.jump.assign(m, 0.0);
    fit.coeffs.jump_sq.assign(m, 0.0);
    fit.coeffs.weight.assign(m, 0.0);
    fit.coeffs.drift.assign(m, 0.0);

    std::size_t first_alive = 0;  // into st.order
    double lambda = 0.0, var = 0.0;

    for (std::size_t k = 1; k < m; ++k) {
        const double t = mesh.points[k];
        const double h = t - mesh.points[k - 1];
        while (first_alive < st.n && st.exit_index[st.order[first_alive]] < k) ++first_alive;
        if (first_alive >= st.n) {
            fit.diagnostics.truncated = true;
            for (std::size_t kk = k; kk < m; ++kk) {
                fit.cum_hazard[kk] = lambda;
                fit.survival[kk] = std::exp(-lambda);
                fit.variance[kk] = var;
            }
            break;
        }
        fit.diagnostics.last_risk_time = t;

        double weight = 0.0, drift = 0.0, jump = 0.0, jump_sq = 0.0;
        for (std::size_t idx = first_alive; idx < st.n; ++idx) {
            const std::size_t i = st.order[idx];
            st.advance(i, t);
            const double sp = std::exp(-st.pop_cumhaz[i]);
            const double inv_sp = 1.0 / sp;
            weight += inv_sp;
            drift += st.rate_now(i, t) * inv_sp;
            if (st.exit_index[i] == k && st.dies[i]) {
                jump += inv_sp;
                jump_sq += inv_sp * inv_sp;
            }
        }
        lambda += (jump - h * drift) / weight;
        if (jump_sq != 0.0) var += jump_sq / (weight * weight);

        fit.cum_hazard[k] = lambda;
        fit.survival[k] = std::exp(-lambda);
        fit.variance[k] = var;
        fit.coeffs.jump[k] = jump;
        fit.coeffs.jump_sq[k] = jump_sq;
        fit.coeffs.weight[k] = weight;
        fit.coeffs.drift[k] = drift;
        if (lambda < 0.0) ++fit.diagnostics.survival_above_one;
    }
    return fit;
}

// Generalized estimator under an arbitrary hypothesized survival copula.
// Implicit Euler: at each mesh point the scalar fixed point
//   g(L) = L_{k-1} + [J(L) - h D(L)] / W(L)
// is solved by damped fixed-point iteration with a bisection fallback on the
// bracket [L_{k-1} - 10h, L_{k-1} + 1 + 10h].
inline NetSurvivalFit fit_generalized(const Cohort& cohort, const RateTable& table,
                                      const CopulaSpec& copula, const Mesh& mesh,
                                      const SolverConfig& config = {}) {
    copula.validate();
    detail::CohortOnMesh st(cohort, table, mesh);
    const std::size_t m = mesh.size();
    const auto ev = copula.evaluator();
    const double eps = config.coefficient_floor;

    NetSurvivalFit fit;
    fit.mesh = mesh;
    fit.cum_hazard.assign(m, 0.0);
    fit.survival.assign(m, 1.0);
    fit.variance.assign(m, 0.0);
    fit.coeffs.jump.assign(m, 0.0);
    fit.coeffs.jump_sq.assign(m, 0.0);
    fit.coeffs.weight.assign(m, 0.0);
    fit.coeffs.drift.assign(m, 0.0);

    // per-step caches for the at-risk suffix
    std::vector<double> v_now(st.n), lam_now(st.n);
    std::vector<detail::CopulaEval::PreparedV> pv(st.n);

    std::size_t first_alive = 0;
    double lambda = 0.0, var = 0.0, prev_inc = 0.0;

    for (std::size_t k = 1; k < m; ++k) {
        const double t = mesh.points[k];
        const double h = t - mesh.points[k - 1];
        while (first_alive < st.n && st.exit_index[st.order[first_alive]] < k) ++first_alive;
        if (first_alive >= st.n) {
            fit.diagnostics.truncated = true;
            for (std::size_t kk = k; kk < m; ++kk) {
                fit.cum_hazard[kk] = lambda;
                fit.survival[kk] = std::exp(-lambda);
                fit.variance[kk] = var;
            }
            break;
        }
        fit.diagnostics.last_risk_time = t;

        for (std::size_t idx = first_alive; idx < st.n; ++idx) {
            const std::size_t i = st.order[idx];
            st.advance(i, t);
            v_now[i] = std::max(std::exp(-st.pop_cumhaz[i]), 1e-300);
            lam_now[i] = st.rate_now(i, t);
            pv[i] = ev.prep_v(v_now[i]);
        }

        std::uint64_t floor_hits = 0;
        // One evaluation of the right-hand side at a trial L. Returns g(L)
        // and stores the sums so the last call's values can be reused.
        double jump = 0.0, jump_sq = 0.0, weight = 0.0, drift = 0.0;
        auto g = [&](double L) {
            // clamp S_E > 1 transients (and protect against underflow)
            const double u = std::min(std::max(std::exp(-L), 1e-300), 1.0);
            const auto pu = ev.prep_u(u);
            floor_hits = 0;
            weight = 0.0;
            drift = 0.0;
            jump = 0.0;
            jump_sq = 0.0;
            double C, C1, C2;
            for (std::size_t idx = first_alive; idx < st.n; ++idx) {
                const std::size_t i = st.order[idx];
                ev.eval(pu, pv[i], C, C1, C2);
                double a = C1, c = C / u;
                if (a < eps) { a = eps; ++floor_hits; }
                if (c < eps) { c = eps; ++floor_hits; }
                weight += 1.0 / c;
                const double b = C2 * lam_now[i] * v_now[i] / u;
                drift += b / (a * c);
                if (st.exit_index[i] == k && st.dies[i]) {
                    jump += 1.0 / a;
                    jump_sq += 1.0 / (a * a);
                }
            }
            return lambda + (jump - h * drift) / weight;
        };

        double L_new = lambda;
        if (config.explicit_euler) {
            L_new = g(lambda);
            fit.diagnostics.total_iterations += 1;
        } else {
            double L = lambda + prev_inc;  // warm start from the last increment
            bool converged = false;
            double omega = 1.0, resid_prev = std::numeric_limits<double>::infinity();
            int it = 0;
            for (; it < config.max_iterations; ++it) {
                const double gl = g(L);
                const double resid = gl - L;
                if (std::abs(resid) <= config.tolerance) {
                    L_new = gl;
                    converged = true;
                    ++it;
                    break;
                }
                if (std::abs(resid) > std::abs(resid_prev)) omega = std::max(0.0625, 0.5 * omega);
                resid_prev = resid;
                L = L + omega * resid;
            }
            fit.diagnostics.total_iterations += static_cast<std::uint64_t>(it);
            fit.diagnostics.max_step_iterations = std::max(fit.diagnostics.max_step_iterations, it);
            if (!converged) {
                // Monotone bracket around the step.
                ++fit.diagnostics.bisection_fallbacks;
                double lo = lambda - 10.0 * h, hi = lambda + 1.0 + 10.0 * h;
                double flo = g(lo) - lo, fhi = g(hi) - hi;
                if (flo * fhi > 0.0)
                    throw std::runtime_error(
                        "fit: step at t = " + std::to_string(t) +
                        " did not converge (residual " + std::to_string(resid_prev) + ")");
                for (int b = 0; b < 200 && hi - lo > config.tolerance; ++b) {
                    const double mid = 0.5 * (lo + hi);
                    const double fm = g(mid) - mid;
                    if ((fm <= 0.0) == (fhi <= 0.0)) { hi = mid; fhi = fm; }
                    else { lo = mid; flo = fm; }
                }
                L_new = g(0.5 * (lo + hi));
            }
        }

        fit.diagnostics.floor_hits += floor_hits;
        prev_inc = L_new - lambda;
        lambda = L_new;
        if (jump_sq != 0.0) var += jump_sq / (weight * weight);

        fit.cum_hazard[k] = lambda;
        fit.survival[k] = std::exp(-lambda);
        fit.variance[k] = var;
        fit.coeffs.jump[k] = jump;
        fit.coeffs.jump_sq[k] = jump_sq;
        fit.coeffs.weight[k] = weight;
        fit.coeffs.drift[k] = drift;
        if (lambda < 0.0) ++fit.diagnostics.survival_above_one;
    }
    return fit;
}

// Pointwise bootstrap standard error of the cumulative excess hazard:
// resample patients with replacement, refit on the same mesh, and take the
// (1/N-normalized) standard deviation across resamples. Resamples that fail
// to fit are skipped and counted; more than 10% failures is an error.
//
// The index sampler is injectable so callers can pin resamples.
inline std::vector<double> bootstrap_se_with(
    const Cohort& cohort, const RateTable& table, const CopulaSpec& copula, const Mesh& mesh,
    std::size_t reps, const std::function<std::vector<std::size_t>(std::size_t)>& sample_indices,
    const SolverConfig& config = {}, std::size_t* failures_out = nullptr) {
    if (reps < 2) throw std::invalid_argument("bootstrap: need at least 2 resamples");
    const std::size_t m = mesh.size();

    std::vector<std::vector<double>> curves(reps);
    std::vector<char> ok(reps, 0);
    detail::parallel_for(reps, config.threads, [&](std::size_t r) {
        Cohort resample;
        resample.patients.reserve(cohort.size());
        for (std::size_t i : sample_indices(r)) resample.patients.push_back(cohort.patients[i]);
        try {
            curves[r] = fit_generalized(resample, table, copula, mesh, config).cum_hazard;
            ok[r] = 1;
        } catch (const std::exception&) {
            ok[r] = 0;
        }
    });

    std::size_t good = 0;
    for (std::size_t r = 0; r < reps; ++r) good += ok[r];
    const std::size_t failed = reps - good;
    if (failures_out) *failures_out = failed;
    if (failed * 10 > reps)
        throw std::runtime_error("bootstrap: " + std::to_string(failed) + "/" +
                                 std::to_string(reps) + " resamples failed to fit");

    std::vector<double> mean(m, 0.0), se(m, 0.0);
    for (std::size_t r = 0; r < reps; ++r)
        if (ok[r])
            for (std::size_t k = 0; k < m; ++k) mean[k] += curves[r][k];
    for (std::size_t k = 0; k < m; ++k) mean[k] /= static_cast<double>(good);
    for (std::size_t r = 0; r < reps; ++r)
        if (ok[r])
            for (std::size_t k = 0; k < m; ++k) {
                const double d = curves[r][k] - mean[k];
                se[k] += d * d;
            }
    for (std::size_t k = 0; k < m; ++k) se[k] = std::sqrt(se[k] / static_cast<double>(good));
    return se;
}

inline std::vector<double> bootstrap_se(const Cohort& cohort, const RateTable& table,
                                        const CopulaSpec& copula, const Mesh& mesh,
                                        std::size_t reps, std::uint64_t seed,
                                        const SolverConfig& config = {},
                                        std::size_t* failures_out = nullptr) {
    const std::size_t n = cohort.size();
    const CounterRng root(seed);
    auto sampler = [&, n](std::size_t r) {
        CounterRng rng = root.derive(r);
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = rng.below(n);
        return idx;
    };
    return bootstrap_se_with(cohort, table, copula, mesh, reps, sampler, config, failures_out);
}

} // namespace netsurv
