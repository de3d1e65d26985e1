// Log-rank-type tests for group-wise equality of the excess hazard.
//
// Groups g get weighted event and at-risk processes
//   dN_{E,g} = sum_{i in g} [ dN_i/a_i - b_i Y_i/(a_i c_i) dt ],
//   Y_{E,g}  = sum_{i in g} Y_i/c_i,
// from which
//   R_g = Y_{E,g} / Y_{E,.},
//   Z_g(T) = N_{E,g}(T) - int_0^T R_g dN_{E,.},
//   Gamma_{g,h}(T) = sum_l int_0^T (d_{lg}-R_g)(d_{lh}-R_h) sum_{i in l} dN_i/a_i^2,
// and the statistic Z' Gamma^+ Z is asymptotically Chi2(|G|-1) under the
// null. Two variants share the assembly:
//   - the observable statistic plugs in group-wise generalized fits
//     (coefficients differ per group since each group solves its own path);
//   - the oracle statistic uses the true latent coefficients and exists only
//     for simulated cohorts.
//
// Gamma has the ones vector in its asymptotic kernel, so the statistic uses
// a rank-(|G|-1) eigendecomposition pseudo-inverse rather than dropping an
// arbitrary group.

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "netsurv/cohort.hpp"
#include "netsurv/estimator.hpp"

namespace netsurv {

// Upper-tail z for two-sided 95% intervals, as used in all reports.
inline constexpr double z_975 = 1.959964;

namespace detail {

// Regularized lower incomplete gamma P(a, x) by power series.
inline double gamma_p_series(double a, double x) {
    double ap = a, del = 1.0 / a, sum = del;
    for (int n = 0; n < 1000; ++n) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::abs(del) < std::abs(sum) * 1e-17) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Regularized upper incomplete gamma Q(a, x) by Lentz continued fraction.
inline double gamma_q_contfrac(double a, double x) {
    constexpr double tiny = 1e-300;
    double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
    for (int i = 1; i <= 1000; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-17) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

} // namespace detail

// Chi-square survival function 1 - CDF. Series branch for x < df + 1,
// continued fraction otherwise.
inline double chi2_sf(double x, int df) {
    if (df <= 0) throw std::invalid_argument("chi2_sf: df must be a positive integer");
    if (x < 0.0) throw std::invalid_argument("chi2_sf: x must be >= 0");
    if (x == 0.0) return 1.0;
    const double a = 0.5 * df, xx = 0.5 * x;
    if (x < df + 1.0) return 1.0 - detail::gamma_p_series(a, xx);
    return detail::gamma_q_contfrac(a, xx);
}

// Standard normal quantile (Acklam's rational approximation polished by one
// Newton step against erfc).
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("normal_quantile: p in (0,1)");
    static const double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                -2.759285104469687e+02, 1.383577518672690e+02,
                                -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                -1.556989798598866e+02, 6.680131188771972e+01,
                                -1.328068155288572e+01};
    static const double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                -2.400758277161838e+00, -2.549732539343734e+00,
                                4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                                2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425;
    double x;
    if (p < plow) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - plow) {
        const double q = p - 0.5, r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log(1.0 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    const double u = e * std::sqrt(2.0 * 3.14159265358979323846) * std::exp(0.5 * x * x);
    return x - u / (1.0 + 0.5 * x * u);
}

struct LogRankResult {
    std::vector<std::string> groups;
    std::vector<double> Z;           // per group
    std::vector<double> Gamma;       // |G| x |G|, row-major
    std::vector<std::size_t> events; // uncensored deaths per group before T
    double statistic = 0.0;
    int df = 0;
    double p_value = 1.0;
    double horizon = 0.0;
};

namespace detail {

// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major, n small).
// Columns of V are eigenvectors.
inline void jacobi_eigen(std::size_t n, std::vector<double> A, std::vector<double>& w,
                         std::vector<double>& V) {
    V.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) V[i * n + i] = 1.0;
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += A[p * n + q] * A[p * n + q];
        if (off <= 1e-300) break;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = A[p * n + q];
                if (apq == 0.0) continue;
                const double app = A[p * n + p], aqq = A[q * n + q];
                const double tau = (aqq - app) / (2.0 * apq);
                const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double cs = 1.0 / std::sqrt(1.0 + t * t), sn = t * cs;
                for (std::size_t k = 0; k < n; ++k) {
                    const double akp = A[k * n + p], akq = A[k * n + q];
                    A[k * n + p] = cs * akp - sn * akq;
                    A[k * n + q] = sn * akp + cs * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double apk = A[p * n + k], aqk = A[q * n + k];
                    A[p * n + k] = cs * apk - sn * aqk;
                    A[q * n + k] = sn * apk + cs * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double vkp = V[k * n + p], vkq = V[k * n + q];
                    V[k * n + p] = cs * vkp - sn * vkq;
                    V[k * n + q] = sn * vkp + cs * vkq;
                }
            }
    }
    w.resize(n);
    for (std::size_t i = 0; i < n; ++i) w[i] = A[i * n + i];
}

// Per-group mesh aggregates; one entry per mesh point, entry 0 unused.
struct GroupProcesses {
    std::vector<double> jump;     // sum over group deaths at k of 1/a_i
    std::vector<double> jump_sq;  // sum over group deaths at k of 1/a_i^2
    std::vector<double> weight;   // sum over group at-risk of Y_i/c_i
    std::vector<double> drift;    // sum over group at-risk of b_i Y_i/(a_i c_i)

    explicit GroupProcesses(std::size_t m)
        : jump(m, 0.0), jump_sq(m, 0.0), weight(m, 0.0), drift(m, 0.0) {}
};

// Z, Gamma, and the chi-square decision from per-group processes.
inline LogRankResult assemble_logrank(const Mesh& mesh,
                                      const std::vector<GroupProcesses>& groups,
                                      std::vector<std::string> labels, double T) {
    const std::size_t G = groups.size();
    const std::size_t kT = mesh.index_at(T);

    LogRankResult res;
    res.groups = std::move(labels);
    res.horizon = T;
    res.Z.assign(G, 0.0);
    res.Gamma.assign(G * G, 0.0);
    res.events.assign(G, 0);

    std::vector<double> R(G), dN(G);
    for (std::size_t k = 1; k <= kT; ++k) {
        const double h = mesh.points[k] - mesh.points[k - 1];
        double y_tot = 0.0;
        for (std::size_t g = 0; g < G; ++g) y_tot += groups[g].weight[k];
        if (y_tot <= 0.0) continue;
        double dn_tot = 0.0;
        for (std::size_t g = 0; g < G; ++g) {
            R[g] = groups[g].weight[k] / y_tot;
            dN[g] = groups[g].jump[k] - h * groups[g].drift[k];
            dn_tot += dN[g];
        }
        for (std::size_t g = 0; g < G; ++g) res.Z[g] += dN[g] - R[g] * dn_tot;
        for (std::size_t l = 0; l < G; ++l) {
            const double jsq = groups[l].jump_sq[k];
            if (jsq == 0.0) continue;
            for (std::size_t g = 0; g < G; ++g) {
                const double hg = (g == l ? 1.0 : 0.0) - R[g];
                for (std::size_t hh = 0; hh < G; ++hh) {
                    const double hh_l = (hh == l ? 1.0 : 0.0) - R[hh];
                    res.Gamma[g * G + hh] += hg * hh_l * jsq;
                }
            }
        }
    }

    std::vector<double> w, V;
    jacobi_eigen(G, res.Gamma, w, V);
    double wmax = 0.0;
    for (double x : w) wmax = std::max(wmax, x);
    if (wmax <= 0.0) throw std::runtime_error("log-rank: covariance matrix is zero");
    const double cut = 1e-10 * wmax;
    std::size_t dropped = 0;
    double stat = 0.0;
    for (std::size_t j = 0; j < G; ++j) {
        if (w[j] < cut) {
            ++dropped;
            continue;
        }
        double proj = 0.0;
        for (std::size_t g = 0; g < G; ++g) proj += V[g * G + j] * res.Z[g];
        stat += proj * proj / w[j];
    }
    if (dropped > 1)
        throw std::runtime_error("log-rank: covariance singular beyond the expected rank deficiency");

    res.statistic = stat;
    res.df = static_cast<int>(G) - 1;
    res.p_value = chi2_sf(stat, res.df);
    return res;
}

inline std::vector<std::size_t> group_index_of(const Cohort& cohort,
                                               const std::vector<std::string>& labels) {
    std::vector<std::size_t> gi(cohort.size());
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        const auto it = std::find(labels.begin(), labels.end(), cohort.patients[i].group);
        gi[i] = static_cast<std::size_t>(it - labels.begin());
    }
    return gi;
}

} // namespace detail

// Observable statistic: group-wise generalized fits under per-group
// hypothesized copulas (usually one shared spec), combined on the common
// mesh. The fits do not depend on the horizon, so one call serves any number
// of test times.
inline std::vector<LogRankResult> logrank_observable_multi(
    const Cohort& cohort, const RateTable& table,
    const std::vector<CopulaSpec>& per_group_copulas, const Mesh& mesh,
    const std::vector<double>& horizons, const SolverConfig& config = {}) {
    if (horizons.empty()) throw std::invalid_argument("log-rank: need at least one horizon");
    const auto labels = cohort.group_labels();
    const std::size_t G = labels.size();
    if (G < 2) throw std::invalid_argument("log-rank: need at least 2 groups");
    if (per_group_copulas.size() != G)
        throw std::invalid_argument("log-rank: one copula spec per group required");

    std::vector<Cohort> parts(G);
    const auto gi = detail::group_index_of(cohort, labels);
    for (std::size_t i = 0; i < cohort.size(); ++i)
        parts[gi[i]].patients.push_back(cohort.patients[i]);

    std::vector<NetSurvivalFit> fits(G);
    SolverConfig inner = config;
    inner.threads = 1;
    detail::parallel_for(G, config.threads, [&](std::size_t g) {
        fits[g] = fit_generalized(parts[g], table, per_group_copulas[g], mesh, inner);
    });

    std::vector<detail::GroupProcesses> groups;
    groups.reserve(G);
    for (std::size_t g = 0; g < G; ++g) {
        detail::GroupProcesses gp(mesh.size());
        gp.jump = fits[g].coeffs.jump;
        gp.jump_sq = fits[g].coeffs.jump_sq;
        gp.weight = fits[g].coeffs.weight;
        gp.drift = fits[g].coeffs.drift;
        groups.push_back(std::move(gp));
    }

    std::vector<LogRankResult> out;
    out.reserve(horizons.size());
    for (double T : horizons) {
        std::vector<std::size_t> events(G, 0);
        for (std::size_t g = 0; g < G; ++g) {
            for (const auto& p : parts[g].patients)
                if (p.status == 1 && p.time <= T) ++events[g];
            if (events[g] == 0)
                throw std::invalid_argument("log-rank: group '" + labels[g] +
                                            "' has no events before the horizon");
        }
        auto res = detail::assemble_logrank(mesh, groups, labels, T);
        res.events = events;
        out.push_back(std::move(res));
    }
    return out;
}

inline LogRankResult logrank_observable(const Cohort& cohort, const RateTable& table,
                                        const std::vector<CopulaSpec>& per_group_copulas,
                                        const Mesh& mesh, double T,
                                        const SolverConfig& config = {}) {
    return logrank_observable_multi(cohort, table, per_group_copulas, mesh, {T}, config).front();
}

inline LogRankResult logrank_observable(const Cohort& cohort, const RateTable& table,
                                        const CopulaSpec& copula, const Mesh& mesh, double T,
                                        const SolverConfig& config = {}) {
    const std::size_t G = cohort.group_labels().size();
    return logrank_observable(cohort, table, std::vector<CopulaSpec>(G, copula), mesh, T, config);
}

// Oracle statistic: uses the latent generative quantities (true copula, true
// per-patient excess law) carried by simulated cohorts. Validates the
// observable statistic's plug-in.
inline LogRankResult logrank_oracle(const Cohort& cohort, const RateTable& table,
                                    const Mesh& mesh, double T,
                                    const SolverConfig& config = {}) {
    if (!cohort.latent)
        throw std::invalid_argument("log-rank oracle: cohort has no latent truth");
    const auto labels = cohort.group_labels();
    const std::size_t G = labels.size();
    if (G < 2) throw std::invalid_argument("log-rank: need at least 2 groups");
    const auto gi = detail::group_index_of(cohort, labels);

    std::vector<std::size_t> events(G, 0);
    for (std::size_t i = 0; i < cohort.size(); ++i)
        if (cohort.patients[i].status == 1 && cohort.patients[i].time <= T) ++events[gi[i]];
    for (std::size_t g = 0; g < G; ++g)
        if (events[g] == 0)
            throw std::invalid_argument("log-rank: group '" + labels[g] +
                                        "' has no events before the horizon");

    detail::CohortOnMesh st(cohort, table, mesh);
    const auto ev = cohort.latent->true_copula.evaluator();
    const auto& mu = cohort.latent->excess_mean;
    const double eps = config.coefficient_floor;
    const std::size_t m = mesh.size();

    std::vector<detail::GroupProcesses> groups(G, detail::GroupProcesses(m));
    std::size_t first_alive = 0;
    for (std::size_t k = 1; k < m; ++k) {
        const double t = mesh.points[k];
        while (first_alive < st.n && st.exit_index[st.order[first_alive]] < k) ++first_alive;
        if (first_alive >= st.n) break;
        double C, C1, C2;
        for (std::size_t idx = first_alive; idx < st.n; ++idx) {
            const std::size_t i = st.order[idx];
            st.advance(i, t);
            const double se = std::max(std::exp(-t / mu[i]), 1e-300);
            const double sp = std::max(std::exp(-st.pop_cumhaz[i]), 1e-300);
            ev.eval(ev.prep_u(se), ev.prep_v(sp), C, C1, C2);
            double a = C1, c = C / se;
            if (a < eps) a = eps;
            if (c < eps) c = eps;
            auto& gp = groups[gi[i]];
            gp.weight[k] += 1.0 / c;
            gp.drift[k] += C2 * st.rate_now(i, t) * sp / se / (a * c);
            if (st.exit_index[i] == k && st.dies[i]) {
                gp.jump[k] += 1.0 / a;
                gp.jump_sq[k] += 1.0 / (a * a);
            }
        }
    }
    auto res = detail::assemble_logrank(mesh, groups, labels, T);
    res.events = events;
    return res;
}

} // namespace netsurv
