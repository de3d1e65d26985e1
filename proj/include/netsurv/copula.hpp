// Bivariate Archimedean copula engine.
//
// Families: independence, Clayton, Frank, Gumbel. Provides the copula CDF,
// its closed-form partial derivatives, Kendall-tau <-> theta conversions,
// and sampling by conditional inversion. All evaluations are pure functions
// of an immutable CopulaSpec and are safe for concurrent use.
//
// Generators:
//   independence  phi(t) = exp(-t)
//   Clayton       phi(t) = (1 + theta*t)^(-1/theta),  theta in (-1,0)u(0,inf)
//   Gumbel        phi(t) = exp(-t^(1/theta)),         theta >= 1
//   Frank         phi(t) = -log(1 + exp(-t)*(exp(-theta)-1))/theta, theta != 0
//
// Frank evaluations use expm1/log1p forms, switching to log-space expressions
// for |theta| > 30 where the direct products cancel or overflow.

#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "netsurv/rng.hpp"

namespace netsurv {

enum class CopulaFamily { independence, clayton, frank, gumbel };

struct UnitPair {
    double u = 0.0;
    double v = 0.0;
};

double tau_to_theta(CopulaFamily family, double tau);
double theta_to_tau(CopulaFamily family, double theta);

namespace detail {

inline const char* family_name(CopulaFamily f) {
    switch (f) {
        case CopulaFamily::independence: return "indep";
        case CopulaFamily::clayton: return "clayton";
        case CopulaFamily::frank: return "frank";
        case CopulaFamily::gumbel: return "gumbel";
    }
    return "?";
}

// ---- first Debye function ------------------------------------------------

// 15-point Gauss-Legendre rule on [-1, 1].
inline constexpr double gl15_x[15] = {
    -0.987992518020485428, -0.937273392400705904, -0.848206583410427216,
    -0.724417731360170047, -0.570972172608538848, -0.39415134707756337,
    -0.201194093997434522, 0.0,                   0.201194093997434522,
    0.39415134707756337,   0.570972172608538848,  0.724417731360170047,
    0.848206583410427216,  0.937273392400705904,  0.987992518020485428};
inline constexpr double gl15_w[15] = {
    0.0307532419961172684, 0.0703660474881081247, 0.107159220467171935,
    0.139570677926154314,  0.166269205816993934,  0.186161000015562211,
    0.198431485327111576,  0.202578241925561273,  0.198431485327111576,
    0.186161000015562211,  0.166269205816993934,  0.139570677926154314,
    0.107159220467171935,  0.0703660474881081247, 0.0307532419961172684};

inline double debye_integrand(double t) {
    if (t == 0.0) return 1.0;
    return t / std::expm1(t);
}

inline double gl15(double a, double b) {
    const double c = 0.5 * (a + b), h = 0.5 * (b - a);
    double s = 0.0;
    for (int i = 0; i < 15; ++i) s += gl15_w[i] * debye_integrand(c + h * gl15_x[i]);
    return s * h;
}

inline double debye_adaptive(double a, double b, double whole, double tol, int depth) {
    const double m = 0.5 * (a + b);
    const double left = gl15(a, m), right = gl15(m, b);
    if (depth > 30 || std::abs(left + right - whole) <= tol) return left + right;
    return debye_adaptive(a, m, left, 0.5 * tol, depth + 1) +
           debye_adaptive(m, b, right, 0.5 * tol, depth + 1);
}

// D1(x) = (1/x) * int_0^x t/(e^t - 1) dt, x > 0, abs tol 1e-12 on the integral.
inline double debye1(double x) {
    return debye_adaptive(0.0, x, gl15(0.0, x), 1e-12, 0) / x;
}

// Kendall tau of a Frank copula. Antisymmetric in theta.
inline double frank_tau(double theta) {
    const double a = std::abs(theta);
    double tau;
    if (a < 1e-2) {
        tau = a / 9.0 - a * a * a / 900.0;
    } else {
        tau = 1.0 + 4.0 * (debye1(a) - 1.0) / a;
    }
    return theta < 0.0 ? -tau : tau;
}

// ---- fused evaluator -------------------------------------------------------
//
// The estimator evaluates (C, C1, C2) at one u against many v per time step.
// Splitting the preparation lets the per-u work be hoisted out of inner loops.

struct CopulaEval {
    enum class Mode { indep, clayton, frank_plain, frank_pos, frank_neg, gumbel };

    Mode mode = Mode::indep;
    double theta = 0.0;
    double clayton_exp = 0.0;  // -(1+theta)/theta
    double frank_d = 0.0;      // expm1(-theta)
    double frank_ld = 0.0;     // log|expm1(-theta)|

    struct PreparedU {
        double u = 1.0;
        double t0 = 0.0;  // family-specific
        double t1 = 0.0;
    };
    using PreparedV = PreparedU;

    static CopulaEval make(CopulaFamily family, double theta) {
        CopulaEval e;
        e.theta = theta;
        switch (family) {
            case CopulaFamily::independence:
                e.mode = Mode::indep;
                break;
            case CopulaFamily::clayton:
                e.mode = Mode::clayton;
                e.clayton_exp = -(1.0 + theta) / theta;
                break;
            case CopulaFamily::frank:
                if (theta > 30.0) {
                    e.mode = Mode::frank_pos;
                    e.frank_ld = std::log1p(-std::exp(-theta));
                } else if (theta < -30.0) {
                    e.mode = Mode::frank_neg;
                    e.frank_ld = -theta + std::log1p(-std::exp(theta));
                } else {
                    e.mode = Mode::frank_plain;
                    e.frank_d = std::expm1(-theta);
                }
                break;
            case CopulaFamily::gumbel:
                e.mode = Mode::gumbel;
                break;
        }
        return e;
    }

    PreparedU prep_u(double u) const { return prep(u); }
    PreparedV prep_v(double v) const { return prep(v); }

    PreparedU prep(double z) const {
        PreparedU p;
        p.u = z;
        switch (mode) {
            case Mode::indep:
                break;
            case Mode::clayton:
                p.t0 = std::pow(z, -theta);
                p.t1 = p.t0 / z;
                break;
            case Mode::frank_plain:
                p.t0 = std::expm1(-theta * z);
                break;
            case Mode::frank_pos:
                p.t0 = std::log1p(-std::exp(-theta * z));  // log(-expm1(-theta z))
                break;
            case Mode::frank_neg:
                p.t0 = -theta * z + std::log1p(-std::exp(theta * z));  // log(expm1(-theta z))
                break;
            case Mode::gumbel:
                p.t0 = -std::log(z);
                break;
        }
        return p;
    }

    // Evaluate C(u,v), C1 = dC/du, C2 = dC/dv at interior points.
    // Clayton with theta < 0 returns all zeros outside the support and sets
    // *degenerate when given.
    void eval(const PreparedU& pu, const PreparedV& pv, double& C, double& C1, double& C2,
              bool* degenerate = nullptr) const {
        switch (mode) {
            case Mode::indep: {
                C = pu.u * pv.u;
                C1 = pv.u;
                C2 = pu.u;
                return;
            }
            case Mode::clayton: {
                const double s = pu.t0 + pv.t0 - 1.0;
                if (s <= 0.0) {
                    C = C1 = C2 = 0.0;
                    if (degenerate) *degenerate = true;
                    return;
                }
                const double p = std::pow(s, clayton_exp);  // s^(-1/theta - 1)
                C = p * s;
                C1 = pu.t1 * p;
                C2 = pv.t1 * p;
                return;
            }
            case Mode::frank_plain: {
                const double a = pu.t0 * (pv.t0 / frank_d);
                const double onep = 1.0 + a;
                C = -std::log1p(a) / theta;
                const double scale = 1.0 / (frank_d * onep);
                C1 = (1.0 + pu.t0) * pv.t0 * scale;
                C2 = (1.0 + pv.t0) * pu.t0 * scale;
                return;
            }
            case Mode::frank_pos: {
                // t0 holds log(-expm1(-theta z)); all of E_u, E_v, D are negative.
                const double s = pu.t0 + pv.t0 - frank_ld;
                const double onep = -std::expm1(s);  // 1 + A, exact near 0
                C = -std::log(onep) / theta;
                C1 = std::exp(-theta * pu.u + pv.t0 - frank_ld) / onep;
                C2 = std::exp(-theta * pv.u + pu.t0 - frank_ld) / onep;
                return;
            }
            case Mode::frank_neg: {
                // t0 holds log(expm1(-theta z)); E_u, E_v, D all positive.
                const double s = pu.t0 + pv.t0 - frank_ld;
                const double sp = s > 40.0 ? s : std::log1p(std::exp(s));  // log(1+A)
                C = sp / (-theta);
                C1 = std::exp(-theta * pu.u + pv.t0 - frank_ld - sp);
                C2 = std::exp(-theta * pv.u + pu.t0 - frank_ld - sp);
                return;
            }
            case Mode::gumbel: {
                const double x = pu.t0, y = pv.t0;
                const double mx = x > y ? x : y;
                if (mx == 0.0) {  // u = v = 1
                    C = C1 = C2 = 1.0;
                    return;
                }
                const double r = (x > y ? y : x) / mx;
                const double s = mx * std::pow(1.0 + std::pow(r, theta), 1.0 / theta);
                C = std::exp(-s);
                C1 = C / pu.u * std::pow(x / s, theta - 1.0);
                C2 = C / pv.u * std::pow(y / s, theta - 1.0);
                return;
            }
        }
    }
};

} // namespace detail

struct CopulaSpec {
    CopulaFamily family = CopulaFamily::independence;
    double theta = 0.0;
    double tau = 0.0;  // Kendall tau, kept consistent with theta for reporting

    static CopulaSpec independence() { return CopulaSpec{}; }

    static CopulaSpec from_theta(CopulaFamily family, double theta) {
        CopulaSpec s{family, theta, theta_to_tau(family, theta)};
        s.validate();
        return s;
    }

    static CopulaSpec from_tau(CopulaFamily family, double tau) {
        CopulaSpec s{family, tau_to_theta(family, tau), tau};
        s.validate();
        return s;
    }

    void validate() const {
        if (!(tau > -1.0 && tau < 1.0))
            throw std::invalid_argument("copula: tau must lie in (-1, 1)");
        switch (family) {
            case CopulaFamily::independence:
                if (tau != 0.0)
                    throw std::invalid_argument("copula: independence requires tau = 0");
                return;
            case CopulaFamily::clayton:
                if (!(theta > -1.0) || theta == 0.0 || !std::isfinite(theta))
                    throw std::invalid_argument("copula: clayton requires theta in (-1,0) or (0,inf)");
                break;
            case CopulaFamily::frank:
                if (theta == 0.0 || !std::isfinite(theta))
                    throw std::invalid_argument("copula: frank requires nonzero finite theta");
                break;
            case CopulaFamily::gumbel:
                if (!(theta >= 1.0) || !std::isfinite(theta))
                    throw std::invalid_argument("copula: gumbel requires theta >= 1");
                break;
        }
        if (std::abs(theta_to_tau(family, theta) - tau) > 1e-10)
            throw std::invalid_argument("copula: theta and tau are inconsistent");
    }

    static CopulaSpec parse(std::string_view text);
    std::string to_string() const;

    detail::CopulaEval evaluator() const { return detail::CopulaEval::make(family, theta); }
};

// tau(theta) per family.
inline double theta_to_tau(CopulaFamily family, double theta) {
    switch (family) {
        case CopulaFamily::independence:
            return 0.0;
        case CopulaFamily::clayton:
            if (!(theta > -1.0) || theta == 0.0)
                throw std::invalid_argument("copula: clayton theta out of domain");
            return theta / (theta + 2.0);
        case CopulaFamily::gumbel:
            if (!(theta >= 1.0))
                throw std::invalid_argument("copula: gumbel theta out of domain");
            return 1.0 - 1.0 / theta;
        case CopulaFamily::frank:
            if (theta == 0.0 || !std::isfinite(theta))
                throw std::invalid_argument("copula: frank theta out of domain");
            return detail::frank_tau(theta);
    }
    throw std::invalid_argument("copula: unknown family");
}

// theta(tau) per family; Frank is inverted by bracketed bisection on tau.
inline double tau_to_theta(CopulaFamily family, double tau) {
    if (tau == 0.0)
        throw std::invalid_argument("copula: tau = 0 is degenerate, use the independence copula");
    if (!(tau > -1.0 && tau < 1.0))
        throw std::invalid_argument("copula: tau must lie in (-1, 1)");
    switch (family) {
        case CopulaFamily::independence:
            throw std::invalid_argument("copula: independence has no strength parameter");
        case CopulaFamily::clayton:
            return 2.0 * tau / (1.0 - tau);
        case CopulaFamily::gumbel:
            if (tau < 0.0)
                throw std::invalid_argument("copula: gumbel cannot represent negative tau");
            return 1.0 / (1.0 - tau);
        case CopulaFamily::frank: {
            const double target = std::abs(tau);
            double lo = 1e-12, hi = 1.0;
            while (detail::frank_tau(hi) < target) {
                hi *= 2.0;
                if (hi > 1e6) throw std::invalid_argument("copula: frank tau too close to 1");
            }
            double mid = hi;
            for (int it = 0; it < 200; ++it) {
                mid = 0.5 * (lo + hi);
                const double t = detail::frank_tau(mid);
                if (std::abs(t - target) <= 1e-10) break;
                (t < target ? lo : hi) = mid;
            }
            return tau < 0.0 ? -mid : mid;
        }
    }
    throw std::invalid_argument("copula: unknown family");
}

// C(u, v). Boundary values are exact: C(u,1)=u, C(1,v)=v, C(u,0)=C(0,v)=0.
inline double copula_cdf(const CopulaSpec& spec, UnitPair p) {
    if (!(p.u >= 0.0 && p.u <= 1.0 && p.v >= 0.0 && p.v <= 1.0))
        throw std::invalid_argument("copula: point outside the unit square");
    if (p.u == 0.0 || p.v == 0.0) return 0.0;
    if (p.u == 1.0) return p.v;
    if (p.v == 1.0) return p.u;
    const auto ev = spec.evaluator();
    double c, c1, c2;
    ev.eval(ev.prep_u(p.u), ev.prep_v(p.v), c, c1, c2);
    return c;
}

// dC/du_axis, axis in {1,2}, closed form. Outside the Clayton theta<0 support
// both partials are 0; *degenerate_support reports that case.
inline double copula_partial(const CopulaSpec& spec, UnitPair p, int axis,
                             bool* degenerate_support = nullptr) {
    if (axis != 1 && axis != 2) throw std::invalid_argument("copula: axis must be 1 or 2");
    if (!(p.u > 0.0 && p.u <= 1.0 && p.v > 0.0 && p.v <= 1.0))
        throw std::invalid_argument("copula: partials need a point inside the support interior");
    if (degenerate_support) *degenerate_support = false;
    const auto ev = spec.evaluator();
    double c, c1, c2;
    ev.eval(ev.prep_u(p.u), ev.prep_v(p.v), c, c1, c2, degenerate_support);
    return axis == 1 ? c1 : c2;
}

// Solves C1(u, v) = w for v by bisection on [0, 1] (C1 is nondecreasing in v,
// C1(u,0)=0 and C1(u,1)=1 for every family). The upper bracket end is
// returned, which keeps Clayton theta<0 samples inside the support.
inline double conditional_quantile(const CopulaSpec& spec, double u, double w) {
    if (spec.family == CopulaFamily::independence) return w;
    const auto ev = spec.evaluator();
    const auto pu = ev.prep_u(u);
    double lo = 0.0, hi = 1.0;
    double c, c1, c2;
    for (int it = 0; it < 80 && hi - lo > 1e-12; ++it) {
        const double mid = 0.5 * (lo + hi);
        ev.eval(pu, ev.prep_v(mid), c, c1, c2);
        (c1 < w ? lo : hi) = mid;
    }
    return hi;
}

inline UnitPair sample_pair(const CopulaSpec& spec, CounterRng& rng) {
    const double u = rng.uniform01();
    const double w = rng.uniform01();
    return {u, conditional_quantile(spec, u, w)};
}

// n i.i.d. pairs from C; draw i depends only on (seed, i).
inline std::vector<UnitPair> sample_pairs(const CopulaSpec& spec, std::size_t n,
                                          std::uint64_t seed) {
    if (n < 1) throw std::invalid_argument("copula: need n >= 1 samples");
    spec.validate();
    std::vector<UnitPair> out(n);
    const CounterRng root(seed);
    for (std::size_t i = 0; i < n; ++i) {
        CounterRng sub = root.derive(i);
        out[i] = sample_pair(spec, sub);
    }
    return out;
}

// ---- textual form ----------------------------------------------------------
//
// "indep", "clayton(tau=-0.3)", "frank(theta=5)", "gumbel(tau=0.5)".

inline CopulaSpec CopulaSpec::parse(std::string_view text) {
    auto fail = [&](const std::string& why) -> CopulaSpec {
        throw std::invalid_argument("copula spec '" + std::string(text) + "': " + why);
    };
    std::string s;
    for (char ch : text)
        if (!std::isspace(static_cast<unsigned char>(ch))) s += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (s == "indep" || s == "independence" || s == "pi") return independence();

    const auto open = s.find('(');
    if (open == std::string::npos || s.back() != ')')
        return fail("expected family(tau=...) or family(theta=...)");
    const std::string name = s.substr(0, open);
    CopulaFamily family;
    if (name == "clayton") family = CopulaFamily::clayton;
    else if (name == "frank") family = CopulaFamily::frank;
    else if (name == "gumbel") family = CopulaFamily::gumbel;
    else return fail("unknown family '" + name + "'");

    const std::string body = s.substr(open + 1, s.size() - open - 2);
    const auto eq = body.find('=');
    if (eq == std::string::npos) return fail("expected key=value");
    const std::string key = body.substr(0, eq);
    double value;
    try {
        std::size_t used = 0;
        value = std::stod(body.substr(eq + 1), &used);
        if (used != body.size() - eq - 1) return fail("trailing characters after number");
    } catch (const std::exception&) {
        return fail("cannot parse numeric value");
    }
    if (key == "tau") {
        if (value == 0.0) return fail("use indep for tau=0");
        return from_tau(family, value);
    }
    if (key == "theta") return from_theta(family, value);
    return fail("unknown key '" + key + "' (use tau or theta)");
}

inline std::string CopulaSpec::to_string() const {
    if (family == CopulaFamily::independence) return "indep";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s(tau=%.12g)", detail::family_name(family), tau);
    return buf;
}

} // namespace netsurv
