// Population ("expected") mortality from rate tables.
//
// A RateTable holds annual hazard rates on a dense (sex, age, year) grid.
// For an individual it yields a piecewise-constant hazard path along time
// since diagnosis, following the Lexis diagonal: the attained age and the
// calendar year both advance with follow-up time, so segment boundaries sit
// at every birthday anniversary and every New Year crossing.
//
// Lookups outside the table's ranges clamp to the nearest edge cell; registry
// cohorts routinely outlive their tables and erroring would be unusable.
// Clamping is surfaced through a counter and a per-path flag.

#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace netsurv {

// Calendar convention used for all day <-> year conversions.
inline constexpr double days_per_year = 365.241;

enum class Sex : int { male = 0, female = 1 };

enum class TableUnit {
    hazard,      // annual hazard rate (events per person-year)
    probability  // annual death probability q, converted via lambda = -log(1-q)
};

struct Demographics {
    Sex sex = Sex::male;
    double age_at_diagnosis = 0.0;  // years
    double diagnosis_date = 0.0;    // decimal calendar years
};

// Decimal calendar year of a civil date, e.g. 1999-07-02 -> 1999.4956...
inline double decimal_year(int year, int month, int day) {
    if (month < 1 || month > 12 || day < 1 || day > 31)
        throw std::invalid_argument("date: month/day out of range");
    static const int cum[12] = {0, 31, 59, 90, 120, 151, 181, 212, 243, 273, 304, 334};
    const bool leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
    int doy = cum[month - 1] + day;
    if (leap && month > 2) ++doy;
    return year + (doy - 1) / days_per_year;
}

class RateTable {
public:
    RateTable(int age_min, int age_max, int year_min, int year_max)
        : age_min_(age_min), age_max_(age_max), year_min_(year_min), year_max_(year_max),
          hazard_(cells(), std::numeric_limits<double>::quiet_NaN()) {
        if (age_min < 0 || age_max < age_min || year_max < year_min)
            throw std::invalid_argument("rate table: bad axis ranges");
    }

    RateTable(const RateTable& o)
        : age_min_(o.age_min_), age_max_(o.age_max_), year_min_(o.year_min_),
          year_max_(o.year_max_), hazard_(o.hazard_), clamp_count_(o.clamp_count()) {}
    RateTable(RateTable&& o) noexcept
        : age_min_(o.age_min_), age_max_(o.age_max_), year_min_(o.year_min_),
          year_max_(o.year_max_), hazard_(std::move(o.hazard_)),
          clamp_count_(o.clamp_count()) {}
    RateTable& operator=(const RateTable&) = delete;

    template <class Fn>  // fn(Sex, int age, int year) -> annual hazard
    static RateTable filled(int age_min, int age_max, int year_min, int year_max, Fn&& fn) {
        RateTable t(age_min, age_max, year_min, year_max);
        for (int s = 0; s < 2; ++s)
            for (int a = age_min; a <= age_max; ++a)
                for (int y = year_min; y <= year_max; ++y)
                    t.set(static_cast<Sex>(s), a, y, fn(static_cast<Sex>(s), a, y));
        return t;
    }

    static RateTable constant(double rate, int age_min = 0, int age_max = 110,
                              int year_min = 1980, int year_max = 2020) {
        return filled(age_min, age_max, year_min, year_max,
                      [rate](Sex, int, int) { return rate; });
    }

    void set(Sex sex, int age, int year, double rate) {
        if (!(rate >= 0.0) || !std::isfinite(rate))
            throw std::invalid_argument("rate table: hazard must be finite and >= 0");
        hazard_[index(sex, age, year)] = rate;
    }

    // Hazard of the cell containing (age, year); out-of-range clamps to the
    // nearest edge and bumps the clamp counter.
    double rate(Sex sex, double age, double year, bool* clamped = nullptr) const {
        int a = static_cast<int>(std::floor(age));
        int y = static_cast<int>(std::floor(year));
        bool cl = false;
        if (a < age_min_) { a = age_min_; cl = true; }
        if (a > age_max_) { a = age_max_; cl = true; }
        if (y < year_min_) { y = year_min_; cl = true; }
        if (y > year_max_) { y = year_max_; cl = true; }
        if (cl) {
            clamp_count_.fetch_add(1, std::memory_order_relaxed);
            if (clamped) *clamped = true;
        }
        return hazard_[index(sex, a, y)];
    }

    int age_min() const { return age_min_; }
    int age_max() const { return age_max_; }
    int year_min() const { return year_min_; }
    int year_max() const { return year_max_; }
    std::size_t size() const { return hazard_.size(); }
    std::uint64_t clamp_count() const { return clamp_count_.load(std::memory_order_relaxed); }

    void check_complete() const {
        for (std::size_t i = 0; i < hazard_.size(); ++i)
            if (std::isnan(hazard_[i])) {
                const auto [s, a, y] = unindex(i);
                throw std::invalid_argument("rate table: missing cell (" +
                                            std::string(s == Sex::male ? "male" : "female") + "," +
                                            std::to_string(a) + "," + std::to_string(y) + ")");
            }
    }

private:
    std::size_t cells() const {
        return 2ull * (age_max_ - age_min_ + 1) * (year_max_ - year_min_ + 1);
    }
    std::size_t index(Sex sex, int age, int year) const {
        if (age < age_min_ || age > age_max_ || year < year_min_ || year > year_max_)
            throw std::invalid_argument("rate table: cell out of declared ranges");
        const std::size_t ny = year_max_ - year_min_ + 1;
        const std::size_t na = age_max_ - age_min_ + 1;
        return (static_cast<std::size_t>(sex) * na + (age - age_min_)) * ny + (year - year_min_);
    }
    std::tuple<Sex, int, int> unindex(std::size_t i) const {
        const std::size_t ny = year_max_ - year_min_ + 1;
        const std::size_t na = age_max_ - age_min_ + 1;
        return {static_cast<Sex>(i / (na * ny)), static_cast<int>(age_min_ + (i / ny) % na),
                static_cast<int>(year_min_ + i % ny)};
    }

    int age_min_, age_max_, year_min_, year_max_;
    std::vector<double> hazard_;
    mutable std::atomic<std::uint64_t> clamp_count_{0};

    friend RateTable load_rate_table(std::istream&, TableUnit);
};

// Long CSV, header "sex,age,year,hazard". Every cell of the spanned
// (sex, age, year) box must appear exactly once.
inline RateTable load_rate_table(std::istream& in, TableUnit unit = TableUnit::hazard) {
    struct Row { Sex sex; int age, year; double value; std::size_t line; };
    std::vector<Row> rows;
    std::string line;
    std::size_t lineno = 0;

    auto fail = [&](const std::string& why) -> RateTable {
        throw std::invalid_argument("rate table line " + std::to_string(lineno) + ": " + why);
    };

    if (!std::getline(in, line)) throw std::invalid_argument("rate table: empty input");
    lineno = 1;
    {
        std::string h = line;
        h.erase(std::remove_if(h.begin(), h.end(), [](unsigned char c) { return std::isspace(c); }), h.end());
        if (h != "sex,age,year,hazard" && h != "sex,age,year,prob")
            fail("expected header sex,age,year,hazard");
    }

    int amin = 1 << 30, amax = -(1 << 30), ymin = 1 << 30, ymax = -(1 << 30);
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        std::string sex_s, age_s, year_s, val_s;
        if (!std::getline(ls, sex_s, ',') || !std::getline(ls, age_s, ',') ||
            !std::getline(ls, year_s, ',') || !std::getline(ls, val_s))
            fail("expected 4 comma-separated fields");
        auto trim = [](std::string& s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            s = b == std::string::npos ? "" : s.substr(b, e - b + 1);
        };
        trim(sex_s); trim(age_s); trim(year_s); trim(val_s);
        Row r;
        if (sex_s == "male") r.sex = Sex::male;
        else if (sex_s == "female") r.sex = Sex::female;
        else fail("sex must be male or female, got '" + sex_s + "'");
        try {
            r.age = std::stoi(age_s);
            r.year = std::stoi(year_s);
            r.value = std::stod(val_s);
        } catch (const std::exception&) {
            fail("cannot parse numeric field");
        }
        if (r.age < 0) fail("negative age");
        if (!std::isfinite(r.value)) fail("non-finite value");
        if (unit == TableUnit::probability) {
            if (r.value < 0.0 || r.value >= 1.0)
                fail("death probability must lie in [0, 1)");
            r.value = -std::log1p(-r.value);
        } else if (r.value < 0.0) {
            fail("negative hazard");
        }
        r.line = lineno;
        amin = std::min(amin, r.age); amax = std::max(amax, r.age);
        ymin = std::min(ymin, r.year); ymax = std::max(ymax, r.year);
        rows.push_back(r);
    }
    if (rows.empty()) throw std::invalid_argument("rate table: no data rows");

    RateTable table(amin, amax, ymin, ymax);
    std::vector<bool> seen(table.size(), false);
    for (const Row& r : rows) {
        lineno = r.line;
        const std::size_t i = table.index(r.sex, r.age, r.year);
        if (seen[i]) fail("duplicate cell");
        seen[i] = true;
        table.hazard_[i] = r.value;
    }
    table.check_complete();
    return table;
}

// Piecewise-constant population hazard along follow-up time, with exact
// piecewise-exponential integration. times has one more entry than rates;
// times.front() == 0 and times.back() == horizon.
struct HazardPath {
    std::vector<double> times;
    std::vector<double> rates;
    std::vector<double> cumhaz;  // prefix integral of rates at each boundary
    bool clamped = false;

    double horizon() const { return times.back(); }

    // Index of the segment containing t (right-continuous; t == horizon maps
    // to the last segment).
    std::size_t segment(double t) const {
        if (t < 0.0 || t > times.back() + 1e-12)
            throw std::out_of_range("hazard path: time beyond horizon");
        const auto it = std::upper_bound(times.begin(), times.end(), t);
        const std::size_t j = static_cast<std::size_t>(it - times.begin());
        return std::min(j == 0 ? 0 : j - 1, rates.size() - 1);
    }

    double rate_at(double t) const { return rates[segment(t)]; }

    double cumulative_hazard(double t) const {
        const std::size_t j = segment(t);
        return cumhaz[j] + rates[j] * (t - times[j]);
    }
};

// Population survival S_P(t) = exp(-int_0^t lambda_P).
inline double population_survival(const HazardPath& path, double t) {
    return std::exp(-path.cumulative_hazard(t));
}

// Instantaneous rate of -dS_P at t: lambda_P(t) * S_P(t). The mesh integrator
// supplies the dt.
inline double population_density_increment(const HazardPath& path, double t) {
    return path.rate_at(t) * population_survival(path, t);
}

// Exact inverse of S_P: the t with population_survival(path, t) = u. When the
// path's total hazard cannot reach -log(u) before the horizon, returns
// horizon + 1 as a beyond-any-cut sentinel.
inline double sample_population_time(const HazardPath& path, double u) {
    if (!(u > 0.0 && u < 1.0))
        throw std::invalid_argument("population time: u must lie in (0, 1)");
    const double target = -std::log(u);
    if (target > path.cumhaz.back()) return path.horizon() + 1.0;
    const auto it = std::upper_bound(path.cumhaz.begin(), path.cumhaz.end(), target);
    std::size_t j = static_cast<std::size_t>(it - path.cumhaz.begin());
    j = std::min(j == 0 ? 0 : j - 1, path.rates.size() - 1);
    if (path.rates[j] == 0.0) return path.times[j];  // flat stretch: earliest time
    return path.times[j] + (target - path.cumhaz[j]) / path.rates[j];
}

// Materializes lambda_P(t) for one individual over [0, horizon], with
// breakpoints at every birthday anniversary and New Year crossing, merged
// when coincident.
inline HazardPath hazard_path(const RateTable& table, const Demographics& demo, double horizon) {
    if (!(horizon > 0.0)) throw std::invalid_argument("hazard path: horizon must be > 0");
    if (!(demo.age_at_diagnosis >= 0.0))
        throw std::invalid_argument("hazard path: age at diagnosis must be >= 0");

    const double a0 = demo.age_at_diagnosis;
    const double d0 = demo.diagnosis_date;

    std::vector<double> cuts;
    cuts.push_back(0.0);
    for (double t = std::floor(a0) + 1.0 - a0; t < horizon; t += 1.0) cuts.push_back(t);
    for (double t = std::floor(d0) + 1.0 - d0; t < horizon; t += 1.0) cuts.push_back(t);
    cuts.push_back(horizon);
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end(),
                           [](double a, double b) { return b - a <= 1e-12; }),
               cuts.end());
    if (cuts.back() < horizon) cuts.back() = horizon;  // unique() may have eaten the endpoint

    HazardPath path;
    path.times = std::move(cuts);
    path.rates.resize(path.times.size() - 1);
    path.cumhaz.resize(path.times.size());
    path.cumhaz[0] = 0.0;
    for (std::size_t j = 0; j + 1 < path.times.size(); ++j) {
        const double mid = 0.5 * (path.times[j] + path.times[j + 1]);
        bool cl = false;
        path.rates[j] = table.rate(demo.sex, a0 + mid, d0 + mid, &cl);
        path.clamped |= cl;
        path.cumhaz[j + 1] = path.cumhaz[j] + path.rates[j] * (path.times[j + 1] - path.times[j]);
    }
    return path;
}

} // namespace netsurv
