// Observed patient records and cohort CSV ingestion.
//
// A record is what a registry observes: follow-up time, the censoring
// indicator (status 1 = death from any cause, 0 = censored), demographics,
// and an optional group label. Simulated cohorts additionally carry the
// latent truth used only by oracle-style checks.

#pragma once

#include <algorithm>
#include <cstdio>
#include <istream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "netsurv/copula.hpp"
#include "netsurv/lifetable.hpp"

namespace netsurv {

enum class TimeUnit { days, years };

struct PatientRecord {
    double time = 0.0;  // follow-up since diagnosis, years
    int status = 0;     // 1 = dead, 0 = censored
    Demographics demo;
    std::string group;  // empty when the cohort has no grouping
};

// Per-patient generative quantities retained by the simulation harness.
struct LatentTruth {
    CopulaSpec true_copula;
    std::vector<double> excess_time;      // E_i
    std::vector<double> population_time;  // P_i (horizon+1 sentinel when beyond)
    std::vector<double> censor_time;      // C_i
    std::vector<double> excess_mean;      // mu_i; S_{E_i}(t) = exp(-t / mu_i)
};

struct Cohort {
    std::vector<PatientRecord> patients;
    std::optional<LatentTruth> latent;

    std::size_t size() const { return patients.size(); }

    double max_time() const {
        double m = 0.0;
        for (const auto& p : patients) m = std::max(m, p.time);
        return m;
    }

    bool has_groups() const {
        for (const auto& p : patients)
            if (!p.group.empty()) return true;
        return false;
    }

    // Distinct labels in lexicographic order.
    std::vector<std::string> group_labels() const {
        std::vector<std::string> labels;
        for (const auto& p : patients)
            if (std::find(labels.begin(), labels.end(), p.group) == labels.end())
                labels.push_back(p.group);
        std::sort(labels.begin(), labels.end());
        return labels;
    }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream ls(line);
    while (std::getline(ls, field, ',')) {
        const auto b = field.find_first_not_of(" \t\r");
        const auto e = field.find_last_not_of(" \t\r");
        out.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

// "2001-07-15" or a decimal year like "2001.54".
inline double parse_diag_date(const std::string& s) {
    if (s.find('-', 1) != std::string::npos) {
        int y, m, d;
        if (std::sscanf(s.c_str(), "%d-%d-%d", &y, &m, &d) != 3)
            throw std::invalid_argument("expected ISO date YYYY-MM-DD, got '" + s + "'");
        return decimal_year(y, m, d);
    }
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("bad decimal year '" + s + "'");
    return v;
}

} // namespace detail

// Header "time,status,sex,age,diag_date" with optional trailing ",group".
inline Cohort load_cohort(std::istream& in, TimeUnit time_unit = TimeUnit::days,
                          TimeUnit age_unit = TimeUnit::years) {
    Cohort cohort;
    std::string line;
    std::size_t lineno = 0;
    auto fail = [&](const std::string& why) {
        throw std::invalid_argument("cohort line " + std::to_string(lineno) + ": " + why);
    };

    if (!std::getline(in, line)) throw std::invalid_argument("cohort: empty input");
    lineno = 1;
    const auto header = detail::split_csv_line(line);
    bool grouped = false;
    if (header.size() == 6 && header[5] == "group") grouped = true;
    else if (header.size() != 5) fail("expected header time,status,sex,age,diag_date[,group]");
    const char* names[5] = {"time", "status", "sex", "age", "diag_date"};
    for (int i = 0; i < 5; ++i)
        if (header[i] != names[i]) fail(std::string("expected column '") + names[i] + "', got '" + header[i] + "'");

    const double time_scale = time_unit == TimeUnit::days ? 1.0 / days_per_year : 1.0;
    const double age_scale = age_unit == TimeUnit::days ? 1.0 / days_per_year : 1.0;

    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto f = detail::split_csv_line(line);
        if (f.size() != (grouped ? 6u : 5u)) fail("wrong number of fields");
        PatientRecord r;
        try {
            r.time = std::stod(f[0]) * time_scale;
            r.status = std::stoi(f[1]);
            r.demo.age_at_diagnosis = std::stod(f[3]) * age_scale;
            r.demo.diagnosis_date = detail::parse_diag_date(f[4]);
        } catch (const std::invalid_argument& e) {
            fail(e.what());
        } catch (const std::exception&) {
            fail("cannot parse numeric field");
        }
        if (f[2] == "male") r.demo.sex = Sex::male;
        else if (f[2] == "female") r.demo.sex = Sex::female;
        else fail("sex must be male or female, got '" + f[2] + "'");
        if (!(r.time > 0.0)) fail("follow-up time must be > 0");
        if (r.status != 0 && r.status != 1) fail("status must be 0 or 1");
        if (r.demo.age_at_diagnosis < 0.0) fail("age must be >= 0");
        if (grouped) {
            if (f[5].empty()) fail("empty group label");
            r.group = f[5];
        }
        cohort.patients.push_back(std::move(r));
    }
    if (cohort.patients.empty()) throw std::invalid_argument("cohort: no data rows");
    return cohort;
}

} // namespace netsurv
