#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "netsurv/lifetable.hpp"
#include "netsurv/rng.hpp"
#include "support/fixtures.hpp"

using namespace netsurv;
using Catch::Matchers::WithinAbs;

namespace {

std::string full_table_csv(double rate, int age_max = 110, int year_lo = 1980,
                           int year_hi = 2020) {
    std::ostringstream out;
    out << "sex,age,year,hazard\n";
    for (const char* sex : {"male", "female"})
        for (int a = 0; a <= age_max; ++a)
            for (int y = year_lo; y <= year_hi; ++y)
                out << sex << ',' << a << ',' << y << ',' << rate << '\n';
    return out.str();
}

HazardPath two_segment_path() {
    // 0.1 on [0,1), 0.3 on [1,2)
    HazardPath p;
    p.times = {0.0, 1.0, 2.0};
    p.rates = {0.1, 0.3};
    p.cumhaz = {0.0, 0.1, 0.4};
    return p;
}

} // namespace

TEST_CASE("rate table CSV loading", "[lifetable]") {
    SECTION("full fixture has the expected cardinality") {
        std::istringstream in(full_table_csv(0.2));
        const auto table = load_rate_table(in);
        REQUIRE(table.size() == 2u * 111u * 41u);
        REQUIRE(table.rate(Sex::male, 40.7, 1995.5) == 0.2);
        REQUIRE(table.rate(Sex::female, 0.0, 1980.0) == 0.2);
    }
    SECTION("negative hazard is rejected with its line number") {
        std::istringstream in("sex,age,year,hazard\nmale,40,1995,0.1\nmale,40,1996,-0.1\n");
        REQUIRE_THROWS_WITH(load_rate_table(in),
                            Catch::Matchers::ContainsSubstring("line 3") &&
                                Catch::Matchers::ContainsSubstring("negative hazard"));
    }
    SECTION("duplicate cells are rejected") {
        std::istringstream in(
            "sex,age,year,hazard\nmale,40,1995,0.1\nfemale,40,1995,0.1\nmale,40,1995,0.2\n");
        REQUIRE_THROWS_WITH(load_rate_table(in),
                            Catch::Matchers::ContainsSubstring("duplicate cell"));
    }
    SECTION("missing cells are rejected") {
        std::istringstream in(
            "sex,age,year,hazard\nmale,40,1995,0.1\nmale,41,1995,0.1\nfemale,40,1995,0.1\n");
        REQUIRE_THROWS_WITH(load_rate_table(in),
                            Catch::Matchers::ContainsSubstring("missing cell"));
    }
    SECTION("malformed rows are rejected") {
        std::istringstream in("sex,age,year,hazard\nmale,forty,1995,0.1\n");
        REQUIRE_THROWS_WITH(load_rate_table(in), Catch::Matchers::ContainsSubstring("line 2"));
        std::istringstream in2("sex,age,hazard\n");
        REQUIRE_THROWS_AS(load_rate_table(in2), std::invalid_argument);
    }
    SECTION("probability unit converts through -log(1-q)") {
        std::istringstream in(
            "sex,age,year,hazard\nmale,40,1995,0.1\nfemale,40,1995,0.1\n");
        const auto table = load_rate_table(in, TableUnit::probability);
        REQUIRE_THAT(table.rate(Sex::male, 40.2, 1995.9), WithinAbs(-std::log(0.9), 1e-15));
        std::istringstream bad("sex,age,year,hazard\nmale,40,1995,1.0\n");
        REQUIRE_THROWS_AS(load_rate_table(bad, TableUnit::probability), std::invalid_argument);
    }
}

TEST_CASE("hazard path follows the Lexis diagonal", "[lifetable]") {
    const auto table = RateTable::constant(0.2);

    SECTION("constant table yields the constant rate everywhere") {
        const auto path = hazard_path(table, {Sex::male, 51.3, 1997.4}, 15.0);
        for (double t : {0.0, 0.4, 3.7, 9.99, 15.0}) REQUIRE(path.rate_at(t) == 0.2);
        REQUIRE_THAT(population_survival(path, 1.0), WithinAbs(std::exp(-0.2), 1e-15));
    }
    SECTION("breakpoints at birthdays and New Year crossings") {
        // age 64.5, diagnosed at 1999.25: 65th birthday at t=0.5, New Year at 0.75
        const auto path = hazard_path(table, {Sex::female, 64.5, 1999.25}, 1.0);
        REQUIRE(path.times.size() == 4);
        REQUIRE_THAT(path.times[1], WithinAbs(0.5, 1e-12));
        REQUIRE_THAT(path.times[2], WithinAbs(0.75, 1e-12));
        REQUIRE(path.times.front() == 0.0);
        REQUIRE(path.times.back() == 1.0);
    }
    SECTION("coincident crossings merge") {
        const auto path = hazard_path(table, {Sex::female, 64.5, 1999.5}, 1.0);
        REQUIRE(path.times.size() == 3);  // 0, 0.5, 1
        REQUIRE_THAT(path.times[1], WithinAbs(0.5, 1e-12));
    }
    SECTION("age and horizon validation") {
        REQUIRE_THROWS_AS(hazard_path(table, {Sex::male, -1.0, 2000.0}, 5.0),
                          std::invalid_argument);
        REQUIRE_THROWS_AS(hazard_path(table, {Sex::male, 50.0, 2000.0}, 0.0),
                          std::invalid_argument);
    }
    SECTION("out-of-table ages clamp and are flagged") {
        const auto before = table.clamp_count();
        const auto path = hazard_path(table, {Sex::male, 108.5, 2000.0}, 10.0);
        REQUIRE(path.clamped);
        REQUIRE(table.clamp_count() > before);
        REQUIRE(path.rate_at(9.0) == 0.2);  // clamped to the edge cell value
    }
}

TEST_CASE("population survival and density", "[lifetable]") {
    const auto table = RateTable::constant(0.2);
    const auto path = hazard_path(table, {Sex::male, 60.0, 2000.0}, 20.0);

    REQUIRE(population_survival(path, 0.0) == 1.0);
    REQUIRE_THAT(population_survival(path, 5.0), WithinAbs(std::exp(-1.0), 1e-15));
    REQUIRE_THAT(population_density_increment(path, 0.0), WithinAbs(0.2, 1e-15));
    REQUIRE_THAT(population_density_increment(path, 5.0), WithinAbs(0.2 * std::exp(-1.0), 1e-15));
    REQUIRE_THROWS_AS(population_survival(path, 20.5), std::out_of_range);

    const auto zero = hazard_path(RateTable::constant(0.0), {Sex::male, 60.0, 2000.0}, 20.0);
    REQUIRE(population_density_increment(zero, 7.3) == 0.0);

    SECTION("two-segment hand integration") {
        const auto p2 = two_segment_path();
        REQUIRE_THAT(population_survival(p2, 2.0), WithinAbs(std::exp(-0.4), 1e-15));
        REQUIRE_THAT(population_survival(p2, 1.0), WithinAbs(std::exp(-0.1), 1e-15));
        REQUIRE_THAT(population_density_increment(p2, 1.5),
                     WithinAbs(0.3 * std::exp(-0.25), 1e-15));
    }
    SECTION("survival is non-increasing and continuous at breakpoints") {
        const auto& big = fixtures::sim_table();
        const auto p = hazard_path(big, {Sex::female, 64.5, 1999.25}, 15.0);
        double prev = 1.0;
        for (double t = 0.0; t <= 15.0; t += 0.01) {
            const double s = population_survival(p, t);
            REQUIRE(s <= prev + 1e-15);
            prev = s;
        }
        for (std::size_t j = 1; j + 1 < p.times.size(); ++j) {
            const double t = p.times[j];
            REQUIRE_THAT(population_survival(p, t - 1e-9),
                         WithinAbs(population_survival(p, t + 1e-9), 1e-8));
        }
    }
}

TEST_CASE("population time sampling inverts survival", "[lifetable]") {
    const auto table = RateTable::constant(0.2);
    const auto path = hazard_path(table, {Sex::male, 60.0, 2000.0}, 20.0);

    REQUIRE_THAT(sample_population_time(path, std::exp(-1.0)), WithinAbs(5.0, 1e-12));
    REQUIRE(sample_population_time(path, 1.0 - 1e-12) < 1e-10);
    REQUIRE_THAT(sample_population_time(two_segment_path(), std::exp(-0.4)),
                 WithinAbs(2.0, 1e-12));

    // beyond-horizon sentinel
    REQUIRE(sample_population_time(path, std::exp(-5.0)) == 21.0);

    REQUIRE_THROWS_AS(sample_population_time(path, 0.0), std::invalid_argument);
    REQUIRE_THROWS_AS(sample_population_time(path, 1.0), std::invalid_argument);

    SECTION("round trip is exact on a realistic path") {
        const auto p = hazard_path(fixtures::sim_table(), {Sex::male, 72.25, 1993.6}, 30.0);
        for (double t = 0.25; t < 30.0; t += 0.25) {
            const double u = population_survival(p, t);
            REQUIRE_THAT(sample_population_time(p, u), WithinAbs(t, 1e-12));
        }
    }
}

TEST_CASE("sampled population times reproduce the survival curve", "[lifetable][heavy]") {
    const auto& table = fixtures::sim_table();
    const auto path = hazard_path(table, {Sex::male, 70.0, 1995.0}, 30.0);
    const std::size_t n = 100000;
    CounterRng rng(314);
    std::vector<double> times(n);
    for (auto& t : times) t = sample_population_time(path, rng.uniform01());
    for (double t : {1.0, 5.0, 10.0}) {
        const double expected = population_survival(path, t);
        double alive = 0.0;
        for (double x : times) alive += x > t ? 1.0 : 0.0;
        const double se = std::sqrt(expected * (1.0 - expected) / static_cast<double>(n));
        REQUIRE_THAT(alive / static_cast<double>(n), WithinAbs(expected, 3.0 * se));
    }
}

TEST_CASE("decimal year conversion", "[lifetable]") {
    REQUIRE(decimal_year(1999, 1, 1) == 1999.0);
    REQUIRE_THAT(decimal_year(1999, 7, 2), WithinAbs(1999.0 + 182.0 / days_per_year, 1e-12));
    REQUIRE_THAT(decimal_year(2000, 3, 1), WithinAbs(2000.0 + 60.0 / days_per_year, 1e-12));
    REQUIRE_THROWS_AS(decimal_year(2000, 13, 1), std::invalid_argument);
}
