#include <doctest.h>

#include <cmath>

#include "modcon/errors.hpp"
#include "modcon/resolution.hpp"
#include "modcon/rng.hpp"
#include "reference_solver.hpp"

using namespace modcon;

namespace {

std::vector<ResolutionRecord> records_from(const std::vector<double>& conf, const std::vector<double>& strength) {
    std::vector<ResolutionRecord> out;
    for (std::size_t i = 0; i < conf.size(); ++i)
        out.push_back({"r" + std::to_string(i), conf[i], strength[i], AlignedModality::image});
    return out;
}

}  // namespace

TEST_CASE("resolution confidence arithmetic") {
    CHECK(resolution_confidence(0.5, 0.5) == 0.0);
    CHECK(resolution_confidence(1.0, 0.0) == 1.0);
    CHECK(resolution_confidence(0.2, 0.7) == doctest::Approx(-0.5));
    CHECK(resolution_confidence(0.2, 0.2, {true}) == 0.0);
    CHECK(resolution_confidence(0.3, 0.1, {true}) == doctest::Approx(0.5));
    CHECK_THROWS_AS(resolution_confidence(0.8, 0.8), ArgumentError);
    CHECK_THROWS_AS(resolution_confidence(-0.1, 0.2), ArgumentError);
}

TEST_CASE("degenerate records land in the middle bin") {
    const auto recs = records_from(std::vector<double>(30, 0.0), std::vector<double>(30, 0.9));
    const auto b = binned_relationship(recs, 20);
    REQUIRE(b.bins.size() == 20);
    const auto mid = confidence_bin(0.0, 20);
    for (std::size_t i = 0; i < 20; ++i) {
        if (i == mid) {
            CHECK(b.bins[i].count == 30);
            CHECK(b.bins[i].mean_strength == doctest::Approx(0.9));
            CHECK(b.bins[i].variance_strength == 0.0);
        } else {
            CHECK(b.bins[i].count == 0);
        }
    }
}

TEST_CASE("bin edges: right-open except the last") {
    CHECK(confidence_bin(-1.0, 4) == 0);
    CHECK(confidence_bin(-0.5, 4) == 1);
    CHECK(confidence_bin(0.0, 4) == 2);
    CHECK(confidence_bin(1.0, 4) == 3);
    CHECK_THROWS_AS(confidence_bin(1.01, 4), ArgumentError);
    CHECK_THROWS_AS(binned_relationship({}, 1), ArgumentError);
}

TEST_CASE("bin counts partition random records") {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> c, s;
        const int n = static_cast<int>(rng.uniform_int(0, 300));
        for (int i = 0; i < n; ++i) {
            c.push_back(rng.uniform(-1, 1));
            s.push_back(rng.uniform());
        }
        const auto bins = static_cast<std::size_t>(rng.uniform_int(2, 40));
        CHECK(binned_relationship(records_from(c, s), bins).total() == static_cast<std::size_t>(n));
    }
}

TEST_CASE("planted heteroscedastic records") {
    Rng rng(77);
    std::vector<double> c, s;
    for (int i = 0; i < 2000; ++i) {
        const double conf = rng.uniform(-1, 1);
        const double a = std::abs(conf);
        const double t = std::clamp((a - 0.2) / 0.6, 0.0, 1.0);
        c.push_back(conf);
        s.push_back(std::clamp(rng.normal(0.9 - 0.2 * t, 0.02 + 0.13 * t), 0.0, 1.0));
    }
    const auto recs = records_from(c, s);
    const auto h = heteroscedasticity(recs, 20);
    CHECK(h.extreme_variance > 4 * h.middle_variance);
    CHECK(h.extreme_mean < h.middle_mean);
    CHECK(rank_correlation_abs_confidence(recs) < -0.3);
}

TEST_CASE("spearman extremes and null") {
    Rng rng(5);
    std::vector<double> c, inv, same, indep;
    for (int i = 0; i < 1000; ++i) {
        c.push_back(rng.uniform(-1, 1));
        inv.push_back(1 - std::abs(c.back()));
        same.push_back(std::abs(c.back()));
        indep.push_back(rng.uniform());
    }
    CHECK(rank_correlation_abs_confidence(records_from(c, inv)) == doctest::Approx(-1.0));
    CHECK(rank_correlation_abs_confidence(records_from(c, same)) == doctest::Approx(1.0));
    CHECK(std::abs(rank_correlation_abs_confidence(records_from(c, indep))) < 0.1);
}

TEST_CASE("records CSV round-trip") {
    testsupport::TempDir dir("records");
    const std::vector<ResolutionRecord> recs{{"a", -0.25, 0.8125, AlignedModality::text},
                                             {"b", 0.5, 0.125, AlignedModality::other}};
    write_records_csv(recs, dir / "r.csv");
    const auto back = read_records_csv(dir / "r.csv");
    REQUIRE(back.size() == 2);
    CHECK(back[0].sample_id == "a");
    CHECK(back[0].confidence == -0.25);
    CHECK(back[1].conflict_strength == 0.125);
    CHECK(back[1].aligned_modality == AlignedModality::other);
    CHECK(testsupport::read_file(dir / "r.csv").rfind("sample_id,confidence,conflict_strength,aligned_modality\n", 0) == 0);
}
