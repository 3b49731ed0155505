#include <doctest.h>

#include <cmath>
#include <fstream>

#include "modcon/errors.hpp"
#include "modcon/fixtures.hpp"
#include "modcon/resolution.hpp"
#include "modcon/stats.hpp"
#include "reference_solver.hpp"

using namespace modcon;

namespace {

DatasetManifest manifest_with(int conflict_per_combo, int no_conflict_per_combo) {
    GenerationConfig g;
    g.conflict_per_combo = conflict_per_combo;
    g.no_conflict_per_combo = no_conflict_per_combo;
    return generate_dataset(g);
}

std::vector<int> labels_of(const DatasetManifest& m, const DumpData& d) {
    std::vector<int> y;
    for (const auto& id : d.index.sample_ids) y.push_back(m.find(id)->conflict_label ? 1 : 0);
    return y;
}

}  // namespace

TEST_CASE("planted direction is a seeded unit vector per cell") {
    PlantedSignalConfig cfg;
    const auto u = planted_direction(cfg, 12, ActivationKind::residual);
    double norm = 0;
    for (double x : u) norm += x * x;
    CHECK(std::sqrt(norm) == doctest::Approx(1.0));
    CHECK(u == planted_direction(cfg, 12, ActivationKind::residual));
    CHECK(u != planted_direction(cfg, 12, ActivationKind::mlp_out));
    CHECK(u != planted_direction(cfg, 13, ActivationKind::residual));
}

TEST_CASE("activations: no label signal before onset, separable after") {
    const auto m = manifest_with(14, 14);  // 560 + 560 samples
    PlantedSignalConfig cfg;
    cfg.n_layers = 12;
    cfg.with_attention = false;
    cfg.detection.heads.clear();
    cfg.resolution.heads.clear();
    const auto fx = generate_fixtures(m, cfg);
    const auto y = labels_of(m, fx.data);
    const std::size_t n = y.size();
    REQUIRE(n >= 1000);

    for (auto kind : kAllKinds) {
        // Layer 9: mean difference along every coordinate stays within 3 standard errors
        // for the large majority, and along the would-be direction within 3 SE exactly.
        const auto u = planted_direction(cfg, 10, kind);
        std::vector<double> p1, p0;
        for (std::size_t s = 0; s < n; ++s) {
            const auto v = fx.data.activation(s, 9, kind);
            double proj = 0;
            for (std::size_t j = 0; j < u.size(); ++j) proj += v[j] * u[j];
            (y[s] ? p1 : p0).push_back(proj);
        }
        const double se = std::sqrt(sample_variance(p1) / p1.size() + sample_variance(p0) / p0.size());
        CHECK(std::abs(mean(p1) - mean(p0)) < 3 * se);

        // Layer 10: projection onto u separates labels.
        std::size_t correct = 0;
        for (std::size_t s = 0; s < n; ++s) {
            const auto v = fx.data.activation(s, 10, kind);
            double proj = 0;
            for (std::size_t j = 0; j < u.size(); ++j) proj += v[j] * u[j];
            correct += (proj > 0) == (y[s] == 1);
        }
        CHECK(static_cast<double>(correct) / static_cast<double>(n) >= 0.99);
    }
}

TEST_CASE("fixtures are byte-identical for the same seeds and pass validation") {
    const auto m = manifest_with(7, 7);
    PlantedSignalConfig cfg;
    cfg.n_layers = 24;
    cfg.d_model = 16;
    testsupport::TempDir a("fx-a"), b("fx-b"), c("fx-c");
    write_dump(a.path(), generate_fixtures(m, cfg).data);
    write_dump(b.path(), generate_fixtures(m, cfg).data);
    cfg.seed = 1;
    write_dump(c.path(), generate_fixtures(m, cfg).data);
    CHECK(testsupport::read_tree(a.path()) == testsupport::read_tree(b.path()));
    CHECK(testsupport::read_tree(a.path()) != testsupport::read_tree(c.path()));
    CHECK(validate_dump(a.path(), &m).passed());
}

TEST_CASE("answer records satisfy their invariants") {
    const auto m = manifest_with(21, 7);
    PlantedSignalConfig cfg;
    cfg.logit.other_rate = 0.2;
    cfg.with_activations = false;
    cfg.with_attention = false;
    const auto fx = generate_fixtures(m, cfg);
    std::size_t other = 0;
    for (std::size_t s = 0; s < fx.data.n_samples(); ++s) {
        const float pi = fx.data.answers[s * 3], pt = fx.data.answers[s * 3 + 1];
        const int code = static_cast<int>(fx.data.answers[s * 3 + 2]);
        CHECK(pi >= 0.0f);
        CHECK(pt >= 0.0f);
        CHECK(pi + pt <= 1.0f + 1e-6f);
        CHECK(code >= 0);
        CHECK(code <= 2);
        other += code == 2;
        if (!m.find(fx.data.index.sample_ids[s])->conflict_label) CHECK(std::isnan(fx.planted_strength[s]));
    }
    CHECK(other > 0);
}

TEST_CASE("planted logit model is heteroscedastic") {
    // 50 conflict samples per combination: 2000 records.
    const auto m = manifest_with(49, 1);
    PlantedSignalConfig cfg;
    cfg.with_activations = false;
    cfg.with_attention = false;
    const auto fx = generate_fixtures(m, cfg);
    std::vector<ResolutionRecord> recs;
    for (std::size_t s = 0; s < fx.data.n_samples(); ++s) {
        if (std::isnan(fx.planted_strength[s])) continue;
        recs.push_back({fx.data.index.sample_ids[s],
                        static_cast<double>(fx.data.answers[s * 3]) - fx.data.answers[s * 3 + 1],
                        fx.planted_strength[s], AlignedModality::image});
    }
    REQUIRE(recs.size() >= 1960);
    const auto h = heteroscedasticity(recs, 20);
    CHECK(h.variance_ratio() >= 4.0);
    CHECK(h.extreme_mean < h.middle_mean);
    CHECK(rank_correlation_abs_confidence(recs) < -0.3);
}

TEST_CASE("planted strengths CSV reads back as resolution records") {
    const auto m = manifest_with(7, 7);
    PlantedSignalConfig cfg;
    cfg.with_activations = false;
    cfg.with_attention = false;
    const auto fx = generate_fixtures(m, cfg);
    testsupport::TempDir dir("fx-csv");
    write_planted_strengths_csv(fx, dir / "s.csv");
    const auto recs = read_records_csv(dir / "s.csv");
    CHECK(recs.size() == 280);
    for (const auto& r : recs) CHECK(m.find(r.sample_id)->conflict_label);
}

TEST_CASE("config validation and JSON") {
    PlantedSignalConfig cfg;
    CHECK_NOTHROW(check_config(cfg));
    CHECK_NOTHROW(check_config(PlantedSignalConfig::null_config()));
    const auto back = fixture_config_from_json(to_json(cfg));
    CHECK(to_json(back) == to_json(cfg));

    auto bad = cfg;
    bad.signal_onset_layer = 28;
    CHECK_THROWS_AS(check_config(bad), ConfigError);
    bad = cfg;
    bad.detection.heads.push_back(28);
    CHECK_THROWS_AS(check_config(bad), ConfigError);
    bad = cfg;
    bad.resolution.heads = {3};
    bad.resolution.peak_layer = 19;
    CHECK_THROWS_AS(check_config(bad), ConfigError);
    bad = cfg;
    bad.noise_sigma = 0;
    CHECK_THROWS_AS(check_config(bad), ConfigError);

    auto j = to_json(cfg);
    j["mystery"] = 1;
    CHECK_THROWS_AS(fixture_config_from_json(j), ConfigError);
    j = to_json(cfg);
    j["logit_model"]["typo"] = 1;
    CHECK_THROWS_AS(fixture_config_from_json(j), ConfigError);
    CHECK(fixture_config_from_json(nlohmann::json::object()).n_layers == 28);
}

TEST_CASE("heavy offsets trigger a clipping warning") {
    const auto m = manifest_with(7, 7);
    PlantedSignalConfig cfg;
    cfg.with_activations = false;
    cfg.attention.text_mean_lo = 0.95;
    cfg.attention.text_mean_hi = 1.0;
    cfg.attention.noise_sd = 0.05;
    const auto fx = generate_fixtures(m, cfg);
    CHECK_FALSE(fx.warnings.empty());
}

TEST_CASE("triangular head profile") {
    HeadPlan p{{1, 2}, 18, 2, 0.1};
    CHECK(p.offset_at(18) == doctest::Approx(0.1));
    CHECK(p.offset_at(16) == doctest::Approx(0.1 / 3));
    CHECK(p.offset_at(15) == 0.0);
    CHECK(p.offset_at(21) == 0.0);
    CHECK(p.expand(28).size() == 10);
}
