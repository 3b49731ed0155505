#include <doctest.h>

#include "modcon/errors.hpp"
#include "modcon/fixtures.hpp"
#include "modcon/probe.hpp"
#include "reference_solver.hpp"

using namespace modcon;

namespace {

struct SweepFixture {
    testsupport::TempDir dir{"sweep"};
    DatasetManifest manifest;
    std::optional<Dump> dump;
};

std::unique_ptr<SweepFixture> make_fixture(PlantedSignalConfig cfg) {
    auto f = std::make_unique<SweepFixture>();
    GenerationConfig g;
    g.conflict_per_combo = 70;
    g.no_conflict_per_combo = 70;
    f->manifest = generate_dataset(g);
    cfg.with_attention = false;
    write_dump(f->dir.path(), generate_fixtures(f->manifest, cfg).data);
    f->dump = Dump::open(f->dir.path());
    return f;
}

PlantedSignalConfig reduced(PlantedSignalConfig cfg) {
    cfg.n_layers = 4;
    cfg.signal_onset_layer = 2;
    cfg.d_model = 32;
    cfg.detection.heads.clear();
    cfg.resolution.heads.clear();
    return cfg;
}

}  // namespace

TEST_CASE("sweep recovers the planted onset layer") {
    auto f = make_fixture(reduced(PlantedSignalConfig{}));
    SweepConfig cfg;
    cfg.threads = 2;
    const auto r = layerwise_sweep(*f->dump, f->manifest, cfg);
    REQUIRE(r.cells.size() == 12);
    for (const auto& c : r.cells) {
        CAPTURE(c.layer);
        CHECK(c.n_test >= 400);
        if (c.layer < 2)
            CHECK(c.accuracy <= 0.55);
        else
            CHECK(c.accuracy >= 0.95);
    }
    CHECK(r.best().layer >= 2);
}

TEST_CASE("null fixture sweep stays at chance and is deterministic") {
    auto f = make_fixture(reduced(PlantedSignalConfig::null_config()));
    SweepConfig cfg;
    cfg.threads = 2;
    const auto a = layerwise_sweep(*f->dump, f->manifest, cfg);
    for (const auto& c : a.cells) {
        CHECK(c.accuracy >= 0.45);
        CHECK(c.accuracy <= 0.55);
    }
    cfg.threads = 1;
    const auto b = layerwise_sweep(*f->dump, f->manifest, cfg);
    REQUIRE(a.cells.size() == b.cells.size());
    for (std::size_t i = 0; i < a.cells.size(); ++i) {
        CHECK(a.cells[i].accuracy == b.cells[i].accuracy);
        CHECK(a.models[i].weights == b.models[i].weights);
        CHECK(a.models[i].bias == b.models[i].bias);
    }
}

TEST_CASE("sweep CSV round-trip") {
    auto f = make_fixture(reduced(PlantedSignalConfig{}));
    SweepConfig cfg;
    cfg.lambda = 0.01;
    const auto r = layerwise_sweep(*f->dump, f->manifest, cfg);
    testsupport::TempDir dir("sweep-csv");
    write_sweep_csv(r, dir / "sweep.csv");
    const auto back = read_sweep_csv(dir / "sweep.csv");
    REQUIRE(back.size() == r.cells.size());
    for (std::size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].layer == r.cells[i].layer);
        CHECK(back[i].kind == r.cells[i].kind);
        CHECK(back[i].accuracy == doctest::Approx(r.cells[i].accuracy).epsilon(1e-6));
    }
}

TEST_CASE("missing activation kind is named") {
    testsupport::TempDir dir("sweep-missing");
    GenerationConfig g;
    g.conflict_per_combo = 7;
    g.no_conflict_per_combo = 7;
    const auto m = generate_dataset(g);
    auto d = generate_fixtures(m, reduced(PlantedSignalConfig{})).data;
    d.activations.erase(ActivationKind::mlp_out);
    d.index.d_model.erase(ActivationKind::mlp_out);
    write_dump(dir.path(), d);
    const auto dump = Dump::open(dir.path());
    try {
        layerwise_sweep(dump, m, SweepConfig{});
        FAIL("expected a DataError");
    } catch (const DataError& e) {
        CHECK(std::string(e.what()).find("mlp_out") != std::string::npos);
    }
}
