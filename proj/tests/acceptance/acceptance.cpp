// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
// CLI stages run the real binary (MODCON_CLI_PATH); solver and dump checks run in-process.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <json.hpp>

#include "modcon/activation_store.hpp"
#include "modcon/dataset.hpp"
#include "modcon/fixtures.hpp"
#include "modcon/plot.hpp"
#include "modcon/probe.hpp"
#include "modcon/rng.hpp"
#include "reference_solver.hpp"

using namespace modcon;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

#ifndef MODCON_CLI_PATH
#define MODCON_CLI_PATH "modcon"
#endif

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

int g_failures = 0;

void report(const std::string& name, const Outcome& o) {
    std::printf("%s  %-28s %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++g_failures;
}

// Runs one criterion; an exception inside it is a failure, not a crash.
void criterion(const std::string& name, const std::function<Outcome()>& body) {
    try {
        report(name, body());
    } catch (const std::exception& e) {
        report(name, {false, std::string("exception: ") + e.what()});
    }
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

fs::path g_work;

struct CliRun {
    int exit_code = -1;
    double seconds = 0.0;
};

CliRun cli(const std::string& args, const std::string& log_name) {
    const std::string cmd = std::string("\"") + MODCON_CLI_PATH + "\" " + args + " > \"" +
                            (g_work / (log_name + ".log")).string() + "\" 2>&1";
    const auto t0 = Clock::now();
    const int status = std::system(cmd.c_str());
    CliRun r;
    r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
    r.exit_code = (status != -1 && WIFEXITED(status)) ? WEXITSTATUS(status) : -1;
    if (r.exit_code != 0) std::fprintf(stderr, "command failed (%d): %s\n", r.exit_code, cmd.c_str());
    return r;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

// Relative path -> FNV-1a digest of the file contents, streamed.
std::map<std::string, std::uint64_t> hash_tree(const fs::path& root) {
    std::map<std::string, std::uint64_t> out;
    std::vector<char> buf(1 << 20);
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        std::ifstream f(e.path(), std::ios::binary);
        std::uint64_t h = 0xcbf29ce484222325ULL;
        while (f) {
            f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
            h = fnv1a64(std::string_view(buf.data(), static_cast<std::size_t>(f.gcount())), h);
        }
        out[fs::relative(e.path(), root).generic_string()] = h;
    }
    return out;
}

nlohmann::json read_json(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw std::runtime_error("cannot open " + p.string());
    return nlohmann::json::parse(f);
}

Eigen::MatrixXd to_matrix(const testsupport::Problem& p) {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(p.n), static_cast<Eigen::Index>(p.d));
    for (std::size_t i = 0; i < p.n; ++i)
        for (std::size_t j = 0; j < p.d; ++j) X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = p.at(i, j);
    return X;
}

Eigen::VectorXd to_vector(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<HeadId> heads_from_json(const nlohmann::json& j) {
    std::vector<HeadId> out;
    for (const auto& h : j) out.push_back({h.at(0).get<int>(), h.at(1).get<int>()});
    std::sort(out.begin(), out.end());
    return out;
}

void patch_float(const fs::path& file, std::size_t index, float value) {
    std::fstream f(file, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(static_cast<std::streamoff>(index * sizeof(float)));
    unsigned char bytes[4];
    std::uint32_t bits;
    std::memcpy(&bits, &value, 4);
    for (int i = 0; i < 4; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
    f.write(reinterpret_cast<const char*>(bytes), 4);
}

void edit_index(const fs::path& dir, const std::function<void(nlohmann::json&)>& edit) {
    auto j = read_json(dir / "index.json");
    edit(j);
    std::ofstream f(dir / "index.json", std::ios::trunc);
    f << j.dump(1);
}

struct SweepCell {
    int layer;
    std::string kind;
    double accuracy;
    long n_test;
};

std::vector<SweepCell> read_sweep(const fs::path& csv) {
    const auto table = read_csv(csv);
    std::vector<SweepCell> cells;
    const auto layer = table.column("layer"), kind = table.column("kind"), acc = table.column("accuracy"),
               n = table.column("n_test");
    for (const auto& row : table.rows)
        cells.push_back({std::stoi(row[layer]), row[kind], std::stod(row[acc]), std::stol(row[n])});
    return cells;
}

// ---- in-process criteria ----

Outcome lasso_oracle() {
    int within = 0, zero_ok = 0, monotone = 0;
    double worst_gap = 0.0;
    const int instances = 25;
    for (int k = 0; k < instances; ++k) {
        const std::size_t n = 20 + static_cast<std::size_t>(k % 4) * 10;  // 20..50
        const std::size_t d = 2 + static_cast<std::size_t>(k % 7);         // 2..8
        const auto p = testsupport::random_problem(1000 + static_cast<std::uint64_t>(k), n, d);
        const auto X = to_matrix(p);
        const auto y = to_vector(p.y);
        const double lmax = lambda_max(X, y);
        const double lambda = lmax * std::pow(10.0, -0.25 * (k % 5 + 1));

        const auto ref = testsupport::reference_lasso_logistic(p, lambda);
        TrainConfig cfg;
        cfg.lambda = lambda;
        cfg.record_history = true;
        const auto fit = train_lasso_logistic(X, y, cfg);
        const double gap = std::abs(fit.objective - ref.objective);
        worst_gap = std::max(worst_gap, gap);
        if (gap <= 1e-4) ++within;
        bool mono = true;
        for (std::size_t i = 1; i < fit.history.size(); ++i) mono = mono && fit.history[i] <= fit.history[i - 1];
        if (mono) ++monotone;

        bool zeros = true;
        for (double scale : {1.0, 1.5, 10.0}) {
            TrainConfig zc;
            zc.lambda = lmax * scale;
            const auto z = train_lasso_logistic(X, y, zc);
            for (Eigen::Index j = 0; j < z.weights.size(); ++j) zeros = zeros && z.weights[j] == 0.0;
        }
        if (zeros) ++zero_ok;
    }
    return {within == instances && zero_ok == instances && monotone == instances,
            fmt("objective within 1e-4: %d/%d (worst gap %.2e); zero at lambda>=lambda_max: %d/%d; monotone: %d/%d",
                within, instances, worst_gap, zero_ok, instances, monotone, instances)};
}

Outcome gradient_check() {
    int ok = 0;
    double worst = 0.0;
    const int instances = 20;
    for (int k = 0; k < instances; ++k) {
        const std::size_t n = 10 + static_cast<std::size_t>(k) * 2, d = 1 + static_cast<std::size_t>(k % 8);
        const auto p = testsupport::random_problem(5000 + static_cast<std::uint64_t>(k), n, d);
        const auto X = to_matrix(p);
        const auto y = to_vector(p.y);
        Rng rng(static_cast<std::uint64_t>(k));
        Eigen::VectorXd w(static_cast<Eigen::Index>(d));
        for (auto& v : w) v = rng.normal();
        const double b = rng.normal();
        const auto lg = logistic_loss_grad(w, b, X, y);
        const double h = 1e-5;
        const auto D = static_cast<Eigen::Index>(d);
        Eigen::VectorXd fd(D + 1), an(D + 1);
        for (Eigen::Index j = 0; j < D; ++j) {
            Eigen::VectorXd wp = w, wm = w;
            wp[j] += h;
            wm[j] -= h;
            fd[j] = (logistic_loss_grad(wp, b, X, y).loss - logistic_loss_grad(wm, b, X, y).loss) / (2 * h);
            an[j] = lg.grad_w[j];
        }
        fd[D] = (logistic_loss_grad(w, b + h, X, y).loss - logistic_loss_grad(w, b - h, X, y).loss) / (2 * h);
        an[D] = lg.grad_b;
        const double rel = (an - fd).norm() / std::max(1e-12, fd.norm());
        worst = std::max(worst, rel);
        if (rel < 1e-5) ++ok;
    }
    return {ok == instances, fmt("%d/%d instances, worst relative error %.2e", ok, instances, worst)};
}

Outcome dump_format() {
    GenerationConfig gc;
    gc.conflict_per_combo = 7;
    gc.no_conflict_per_combo = 3;
    const auto manifest = generate_dataset(gc);
    PlantedSignalConfig pc;
    pc.d_model = 16;
    const auto fixture = generate_fixtures(manifest, pc);
    const auto& data = fixture.data;

    const fs::path dir = g_work / "dump_rt";
    write_dump(dir, data);
    const auto back = Dump::open(dir).load_all();
    bool exact = back.index.sample_ids == data.index.sample_ids && back.attention == data.attention &&
                 back.answers == data.answers;
    for (auto k : kAllKinds) {
        const auto& a = data.activations.at(k);
        const auto& b = back.activations.at(k);
        exact = exact && a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
    }
    const fs::path again = g_work / "dump_rt2";
    write_dump(again, back);
    exact = exact && hash_tree(dir) == hash_tree(again) && validate_dump(dir).passed();

    auto fresh = [&](const std::string& tag) {
        const fs::path p = g_work / ("dump_" + tag);
        write_dump(p, data);
        return p;
    };
    std::vector<std::pair<std::string, bool>> classes;
    {
        const auto p = fresh("trunc");
        fs::resize_file(p / "blobs/residual.f32", fs::file_size(p / "blobs/residual.f32") / 2);
        classes.emplace_back("truncation", validate_dump(p).has(ViolationKind::truncated_blob));
    }
    {
        const auto p = fresh("nan");
        patch_float(p / "blobs/residual.f32", 17, std::numeric_limits<float>::quiet_NaN());
        classes.emplace_back("nan", validate_dump(p).has(ViolationKind::non_finite));
    }
    {
        const auto p = fresh("range");
        patch_float(p / "blobs/attention.f32", 5, 1.5f);
        classes.emplace_back("range", validate_dump(p).has(ViolationKind::range));
    }
    {
        const auto p = fresh("dup");
        edit_index(p, [](nlohmann::json& j) { j["sample_ids"][1] = j["sample_ids"][0]; });
        classes.emplace_back("duplicate_key", validate_dump(p).has(ViolationKind::duplicate_key));
    }
    {
        const auto p = fresh("mismatch");
        edit_index(p, [](nlohmann::json& j) { j["d_model"]["residual"] = 17; });
        classes.emplace_back("index_blob_mismatch", validate_dump(p).has(ViolationKind::index_blob_mismatch));
    }
    std::string detail = exact ? "round-trip bit-exact;" : "round-trip differs;";
    bool all = exact;
    for (const auto& [name, hit] : classes) {
        detail += " " + name + (hit ? "=detected" : "=MISSED");
        all = all && hit;
    }
    return {all, detail};
}

}  // namespace

int main() {
    g_work = fs::current_path() / "acceptance_work";
    fs::remove_all(g_work);
    fs::create_directories(g_work);
    std::printf("modcon acceptance (cli: %s, work: %s)\n", MODCON_CLI_PATH, g_work.string().c_str());

    const fs::path ds = g_work / "ds", fx = g_work / "fx", sweep = g_work / "sweep", attn = g_work / "attn",
                   rep = g_work / "rep", plots = g_work / "plots";
    const fs::path manifest = ds / "manifest.jsonl";

    // End-to-end pipeline; later criteria read its outputs.
    double e2e_seconds = 0.0;
    bool e2e_ok = true;
    auto stage = [&](const std::string& args, const std::string& log) {
        const auto r = cli(args, log);
        e2e_seconds += r.seconds;
        e2e_ok = e2e_ok && r.exit_code == 0;
        return r;
    };
    const auto r_ds = stage("gen-dataset --seed 0 --out " + q(ds), "gen_dataset");
    const auto r_fx = stage("gen-fixtures --manifest " + q(manifest) + " --out " + q(fx) + " --seed 0", "gen_fixtures");
    const auto r_sw = stage("train-probes --dump " + q(fx) + " --manifest " + q(manifest) + " --out " + q(sweep) +
                                " --seed 0",
                            "train_probes");

    // Top-k at the planted set size, taken from the fixture's own config.
    std::size_t det_size = 0, res_size = 0;
    std::vector<HeadId> planted_det, planted_res;
    PlantedSignalConfig fx_config;
    try {
        fx_config = read_fixture_config(fx / "fixture_config.json");
        planted_det = fx_config.detection.expand(fx_config.n_layers);
        planted_res = fx_config.resolution.expand(fx_config.n_layers);
        std::sort(planted_det.begin(), planted_det.end());
        std::sort(planted_res.begin(), planted_res.end());
        det_size = planted_det.size();
        res_size = planted_res.size();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "cannot read fixture config: %s\n", e.what());
    }
    const std::size_t top_k = std::max<std::size_t>(1, std::max(det_size, res_size));
    stage("attn-diff --dump " + q(fx) + " --manifest " + q(manifest) + " --out " + q(attn) +
              " --top-k " + std::to_string(top_k),
          "attn_diff");
    stage("resolution-report --dump " + q(fx) + " --manifest " + q(manifest) + " --out " + q(rep) +
              " --strengths " + q(fx / "planted_strengths.csv"),
          "resolution_report");
    stage("plot " + q(sweep / "sweep.csv") + " " + q(attn / "layer_profile.csv") + " " +
              q(rep / "resolution_bins.csv") + " " + q(rep / "resolution_records.csv") + " --out " + q(plots),
          "plot");

    criterion("dataset_counts", [&]() -> Outcome {
        const auto m = read_manifest(manifest);
        std::map<std::pair<ShapeKind, ColorName>, int> per_combo;
        std::map<std::pair<ShapeKind, ColorName>, std::set<ColorName>> colors;
        int conflicts = 0;
        for (const auto& s : m.samples) {
            if (s.caption_type != CaptionType::conflict) continue;
            ++conflicts;
            per_combo[{s.shape, s.image_color}]++;
            if (s.caption_color) colors[{s.shape, s.image_color}].insert(*s.caption_color);
        }
        bool even = per_combo.size() == 40;
        for (const auto& [k, c] : per_combo) even = even && c == 140;
        bool seven = colors.size() == 40;
        for (const auto& [k, c] : colors) seven = seven && c.size() == 7;
        const bool fast = r_ds.exit_code == 0 && r_ds.seconds < 60.0;
        return {conflicts == 5600 && even && seven && fast,
                fmt("conflict=%d combos=%zu x140=%s 7-colors=%s runtime=%.1fs (<60)", conflicts, per_combo.size(),
                    even ? "yes" : "no", seven ? "yes" : "no", r_ds.seconds)};
    });

    criterion("determinism", [&]() -> Outcome {
        const fs::path ds2 = g_work / "ds_again", fx2 = g_work / "fx_again";
        const auto a = cli("gen-dataset --seed 0 --out " + q(ds2), "gen_dataset_again");
        const auto b = cli("gen-fixtures --manifest " + q(manifest) + " --out " + q(fx2) + " --seed 0",
                           "gen_fixtures_again");
        const auto h_ds = hash_tree(ds), h_ds2 = hash_tree(ds2);
        const auto h_fx = hash_tree(fx), h_fx2 = hash_tree(fx2);
        const bool same_ds = !h_ds.empty() && h_ds == h_ds2;
        const bool same_fx = !h_fx.empty() && h_fx == h_fx2;
        fs::remove_all(ds2);
        fs::remove_all(fx2);
        return {a.exit_code == 0 && b.exit_code == 0 && same_ds && same_fx,
                fmt("gen-dataset %zu files %s; gen-fixtures %zu files %s", h_ds.size(),
                    same_ds ? "identical" : "DIFFER", h_fx.size(), same_fx ? "identical" : "DIFFER")};
    });

    criterion("lasso_oracle", lasso_oracle);
    criterion("gradient_check", gradient_check);

    criterion("planted_sweep", [&]() -> Outcome {
        const auto cells = read_sweep(sweep / "sweep.csv");
        const int onset = fx_config.signal_onset_layer;
        double max_pre = 0.0, min_post = 1.0;
        long min_n = -1;
        std::set<std::string> kinds;
        std::set<int> layers;
        bool ok = true;
        for (const auto& c : cells) {
            kinds.insert(c.kind);
            layers.insert(c.layer);
            min_n = min_n < 0 ? c.n_test : std::min(min_n, c.n_test);
            if (c.layer < onset) {
                max_pre = std::max(max_pre, c.accuracy);
                ok = ok && c.accuracy <= 0.55;
            } else {
                min_post = std::min(min_post, c.accuracy);
                ok = ok && c.accuracy >= 0.95;
            }
        }
        const bool complete = kinds.size() == 3 && static_cast<int>(layers.size()) == fx_config.n_layers &&
                              cells.size() == 3 * layers.size();
        const bool fast = r_sw.exit_code == 0 && r_sw.seconds < 180.0;
        return {ok && complete && min_n >= 400 && fast && onset == 10,
                fmt("onset=%d max acc below onset %.3f (<=0.55), min acc from onset %.3f (>=0.95), cells=%zu, "
                    "n_test=%ld (>=400), runtime=%.1fs (<180)",
                    onset, max_pre, min_post, cells.size(), min_n, r_sw.seconds)};
    });

    criterion("null_calibration", [&]() -> Outcome {
        const fs::path fxn = g_work / "fx_null", swn = g_work / "sweep_null";
        const auto a = cli("gen-fixtures --manifest " + q(manifest) + " --out " + q(fxn) + " --null", "gen_fixtures_null");
        const auto b = cli("train-probes --dump " + q(fxn) + " --manifest " + q(manifest) + " --out " + q(swn) +
                               " --seed 0",
                           "train_probes_null");
        const auto cells = read_sweep(swn / "sweep.csv");
        double lo = 1.0, hi = 0.0;
        for (const auto& c : cells) {
            lo = std::min(lo, c.accuracy);
            hi = std::max(hi, c.accuracy);
        }
        fs::remove_all(fxn);
        return {a.exit_code == 0 && b.exit_code == 0 && !cells.empty() && lo >= 0.45 && hi <= 0.55,
                fmt("%zu cells, accuracy range [%.3f, %.3f] (within [0.45, 0.55])", cells.size(), lo, hi)};
    });

    criterion("attention_recovery", [&]() -> Outcome {
        const auto j = read_json(attn / "attn_summary.json");
        const auto det = heads_from_json(j.at("detection_heads"));
        const auto res = heads_from_json(j.at("resolution_heads"));
        const double jac = j.at("jaccard_overlap").get<double>();
        const int p_det = j.at("detection_peak_layer").get<int>();
        const int p_res = j.at("resolution_peak_layer").get<int>();
        const bool precedes = j.at("detection_precedes").get<bool>();
        const bool exact = det == planted_det && res == planted_res && !det.empty();
        return {exact && jac == 0.0 && precedes && p_det == 18 && p_res == 22,
                fmt("k=%zu detection %s, resolution %s, jaccard=%.3f, peaks %d < %d, detection_precedes=%s", top_k,
                    det == planted_det ? "exact" : "MISMATCH", res == planted_res ? "exact" : "MISMATCH", jac, p_det,
                    p_res, precedes ? "true" : "false")};
    });

    criterion("heteroscedasticity", [&]() -> Outcome {
        const fs::path ds_h = g_work / "ds_2000", fx_h = g_work / "fx_2000", rep_h = g_work / "rep_2000";
        const fs::path m_h = ds_h / "manifest.jsonl";
        const auto a = cli("gen-dataset --seed 0 --image-format none --conflict-per-combo 50 --no-conflict-per-combo 50 "
                           "--out " + q(ds_h),
                           "gen_dataset_2000");
        const auto b = cli("gen-fixtures --manifest " + q(m_h) + " --out " + q(fx_h) + " --seed 0", "gen_fixtures_2000");
        const auto c = cli("resolution-report --dump " + q(fx_h) + " --manifest " + q(m_h) + " --out " + q(rep_h) +
                               " --strengths " + q(fx_h / "planted_strengths.csv"),
                           "resolution_report_2000");
        const auto j = read_json(rep_h / "resolution_summary.json");
        const long n = j.at("n_records").get<long>();
        const double ratio = j.at("variance_ratio").get<double>();
        const double ext_mean = j.at("extreme").at("mean").get<double>();
        const double mid_mean = j.at("middle").at("mean").get<double>();
        const double rho = j.at("spearman_abs_confidence").get<double>();
        fs::remove_all(fx_h);
        return {a.exit_code == 0 && b.exit_code == 0 && c.exit_code == 0 && n == 2000 && ratio >= 4.0 &&
                    ext_mean < mid_mean && rho < -0.3,
                fmt("n=%ld variance ratio %.2f (>=4), extreme mean %.3f < middle mean %.3f, spearman %.3f (<-0.3)", n,
                    ratio, ext_mean, mid_mean, rho)};
    });

    criterion("dump_format", dump_format);

    criterion("end_to_end_cli", [&]() -> Outcome {
        const bool outputs = fs::exists(sweep / "sweep.csv") && fs::exists(attn / "attn_summary.json") &&
                             fs::exists(rep / "resolution_summary.json") && fs::exists(plots / "sweep.svg");
        return {e2e_ok && outputs && e2e_seconds < 300.0,
                fmt("gen-dataset, gen-fixtures, train-probes, attn-diff, resolution-report, plot: exit %s, "
                    "outputs %s, %.1fs (<300)",
                    e2e_ok ? "0" : "nonzero", outputs ? "present" : "missing", e2e_seconds)};
    });

    if (g_failures == 0 && !std::getenv("MODCON_KEEP_ACCEPTANCE_WORK")) fs::remove_all(g_work);
    std::printf("%s: %d failing criteria\n", g_failures == 0 ? "ACCEPTED" : "REJECTED", g_failures);
    return g_failures == 0 ? 0 : 1;
}
