#include "modcon/cli.hpp"

#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "modcon/activation_store.hpp"
#include "modcon/attention.hpp"
#include "modcon/dataset.hpp"
#include "modcon/errors.hpp"
#include "modcon/fixtures.hpp"
#include "modcon/parallel.hpp"
#include "modcon/plot.hpp"
#include "modcon/probe.hpp"
#include "modcon/resolution.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace modcon {
namespace {

// Raised for bad invocations that CLI11 cannot see (missing paths, bad values).
struct UsageError : Error {
    using Error::Error;
};

class Log {
public:
    int verbosity = 1;  // 0 quiet, 1 info, 2 debug

    Log() {
        const char* nc = std::getenv("NO_COLOR");
        color_ = isatty(STDERR_FILENO) && !(nc && *nc);
    }
    void info(const std::string& msg) const {
        if (verbosity >= 1) emit("info", "\033[36m", msg);
    }
    void debug(const std::string& msg) const {
        if (verbosity >= 2) emit("debug", "\033[90m", msg);
    }
    void warn(const std::string& msg) const { emit("warning", "\033[33m", msg); }
    void error(const std::string& msg) const { emit("error", "\033[31m", msg); }

private:
    bool color_ = false;
    void emit(const char* level, const char* code, const std::string& msg) const {
        if (color_)
            std::cerr << code << level << "\033[0m: " << msg << '\n';
        else
            std::cerr << level << ": " << msg << '\n';
    }
};

struct Common {
    unsigned threads = default_threads();
    std::string config;
    bool verbose = false;
    bool quiet = false;
};

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--threads", c.threads, "Worker thread cap")->check(CLI::PositiveNumber);
    sub->add_option("--config", c.config, "JSON file of option values; command-line flags win");
    sub->add_flag("-v,--verbose", c.verbose, "Debug logging");
    sub->add_flag("-q,--quiet", c.quiet, "Warnings and errors only");
}

fs::path require_file(const std::string& p, const char* what) {
    const fs::path path = fs::absolute(p);
    if (!fs::exists(path)) throw UsageError(std::string(what) + " not found: " + path.string());
    return path;
}

fs::path require_dir(const std::string& p, const char* what) {
    const fs::path path = fs::absolute(p);
    if (!fs::is_directory(path)) throw UsageError(std::string(what) + " is not a directory: " + path.string());
    return path;
}

fs::path output_dir(const std::string& p) {
    const fs::path path = fs::absolute(p);
    fs::create_directories(path);
    return path;
}

std::vector<ColorName> parse_colors(const std::vector<std::string>& names) {
    std::vector<ColorName> out;
    for (const auto& n : names) out.push_back(parse_color(n));
    return out;
}

std::optional<double> parse_lambda(const std::string& s) {
    if (s == "auto") return std::nullopt;
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || *end != '\0' || !(v >= 0)) throw UsageError("--lambda must be a non-negative number or 'auto', got '" + s + "'");
    return v;
}

void write_json(const fs::path& path, const json& j) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + path.string());
    f << j.dump(2) << '\n';
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fixed(double v, int digits = 2) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

// ---------------------------------------------------------------------------
// Config file injection: each key names a long option of the selected
// subcommand; its value is appended unless the flag is already present.

std::string option_token(std::string key) {
    for (auto& c : key) {
        if (c == '_') c = '-';
    }
    return "--" + key;
}

bool flag_present(const std::vector<std::string>& args, const std::string& flag) {
    for (const auto& a : args) {
        if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
    }
    return false;
}

std::string scalar_text(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer() || v.is_number_unsigned()) return v.dump();
    if (v.is_number_float()) {
        std::ostringstream s;
        s.precision(17);
        s << v.get<double>();
        return s.str();
    }
    throw UsageError("config values must be strings, numbers, booleans or arrays of those");
}

std::vector<std::string> inject_config(const std::vector<std::string>& args, CLI::App& app) {
    std::optional<std::string> config_path;
    CLI::App* sub = nullptr;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
        if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
        if (!sub && args[i].rfind("-", 0) != 0) sub = app.get_subcommand_no_throw(args[i]);
    }
    if (!config_path || !sub) return args;
    const fs::path path = require_file(*config_path, "config file");
    json j;
    try {
        std::ifstream f(path);
        j = json::parse(f);
    } catch (const json::parse_error& e) {
        throw UsageError(path.string() + ": " + e.what());
    }
    if (!j.is_object()) throw UsageError(path.string() + ": config must be a JSON object");
    std::vector<std::string> out = args;
    for (const auto& [key, value] : j.items()) {
        const std::string flag = option_token(key);
        if (flag == "--config") throw UsageError(path.string() + ": 'config' cannot be nested");
        const CLI::Option* opt = sub->get_option_no_throw(flag);
        if (!opt) throw UsageError(path.string() + ": unknown key '" + key + "' for " + sub->get_name());
        if (flag_present(args, flag)) continue;
        if (value.is_boolean()) {
            if (opt->get_expected_min() != 0) throw UsageError(path.string() + ": '" + key + "' expects a value");
            if (value.get<bool>()) out.push_back(flag);
            continue;
        }
        if (value.is_array()) {
            for (const auto& v : value) {
                out.push_back(flag);
                out.push_back(scalar_text(v));
            }
            continue;
        }
        out.push_back(flag);
        out.push_back(scalar_text(value));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Subcommands

struct GenDatasetArgs {
    std::uint64_t seed = 0;
    std::string out;
    std::string image_format = "png";
    int conflict_per_combo = 140;
    int no_conflict_per_combo = 140;
    int canvas_size = 256;
};

int cmd_gen_dataset(const GenDatasetArgs& a, const Common& c, const Log& log) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto format = parse_image_format(a.image_format);
    GenerationConfig cfg;
    cfg.seed = a.seed;
    cfg.conflict_per_combo = a.conflict_per_combo;
    cfg.no_conflict_per_combo = a.no_conflict_per_combo;
    cfg.canvas_size = a.canvas_size;
    const auto out = output_dir(a.out);
    const auto manifest = generate_dataset(cfg);
    write_dataset(manifest, out, format, c.threads);
    std::size_t conflict = 0;
    for (const auto& s : manifest.samples) conflict += s.conflict_label ? 1 : 0;
    log.info("wrote " + std::to_string(manifest.samples.size()) + " samples (" + std::to_string(conflict) +
             " conflict) to " + out.string() + " in " + fixed(seconds_since(t0)) + " s");
    return kExitOk;
}

struct GenFixturesArgs {
    std::string manifest;
    std::string out;
    std::uint64_t seed = 0;
    std::string fixture_config;
    bool null = false;
};

int cmd_gen_fixtures(const GenFixturesArgs& a, const CLI::App& sub, const Log& log) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto manifest_path = require_file(a.manifest, "manifest");
    std::optional<fs::path> config_path;
    if (!a.fixture_config.empty()) config_path = require_file(a.fixture_config, "fixture config");
    if (a.null && config_path) throw UsageError("--null and --fixture-config are mutually exclusive");
    const auto out = output_dir(a.out);

    PlantedSignalConfig cfg = a.null ? PlantedSignalConfig::null_config() : PlantedSignalConfig{};
    if (config_path) cfg = read_fixture_config(*config_path);
    if (sub.count("--seed") > 0) cfg.seed = a.seed;
    check_config(cfg);

    const auto manifest = read_manifest(manifest_path);
    const auto fx = generate_fixtures(manifest, cfg);
    for (const auto& w : fx.warnings) log.warn(w);
    write_dump(out, fx.data);
    write_planted_strengths_csv(fx, out / "planted_strengths.csv");
    write_json(out / "fixture_config.json", to_json(cfg));
    const auto report = validate_dump(out, &manifest);
    if (!report.passed()) {
        log.error("generated dump failed validation:\n" + report.summary());
        return kExitFailure;
    }
    log.info("wrote fixture dump for " + std::to_string(fx.data.n_samples()) + " samples to " + out.string() +
             " in " + fixed(seconds_since(t0)) + " s");
    return kExitOk;
}

struct ValidateArgs {
    std::string dump;
    std::string manifest;
};

int cmd_validate(const ValidateArgs& a, const Log& log) {
    const auto dump_dir = require_dir(a.dump, "dump");
    std::optional<DatasetManifest> manifest;
    if (!a.manifest.empty()) manifest = read_manifest(require_file(a.manifest, "manifest"));
    const auto report = validate_dump(dump_dir, manifest ? &*manifest : nullptr);
    if (!report.passed()) {
        std::cout << report.summary() << '\n';
        log.error("dump " + dump_dir.string() + " failed validation");
        return kExitFailure;
    }
    std::cout << "ok: " << dump_dir.string() << '\n';
    return kExitOk;
}

struct TrainArgs {
    std::string dump;
    std::string manifest;
    std::string out;
    std::string lambda = "auto";
    std::uint64_t seed = 0;
    std::vector<std::string> train_colors;
    std::vector<std::string> test_colors;
    int max_iters = 5000;
    double tol = 1e-7;
    bool no_balance = false;
};

int cmd_train(const TrainArgs& a, const Common& c, const Log& log) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto dump_dir = require_dir(a.dump, "dump");
    const auto manifest_path = require_file(a.manifest, "manifest");
    SweepConfig cfg;
    cfg.lambda = parse_lambda(a.lambda);
    cfg.seed = a.seed;
    cfg.threads = c.threads;
    cfg.balance_classes = !a.no_balance;
    cfg.train.max_iters = a.max_iters;
    cfg.train.tol = a.tol;
    if (!a.train_colors.empty()) cfg.train_colors = parse_colors(a.train_colors);
    if (!a.test_colors.empty()) cfg.test_colors = parse_colors(a.test_colors);
    const auto out = output_dir(a.out);

    const auto dump = Dump::open(dump_dir);
    const auto manifest = read_manifest(manifest_path);
    const auto result = layerwise_sweep(dump, manifest, cfg);
    write_sweep_csv(result, out / "sweep.csv");
    fs::create_directories(out / "probes");
    for (const auto& m : result.models) save_probe(m, out / "probes" / probe_filename(m.layer, m.kind));
    const auto& best = result.best();
    write_json(out / "sweep_summary.json",
               {{"n_cells", result.cells.size()},
                {"best", {{"layer", best.layer}, {"kind", to_string(best.kind)}, {"accuracy", best.accuracy}}},
                {"n_train", result.cells.empty() ? 0 : result.cells.front().n_train},
                {"n_test", result.cells.empty() ? 0 : result.cells.front().n_test}});
    log.info("trained " + std::to_string(result.cells.size()) + " probes in " + fixed(seconds_since(t0)) +
             " s; best layer " + std::to_string(best.layer) + " " + std::string(to_string(best.kind)) +
             " accuracy " + fixed(best.accuracy, 4));
    return kExitOk;
}

struct ReportArgs {
    std::string dump;
    std::string manifest;
    std::string out;
    std::string probe;
    std::string probes;
    std::string strengths;
    std::size_t bins = 20;
    bool renormalize = false;
};

int cmd_report(const ReportArgs& a, const Log& log) {
    const auto dump_dir = require_dir(a.dump, "dump");
    const auto manifest_path = require_file(a.manifest, "manifest");
    const int sources = !a.probe.empty() + !a.probes.empty() + !a.strengths.empty();
    if (sources != 1) throw UsageError("give exactly one of --probe, --probes or --strengths");
    if (a.bins < 2) throw UsageError("--bins must be at least 2");
    const auto dump = Dump::open(dump_dir);
    const auto manifest = read_manifest(manifest_path);
    const ConfidenceOptions opts{a.renormalize};

    std::vector<ResolutionRecord> records;
    json source;
    if (!a.strengths.empty()) {
        const auto path = require_file(a.strengths, "strengths CSV");
        std::map<std::string, double> strengths;
        for (const auto& r : read_records_csv(path)) strengths[r.sample_id] = r.conflict_strength;
        records = build_resolution_records(dump, manifest, strengths, opts);
        source = {{"strengths", path.string()}};
    } else {
        fs::path probe_path;
        if (!a.probe.empty()) {
            probe_path = require_file(a.probe, "probe");
        } else {
            const auto dir = require_dir(a.probes, "probe directory");
            const auto cells = read_sweep_csv(require_file((dir / "sweep.csv").string(), "sweep CSV"));
            if (cells.empty()) throw DataError((dir / "sweep.csv").string() + ": no cells");
            const SweepCell* best = &cells.front();
            for (const auto& cell : cells) {
                if (cell.accuracy > best->accuracy) best = &cell;
            }
            probe_path = require_file((dir / "probes" / probe_filename(best->layer, best->kind)).string(), "probe");
        }
        const auto probe = load_probe(probe_path);
        records = build_resolution_records(dump, manifest, probe, opts);
        source = {{"probe", probe_path.string()}, {"layer", probe.layer}, {"kind", to_string(probe.kind)}};
    }
    const auto out = output_dir(a.out);
    write_records_csv(records, out / "resolution_records.csv");
    const auto binned = binned_relationship(records, a.bins);
    write_bins_csv(binned, out / "resolution_bins.csv");
    const auto het = heteroscedasticity(records, a.bins);
    const double rho = rank_correlation_abs_confidence(records);
    const auto tally = alignment_tally(dump, manifest);
    write_json(out / "resolution_summary.json",
               {{"source", source},
                {"n_records", records.size()},
                {"bins", a.bins},
                {"renormalize", a.renormalize},
                {"spearman_abs_confidence", rho},
                {"middle", {{"count", het.middle_count}, {"mean", het.middle_mean}, {"variance", het.middle_variance}}},
                {"extreme",
                 {{"count", het.extreme_count}, {"mean", het.extreme_mean}, {"variance", het.extreme_variance}}},
                {"variance_ratio", het.variance_ratio()},
                {"alignment", {{"image", tally.image}, {"text", tally.text}, {"other", tally.other}}}});
    log.info(std::to_string(records.size()) + " records; spearman " + fixed(rho, 3) + "; variance ratio " +
             fixed(het.variance_ratio(), 2));
    return kExitOk;
}

json heads_json(const std::vector<HeadId>& heads) {
    json j = json::array();
    for (const auto& h : heads) j.push_back({h.layer, h.head});
    return j;
}

struct AttnArgs {
    std::string dump;
    std::string manifest;
    std::string out;
    int top_k = 16;
    std::string channel = "text";
};

int cmd_attn(const AttnArgs& a, const Log& log) {
    const auto dump_dir = require_dir(a.dump, "dump");
    const auto manifest_path = require_file(a.manifest, "manifest");
    if (a.top_k < 1) throw UsageError("--top-k must be positive");
    if (a.channel != "text" && a.channel != "image") throw UsageError("--channel must be text or image");
    const Channel ch = a.channel == "text" ? Channel::text : Channel::image;
    const auto dump = Dump::open(dump_dir);
    if (!dump.has_attention()) throw DataError(dump_dir.string() + ": dump has no attention stream");
    const auto manifest = read_manifest(manifest_path);

    const auto det_group = make_group(dump, manifest, Comparison::detection);
    const auto res_group = make_group(dump, manifest, Comparison::resolution);
    check_group(det_group, manifest);
    check_group(res_group, manifest);
    const auto det = analyze_group(dump, det_group);
    const auto res = analyze_group(dump, res_group);

    const auto out = output_dir(a.out);
    write_layer_profiles_csv(det, res, out / "layer_profile.csv");
    write_head_deltas_csv(det.deltas, out / "head_deltas_detection.csv");
    write_head_deltas_csv(res.deltas, out / "head_deltas_resolution.csv");

    const auto det_top = top_k_heads(det.deltas, a.top_k, ch);
    const auto res_top = top_k_heads(res.deltas, a.top_k, ch);
    const double overlap = head_set_overlap(det_top, res_top);
    const auto& det_profile = ch == Channel::text ? det.text.value : det.image.value;
    const auto& res_profile = ch == Channel::text ? res.text.value : res.image.value;
    const auto order = peak_layer_ordering(det_profile, res_profile);
    write_json(out / "attn_summary.json",
               {{"channel", a.channel},
                {"top_k", a.top_k},
                {"group_sizes",
                 {{"detection", {det_group.group_a.size(), det_group.group_b.size()}},
                  {"resolution", {res_group.group_a.size(), res_group.group_b.size()}}}},
                {"detection_heads", heads_json(det_top)},
                {"resolution_heads", heads_json(res_top)},
                {"jaccard_overlap", overlap},
                {"detection_peak_layer", order.detection_peak},
                {"resolution_peak_layer", order.resolution_peak},
                {"detection_precedes", order.detection_precedes}});
    log.info("detection peak layer " + std::to_string(order.detection_peak) + ", resolution peak layer " +
             std::to_string(order.resolution_peak) + ", top-" + std::to_string(a.top_k) + " overlap " +
             fixed(overlap, 3));
    return kExitOk;
}

struct PlotArgs {
    std::vector<std::string> inputs;
    std::string out;
};

int cmd_plot(const PlotArgs& a, const Log& log) {
    std::vector<fs::path> inputs;
    for (const auto& i : a.inputs) inputs.push_back(require_file(i, "CSV"));
    const auto out = output_dir(a.out);
    for (const auto& in : inputs) {
        const auto svg = out / (in.stem().string() + ".svg");
        plot_csv(in, svg);
        log.debug("wrote " + svg.string());
    }
    log.info("wrote " + std::to_string(inputs.size()) + " SVG file(s) to " + out.string());
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& raw_args) {
    Log log;
    CLI::App app{"Modality-conflict analysis toolkit", "modcon"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "modcon 1.0");

    Common common;
    GenDatasetArgs gd;
    auto* gen_dataset = app.add_subcommand("gen-dataset", "Generate the shape/color dataset and manifest");
    gen_dataset->add_option("--seed", gd.seed, "Global seed");
    gen_dataset->add_option("--out", gd.out, "Output directory")->required();
    gen_dataset->add_option("--image-format", gd.image_format, "png, ppm or none")->capture_default_str();
    gen_dataset->add_option("--conflict-per-combo", gd.conflict_per_combo)->capture_default_str();
    gen_dataset->add_option("--no-conflict-per-combo", gd.no_conflict_per_combo)->capture_default_str();
    gen_dataset->add_option("--canvas-size", gd.canvas_size)->capture_default_str();
    add_common(gen_dataset, common);

    GenFixturesArgs gf;
    auto* gen_fixtures = app.add_subcommand("gen-fixtures", "Write a planted-signal dump for a manifest");
    gen_fixtures->add_option("--manifest", gf.manifest, "Dataset manifest (JSONL)")->required();
    gen_fixtures->add_option("--out", gf.out, "Dump directory")->required();
    gen_fixtures->add_option("--seed", gf.seed, "Fixture seed (overrides the fixture config)");
    gen_fixtures->add_option("--fixture-config", gf.fixture_config, "Planted-signal config (JSON)");
    gen_fixtures->add_flag("--null", gf.null, "Pure-noise fixture with no planted structure");
    add_common(gen_fixtures, common);

    ValidateArgs va;
    auto* validate = app.add_subcommand("validate-dump", "Check a dump against the format invariants");
    validate->add_option("--dump", va.dump, "Dump directory")->required();
    validate->add_option("--manifest", va.manifest, "Manifest to cross-reference");
    add_common(validate, common);

    TrainArgs ta;
    auto* train = app.add_subcommand("train-probes", "Layerwise lasso-logistic probe sweep");
    train->add_option("--dump", ta.dump, "Dump directory")->required();
    train->add_option("--manifest", ta.manifest, "Dataset manifest (JSONL)")->required();
    train->add_option("--out", ta.out, "Output directory")->required();
    train->add_option("--lambda", ta.lambda, "L1 strength or 'auto'")->capture_default_str();
    train->add_option("--seed", ta.seed, "Seed for splits and lambda selection");
    train->add_option("--train-colors", ta.train_colors, "Colors admitted to training")->delimiter(',');
    train->add_option("--test-colors", ta.test_colors, "Colors admitted to testing")->delimiter(',');
    train->add_option("--max-iters", ta.max_iters)->capture_default_str();
    train->add_option("--tol", ta.tol, "Relative objective tolerance")->capture_default_str();
    train->add_flag("--no-balance", ta.no_balance, "Keep class imbalance in the color splits");
    add_common(train, common);

    ReportArgs ra;
    auto* report = app.add_subcommand("resolution-report", "Conflict strength vs. resolution confidence");
    report->add_option("--dump", ra.dump, "Dump directory")->required();
    report->add_option("--manifest", ra.manifest, "Dataset manifest (JSONL)")->required();
    report->add_option("--out", ra.out, "Output directory")->required();
    report->add_option("--probe", ra.probe, "Probe model JSON");
    report->add_option("--probes", ra.probes, "train-probes output directory; uses the best cell");
    report->add_option("--strengths", ra.strengths, "CSV of externally supplied conflict strengths");
    report->add_option("--bins", ra.bins, "Number of confidence bins")->capture_default_str();
    report->add_flag("--renormalize", ra.renormalize, "Normalize confidence by p_image + p_text");
    add_common(report, common);

    AttnArgs aa;
    auto* attn = app.add_subcommand("attn-diff", "Group-based attention differencing");
    attn->add_option("--dump", aa.dump, "Dump directory")->required();
    attn->add_option("--manifest", aa.manifest, "Dataset manifest (JSONL)")->required();
    attn->add_option("--out", aa.out, "Output directory")->required();
    attn->add_option("--top-k", aa.top_k, "Heads reported per comparison")->capture_default_str();
    attn->add_option("--channel", aa.channel, "text or image")->capture_default_str();
    add_common(attn, common);

    PlotArgs pa;
    auto* plot = app.add_subcommand("plot", "Render SVG charts from emitted CSV files");
    plot->add_option("inputs", pa.inputs, "CSV files")->required();
    plot->add_option("--out", pa.out, "Output directory")->required();
    add_common(plot, common);

    try {
        const auto args = inject_config(raw_args, app);
        std::vector<const char*> argv;
        for (const auto& s : args) argv.push_back(s.c_str());
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    } catch (const Error& e) {
        log.error(e.what());
        return kExitUsage;
    }
    log.verbosity = common.quiet ? 0 : common.verbose ? 2 : 1;

    try {
        if (*gen_dataset) return cmd_gen_dataset(gd, common, log);
        if (*gen_fixtures) return cmd_gen_fixtures(gf, *gen_fixtures, log);
        if (*validate) return cmd_validate(va, log);
        if (*train) return cmd_train(ta, common, log);
        if (*report) return cmd_report(ra, log);
        if (*attn) return cmd_attn(aa, log);
        if (*plot) return cmd_plot(pa, log);
    } catch (const UsageError& e) {
        log.error(e.what());
        return kExitUsage;
    } catch (const ArgumentError& e) {
        log.error(e.what());
        return kExitUsage;
    } catch (const ConfigError& e) {
        log.error(e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        log.error(e.what());
        return kExitFailure;
    }
    return kExitUsage;
}

int run(int argc, const char* const* argv) {
    std::vector<std::string> args(argv, argv + argc);
    return run(args);
}

}  // namespace modcon
