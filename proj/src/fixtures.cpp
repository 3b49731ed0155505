#include "modcon/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <unordered_map>

#include "modcon/errors.hpp"
#include "modcon/rng.hpp"

namespace modcon {

double HeadPlan::offset_at(int layer) const {
    const double w = 1.0 - std::abs(layer - peak_layer) / static_cast<double>(half_width + 1);
    return w > 0 ? offset * w : 0.0;
}

std::vector<HeadId> HeadPlan::expand(int n_layers) const {
    std::vector<HeadId> out;
    for (int l = 0; l < n_layers; ++l) {
        if (offset_at(l) == 0.0) continue;
        for (int h : heads) out.push_back({l, h});
    }
    std::sort(out.begin(), out.end());
    return out;
}

namespace {

double lerp_cut(const LogitModel& m, double a, double center, double extreme) {
    if (a <= m.center_cut) return center;
    if (a >= m.extreme_cut) return extreme;
    const double t = (a - m.center_cut) / (m.extreme_cut - m.center_cut);
    return center + t * (extreme - center);
}

}  // namespace

double LogitModel::mean_at(double a) const { return lerp_cut(*this, a, center_mean, extreme_mean); }
double LogitModel::sd_at(double a) const { return lerp_cut(*this, a, center_sd, extreme_sd); }

PlantedSignalConfig PlantedSignalConfig::null_config() {
    PlantedSignalConfig c;
    c.signal_strength = 0.0;
    c.detection.heads.clear();
    c.resolution.heads.clear();
    c.logit.extreme_mean = c.logit.center_mean;
    c.logit.extreme_sd = c.logit.center_sd;
    return c;
}

void check_config(const PlantedSignalConfig& c) {
    auto fail = [](const std::string& why) { throw ConfigError("fixture config: " + why); };
    if (c.n_layers < 1 || c.n_heads < 1 || c.d_model < 1) fail("n_layers, n_heads and d_model must be positive");
    if (c.signal_onset_layer < 0 || c.signal_onset_layer >= c.n_layers) fail("need 0 <= signal_onset_layer < n_layers");
    if (!(c.signal_strength >= 0)) fail("signal_strength must be >= 0");
    if (!(c.noise_sigma > 0)) fail("noise_sigma must be > 0");
    for (const auto* plan : {&c.detection, &c.resolution}) {
        for (int h : plan->heads) {
            if (h < 0 || h >= c.n_heads) fail("planted head " + std::to_string(h) + " outside [0, n_heads)");
        }
        if (plan->half_width < 0) fail("half_width must be >= 0");
        if (!(plan->offset >= 0 && plan->offset <= 1)) fail("planted offsets must lie in [0, 1]");
        if (!plan->heads.empty() && (plan->peak_layer < 0 || plan->peak_layer >= c.n_layers))
            fail("peak layer outside [0, n_layers)");
        if (std::set<int>(plan->heads.begin(), plan->heads.end()).size() != plan->heads.size())
            fail("duplicate planted head index");
    }
    if (!c.detection.heads.empty() && !c.resolution.heads.empty()) {
        if (c.detection.peak_layer >= c.resolution.peak_layer) fail("detection peak must precede resolution peak");
        const auto det = c.detection.expand(c.n_layers);
        const auto res = c.resolution.expand(c.n_layers);
        const std::set<HeadId> d(det.begin(), det.end());
        for (const auto& h : res) {
            if (d.contains(h))
                fail("detection and resolution heads overlap at (layer " + std::to_string(h.layer) + ", head " +
                     std::to_string(h.head) + ")");
        }
    }
    const auto& m = c.logit;
    if (!(m.center_cut >= 0 && m.center_cut < m.extreme_cut && m.extreme_cut <= 1)) fail("need 0 <= center_cut < extreme_cut <= 1");
    if (m.center_sd < 0 || m.extreme_sd < 0) fail("strength sd must be >= 0");
    if (!(m.answer_mass > 0 && m.answer_mass <= 1)) fail("answer_mass must lie in (0, 1]");
    if (!(m.other_rate >= 0 && m.other_rate <= 1)) fail("other_rate must lie in [0, 1]");
    const auto& a = c.attention;
    if (!(0 <= a.text_mean_lo && a.text_mean_lo <= a.text_mean_hi && a.text_mean_hi <= 1 && 0 <= a.image_mean_lo &&
          a.image_mean_lo <= a.image_mean_hi && a.image_mean_hi <= 1 && a.noise_sd >= 0))
        fail("attention baseline ranges must lie in [0, 1] with lo <= hi");
}

// ---------------------------------------------------------------------------
// JSON

namespace {

using nlohmann::json;

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
    if (!j.is_object()) throw ConfigError("fixture config: '" + where + "' must be an object");
    for (const auto& [k, v] : j.items()) {
        if (std::find_if(keys.begin(), keys.end(), [&](const char* x) { return k == x; }) == keys.end())
            throw ConfigError("fixture config: unknown key '" + where + (where.empty() ? "" : ".") + k + "'");
    }
}

template <class T>
void take(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

json plan_json(const HeadPlan& p) {
    return {{"heads", p.heads}, {"peak_layer", p.peak_layer}, {"half_width", p.half_width}, {"offset", p.offset}};
}

HeadPlan plan_from(const json& j, HeadPlan p, const std::string& where) {
    reject_unknown(j, {"heads", "peak_layer", "half_width", "offset"}, where);
    take(j, "heads", p.heads);
    take(j, "peak_layer", p.peak_layer);
    take(j, "half_width", p.half_width);
    take(j, "offset", p.offset);
    return p;
}

}  // namespace

nlohmann::json to_json(const PlantedSignalConfig& c) {
    const auto& m = c.logit;
    const auto& a = c.attention;
    return {
        {"n_layers", c.n_layers},
        {"n_heads", c.n_heads},
        {"d_model", c.d_model},
        {"signal_onset_layer", c.signal_onset_layer},
        {"signal_strength", c.signal_strength},
        {"noise_sigma", c.noise_sigma},
        {"direction_seed", c.direction_seed},
        {"seed", c.seed},
        {"detection", plan_json(c.detection)},
        {"resolution", plan_json(c.resolution)},
        {"logit_model",
         {{"center_mean", m.center_mean},
          {"center_sd", m.center_sd},
          {"extreme_mean", m.extreme_mean},
          {"extreme_sd", m.extreme_sd},
          {"center_cut", m.center_cut},
          {"extreme_cut", m.extreme_cut},
          {"answer_mass", m.answer_mass},
          {"other_rate", m.other_rate}}},
        {"attention_baseline",
         {{"text_mean_lo", a.text_mean_lo},
          {"text_mean_hi", a.text_mean_hi},
          {"image_mean_lo", a.image_mean_lo},
          {"image_mean_hi", a.image_mean_hi},
          {"noise_sd", a.noise_sd}}},
        {"with_activations", c.with_activations},
        {"with_attention", c.with_attention},
    };
}

PlantedSignalConfig fixture_config_from_json(const nlohmann::json& j) {
    PlantedSignalConfig c;
    try {
        reject_unknown(j,
                       {"n_layers", "n_heads", "d_model", "signal_onset_layer", "signal_strength", "noise_sigma",
                        "direction_seed", "seed", "detection", "resolution", "logit_model", "attention_baseline",
                        "with_activations", "with_attention"},
                       "");
        take(j, "n_layers", c.n_layers);
        take(j, "n_heads", c.n_heads);
        take(j, "d_model", c.d_model);
        take(j, "signal_onset_layer", c.signal_onset_layer);
        take(j, "signal_strength", c.signal_strength);
        take(j, "noise_sigma", c.noise_sigma);
        take(j, "direction_seed", c.direction_seed);
        take(j, "seed", c.seed);
        take(j, "with_activations", c.with_activations);
        take(j, "with_attention", c.with_attention);
        if (j.contains("detection")) c.detection = plan_from(j["detection"], c.detection, "detection");
        if (j.contains("resolution")) c.resolution = plan_from(j["resolution"], c.resolution, "resolution");
        if (j.contains("logit_model")) {
            const auto& m = j["logit_model"];
            reject_unknown(m,
                           {"center_mean", "center_sd", "extreme_mean", "extreme_sd", "center_cut", "extreme_cut",
                            "answer_mass", "other_rate"},
                           "logit_model");
            take(m, "center_mean", c.logit.center_mean);
            take(m, "center_sd", c.logit.center_sd);
            take(m, "extreme_mean", c.logit.extreme_mean);
            take(m, "extreme_sd", c.logit.extreme_sd);
            take(m, "center_cut", c.logit.center_cut);
            take(m, "extreme_cut", c.logit.extreme_cut);
            take(m, "answer_mass", c.logit.answer_mass);
            take(m, "other_rate", c.logit.other_rate);
        }
        if (j.contains("attention_baseline")) {
            const auto& a = j["attention_baseline"];
            reject_unknown(a, {"text_mean_lo", "text_mean_hi", "image_mean_lo", "image_mean_hi", "noise_sd"},
                           "attention_baseline");
            take(a, "text_mean_lo", c.attention.text_mean_lo);
            take(a, "text_mean_hi", c.attention.text_mean_hi);
            take(a, "image_mean_lo", c.attention.image_mean_lo);
            take(a, "image_mean_hi", c.attention.image_mean_hi);
            take(a, "noise_sd", c.attention.noise_sd);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("fixture config: ") + e.what());
    }
    check_config(c);
    return c;
}

PlantedSignalConfig read_fixture_config(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open fixture config: " + path.string());
    try {
        return fixture_config_from_json(nlohmann::json::parse(f));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Generation

std::vector<double> planted_direction(const PlantedSignalConfig& c, int layer, ActivationKind kind) {
    Rng rng(derive_seed(c.direction_seed, static_cast<std::uint64_t>(layer) * 16 + static_cast<std::uint64_t>(kind)));
    std::vector<double> u(static_cast<std::size_t>(c.d_model));
    double norm = 0.0;
    do {
        norm = 0.0;
        for (auto& x : u) {
            x = rng.normal();
            norm += x * x;
        }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (auto& x : u) x /= norm;
    return u;
}

namespace {

std::vector<std::string> manifest_ids(const DatasetManifest& m) {
    std::vector<std::string> ids;
    ids.reserve(m.samples.size());
    for (const auto& s : m.samples) ids.push_back(s.sample_id);
    return ids;
}

// Manifest sample for each dump row.
std::vector<const SampleSpec*> rows_to_samples(const DatasetManifest& m, const DumpData& dump) {
    std::unordered_map<std::string, const SampleSpec*> by_id;
    for (const auto& s : m.samples) by_id[s.sample_id] = &s;
    std::vector<const SampleSpec*> out;
    for (const auto& id : dump.index.sample_ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw DataError("dump sample '" + id + "' is not in the manifest");
        out.push_back(it->second);
    }
    return out;
}

}  // namespace

void gen_activation_fixtures(const DatasetManifest& manifest, const PlantedSignalConfig& c, DumpData& dump) {
    check_config(c);
    const auto samples = rows_to_samples(manifest, dump);
    std::map<std::pair<int, ActivationKind>, std::vector<double>> dirs;
    for (int l = c.signal_onset_layer; l < c.n_layers; ++l) {
        for (auto k : kAllKinds) dirs[{l, k}] = planted_direction(c, l, k);
    }
    const double half_sep = c.signal_strength * c.noise_sigma / 2.0;
    for (std::size_t s = 0; s < samples.size(); ++s) {
        Rng rng(derive_seed(c.seed, "act:" + samples[s]->sample_id));
        const double sign = samples[s]->conflict_label ? 1.0 : -1.0;
        for (auto k : kAllKinds) {
            for (int l = 0; l < c.n_layers; ++l) {
                auto v = dump.activation(s, l, k);
                const std::vector<double>* u = l >= c.signal_onset_layer ? &dirs.at({l, k}) : nullptr;
                for (int j = 0; j < c.d_model; ++j) {
                    double x = c.noise_sigma * rng.normal();
                    if (u) x += sign * half_sep * (*u)[static_cast<std::size_t>(j)];
                    v[static_cast<std::size_t>(j)] = static_cast<float>(x);
                }
            }
        }
    }
}

std::vector<double> gen_logit_fixtures(const DatasetManifest& manifest, const PlantedSignalConfig& c, DumpData& dump) {
    check_config(c);
    const auto samples = rows_to_samples(manifest, dump);
    const auto& m = c.logit;
    std::vector<double> strength(samples.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t s = 0; s < samples.size(); ++s) {
        Rng rng(derive_seed(c.seed, "logit:" + samples[s]->sample_id));
        if (!samples[s]->conflict_label) {
            // Without a conflicting caption the image answer dominates.
            const double p = m.answer_mass * rng.uniform(0.9, 1.0);
            dump.set_answer(s, static_cast<float>(p), 0.0f, AlignedModality::image);
            continue;
        }
        double conf = rng.uniform(-1.0, 1.0);
        double mass = std::max(m.answer_mass, std::abs(conf));
        AlignedModality aligned = conf >= 0 ? AlignedModality::image : AlignedModality::text;
        if (rng.uniform() < m.other_rate) {
            // Another token outweighs both color answers.
            conf *= 0.4;
            mass *= 0.4;
            aligned = AlignedModality::other;
        }
        const auto p_image = static_cast<float>((mass + conf) / 2.0);
        const auto p_text = static_cast<float>((mass - conf) / 2.0);
        dump.set_answer(s, p_image, p_text, aligned);
        const double a = std::abs(static_cast<double>(p_image) - static_cast<double>(p_text));
        strength[s] = std::clamp(rng.normal(m.mean_at(a), m.sd_at(a)), 0.0, 1.0);
    }
    return strength;
}

std::vector<std::string> gen_attention_fixtures(const DatasetManifest& manifest, const PlantedSignalConfig& c,
                                                DumpData& dump) {
    check_config(c);
    if (dump.answers.empty()) throw ConfigError("attention fixtures need answer records generated first");
    const auto samples = rows_to_samples(manifest, dump);
    const int L = c.n_layers, H = c.n_heads;
    const auto& base = c.attention;

    // Per-head baseline means: shared by all samples, so they cancel in group differences.
    std::vector<double> mu_text(static_cast<std::size_t>(L * H)), mu_image(static_cast<std::size_t>(L * H));
    Rng structure(derive_seed(c.seed, "attn-structure"));
    for (std::size_t i = 0; i < mu_text.size(); ++i) {
        mu_text[i] = structure.uniform(base.text_mean_lo, base.text_mean_hi);
        mu_image[i] = structure.uniform(base.image_mean_lo, base.image_mean_hi);
    }
    std::vector<double> det(static_cast<std::size_t>(L * H), 0.0), res(static_cast<std::size_t>(L * H), 0.0);
    for (int l = 0; l < L; ++l) {
        for (int h : c.detection.heads) det[static_cast<std::size_t>(l * H + h)] = c.detection.offset_at(l);
        for (int h : c.resolution.heads) res[static_cast<std::size_t>(l * H + h)] = c.resolution.offset_at(l);
    }

    std::size_t clipped = 0, total = 0;
    auto clip = [&](double x) {
        ++total;
        if (x < 0.0 || x > 1.0) {
            ++clipped;
            return std::clamp(x, 0.0, 1.0);
        }
        return x;
    };
    for (std::size_t s = 0; s < samples.size(); ++s) {
        Rng rng(derive_seed(c.seed, "attn:" + samples[s]->sample_id));
        const bool conflict = samples[s]->conflict_label;
        const auto aligned = static_cast<AlignedModality>(static_cast<int>(dump.answers[s * 3 + 2]));
        const double res_sign = !conflict                              ? 0.0
                                : aligned == AlignedModality::image ? 0.5
                                : aligned == AlignedModality::text  ? -0.5
                                                                    : 0.0;
        for (int l = 0; l < L; ++l) {
            for (int h = 0; h < H; ++h) {
                const auto i = static_cast<std::size_t>(l * H + h);
                // Attention moves between the image tokens and the text color token.
                const double shift = (conflict ? det[i] : 0.0) + res_sign * res[i];
                const double text = mu_text[i] + base.noise_sd * rng.normal() + shift;
                const double image = mu_image[i] + base.noise_sd * rng.normal() - shift;
                dump.set_attention(s, l, h, {static_cast<float>(clip(text)), static_cast<float>(clip(image))});
            }
        }
    }
    std::vector<std::string> warnings;
    if (total > 0 && clipped * 100 > total) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "%.2f%% of attention weights were clipped to [0, 1]",
                      100.0 * static_cast<double>(clipped) / static_cast<double>(total));
        warnings.emplace_back(buf);
    }
    return warnings;
}

FixtureDump generate_fixtures(const DatasetManifest& manifest, const PlantedSignalConfig& config) {
    check_config(config);
    std::map<ActivationKind, int> dims;
    if (config.with_activations) {
        for (auto k : kAllKinds) dims[k] = config.d_model;
    }
    FixtureDump out;
    out.data = DumpData::allocate(manifest_ids(manifest), config.n_layers, config.n_heads, dims,
                                  config.with_attention, true);
    out.data.index.token_position_policy = "synthetic_fixture";
    out.data.index.metadata = {{"generator", "modcon-fixtures/1"}, {"fixture_config", to_json(config)}};
    out.planted_strength = gen_logit_fixtures(manifest, config, out.data);
    if (config.with_activations) gen_activation_fixtures(manifest, config, out.data);
    if (config.with_attention) out.warnings = gen_attention_fixtures(manifest, config, out.data);
    return out;
}

void write_planted_strengths_csv(const FixtureDump& fx, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + path.string());
    f << "sample_id,confidence,conflict_strength,aligned_modality\n";
    char buf[96];
    for (std::size_t s = 0; s < fx.planted_strength.size(); ++s) {
        if (std::isnan(fx.planted_strength[s])) continue;
        const float pi = fx.data.answers[s * 3], pt = fx.data.answers[s * 3 + 1];
        const auto m = static_cast<AlignedModality>(static_cast<int>(fx.data.answers[s * 3 + 2]));
        std::snprintf(buf, sizeof buf, "%.9g,%.9g,", static_cast<double>(pi) - static_cast<double>(pt),
                      fx.planted_strength[s]);
        f << fx.data.index.sample_ids[s] << ',' << buf << to_string(m) << '\n';
    }
}

}  // namespace modcon
