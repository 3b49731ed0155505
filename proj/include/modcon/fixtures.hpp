#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "modcon/activation_store.hpp"
#include "modcon/attention.hpp"
#include "modcon/dataset.hpp"

namespace modcon {

// A set of heads receiving a group-dependent attention offset whose size
// follows a triangular profile over layers: offset * (1 - |l - peak| / (half_width + 1)).
struct HeadPlan {
    std::vector<int> heads;
    int peak_layer = 0;
    int half_width = 2;
    double offset = 0.1;

    double offset_at(int layer) const;
    std::vector<HeadId> expand(int n_layers) const;  // (layer, head) pairs with nonzero offset
};

// Conflict strength as a function of |confidence|: N(center_mean, center_sd)
// below center_cut, N(extreme_mean, extreme_sd) above extreme_cut, linearly
// interpolated between; clipped to [0, 1].
struct LogitModel {
    double center_mean = 0.9;
    double center_sd = 0.02;
    double extreme_mean = 0.7;
    double extreme_sd = 0.15;
    double center_cut = 0.2;
    double extreme_cut = 0.8;
    double answer_mass = 0.9;  // p_image + p_text, raised to |confidence| when smaller
    double other_rate = 0.0;   // fraction of conflict samples answered with neither color

    double mean_at(double abs_confidence) const;
    double sd_at(double abs_confidence) const;
};

struct AttentionBaseline {
    double text_mean_lo = 0.08;
    double text_mean_hi = 0.25;
    double image_mean_lo = 0.2;
    double image_mean_hi = 0.6;
    double noise_sd = 0.03;
};

struct PlantedSignalConfig {
    int n_layers = 28;
    int n_heads = 28;
    int d_model = 128;
    int signal_onset_layer = 10;
    double signal_strength = 6.0;  // class-mean separation along u, in noise-sigma units
    double noise_sigma = 1.0;
    std::uint64_t direction_seed = 1;
    std::uint64_t seed = 0;
    HeadPlan detection{{3, 7, 11, 19}, 18, 2, 0.1};
    HeadPlan resolution{{5, 13, 21, 26}, 22, 2, 0.1};
    LogitModel logit;
    AttentionBaseline attention;
    bool with_activations = true;
    bool with_attention = true;

    // s = 0, no planted heads, flat logit model.
    static PlantedSignalConfig null_config();
};

// Throws ConfigError on any violated invariant.
void check_config(const PlantedSignalConfig& config);

nlohmann::json to_json(const PlantedSignalConfig& config);
// Unknown keys are rejected with ConfigError; missing keys keep defaults.
PlantedSignalConfig fixture_config_from_json(const nlohmann::json& j);
PlantedSignalConfig read_fixture_config(const std::filesystem::path& path);

// Seeded unit direction for one (layer, kind) cell.
std::vector<double> planted_direction(const PlantedSignalConfig& config, int layer, ActivationKind kind);

struct FixtureDump {
    DumpData data;
    // Planted conflict strength per dump sample (NaN for no-conflict samples).
    std::vector<double> planted_strength;
    std::vector<std::string> warnings;
};

// Allocates the dump for the manifest's samples and fills every stream.
FixtureDump generate_fixtures(const DatasetManifest& manifest, const PlantedSignalConfig& config);

void gen_activation_fixtures(const DatasetManifest& manifest, const PlantedSignalConfig& config, DumpData& dump);
// Requires answers already generated (resolution offsets follow aligned_modality).
std::vector<std::string> gen_attention_fixtures(const DatasetManifest& manifest, const PlantedSignalConfig& config,
                                                DumpData& dump);
std::vector<double> gen_logit_fixtures(const DatasetManifest& manifest, const PlantedSignalConfig& config,
                                       DumpData& dump);

// sample_id,confidence,conflict_strength,aligned_modality rows for conflict samples.
void write_planted_strengths_csv(const FixtureDump& fixture, const std::filesystem::path& path);

}  // namespace modcon
