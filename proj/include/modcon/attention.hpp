#pragma once

#include <compare>
#include <filesystem>
#include <string>
#include <vector>

#include "modcon/activation_store.hpp"
#include "modcon/dataset.hpp"

namespace modcon {

enum class Comparison { detection, resolution };
enum class Channel { text, image };

std::string_view to_string(Comparison c);
std::string_view to_string(Channel c);

// Two disjoint sample groups whose mean attention patterns are compared.
//   detection:  A = conflict samples, B = no-conflict samples
//   resolution: A = image-aligned conflict samples, B = text-aligned conflict samples
struct GroupSpec {
    std::string name;
    Comparison comparison = Comparison::detection;
    std::vector<std::string> group_a;
    std::vector<std::string> group_b;
};

// Manifest samples present in the dump, partitioned for the comparison.
// Resolution groups drop samples whose answer aligned with neither modality.
GroupSpec make_group(const Dump& dump, const DatasetManifest& manifest, Comparison comparison);

// Throws ArgumentError on overlapping or empty groups, or non-conflict
// members in a resolution comparison. `allow_identical` admits A == B.
void check_group(const GroupSpec& group, const DatasetManifest& manifest, bool allow_identical = false);

struct HeadId {
    int layer = 0;
    int head = 0;
    friend auto operator<=>(const HeadId&, const HeadId&) = default;
};

struct MeanPattern {
    int n_layers = 0;
    int n_heads = 0;
    std::vector<double> text;   // [layer][head]
    std::vector<double> image;  // [layer][head]
    double text_at(int layer, int head) const { return text[static_cast<std::size_t>(layer * n_heads + head)]; }
    double image_at(int layer, int head) const { return image[static_cast<std::size_t>(layer * n_heads + head)]; }
};

// Arithmetic mean per (layer, head). The text channel skips samples listed as
// text_channel_absent in the dump index.
MeanPattern group_mean_pattern(const Dump& dump, const std::vector<std::string>& sample_ids);

struct HeadDeltaTable {
    int n_layers = 0;
    int n_heads = 0;
    std::vector<double> delta_text;
    std::vector<double> delta_image;
    double at(int layer, int head, Channel ch) const;
};

HeadDeltaTable pattern_delta(const MeanPattern& a, const MeanPattern& b);

struct LayerProfile {
    std::vector<double> value;       // per layer: sum over heads of delta
    std::vector<double> dispersion;  // per layer: std across samples of the head-summed deviation
};

struct GroupAnalysis {
    GroupSpec group;
    HeadDeltaTable deltas;
    LayerProfile text;
    LayerProfile image;
};

GroupAnalysis analyze_group(const Dump& dump, const GroupSpec& group);
LayerProfile layer_profile(const Dump& dump, const GroupSpec& group, Channel channel = Channel::text);

// k largest deltas on the channel; ties by ascending (layer, head).
std::vector<HeadId> top_k_heads(const HeadDeltaTable& delta, int k, Channel channel = Channel::text);

double head_set_overlap(const std::vector<HeadId>& a, const std::vector<HeadId>& b);

struct PeakOrdering {
    int detection_peak = 0;
    int resolution_peak = 0;
    bool detection_precedes = false;
};

// First argmax of each profile; a tie in peak layer is not precedence.
PeakOrdering peak_layer_ordering(const std::vector<double>& detection, const std::vector<double>& resolution);

void write_layer_profiles_csv(const GroupAnalysis& detection, const GroupAnalysis& resolution,
                              const std::filesystem::path& path);
void write_head_deltas_csv(const HeadDeltaTable& table, const std::filesystem::path& path);

}  // namespace modcon
