#include "modcon/attention.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <unordered_set>

#include "modcon/errors.hpp"

namespace modcon {

std::string_view to_string(Comparison c) { return c == Comparison::detection ? "detection" : "resolution"; }
std::string_view to_string(Channel c) { return c == Channel::text ? "text" : "image"; }

GroupSpec make_group(const Dump& dump, const DatasetManifest& manifest, Comparison comparison) {
    GroupSpec g;
    g.name = std::string(to_string(comparison));
    g.comparison = comparison;
    for (const auto& s : manifest.samples) {
        const auto idx = dump.sample_index(s.sample_id);
        if (!idx) continue;
        if (comparison == Comparison::detection) {
            (s.conflict_label ? g.group_a : g.group_b).push_back(s.sample_id);
        } else if (s.conflict_label) {
            if (!dump.has_answers()) throw DataError("resolution groups need answer records in the dump");
            switch (dump.answer(*idx).aligned_modality) {
                case AlignedModality::image: g.group_a.push_back(s.sample_id); break;
                case AlignedModality::text: g.group_b.push_back(s.sample_id); break;
                case AlignedModality::other: break;
            }
        }
    }
    return g;
}

void check_group(const GroupSpec& group, const DatasetManifest& manifest, bool allow_identical) {
    if (group.group_a.empty() || group.group_b.empty())
        throw ArgumentError("group '" + group.name + "' has an empty side");
    if (!allow_identical) {
        const std::unordered_set<std::string> a(group.group_a.begin(), group.group_a.end());
        for (const auto& id : group.group_b) {
            if (a.contains(id)) throw ArgumentError("group '" + group.name + "': sample '" + id + "' is on both sides");
        }
    }
    if (group.comparison == Comparison::resolution) {
        for (const auto* side : {&group.group_a, &group.group_b}) {
            for (const auto& id : *side) {
                const auto* s = manifest.find(id);
                if (!s || !s->conflict_label)
                    throw ArgumentError("resolution group '" + group.name + "' holds non-conflict sample '" + id + "'");
            }
        }
    }
}

namespace {

std::vector<std::size_t> resolve(const Dump& dump, const std::vector<std::string>& ids) {
    std::vector<std::size_t> out;
    out.reserve(ids.size());
    for (const auto& id : ids) out.push_back(dump.require_sample(id));
    return out;
}

std::vector<char> absent_mask(const Dump& dump) {
    std::vector<char> mask(dump.n_samples(), 0);
    for (const auto& id : dump.index().text_channel_absent) {
        if (auto s = dump.sample_index(id)) mask[*s] = 1;
    }
    return mask;
}

}  // namespace

MeanPattern group_mean_pattern(const Dump& dump, const std::vector<std::string>& sample_ids) {
    if (!dump.has_attention()) throw DataError("dump " + dump.path().string() + " has no attention records");
    if (sample_ids.empty()) throw ArgumentError("cannot average an empty group");
    const auto rows = resolve(dump, sample_ids);
    const auto absent = absent_mask(dump);
    MeanPattern m;
    m.n_layers = dump.n_layers();
    m.n_heads = dump.n_heads();
    const auto cells = static_cast<std::size_t>(m.n_layers * m.n_heads);
    m.text.assign(cells, 0.0);
    m.image.assign(cells, 0.0);
    std::size_t text_n = 0;
    for (auto s : rows) {
        const bool has_text = !absent[s];
        text_n += has_text;
        for (int l = 0; l < m.n_layers; ++l) {
            for (int h = 0; h < m.n_heads; ++h) {
                const auto w = dump.attention(s, l, h);
                const auto c = static_cast<std::size_t>(l * m.n_heads + h);
                if (has_text) m.text[c] += w.text;
                m.image[c] += w.image;
            }
        }
    }
    for (std::size_t c = 0; c < cells; ++c) {
        m.text[c] = text_n ? m.text[c] / static_cast<double>(text_n) : 0.0;
        m.image[c] /= static_cast<double>(rows.size());
    }
    return m;
}

double HeadDeltaTable::at(int layer, int head, Channel ch) const {
    const auto c = static_cast<std::size_t>(layer * n_heads + head);
    return ch == Channel::text ? delta_text[c] : delta_image[c];
}

HeadDeltaTable pattern_delta(const MeanPattern& a, const MeanPattern& b) {
    if (a.n_layers != b.n_layers || a.n_heads != b.n_heads)
        throw ArgumentError("attention grids differ: " + std::to_string(a.n_layers) + "x" + std::to_string(a.n_heads) +
                            " vs " + std::to_string(b.n_layers) + "x" + std::to_string(b.n_heads));
    HeadDeltaTable t;
    t.n_layers = a.n_layers;
    t.n_heads = a.n_heads;
    t.delta_text.resize(a.text.size());
    t.delta_image.resize(a.image.size());
    for (std::size_t c = 0; c < a.text.size(); ++c) {
        t.delta_text[c] = std::abs(a.text[c] - b.text[c]);
        t.delta_image[c] = std::abs(a.image[c] - b.image[c]);
    }
    return t;
}

namespace {

// Per layer: sqrt( sum_i (sum_h x_i - mean_g(i))^2 / (N - 2) ) over both groups,
// each sample measured against its own group mean.
void accumulate_deviation(const Dump& dump, const std::vector<std::size_t>& rows, const MeanPattern& mean, Channel ch,
                          std::vector<double>& sum_sq, std::size_t& n_used) {
    const auto absent = absent_mask(dump);
    for (auto s : rows) {
        if (ch == Channel::text && absent[s]) continue;
        ++n_used;
        for (int l = 0; l < mean.n_layers; ++l) {
            double acc = 0.0;
            for (int h = 0; h < mean.n_heads; ++h) {
                const auto w = dump.attention(s, l, h);
                acc += ch == Channel::text ? w.text - mean.text_at(l, h) : w.image - mean.image_at(l, h);
            }
            sum_sq[static_cast<std::size_t>(l)] += acc * acc;
        }
    }
}

LayerProfile profile(const Dump& dump, const std::vector<std::size_t>& a_rows, const std::vector<std::size_t>& b_rows,
                     const MeanPattern& ma, const MeanPattern& mb, const HeadDeltaTable& delta, Channel ch) {
    LayerProfile p;
    const auto L = static_cast<std::size_t>(delta.n_layers);
    p.value.assign(L, 0.0);
    for (int l = 0; l < delta.n_layers; ++l) {
        for (int h = 0; h < delta.n_heads; ++h) p.value[static_cast<std::size_t>(l)] += delta.at(l, h, ch);
    }
    std::vector<double> sum_sq(L, 0.0);
    std::size_t n = 0;
    accumulate_deviation(dump, a_rows, ma, ch, sum_sq, n);
    accumulate_deviation(dump, b_rows, mb, ch, sum_sq, n);
    p.dispersion.assign(L, 0.0);
    if (n > 2) {
        for (std::size_t l = 0; l < L; ++l) p.dispersion[l] = std::sqrt(sum_sq[l] / static_cast<double>(n - 2));
    }
    return p;
}

}  // namespace

GroupAnalysis analyze_group(const Dump& dump, const GroupSpec& group) {
    const auto a_rows = resolve(dump, group.group_a);
    const auto b_rows = resolve(dump, group.group_b);
    const auto ma = group_mean_pattern(dump, group.group_a);
    const auto mb = group_mean_pattern(dump, group.group_b);
    GroupAnalysis out;
    out.group = group;
    out.deltas = pattern_delta(ma, mb);
    out.text = profile(dump, a_rows, b_rows, ma, mb, out.deltas, Channel::text);
    out.image = profile(dump, a_rows, b_rows, ma, mb, out.deltas, Channel::image);
    return out;
}

LayerProfile layer_profile(const Dump& dump, const GroupSpec& group, Channel channel) {
    auto a = analyze_group(dump, group);
    return channel == Channel::text ? a.text : a.image;
}

std::vector<HeadId> top_k_heads(const HeadDeltaTable& delta, int k, Channel channel) {
    const int total = delta.n_layers * delta.n_heads;
    if (k <= 0) throw ArgumentError("k must be positive");
    if (k > total) throw ArgumentError("k = " + std::to_string(k) + " exceeds the " + std::to_string(total) + " heads");
    std::vector<HeadId> ids;
    ids.reserve(static_cast<std::size_t>(total));
    for (int l = 0; l < delta.n_layers; ++l) {
        for (int h = 0; h < delta.n_heads; ++h) ids.push_back({l, h});
    }
    std::stable_sort(ids.begin(), ids.end(), [&](const HeadId& x, const HeadId& y) {
        return delta.at(x.layer, x.head, channel) > delta.at(y.layer, y.head, channel);
    });
    ids.resize(static_cast<std::size_t>(k));
    return ids;
}

double head_set_overlap(const std::vector<HeadId>& a, const std::vector<HeadId>& b) {
    if (a.empty() && b.empty()) throw ArgumentError("Jaccard index undefined for two empty sets");
    const std::set<HeadId> sa(a.begin(), a.end());
    const std::set<HeadId> sb(b.begin(), b.end());
    std::size_t inter = 0;
    for (const auto& h : sa) inter += sb.contains(h);
    const std::size_t uni = sa.size() + sb.size() - inter;
    return static_cast<double>(inter) / static_cast<double>(uni);
}

PeakOrdering peak_layer_ordering(const std::vector<double>& detection, const std::vector<double>& resolution) {
    if (detection.size() != resolution.size() || detection.empty())
        throw ArgumentError("profiles must be non-empty and of equal length");
    auto argmax = [](const std::vector<double>& v) {
        return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
    };
    PeakOrdering p;
    p.detection_peak = argmax(detection);
    p.resolution_peak = argmax(resolution);
    p.detection_precedes = p.detection_peak < p.resolution_peak;
    return p;
}

namespace {

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace

void write_layer_profiles_csv(const GroupAnalysis& det, const GroupAnalysis& res, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + path.string());
    f << "layer,detection_text,detection_text_sd,detection_image,detection_image_sd,"
         "resolution_text,resolution_text_sd,resolution_image,resolution_image_sd\n";
    for (std::size_t l = 0; l < det.text.value.size(); ++l) {
        f << l << ',' << fmt(det.text.value[l]) << ',' << fmt(det.text.dispersion[l]) << ','
          << fmt(det.image.value[l]) << ',' << fmt(det.image.dispersion[l]) << ',' << fmt(res.text.value[l]) << ','
          << fmt(res.text.dispersion[l]) << ',' << fmt(res.image.value[l]) << ',' << fmt(res.image.dispersion[l])
          << '\n';
    }
}

void write_head_deltas_csv(const HeadDeltaTable& t, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + path.string());
    f << "layer,head,delta_text,delta_image\n";
    for (int l = 0; l < t.n_layers; ++l) {
        for (int h = 0; h < t.n_heads; ++h)
            f << l << ',' << h << ',' << fmt(t.at(l, h, Channel::text)) << ',' << fmt(t.at(l, h, Channel::image)) << '\n';
    }
}

}  // namespace modcon
