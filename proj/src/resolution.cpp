#include "modcon/resolution.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "modcon/errors.hpp"
#include "modcon/stats.hpp"

namespace modcon {

namespace {

constexpr double kProbSlack = 1e-6;

std::vector<const SampleSpec*> conflict_samples(const DatasetManifest& manifest) {
    std::vector<const SampleSpec*> out;
    for (const auto& s : manifest.samples) {
        if (s.conflict_label) out.push_back(&s);
    }
    return out;
}

AnswerProbRecord require_answer(const Dump& dump, const std::string& sample_id) {
    if (!dump.has_answers())
        throw DataError("dump " + dump.path().string() + " has no answer records (needed for sample '" + sample_id + "')");
    const auto s = dump.sample_index(sample_id);
    if (!s) throw DataError("no answer record for sample '" + sample_id + "'");
    return dump.answer(*s);
}

template <class StrengthFn>
std::vector<ResolutionRecord> build(const Dump& dump, const DatasetManifest& manifest,
                                    const ConfidenceOptions& options, StrengthFn&& strength) {
    std::vector<ResolutionRecord> out;
    for (const auto* s : conflict_samples(manifest)) {
        const auto ans = require_answer(dump, s->sample_id);
        ResolutionRecord r;
        r.sample_id = s->sample_id;
        r.confidence = resolution_confidence(ans.p_image_answer, ans.p_text_answer, options);
        r.conflict_strength = strength(*s);
        r.aligned_modality = ans.aligned_modality;
        out.push_back(std::move(r));
    }
    return out;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

}  // namespace

double resolution_confidence(double p_image, double p_text, const ConfidenceOptions& options) {
    if (!(p_image >= 0.0 && p_image <= 1.0 && p_text >= 0.0 && p_text <= 1.0))
        throw ArgumentError("answer probabilities must lie in [0, 1]");
    if (p_image + p_text > 1.0 + kProbSlack) throw ArgumentError("p_image + p_text exceeds 1");
    if (options.renormalize) {
        const double sum = p_image + p_text;
        return sum > 0.0 ? (p_image - p_text) / sum : 0.0;
    }
    return p_image - p_text;
}

std::vector<ResolutionRecord> build_resolution_records(const Dump& dump, const DatasetManifest& manifest,
                                                       const ProbeModel& probe, const ConfidenceOptions& options) {
    if (!dump.has_kind(probe.kind))
        throw DataError("dump has no '" + std::string(to_string(probe.kind)) + "' activations for the probe");
    if (probe.layer < 0 || probe.layer >= dump.n_layers())
        throw DataError("probe layer " + std::to_string(probe.layer) + " outside the dump");
    return build(dump, manifest, options, [&](const SampleSpec& s) {
        const auto idx = dump.sample_index(s.sample_id);
        if (!idx) throw DataError("no activation record for sample '" + s.sample_id + "'");
        return predict_proba(probe, dump.activation(*idx, probe.layer, probe.kind));
    });
}

std::vector<ResolutionRecord> build_resolution_records(const Dump& dump, const DatasetManifest& manifest,
                                                       const std::map<std::string, double>& strengths,
                                                       const ConfidenceOptions& options) {
    return build(dump, manifest, options, [&](const SampleSpec& s) {
        auto it = strengths.find(s.sample_id);
        if (it == strengths.end()) throw DataError("no conflict strength for sample '" + s.sample_id + "'");
        return it->second;
    });
}

std::size_t BinnedRelationship::total() const {
    std::size_t n = 0;
    for (const auto& b : bins) n += b.count;
    return n;
}

std::size_t confidence_bin(double c, std::size_t n_bins) {
    if (!(c >= -1.0 && c <= 1.0)) throw ArgumentError("confidence " + std::to_string(c) + " outside [-1, 1]");
    const double width = 2.0 / static_cast<double>(n_bins);
    const auto idx = static_cast<std::size_t>(std::floor((c + 1.0) / width));
    return std::min(idx, n_bins - 1);
}

BinnedRelationship binned_relationship(const std::vector<ResolutionRecord>& records, std::size_t n_bins) {
    if (n_bins < 2) throw ArgumentError("need at least 2 bins");
    std::vector<std::vector<double>> members(n_bins);
    for (const auto& r : records) members[confidence_bin(r.confidence, n_bins)].push_back(r.conflict_strength);
    BinnedRelationship out;
    const double width = 2.0 / static_cast<double>(n_bins);
    for (std::size_t b = 0; b < n_bins; ++b) {
        ConfidenceBin bin;
        bin.lo = -1.0 + width * static_cast<double>(b);
        bin.hi = b + 1 == n_bins ? 1.0 : -1.0 + width * static_cast<double>(b + 1);
        bin.count = members[b].size();
        bin.mean_strength = mean(members[b]);
        bin.variance_strength = sample_variance(members[b]);
        out.bins.push_back(bin);
    }
    return out;
}

double Heteroscedasticity::variance_ratio() const {
    return middle_variance > 0 ? extreme_variance / middle_variance : INFINITY;
}

Heteroscedasticity heteroscedasticity(const std::vector<ResolutionRecord>& records, std::size_t n_bins) {
    if (n_bins < 3) throw ArgumentError("need at least 3 bins to separate middle and extremes");
    const std::size_t middle = confidence_bin(0.0, n_bins);
    std::vector<double> mid, ext;
    for (const auto& r : records) {
        const auto b = confidence_bin(r.confidence, n_bins);
        if (b == middle) mid.push_back(r.conflict_strength);
        else if (b == 0 || b == n_bins - 1) ext.push_back(r.conflict_strength);
    }
    return {mid.size(), mean(mid), sample_variance(mid), ext.size(), mean(ext), sample_variance(ext)};
}

double rank_correlation_abs_confidence(const std::vector<ResolutionRecord>& records) {
    std::vector<double> a, s;
    for (const auto& r : records) {
        a.push_back(std::abs(r.confidence));
        s.push_back(r.conflict_strength);
    }
    return spearman(a, s);
}

AlignmentTally alignment_tally(const Dump& dump, const DatasetManifest& manifest) {
    AlignmentTally t;
    for (const auto* s : conflict_samples(manifest)) {
        switch (require_answer(dump, s->sample_id).aligned_modality) {
            case AlignedModality::image: ++t.image; break;
            case AlignedModality::text: ++t.text; break;
            case AlignedModality::other: ++t.other; break;
        }
    }
    return t;
}

void write_records_csv(const std::vector<ResolutionRecord>& records, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + path.string());
    f << "sample_id,confidence,conflict_strength,aligned_modality\n";
    for (const auto& r : records)
        f << r.sample_id << ',' << fmt(r.confidence) << ',' << fmt(r.conflict_strength) << ','
          << to_string(r.aligned_modality) << '\n';
}

std::vector<ResolutionRecord> read_records_csv(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open " + path.string());
    std::string line;
    std::getline(f, line);
    if (line != "sample_id,confidence,conflict_strength,aligned_modality")
        throw DataError(path.string() + ": unexpected header '" + line + "'");
    std::vector<ResolutionRecord> out;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string id, c, s, m;
        std::getline(ss, id, ',');
        std::getline(ss, c, ',');
        std::getline(ss, s, ',');
        std::getline(ss, m, ',');
        try {
            out.push_back({id, std::stod(c), std::stod(s), parse_aligned_modality(m)});
        } catch (const std::exception&) {
            throw DataError(path.string() + ": malformed row '" + line + "'");
        }
    }
    return out;
}

void write_bins_csv(const BinnedRelationship& rel, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + path.string());
    f << "bin_lo,bin_hi,count,mean_strength,var_strength\n";
    for (const auto& b : rel.bins) {
        f << fmt(b.lo) << ',' << fmt(b.hi) << ',' << b.count << ',';
        if (b.count > 0) f << fmt(b.mean_strength);
        f << ',';
        if (b.count > 1) f << fmt(b.variance_strength);
        f << '\n';
    }
}

}  // namespace modcon
