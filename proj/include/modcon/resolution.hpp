#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "modcon/activation_store.hpp"
#include "modcon/dataset.hpp"
#include "modcon/probe.hpp"

namespace modcon {

struct ResolutionRecord {
    std::string sample_id;
    double confidence = 0.0;         // p_image - p_text, in [-1, 1]
    double conflict_strength = 0.0;  // probe probability of conflict
    AlignedModality aligned_modality = AlignedModality::other;
};

struct ConfidenceOptions {
    // Divide the difference by p_image + p_text (renormalize over the two answers).
    bool renormalize = false;
};

double resolution_confidence(double p_image, double p_text, const ConfidenceOptions& options = {});

// One record per conflict-labeled manifest sample, scored by the probe at its (layer, kind).
std::vector<ResolutionRecord> build_resolution_records(const Dump& dump, const DatasetManifest& manifest,
                                                       const ProbeModel& probe, const ConfidenceOptions& options = {});

// Same, with conflict strength supplied externally (e.g. planted fixture strengths).
std::vector<ResolutionRecord> build_resolution_records(const Dump& dump, const DatasetManifest& manifest,
                                                       const std::map<std::string, double>& strengths,
                                                       const ConfidenceOptions& options = {});

struct ConfidenceBin {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t count = 0;
    double mean_strength = 0.0;      // 0 when empty
    double variance_strength = 0.0;  // unbiased; 0 with fewer than two records
};

struct BinnedRelationship {
    std::vector<ConfidenceBin> bins;
    std::size_t total() const;
};

// Equal-width bin over [-1, 1]; right-open except the last bin, which is closed.
std::size_t confidence_bin(double confidence, std::size_t n_bins);

BinnedRelationship binned_relationship(const std::vector<ResolutionRecord>& records, std::size_t n_bins = 20);

struct Heteroscedasticity {
    std::size_t middle_count = 0;
    double middle_mean = 0.0;
    double middle_variance = 0.0;
    std::size_t extreme_count = 0;  // first and last bins pooled
    double extreme_mean = 0.0;
    double extreme_variance = 0.0;
    double variance_ratio() const;
};

// Compares the bin holding confidence 0 against the two outermost bins.
Heteroscedasticity heteroscedasticity(const std::vector<ResolutionRecord>& records, std::size_t n_bins = 20);

// Spearman rho between |confidence| and conflict strength.
double rank_correlation_abs_confidence(const std::vector<ResolutionRecord>& records);

struct AlignmentTally {
    std::size_t image = 0;
    std::size_t text = 0;
    std::size_t other = 0;
    std::size_t total() const { return image + text + other; }
};

AlignmentTally alignment_tally(const Dump& dump, const DatasetManifest& manifest);

void write_records_csv(const std::vector<ResolutionRecord>& records, const std::filesystem::path& path);
std::vector<ResolutionRecord> read_records_csv(const std::filesystem::path& path);
void write_bins_csv(const BinnedRelationship& bins, const std::filesystem::path& path);

}  // namespace modcon
