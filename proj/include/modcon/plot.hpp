#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace modcon {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    int column(const std::string& name) const;  // -1 when absent
    std::vector<double> numbers(const std::string& name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

enum class PlotKind { sweep, layer_profile, bins, records, head_deltas };

// Infers the chart type from the header; throws DataError for an unknown CSV.
PlotKind detect_plot_kind(const CsvTable& table);

std::string render_svg(const CsvTable& table, const std::string& title);

// Reads a CSV emitted by one of the subcommands and writes a standalone SVG.
void plot_csv(const std::filesystem::path& csv, const std::filesystem::path& svg);

}  // namespace modcon
