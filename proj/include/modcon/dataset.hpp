#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "modcon/raster.hpp"
#include "modcon/rng.hpp"

namespace modcon {

enum class ShapeKind { circle, square, triangle, diamond, star };
enum class ColorName { black, gray, red, blue, green, yellow, purple, pink };

// Conflict is the only caption type that carries a conflict label.
enum class CaptionType { conflict, no_color, matching_color, other_shape_color };

inline constexpr std::array<ShapeKind, 5> kAllShapes = {
    ShapeKind::circle, ShapeKind::square, ShapeKind::triangle, ShapeKind::diamond, ShapeKind::star};
inline constexpr std::array<ColorName, 8> kAllColors = {
    ColorName::black, ColorName::gray,  ColorName::red,    ColorName::blue,
    ColorName::green, ColorName::yellow, ColorName::purple, ColorName::pink};
inline constexpr std::array<CaptionType, 4> kAllCaptionTypes = {
    CaptionType::conflict, CaptionType::no_color, CaptionType::matching_color,
    CaptionType::other_shape_color};

inline constexpr Rgb kBackground{255, 255, 255};

std::string_view to_string(ShapeKind s);
std::string_view to_string(ColorName c);
std::string_view to_string(CaptionType t);
ShapeKind parse_shape(std::string_view s);
ColorName parse_color(std::string_view s);
CaptionType parse_caption_type(std::string_view s);

Rgb rgb_of(ColorName c);

inline bool is_conflict(CaptionType t) { return t == CaptionType::conflict; }

struct PixelPoint {
    int x = 0;
    int y = 0;
    friend bool operator==(const PixelPoint&, const PixelPoint&) = default;
};

struct SampleSpec {
    std::string sample_id;
    ShapeKind shape = ShapeKind::circle;
    ColorName image_color = ColorName::black;
    std::optional<ColorName> caption_color;
    // Shape named by the caption; differs from `shape` only for other_shape_color.
    ShapeKind caption_shape = ShapeKind::circle;
    CaptionType caption_type = CaptionType::no_color;
    std::string caption_text;
    PixelPoint center;
    int size = 0;
    bool conflict_label = false;
    std::string image_answer_token;
    std::optional<std::string> text_answer_token;
    std::uint64_t seed = 0;

    friend bool operator==(const SampleSpec&, const SampleSpec&) = default;
};

struct DatasetManifest {
    std::vector<SampleSpec> samples;
    std::string generator_version;
    std::uint64_t global_seed = 0;
    int canvas_size = 256;
    // Set on split manifests: which role and which colors the split admits.
    std::string split_role;
    std::vector<ColorName> split_colors;

    const SampleSpec* find(std::string_view sample_id) const;
};

inline constexpr std::string_view kGeneratorVersion = "modcon-dataset/1";

// Throws BoundsError for geometry outside the canvas, ConfigError for any
// other SampleSpec invariant violation.
void check_sample(const SampleSpec& spec, int canvas_size = 256);

Image render_image(const SampleSpec& spec, int canvas_size = 256);

// Point-in-shape test in continuous pixel coordinates.
bool shape_contains(ShapeKind shape, double cx, double cy, double half_extent, double x, double y);

struct Caption {
    std::string text;
    std::optional<ColorName> color;
    ShapeKind named_shape = ShapeKind::circle;
};

std::string format_caption(ShapeKind shape, std::optional<ColorName> color);
Caption make_caption(ShapeKind shape, ColorName image_color, CaptionType type, Rng& rng);

struct GenerationConfig {
    std::uint64_t seed = 0;
    int canvas_size = 256;
    int conflict_per_combo = 140;
    int distinct_conflict_colors = 7;
    int no_conflict_per_combo = 140;
    std::vector<CaptionType> no_conflict_types = {
        CaptionType::no_color, CaptionType::matching_color, CaptionType::other_shape_color};
    int min_size = 48;
    int max_size = 160;
};

DatasetManifest generate_dataset(const GenerationConfig& config);

enum class ImageFormat { png, ppm, none };
ImageFormat parse_image_format(std::string_view s);

// Writes manifest.jsonl, manifest.meta.json and images/{sample_id}.{png|ppm}.
void write_dataset(const DatasetManifest& manifest, const std::filesystem::path& dir,
                   ImageFormat format, unsigned threads);

struct SplitOptions {
    // Subsample the majority class within each split to exact balance.
    bool balance_classes = true;
    std::uint64_t seed = 0;
};

// Keeps a sample in a split only if every color it mentions (image and
// caption) belongs to that split's color set.
std::pair<DatasetManifest, DatasetManifest> split_disjoint_colors(
    const DatasetManifest& manifest, const std::vector<ColorName>& train_colors,
    const std::vector<ColorName>& test_colors, const SplitOptions& options = {});

// Throws ConfigError unless the two split manifests carry disjoint color sets.
void check_color_disjoint(const DatasetManifest& train, const DatasetManifest& test);

std::vector<ColorName> default_train_colors();
std::vector<ColorName> default_test_colors();

nlohmann::json to_json(const SampleSpec& spec);
SampleSpec sample_from_json(const nlohmann::json& j);

// JSON Lines plus a `<stem>.meta.json` sidecar holding manifest-level fields.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& jsonl_path);
DatasetManifest read_manifest(const std::filesystem::path& jsonl_path);

}  // namespace modcon
