#include "modcon/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <unordered_set>

#include "modcon/errors.hpp"
#include "modcon/parallel.hpp"

namespace modcon {

namespace {

constexpr std::array<std::string_view, 5> kShapeNames = {"circle", "square", "triangle", "diamond", "star"};
constexpr std::array<std::string_view, 8> kColorNames = {"black", "gray",  "red",    "blue",
                                                         "green", "yellow", "purple", "pink"};
constexpr std::array<std::string_view, 4> kCaptionTypeNames = {"conflict", "no_color", "matching_color",
                                                               "other_shape_color"};

// Standard palette; every entry differs from the white background.
constexpr std::array<Rgb, 8> kPalette = {{
    {0, 0, 0},        // black
    {128, 128, 128},  // gray
    {255, 0, 0},      // red
    {0, 0, 255},      // blue
    {0, 255, 0},      // green
    {255, 255, 0},    // yellow
    {128, 0, 128},    // purple
    {255, 192, 203},  // pink
}};

template <class Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::array<std::string_view, N>& names, const char* what) {
    for (std::size_t i = 0; i < N; ++i) {
        if (names[i] == s) return static_cast<Enum>(i);
    }
    throw ConfigError(std::string("unknown ") + what + ": '" + std::string(s) + "'");
}

std::vector<ColorName> colors_except(ColorName c) {
    std::vector<ColorName> out;
    for (auto other : kAllColors) {
        if (other != c) out.push_back(other);
    }
    return out;
}

std::vector<ShapeKind> shapes_except(ShapeKind s) {
    std::vector<ShapeKind> out;
    for (auto other : kAllShapes) {
        if (other != s) out.push_back(other);
    }
    return out;
}

template <class T>
const T& pick(const std::vector<T>& v, Rng& rng) {
    return v[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(v.size()) - 1))];
}

double cross(double ax, double ay, double bx, double by, double px, double py) {
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

using StarPolygon = std::array<std::pair<double, double>, 10>;

StarPolygon star_polygon(double cx, double cy, double r) {
    const double inner = r * std::sin(std::numbers::pi / 10) / std::sin(3 * std::numbers::pi / 10);
    StarPolygon poly;
    for (int k = 0; k < 10; ++k) {
        const double a = -std::numbers::pi / 2 + k * std::numbers::pi / 5;
        const double rad = (k % 2 == 0) ? r : inner;
        poly[static_cast<std::size_t>(k)] = {cx + rad * std::cos(a), cy + rad * std::sin(a)};
    }
    return poly;
}

bool in_polygon(const StarPolygon& poly, double x, double y) {
    bool inside = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const auto [xi, yi] = poly[i];
        const auto [xj, yj] = poly[j];
        if ((yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi) inside = !inside;
    }
    return inside;
}

void place_randomly(SampleSpec& spec, const GenerationConfig& config) {
    Rng rng(spec.seed);
    spec.size = static_cast<int>(rng.uniform_int(config.min_size, config.max_size));
    const double half = spec.size / 2.0;
    const auto lo = static_cast<std::int64_t>(std::ceil(half));
    const auto hi = static_cast<std::int64_t>(std::floor(config.canvas_size - half));
    spec.center.x = static_cast<int>(rng.uniform_int(lo, hi));
    spec.center.y = static_cast<int>(rng.uniform_int(lo, hi));
}

std::string make_sample_id(ShapeKind s, ColorName c, CaptionType t, int k) {
    char idx[16];
    std::snprintf(idx, sizeof idx, "%03d", k);
    return std::string(to_string(s)) + "-" + std::string(to_string(c)) + "-" + std::string(to_string(t)) + "-" + idx;
}

}  // namespace

std::string_view to_string(ShapeKind s) { return kShapeNames[static_cast<std::size_t>(s)]; }
std::string_view to_string(ColorName c) { return kColorNames[static_cast<std::size_t>(c)]; }
std::string_view to_string(CaptionType t) { return kCaptionTypeNames[static_cast<std::size_t>(t)]; }
ShapeKind parse_shape(std::string_view s) { return parse_enum<ShapeKind>(s, kShapeNames, "shape"); }
ColorName parse_color(std::string_view s) { return parse_enum<ColorName>(s, kColorNames, "color"); }
CaptionType parse_caption_type(std::string_view s) {
    return parse_enum<CaptionType>(s, kCaptionTypeNames, "caption type");
}

Rgb rgb_of(ColorName c) { return kPalette[static_cast<std::size_t>(c)]; }

const SampleSpec* DatasetManifest::find(std::string_view sample_id) const {
    for (const auto& s : samples) {
        if (s.sample_id == sample_id) return &s;
    }
    return nullptr;
}

void check_sample(const SampleSpec& spec, int canvas_size) {
    const double half = spec.size / 2.0;
    if (spec.size <= 0 || spec.center.x - half < 0 || spec.center.y - half < 0 ||
        spec.center.x + half > canvas_size || spec.center.y + half > canvas_size) {
        throw BoundsError("sample '" + spec.sample_id + "': shape of size " + std::to_string(spec.size) +
                          " at (" + std::to_string(spec.center.x) + "," + std::to_string(spec.center.y) +
                          ") exceeds the " + std::to_string(canvas_size) + "px canvas");
    }
    auto fail = [&](const std::string& why) { throw ConfigError("sample '" + spec.sample_id + "': " + why); };
    if (spec.conflict_label != is_conflict(spec.caption_type)) fail("conflict_label disagrees with caption_type");
    switch (spec.caption_type) {
        case CaptionType::conflict:
            if (!spec.caption_color || *spec.caption_color == spec.image_color)
                fail("conflict caption must name a color different from the image color");
            break;
        case CaptionType::matching_color:
            if (spec.caption_color != spec.image_color) fail("matching caption must name the image color");
            break;
        case CaptionType::no_color:
            if (spec.caption_color) fail("no_color caption must not name a color");
            break;
        case CaptionType::other_shape_color:
            if (!spec.caption_color || spec.caption_shape == spec.shape)
                fail("other_shape_color caption must color a shape absent from the image");
            break;
    }
    if (spec.caption_type != CaptionType::other_shape_color && spec.caption_shape != spec.shape)
        fail("caption names a different shape");
}

bool shape_contains(ShapeKind shape, double cx, double cy, double r, double x, double y) {
    const double dx = x - cx;
    const double dy = y - cy;
    switch (shape) {
        case ShapeKind::circle:
            return dx * dx + dy * dy <= r * r;
        case ShapeKind::square:
            return std::abs(dx) <= r && std::abs(dy) <= r;
        case ShapeKind::diamond:
            return std::abs(dx) + std::abs(dy) <= r;
        case ShapeKind::triangle: {
            // Apex up; clockwise in image coordinates.
            const double ax = cx, ay = cy - r, bx = cx + r, by = cy + r, qx = cx - r, qy = cy + r;
            return cross(ax, ay, bx, by, x, y) >= 0 && cross(bx, by, qx, qy, x, y) >= 0 &&
                   cross(qx, qy, ax, ay, x, y) >= 0;
        }
        case ShapeKind::star:
            return in_polygon(star_polygon(cx, cy, r), x, y);
    }
    return false;
}

Image render_image(const SampleSpec& spec, int canvas_size) {
    check_sample(spec, canvas_size);
    Image img(canvas_size, canvas_size, kBackground);
    const Rgb color = rgb_of(spec.image_color);
    const double r = spec.size / 2.0;
    const int x0 = std::max(0, static_cast<int>(std::floor(spec.center.x - r)));
    const int x1 = std::min(canvas_size - 1, static_cast<int>(std::ceil(spec.center.x + r)));
    const int y0 = std::max(0, static_cast<int>(std::floor(spec.center.y - r)));
    const int y1 = std::min(canvas_size - 1, static_cast<int>(std::ceil(spec.center.y + r)));
    const bool star = spec.shape == ShapeKind::star;
    const auto poly = star_polygon(spec.center.x, spec.center.y, r);
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const bool inside = star ? in_polygon(poly, x + 0.5, y + 0.5)
                                     : shape_contains(spec.shape, spec.center.x, spec.center.y, r, x + 0.5, y + 0.5);
            if (inside) img.set(x, y, color);
        }
    }
    return img;
}

std::string format_caption(ShapeKind shape, std::optional<ColorName> color) {
    std::string text = "an image of a ";
    if (color) {
        text += to_string(*color);
        text += ' ';
    }
    text += to_string(shape);
    return text;
}

Caption make_caption(ShapeKind shape, ColorName image_color, CaptionType type, Rng& rng) {
    Caption c;
    c.named_shape = shape;
    switch (type) {
        case CaptionType::conflict:
            c.color = pick(colors_except(image_color), rng);
            break;
        case CaptionType::no_color:
            break;
        case CaptionType::matching_color:
            c.color = image_color;
            break;
        case CaptionType::other_shape_color:
            c.named_shape = pick(shapes_except(shape), rng);
            c.color = pick(colors_except(image_color), rng);
            break;
    }
    c.text = format_caption(c.named_shape, c.color);
    return c;
}

DatasetManifest generate_dataset(const GenerationConfig& config) {
    if (config.conflict_per_combo < 0 || config.no_conflict_per_combo < 0)
        throw ConfigError("sample counts must be non-negative");
    if (config.conflict_per_combo + config.no_conflict_per_combo <= 0)
        throw ConfigError("at least one sample per shape-color combination is required");
    if (config.distinct_conflict_colors < 1 || config.distinct_conflict_colors > 7)
        throw ConfigError("distinct_conflict_colors must be in [1, 7]; only 7 colors differ from the image color");
    if (config.conflict_per_combo > 0 && config.conflict_per_combo < config.distinct_conflict_colors)
        throw ConfigError("conflict_per_combo (" + std::to_string(config.conflict_per_combo) +
                          ") cannot cover " + std::to_string(config.distinct_conflict_colors) +
                          " distinct conflict colors");
    if (config.no_conflict_per_combo > 0 && config.no_conflict_types.empty())
        throw ConfigError("no_conflict_types is empty");
    for (auto t : config.no_conflict_types) {
        if (is_conflict(t)) throw ConfigError("no_conflict_types may not contain 'conflict'");
    }
    if (config.canvas_size <= 0 || config.min_size < 1 || config.min_size > config.max_size ||
        config.max_size > config.canvas_size)
        throw ConfigError("shape size range must satisfy 1 <= min_size <= max_size <= canvas_size");

    DatasetManifest m;
    m.generator_version = std::string(kGeneratorVersion);
    m.global_seed = config.seed;
    m.canvas_size = config.canvas_size;

    auto finish = [&](SampleSpec& s) {
        s.seed = derive_seed(config.seed, s.sample_id);
        s.conflict_label = is_conflict(s.caption_type);
        s.image_answer_token = std::string(to_string(s.image_color));
        if (s.caption_color) s.text_answer_token = std::string(to_string(*s.caption_color));
        place_randomly(s, config);
        m.samples.push_back(std::move(s));
    };

    int combo = 0;
    for (auto shape : kAllShapes) {
        for (auto color : kAllColors) {
            // The conflict colors for this combination: a seeded choice of
            // `distinct_conflict_colors` out of the 7 wrong colors, used round-robin.
            auto wrong = colors_except(color);
            Rng combo_rng(derive_seed(config.seed, static_cast<std::uint64_t>(combo) + 0x5eedULL));
            shuffle(wrong, combo_rng);
            wrong.resize(static_cast<std::size_t>(config.distinct_conflict_colors));
            std::sort(wrong.begin(), wrong.end());

            for (int k = 0; k < config.conflict_per_combo; ++k) {
                SampleSpec s;
                s.sample_id = make_sample_id(shape, color, CaptionType::conflict, k);
                s.shape = shape;
                s.caption_shape = shape;
                s.image_color = color;
                s.caption_type = CaptionType::conflict;
                s.caption_color = wrong[static_cast<std::size_t>(k) % wrong.size()];
                s.caption_text = format_caption(shape, s.caption_color);
                finish(s);
            }
            const auto n_types = config.no_conflict_types.size();
            for (int k = 0; k < config.no_conflict_per_combo; ++k) {
                const auto type = config.no_conflict_types[(static_cast<std::size_t>(k) + combo) % n_types];
                SampleSpec s;
                s.sample_id = make_sample_id(shape, color, type, k);
                s.shape = shape;
                s.image_color = color;
                s.caption_type = type;
                Rng caption_rng(derive_seed(config.seed ^ 0xca9710aULL, s.sample_id));
                auto cap = make_caption(shape, color, type, caption_rng);
                s.caption_shape = cap.named_shape;
                s.caption_color = cap.color;
                s.caption_text = std::move(cap.text);
                finish(s);
            }
            ++combo;
        }
    }
    return m;
}

ImageFormat parse_image_format(std::string_view s) {
    if (s == "png") return ImageFormat::png;
    if (s == "ppm") return ImageFormat::ppm;
    if (s == "none") return ImageFormat::none;
    throw ConfigError("unknown image format '" + std::string(s) + "' (expected png, ppm or none)");
}

void write_dataset(const DatasetManifest& manifest, const std::filesystem::path& dir, ImageFormat format,
                   unsigned threads) {
    std::filesystem::create_directories(dir);
    write_manifest(manifest, dir / "manifest.jsonl");
    if (format == ImageFormat::none) return;
    const auto image_dir = dir / "images";
    std::filesystem::create_directories(image_dir);
    const char* ext = format == ImageFormat::png ? ".png" : ".ppm";
    parallel_for(manifest.samples.size(), threads, [&](std::size_t i) {
        const auto& s = manifest.samples[i];
        const Image img = render_image(s, manifest.canvas_size);
        write_bytes(image_dir / (s.sample_id + ext), format == ImageFormat::png ? encode_png(img) : encode_ppm(img));
    });
}

std::vector<ColorName> default_train_colors() {
    return {ColorName::red, ColorName::blue, ColorName::green, ColorName::yellow, ColorName::purple};
}

std::vector<ColorName> default_test_colors() { return {ColorName::black, ColorName::gray, ColorName::pink}; }

namespace {

bool admitted(const SampleSpec& s, const std::set<ColorName>& colors) {
    if (!colors.contains(s.image_color)) return false;
    return !s.caption_color || colors.contains(*s.caption_color);
}

void balance(std::vector<SampleSpec>& samples, std::uint64_t seed) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < samples.size(); ++i) (samples[i].conflict_label ? pos : neg).push_back(i);
    auto& major = pos.size() > neg.size() ? pos : neg;
    const std::size_t keep = std::min(pos.size(), neg.size());
    if (major.size() == keep) return;
    // Keep the majority samples with the smallest seeded keys: independent of input order.
    std::sort(major.begin(), major.end(), [&](std::size_t a, std::size_t b) {
        const auto ka = derive_seed(seed, samples[a].sample_id);
        const auto kb = derive_seed(seed, samples[b].sample_id);
        return ka != kb ? ka < kb : samples[a].sample_id < samples[b].sample_id;
    });
    std::vector<bool> drop(samples.size(), false);
    for (std::size_t i = keep; i < major.size(); ++i) drop[major[i]] = true;
    std::vector<SampleSpec> kept;
    kept.reserve(2 * keep);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (!drop[i]) kept.push_back(std::move(samples[i]));
    }
    samples = std::move(kept);
}

}  // namespace

std::pair<DatasetManifest, DatasetManifest> split_disjoint_colors(const DatasetManifest& manifest,
                                                                  const std::vector<ColorName>& train_colors,
                                                                  const std::vector<ColorName>& test_colors,
                                                                  const SplitOptions& options) {
    const std::set<ColorName> train(train_colors.begin(), train_colors.end());
    const std::set<ColorName> test(test_colors.begin(), test_colors.end());
    if (train.empty() || test.empty()) throw ConfigError("train and test color sets must be non-empty");
    for (auto c : train) {
        if (test.contains(c))
            throw ConfigError("train and test color sets overlap on '" + std::string(to_string(c)) + "'");
    }
    auto make = [&](const std::set<ColorName>& colors, const char* role) {
        DatasetManifest out;
        out.generator_version = manifest.generator_version;
        out.global_seed = manifest.global_seed;
        out.canvas_size = manifest.canvas_size;
        out.split_role = role;
        out.split_colors.assign(colors.begin(), colors.end());
        for (const auto& s : manifest.samples) {
            if (admitted(s, colors)) out.samples.push_back(s);
        }
        if (options.balance_classes) balance(out.samples, derive_seed(options.seed, role));
        return out;
    };
    return {make(train, "train"), make(test, "test")};
}

void check_color_disjoint(const DatasetManifest& train, const DatasetManifest& test) {
    if (train.split_colors.empty() || test.split_colors.empty())
        throw ConfigError("manifests carry no split color metadata");
    for (auto c : train.split_colors) {
        if (std::find(test.split_colors.begin(), test.split_colors.end(), c) != test.split_colors.end())
            throw ConfigError("train and test splits share color '" + std::string(to_string(c)) + "'");
    }
}

nlohmann::json to_json(const SampleSpec& s) {
    nlohmann::json j;
    j["sample_id"] = s.sample_id;
    j["shape"] = to_string(s.shape);
    j["image_color"] = to_string(s.image_color);
    j["caption_color"] = s.caption_color ? nlohmann::json(to_string(*s.caption_color)) : nlohmann::json(nullptr);
    j["caption_shape"] = to_string(s.caption_shape);
    j["caption_type"] = to_string(s.caption_type);
    j["caption_text"] = s.caption_text;
    j["center"] = {s.center.x, s.center.y};
    j["size"] = s.size;
    j["conflict_label"] = s.conflict_label;
    j["image_answer_token"] = s.image_answer_token;
    j["text_answer_token"] = s.text_answer_token ? nlohmann::json(*s.text_answer_token) : nlohmann::json(nullptr);
    j["seed"] = s.seed;
    return j;
}

SampleSpec sample_from_json(const nlohmann::json& j) {
    SampleSpec s;
    try {
        s.sample_id = j.at("sample_id").get<std::string>();
        s.shape = parse_shape(j.at("shape").get<std::string>());
        s.image_color = parse_color(j.at("image_color").get<std::string>());
        if (!j.at("caption_color").is_null()) s.caption_color = parse_color(j.at("caption_color").get<std::string>());
        s.caption_shape = j.contains("caption_shape") ? parse_shape(j.at("caption_shape").get<std::string>()) : s.shape;
        s.caption_type = parse_caption_type(j.at("caption_type").get<std::string>());
        s.caption_text = j.at("caption_text").get<std::string>();
        s.center = {j.at("center").at(0).get<int>(), j.at("center").at(1).get<int>()};
        s.size = j.at("size").get<int>();
        s.conflict_label = j.at("conflict_label").get<bool>();
        s.image_answer_token = j.at("image_answer_token").get<std::string>();
        if (!j.at("text_answer_token").is_null()) s.text_answer_token = j.at("text_answer_token").get<std::string>();
        s.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed sample record: ") + e.what());
    }
    return s;
}

namespace {

std::filesystem::path meta_path_for(const std::filesystem::path& jsonl) {
    auto p = jsonl;
    p.replace_extension(".meta.json");
    return p;
}

}  // namespace

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& jsonl_path) {
    if (jsonl_path.has_parent_path()) std::filesystem::create_directories(jsonl_path.parent_path());
    {
        std::ofstream f(jsonl_path, std::ios::binary | std::ios::trunc);
        if (!f) throw Error("cannot write manifest: " + jsonl_path.string());
        for (const auto& s : manifest.samples) f << to_json(s).dump() << '\n';
    }
    nlohmann::json meta;
    meta["generator_version"] = manifest.generator_version;
    meta["global_seed"] = manifest.global_seed;
    meta["canvas_size"] = manifest.canvas_size;
    meta["n_samples"] = manifest.samples.size();
    if (!manifest.split_role.empty()) {
        meta["split_role"] = manifest.split_role;
        auto& colors = meta["split_colors"] = nlohmann::json::array();
        for (auto c : manifest.split_colors) colors.push_back(to_string(c));
    }
    std::ofstream f(meta_path_for(jsonl_path), std::ios::binary | std::ios::trunc);
    f << meta.dump(2) << '\n';
}

DatasetManifest read_manifest(const std::filesystem::path& jsonl_path) {
    std::ifstream f(jsonl_path, std::ios::binary);
    if (!f) throw DataError("cannot open manifest: " + jsonl_path.string());
    DatasetManifest m;
    std::unordered_set<std::string> ids;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError(jsonl_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        auto s = sample_from_json(j);
        if (!ids.insert(s.sample_id).second)
            throw DataError(jsonl_path.string() + ": duplicate sample_id '" + s.sample_id + "'");
        m.samples.push_back(std::move(s));
    }
    const auto meta_path = meta_path_for(jsonl_path);
    if (std::filesystem::exists(meta_path)) {
        std::ifstream mf(meta_path);
        try {
            const auto meta = nlohmann::json::parse(mf);
            m.generator_version = meta.value("generator_version", "");
            m.global_seed = meta.value("global_seed", std::uint64_t{0});
            m.canvas_size = meta.value("canvas_size", 256);
            m.split_role = meta.value("split_role", "");
            if (meta.contains("split_colors")) {
                for (const auto& c : meta["split_colors"]) m.split_colors.push_back(parse_color(c.get<std::string>()));
            }
        } catch (const nlohmann::json::exception& e) {
            throw DataError(meta_path.string() + ": " + e.what());
        }
    }
    return m;
}

}  // namespace modcon
