#include "modcon/activation_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "modcon/dataset.hpp"
#include "modcon/errors.hpp"

namespace modcon {

namespace fs = std::filesystem;

namespace {

constexpr std::array<std::string_view, 3> kKindNames = {"attn_out", "mlp_out", "residual"};
constexpr std::array<std::string_view, 3> kModalityNames = {"image", "text", "other"};
constexpr std::array<std::string_view, 7> kViolationNames = {
    "corrupt_index", "truncated_blob", "index_blob_mismatch", "non_finite",
    "range",         "duplicate_key",  "manifest_mismatch"};

constexpr std::size_t kMaxItemsPerKind = 20;
constexpr float kProbSlack = 1e-6f;

std::string stream_name(ActivationKind k) { return std::string(to_string(k)); }

std::string blob_file(std::string_view stream) { return "blobs/" + std::string(stream) + ".f32"; }

void write_f32_le(std::ofstream& out, const std::vector<float>& values) {
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(values.data()),
                  static_cast<std::streamsize>(values.size() * sizeof(float)));
    } else {
        for (float v : values) {
            auto bits = std::bit_cast<std::uint32_t>(v);
            char b[4] = {char(bits & 0xff), char((bits >> 8) & 0xff), char((bits >> 16) & 0xff), char(bits >> 24)};
            out.write(b, 4);
        }
    }
}

std::vector<float> read_f32_le(const fs::path& file, std::uint64_t offset, std::uint64_t length) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw TruncatedBlobError("missing blob file: " + file.string());
    in.seekg(0, std::ios::end);
    const auto size = static_cast<std::uint64_t>(in.tellg());
    if (offset + length > size)
        throw TruncatedBlobError("blob " + file.string() + " is truncated: need " + std::to_string(offset + length) +
                                 " bytes, file has " + std::to_string(size));
    std::vector<float> out(length / sizeof(float));
    in.seekg(static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(length));
    if (!in) throw TruncatedBlobError("short read on " + file.string());
    if constexpr (std::endian::native != std::endian::little) {
        for (auto& v : out) {
            auto bits = std::bit_cast<std::uint32_t>(v);
            bits = (bits >> 24) | ((bits >> 8) & 0xff00) | ((bits << 8) & 0xff0000) | (bits << 24);
            v = std::bit_cast<float>(bits);
        }
    }
    return out;
}

std::uint64_t product(const std::vector<std::uint64_t>& shape) {
    std::uint64_t p = 1;
    for (auto s : shape) p *= s;
    return p;
}

// Shape each stream must have, given the index header.
std::optional<std::vector<std::uint64_t>> expected_shape(const DumpIndex& idx, std::string_view stream) {
    const auto n = static_cast<std::uint64_t>(idx.sample_ids.size());
    const auto layers = static_cast<std::uint64_t>(idx.n_layers);
    for (auto k : kAllKinds) {
        if (stream == to_string(k)) {
            auto it = idx.d_model.find(k);
            if (it == idx.d_model.end()) return std::nullopt;
            return std::vector<std::uint64_t>{n, layers, static_cast<std::uint64_t>(it->second)};
        }
    }
    if (stream == kAttentionStream) return std::vector<std::uint64_t>{n, layers, std::uint64_t(idx.n_heads), 2};
    if (stream == kAnswersStream) return std::vector<std::uint64_t>{n, 3};
    return std::nullopt;
}

template <class T>
std::string join(const std::vector<T>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "x" : "") << v[i];
    return os.str();
}

}  // namespace

std::string_view to_string(ActivationKind k) { return kKindNames[static_cast<std::size_t>(k)]; }
std::string_view to_string(AlignedModality m) { return kModalityNames[static_cast<std::size_t>(m)]; }
std::string_view to_string(ViolationKind k) { return kViolationNames[static_cast<std::size_t>(k)]; }

ActivationKind parse_activation_kind(std::string_view s) {
    for (std::size_t i = 0; i < kKindNames.size(); ++i) {
        if (kKindNames[i] == s) return static_cast<ActivationKind>(i);
    }
    throw ConfigError("unknown activation kind '" + std::string(s) + "'");
}

AlignedModality parse_aligned_modality(std::string_view s) {
    for (std::size_t i = 0; i < kModalityNames.size(); ++i) {
        if (kModalityNames[i] == s) return static_cast<AlignedModality>(i);
    }
    throw ConfigError("unknown aligned modality '" + std::string(s) + "'");
}

nlohmann::json to_json(const DumpIndex& idx) {
    nlohmann::json j;
    j["format_version"] = idx.format_version;
    j["n_layers"] = idx.n_layers;
    j["n_heads"] = idx.n_heads;
    auto& dm = j["d_model"] = nlohmann::json::object();
    for (const auto& [k, d] : idx.d_model) dm[std::string(to_string(k))] = d;
    j["sample_ids"] = idx.sample_ids;
    j["token_position_policy"] = idx.token_position_policy;
    j["text_channel_absent"] = idx.text_channel_absent;
    auto& blobs = j["blobs"] = nlohmann::json::object();
    for (const auto& [name, b] : idx.blobs) {
        blobs[name] = {{"file", b.file}, {"offset", b.offset}, {"length", b.length}, {"shape", b.shape}};
    }
    j["metadata"] = idx.metadata;
    return j;
}

DumpIndex index_from_json(const nlohmann::json& j) {
    DumpIndex idx;
    try {
        idx.format_version = j.at("format_version").get<int>();
        if (idx.format_version != kFormatVersion)
            throw CorruptIndexError("unsupported format_version " + std::to_string(idx.format_version));
        idx.n_layers = j.at("n_layers").get<int>();
        idx.n_heads = j.at("n_heads").get<int>();
        if (idx.n_layers < 0 || idx.n_heads < 0) throw CorruptIndexError("negative n_layers or n_heads");
        for (const auto& [name, d] : j.at("d_model").items()) {
            const int dim = d.get<int>();
            if (dim <= 0) throw CorruptIndexError("d_model for '" + name + "' must be positive");
            idx.d_model[parse_activation_kind(name)] = dim;
        }
        idx.sample_ids = j.at("sample_ids").get<std::vector<std::string>>();
        idx.token_position_policy = j.value("token_position_policy", "unspecified");
        idx.text_channel_absent = j.value("text_channel_absent", std::vector<std::string>{});
        for (const auto& [name, b] : j.at("blobs").items()) {
            BlobRef ref;
            ref.file = b.at("file").get<std::string>();
            ref.offset = b.at("offset").get<std::uint64_t>();
            ref.length = b.at("length").get<std::uint64_t>();
            ref.shape = b.at("shape").get<std::vector<std::uint64_t>>();
            if (ref.file.find("..") != std::string::npos || fs::path(ref.file).is_absolute())
                throw CorruptIndexError("blob '" + name + "' points outside the dump directory");
            idx.blobs[name] = std::move(ref);
        }
        idx.metadata = j.value("metadata", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw CorruptIndexError(std::string("malformed index.json: ") + e.what());
    } catch (const ConfigError& e) {
        throw CorruptIndexError(std::string("malformed index.json: ") + e.what());
    }
    return idx;
}

// ---------------------------------------------------------------------------
// DumpData

namespace {

std::size_t act_offset(const DumpIndex& idx, std::size_t sample, int layer, int d) {
    return (sample * static_cast<std::size_t>(idx.n_layers) + static_cast<std::size_t>(layer)) *
           static_cast<std::size_t>(d);
}

std::size_t attn_offset(const DumpIndex& idx, std::size_t sample, int layer, int head) {
    return ((sample * static_cast<std::size_t>(idx.n_layers) + static_cast<std::size_t>(layer)) *
                static_cast<std::size_t>(idx.n_heads) +
            static_cast<std::size_t>(head)) *
           2;
}

}  // namespace

std::span<float> DumpData::activation(std::size_t sample, int layer, ActivationKind kind) {
    const int d = index.d_model.at(kind);
    return {activations.at(kind).data() + act_offset(index, sample, layer, d), static_cast<std::size_t>(d)};
}

std::span<const float> DumpData::activation(std::size_t sample, int layer, ActivationKind kind) const {
    const int d = index.d_model.at(kind);
    return {activations.at(kind).data() + act_offset(index, sample, layer, d), static_cast<std::size_t>(d)};
}

void DumpData::set_attention(std::size_t sample, int layer, int head, AttentionPair w) {
    const auto o = attn_offset(index, sample, layer, head);
    attention[o] = w.text;
    attention[o + 1] = w.image;
}

void DumpData::set_answer(std::size_t sample, float p_image, float p_text, AlignedModality m) {
    answers[sample * 3] = p_image;
    answers[sample * 3 + 1] = p_text;
    answers[sample * 3 + 2] = static_cast<float>(static_cast<int>(m));
}

DumpData DumpData::allocate(std::vector<std::string> sample_ids, int n_layers, int n_heads,
                            const std::map<ActivationKind, int>& d_model, bool with_attention, bool with_answers) {
    DumpData d;
    d.index.n_layers = n_layers;
    d.index.n_heads = n_heads;
    d.index.d_model = d_model;
    std::sort(sample_ids.begin(), sample_ids.end());
    d.index.sample_ids = std::move(sample_ids);
    const std::size_t n = d.index.sample_ids.size();
    for (const auto& [k, dim] : d_model)
        d.activations[k].assign(n * static_cast<std::size_t>(n_layers) * static_cast<std::size_t>(dim), 0.0f);
    if (with_attention && n > 0)
        d.attention.assign(n * static_cast<std::size_t>(n_layers) * static_cast<std::size_t>(n_heads) * 2, 0.0f);
    if (with_answers && n > 0) d.answers.assign(n * 3, 0.0f);
    return d;
}

DumpData assemble_dump(const DumpShape& shape, const std::vector<ActivationRecord>& activations,
                       const std::vector<AttentionRecord>& attention, const std::vector<AnswerProbRecord>& answers) {
    std::set<std::string> ids;
    for (const auto& r : activations) ids.insert(r.sample_id);
    for (const auto& r : attention) ids.insert(r.sample_id);
    for (const auto& r : answers) ids.insert(r.sample_id);

    auto data = DumpData::allocate({ids.begin(), ids.end()}, shape.n_layers, shape.n_heads, shape.d_model,
                                   !attention.empty(), !answers.empty());
    data.index.token_position_policy = shape.token_position_policy;
    data.index.text_channel_absent = shape.text_channel_absent;
    std::sort(data.index.text_channel_absent.begin(), data.index.text_channel_absent.end());
    data.index.metadata = shape.metadata;

    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < data.index.sample_ids.size(); ++i) pos[data.index.sample_ids[i]] = i;
    const std::size_t n = ids.size();
    const auto L = static_cast<std::size_t>(shape.n_layers);
    const auto H = static_cast<std::size_t>(shape.n_heads);

    std::map<ActivationKind, std::vector<char>> seen_act;
    for (const auto& [k, d] : shape.d_model) seen_act[k].assign(n * L, 0);
    for (const auto& r : activations) {
        auto dm = shape.d_model.find(r.kind);
        if (dm == shape.d_model.end())
            throw SchemaError("activation kind '" + std::string(to_string(r.kind)) + "' not declared in the index");
        if (r.layer < 0 || r.layer >= shape.n_layers)
            throw SchemaError("sample '" + r.sample_id + "': layer " + std::to_string(r.layer) + " outside [0, " +
                              std::to_string(shape.n_layers) + ")");
        if (r.vector.size() != static_cast<std::size_t>(dm->second))
            throw SchemaError("sample '" + r.sample_id + "' layer " + std::to_string(r.layer) + " kind " +
                              std::string(to_string(r.kind)) + ": vector length " + std::to_string(r.vector.size()) +
                              " != declared d_model " + std::to_string(dm->second));
        const auto s = pos.at(r.sample_id);
        auto& seen = seen_act[r.kind][s * L + static_cast<std::size_t>(r.layer)];
        if (seen) throw SchemaError("duplicate activation record for sample '" + r.sample_id + "'");
        seen = 1;
        std::copy(r.vector.begin(), r.vector.end(), data.activation(s, r.layer, r.kind).begin());
    }
    for (const auto& [k, seen] : seen_act) {
        for (std::size_t i = 0; i < seen.size(); ++i) {
            if (!seen[i])
                throw SchemaError("missing activation record: sample '" + data.index.sample_ids[i / L] + "' layer " +
                                  std::to_string(i % L) + " kind " + std::string(to_string(k)));
        }
    }

    if (!attention.empty()) {
        std::vector<char> seen(n * L * H, 0);
        for (const auto& r : attention) {
            if (r.layer < 0 || r.layer >= shape.n_layers || r.head < 0 || r.head >= shape.n_heads)
                throw SchemaError("sample '" + r.sample_id + "': attention (layer " + std::to_string(r.layer) +
                                  ", head " + std::to_string(r.head) + ") outside the declared grid");
            const auto s = pos.at(r.sample_id);
            auto& flag = seen[(s * L + static_cast<std::size_t>(r.layer)) * H + static_cast<std::size_t>(r.head)];
            if (flag)
                throw SchemaError("duplicate attention record: sample '" + r.sample_id + "' layer " +
                                  std::to_string(r.layer) + " head " + std::to_string(r.head));
            flag = 1;
            data.set_attention(s, r.layer, r.head, {r.weight_to_text_color_token, r.weight_to_image_tokens_sum});
        }
        for (std::size_t i = 0; i < seen.size(); ++i) {
            if (!seen[i])
                throw SchemaError("missing attention record: sample '" + data.index.sample_ids[i / (L * H)] +
                                  "' layer " + std::to_string((i / H) % L) + " head " + std::to_string(i % H));
        }
    }

    if (!answers.empty()) {
        std::vector<char> seen(n, 0);
        for (const auto& r : answers) {
            const auto s = pos.at(r.sample_id);
            if (seen[s]) throw SchemaError("duplicate answer record for sample '" + r.sample_id + "'");
            seen[s] = 1;
            data.set_answer(s, r.p_image_answer, r.p_text_answer, r.aligned_modality);
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (!seen[i]) throw SchemaError("missing answer record for sample '" + data.index.sample_ids[i] + "'");
        }
    }
    return data;
}

void write_dump(const fs::path& dir, const DumpData& data) {
    DumpIndex idx = data.index;
    idx.format_version = kFormatVersion;
    idx.blobs.clear();
    if (!std::is_sorted(idx.sample_ids.begin(), idx.sample_ids.end()))
        throw SchemaError("sample_ids must be sorted before writing");

    std::vector<std::pair<std::string, const std::vector<float>*>> streams;
    for (const auto& [k, values] : data.activations) {
        if (!idx.d_model.contains(k))
            throw SchemaError("activation stream '" + stream_name(k) + "' has no declared d_model");
        streams.emplace_back(stream_name(k), &values);
    }
    for (const auto& [k, d] : idx.d_model) {
        if (!data.activations.contains(k))
            throw SchemaError("declared activation kind '" + stream_name(k) + "' has no data");
    }
    if (!data.attention.empty()) streams.emplace_back(std::string(kAttentionStream), &data.attention);
    if (!data.answers.empty()) streams.emplace_back(std::string(kAnswersStream), &data.answers);

    fs::create_directories(dir / "blobs");
    for (const auto& [name, values] : streams) {
        const auto shape = *expected_shape(idx, name);
        if (product(shape) != values->size())
            throw SchemaError("stream '" + name + "' holds " + std::to_string(values->size()) +
                              " values; declared shape " + join(shape) + " needs " + std::to_string(product(shape)));
        BlobRef ref{blob_file(name), 0, values->size() * sizeof(float), shape};
        std::ofstream out(dir / ref.file, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + (dir / ref.file).string());
        write_f32_le(out, *values);
        if (!out) throw Error("write failed: " + (dir / ref.file).string());
        idx.blobs[name] = std::move(ref);
    }
    std::ofstream f(dir / "index.json", std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + (dir / "index.json").string());
    f << to_json(idx).dump(1) << '\n';
}

void write_dump(const fs::path& dir, const DumpShape& shape, const std::vector<ActivationRecord>& activations,
                const std::vector<AttentionRecord>& attention, const std::vector<AnswerProbRecord>& answers) {
    write_dump(dir, assemble_dump(shape, activations, attention, answers));
}

// ---------------------------------------------------------------------------
// Dump

namespace {

DumpIndex load_index(const fs::path& dir) {
    const auto path = dir / "index.json";
    std::ifstream f(path);
    if (!f) throw CorruptIndexError("missing index: " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw CorruptIndexError(path.string() + ": " + e.what());
    }
    return index_from_json(j);
}

}  // namespace

Dump Dump::open(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw DataError("dump directory not found: " + dir.string());
    Dump d;
    d.dir_ = dir;
    d.index_ = load_index(dir);
    for (std::size_t i = 0; i < d.index_.sample_ids.size(); ++i) {
        if (!d.id_to_index_.emplace(d.index_.sample_ids[i], i).second)
            throw CorruptIndexError("duplicate sample_id '" + d.index_.sample_ids[i] + "' in index");
    }
    for (const auto& [name, ref] : d.index_.blobs) {
        const auto shape = expected_shape(d.index_, name);
        if (!shape) throw CorruptIndexError("blob '" + name + "' is not a known stream");
        if (*shape != ref.shape || ref.length != product(ref.shape) * sizeof(float))
            throw CorruptIndexError("blob '" + name + "' shape/length disagree with index header");
        const auto file = dir / ref.file;
        if (!fs::exists(file)) throw TruncatedBlobError("missing blob file: " + file.string());
        if (fs::file_size(file) < ref.offset + ref.length)
            throw TruncatedBlobError("blob " + file.string() + " is truncated");
    }
    for (auto k : kAllKinds) {
        if (d.index_.d_model.contains(k) && !d.index_.blobs.contains(stream_name(k)) && d.n_samples() > 0)
            throw CorruptIndexError("declared kind '" + stream_name(k) + "' has no blob");
    }
    return d;
}

std::optional<std::size_t> Dump::sample_index(std::string_view sample_id) const {
    auto it = id_to_index_.find(std::string(sample_id));
    if (it == id_to_index_.end()) return std::nullopt;
    return it->second;
}

std::size_t Dump::require_sample(std::string_view sample_id) const {
    auto s = sample_index(sample_id);
    if (!s) throw DataError("sample '" + std::string(sample_id) + "' missing from dump " + dir_.string());
    return *s;
}

bool Dump::has_kind(ActivationKind k) const { return index_.blobs.contains(stream_name(k)); }
bool Dump::has_attention() const { return index_.blobs.contains(std::string(kAttentionStream)); }
bool Dump::has_answers() const { return index_.blobs.contains(std::string(kAnswersStream)); }

int Dump::d_model(ActivationKind k) const {
    auto it = index_.d_model.find(k);
    if (it == index_.d_model.end())
        throw DataError("dump " + dir_.string() + " has no '" + stream_name(k) + "' activations");
    return it->second;
}

const std::vector<float>& Dump::stream(std::string_view name) const {
    std::lock_guard lock(cache_->mutex);
    if (auto it = cache_->streams.find(name); it != cache_->streams.end()) return *it->second;
    auto ref_it = index_.blobs.find(std::string(name));
    if (ref_it == index_.blobs.end())
        throw DataError("dump " + dir_.string() + " has no '" + std::string(name) + "' stream");
    const auto& ref = ref_it->second;
    auto values = std::make_shared<std::vector<float>>(read_f32_le(dir_ / ref.file, ref.offset, ref.length));
    for (std::size_t i = 0; i < values->size(); ++i) {
        if (!std::isfinite((*values)[i])) {
            const auto per_sample = values->size() / std::max<std::size_t>(1, n_samples());
            const auto s = i / per_sample;
            std::string where = "sample '" + index_.sample_ids[s] + "'";
            if (ref.shape.size() >= 3)
                where += " layer " + std::to_string((i % per_sample) / (per_sample / ref.shape[1]));
            throw NonFiniteError("non-finite value in stream '" + std::string(name) + "' at " + where);
        }
    }
    auto& slot = cache_->streams[std::string(name)];
    slot = std::move(values);
    return *slot;
}

void Dump::release(std::string_view stream) const {
    std::lock_guard lock(cache_->mutex);
    if (auto it = cache_->streams.find(stream); it != cache_->streams.end()) cache_->streams.erase(it);
}

std::span<const float> Dump::activation(std::size_t sample, int layer, ActivationKind kind) const {
    const int d = d_model(kind);
    const auto& values = stream(to_string(kind));
    return {values.data() + act_offset(index_, sample, layer, d), static_cast<std::size_t>(d)};
}

AttentionPair Dump::attention(std::size_t sample, int layer, int head) const {
    const auto& values = stream(kAttentionStream);
    const auto o = attn_offset(index_, sample, layer, head);
    return {values[o], values[o + 1]};
}

AnswerProbRecord Dump::answer(std::size_t sample) const {
    const auto& values = stream(kAnswersStream);
    const float code = values[sample * 3 + 2];
    if (code != 0.0f && code != 1.0f && code != 2.0f)
        throw DataError("sample '" + index_.sample_ids[sample] + "': invalid aligned_modality code");
    return {index_.sample_ids[sample], values[sample * 3], values[sample * 3 + 1],
            static_cast<AlignedModality>(static_cast<int>(code))};
}

namespace {

template <class T>
bool admits(const std::optional<std::vector<T>>& filter, const T& v) {
    return !filter || std::find(filter->begin(), filter->end(), v) != filter->end();
}

}  // namespace

void Dump::for_each_activation(const RecordFilter& filter,
                               const std::function<void(const ActivationRecord&)>& fn) const {
    for (std::size_t s = 0; s < n_samples(); ++s) {
        if (!admits(filter.sample_ids, index_.sample_ids[s])) continue;
        for (int layer = 0; layer < n_layers(); ++layer) {
            if (!admits(filter.layers, layer)) continue;
            for (auto k : kAllKinds) {
                if (!has_kind(k) || !admits(filter.kinds, k)) continue;
                auto v = activation(s, layer, k);
                fn(ActivationRecord{index_.sample_ids[s], layer, k, {v.begin(), v.end()}});
            }
        }
    }
}

std::vector<ActivationRecord> Dump::activation_records(const RecordFilter& filter) const {
    std::vector<ActivationRecord> out;
    for_each_activation(filter, [&](const ActivationRecord& r) { out.push_back(r); });
    return out;
}

std::vector<AttentionRecord> Dump::attention_records(const RecordFilter& filter) const {
    std::vector<AttentionRecord> out;
    if (!has_attention()) return out;
    for (std::size_t s = 0; s < n_samples(); ++s) {
        if (!admits(filter.sample_ids, index_.sample_ids[s])) continue;
        for (int layer = 0; layer < n_layers(); ++layer) {
            if (!admits(filter.layers, layer)) continue;
            for (int h = 0; h < n_heads(); ++h) {
                const auto w = attention(s, layer, h);
                out.push_back({index_.sample_ids[s], layer, h, w.text, w.image});
            }
        }
    }
    return out;
}

std::vector<AnswerProbRecord> Dump::answer_records() const {
    std::vector<AnswerProbRecord> out;
    if (!has_answers()) return out;
    for (std::size_t s = 0; s < n_samples(); ++s) out.push_back(answer(s));
    return out;
}

DumpData Dump::load_all() const {
    DumpData d;
    d.index = index_;
    for (auto k : kAllKinds) {
        if (has_kind(k)) d.activations[k] = stream(to_string(k));
    }
    if (has_attention()) d.attention = stream(kAttentionStream);
    if (has_answers()) d.answers = stream(kAnswersStream);
    return d;
}

// ---------------------------------------------------------------------------
// Validation

bool ValidationReport::has(ViolationKind k) const {
    return std::any_of(violations.begin(), violations.end(), [k](const Violation& v) { return v.kind == k; });
}

std::string ValidationReport::summary() const {
    std::ostringstream os;
    if (passed()) {
        os << "PASS: dump is valid\n";
        return os.str();
    }
    os << "FAIL: " << violations.size() << " violation(s)\n";
    for (const auto& v : violations) os << "  [" << to_string(v.kind) << "] " << v.message << '\n';
    return os.str();
}

namespace {

class Collector {
public:
    explicit Collector(ValidationReport& r) : report_(r) {}
    void add(ViolationKind k, std::string msg) {
        auto& n = counts_[k];
        if (++n <= kMaxItemsPerKind) report_.violations.push_back({k, std::move(msg)});
    }
    void finish() {
        for (const auto& [k, n] : counts_) {
            if (n > kMaxItemsPerKind)
                report_.violations.push_back({k, std::to_string(n - kMaxItemsPerKind) + " further violation(s) omitted"});
        }
    }

private:
    ValidationReport& report_;
    std::map<ViolationKind, std::size_t> counts_;
};

}  // namespace

ValidationReport validate_dump(const fs::path& dir, const DatasetManifest* manifest) {
    ValidationReport report;
    Collector out(report);
    DumpIndex idx;
    try {
        idx = load_index(dir);
    } catch (const DumpError& e) {
        out.add(ViolationKind::corrupt_index, e.what());
        out.finish();
        return report;
    }

    std::set<std::string> seen_ids;
    for (const auto& id : idx.sample_ids) {
        if (!seen_ids.insert(id).second) out.add(ViolationKind::duplicate_key, "duplicate sample_id '" + id + "'");
    }
    for (const auto& id : idx.text_channel_absent) {
        if (!seen_ids.contains(id))
            out.add(ViolationKind::index_blob_mismatch, "text_channel_absent names unknown sample '" + id + "'");
    }
    const std::set<std::string> absent(idx.text_channel_absent.begin(), idx.text_channel_absent.end());

    // Extents per file, for overlap and trailing-byte checks.
    std::map<std::string, std::vector<std::pair<std::uint64_t, std::uint64_t>>> extents;
    std::map<std::string, std::vector<float>> loaded;
    for (auto k : kAllKinds) {
        if (idx.d_model.contains(k) && !idx.blobs.contains(stream_name(k)) && !idx.sample_ids.empty())
            out.add(ViolationKind::index_blob_mismatch, "declared kind '" + stream_name(k) + "' has no blob");
    }
    for (const auto& [name, ref] : idx.blobs) {
        const auto shape = expected_shape(idx, name);
        if (!shape) {
            out.add(ViolationKind::index_blob_mismatch, "blob '" + name + "' is not a known stream");
            continue;
        }
        if (*shape != ref.shape) {
            out.add(ViolationKind::index_blob_mismatch, "blob '" + name + "' declares shape " + join(ref.shape) +
                                                            " but the index header implies " + join(*shape));
            continue;
        }
        if (ref.length != product(ref.shape) * sizeof(float)) {
            out.add(ViolationKind::index_blob_mismatch, "blob '" + name + "' length " + std::to_string(ref.length) +
                                                            " != " + std::to_string(product(ref.shape) * 4) +
                                                            " bytes implied by its shape");
            continue;
        }
        const auto file = dir / ref.file;
        if (!fs::exists(file)) {
            out.add(ViolationKind::truncated_blob, "blob file missing: " + ref.file);
            continue;
        }
        if (fs::file_size(file) < ref.offset + ref.length) {
            out.add(ViolationKind::truncated_blob, "blob '" + name + "' truncated: " + ref.file + " has " +
                                                       std::to_string(fs::file_size(file)) + " bytes, needs " +
                                                       std::to_string(ref.offset + ref.length));
            continue;
        }
        extents[ref.file].emplace_back(ref.offset, ref.offset + ref.length);
        loaded[name] = read_f32_le(file, ref.offset, ref.length);
    }
    for (auto& [file, spans] : extents) {
        std::sort(spans.begin(), spans.end());
        for (std::size_t i = 1; i < spans.size(); ++i) {
            if (spans[i].first < spans[i - 1].second)
                out.add(ViolationKind::index_blob_mismatch, "overlapping blobs in " + file);
        }
        const auto size = fs::file_size(dir / file);
        if (spans.back().second < size)
            out.add(ViolationKind::index_blob_mismatch, file + " has " + std::to_string(size - spans.back().second) +
                                                            " trailing bytes not described by the index");
    }

    const auto L = static_cast<std::size_t>(idx.n_layers);
    const auto H = static_cast<std::size_t>(idx.n_heads);
    for (auto k : kAllKinds) {
        auto it = loaded.find(stream_name(k));
        if (it == loaded.end()) continue;
        const auto d = static_cast<std::size_t>(idx.d_model.at(k));
        const auto& v = it->second;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!std::isfinite(v[i])) {
                const auto row = i / d;
                out.add(ViolationKind::non_finite, "non-finite " + stream_name(k) + " activation: sample '" +
                                                       idx.sample_ids[row / L] + "' layer " +
                                                       std::to_string(row % L) + " index " + std::to_string(i % d));
                i = (row + 1) * d - 1;  // one item per vector
            }
        }
    }
    if (auto it = loaded.find(std::string(kAttentionStream)); it != loaded.end()) {
        const auto& v = it->second;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const auto cell = i / 2;
            const std::string& id = idx.sample_ids[cell / (L * H)];
            const std::string where = "sample '" + id + "' layer " + std::to_string((cell / H) % L) + " head " +
                                      std::to_string(cell % H) + (i % 2 ? " image-token sum" : " text-token weight");
            if (!std::isfinite(v[i])) {
                out.add(ViolationKind::non_finite, "non-finite attention weight: " + where);
            } else if (v[i] < 0.0f || v[i] > 1.0f) {
                if (i % 2 == 0 && absent.contains(id)) continue;
                out.add(ViolationKind::range, "attention weight " + std::to_string(v[i]) + " outside [0,1]: " + where);
            }
        }
    }
    if (auto it = loaded.find(std::string(kAnswersStream)); it != loaded.end()) {
        const auto& v = it->second;
        for (std::size_t s = 0; s * 3 < v.size(); ++s) {
            const float pi = v[s * 3], pt = v[s * 3 + 1], code = v[s * 3 + 2];
            const std::string who = "sample '" + idx.sample_ids[s] + "'";
            if (!std::isfinite(pi) || !std::isfinite(pt) || !std::isfinite(code)) {
                out.add(ViolationKind::non_finite, "non-finite answer record: " + who);
                continue;
            }
            if (pi < 0.0f || pi > 1.0f || pt < 0.0f || pt > 1.0f)
                out.add(ViolationKind::range, "answer probability outside [0,1]: " + who);
            else if (pi + pt > 1.0f + kProbSlack)
                out.add(ViolationKind::range, "p_image_answer + p_text_answer > 1: " + who);
            if (code != 0.0f && code != 1.0f && code != 2.0f)
                out.add(ViolationKind::range, "aligned_modality code " + std::to_string(code) + " invalid: " + who);
        }
    }

    if (manifest) {
        std::set<std::string> known;
        for (const auto& s : manifest->samples) known.insert(s.sample_id);
        for (const auto& id : idx.sample_ids) {
            if (!known.contains(id))
                out.add(ViolationKind::manifest_mismatch, "sample '" + id + "' is not in the manifest");
        }
    }
    out.finish();
    return report;
}

}  // namespace modcon
