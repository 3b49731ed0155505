#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace modcon {

struct DatasetManifest;

enum class ActivationKind { attn_out, mlp_out, residual };
inline constexpr std::array<ActivationKind, 3> kAllKinds = {ActivationKind::attn_out, ActivationKind::mlp_out,
                                                            ActivationKind::residual};

enum class AlignedModality { image, text, other };

std::string_view to_string(ActivationKind k);
std::string_view to_string(AlignedModality m);
ActivationKind parse_activation_kind(std::string_view s);
AlignedModality parse_aligned_modality(std::string_view s);

inline constexpr int kFormatVersion = 1;

struct ActivationRecord {
    std::string sample_id;
    int layer = 0;
    ActivationKind kind = ActivationKind::residual;
    std::vector<float> vector;  // last-token activation, length d_model
    friend bool operator==(const ActivationRecord&, const ActivationRecord&) = default;
};

struct AttentionRecord {
    std::string sample_id;
    int layer = 0;
    int head = 0;
    float weight_to_text_color_token = 0.0f;
    float weight_to_image_tokens_sum = 0.0f;
    friend bool operator==(const AttentionRecord&, const AttentionRecord&) = default;
};

struct AnswerProbRecord {
    std::string sample_id;
    float p_image_answer = 0.0f;
    float p_text_answer = 0.0f;
    AlignedModality aligned_modality = AlignedModality::other;
    friend bool operator==(const AnswerProbRecord&, const AnswerProbRecord&) = default;
};

struct BlobRef {
    std::string file;  // relative to the dump directory
    std::uint64_t offset = 0;
    std::uint64_t length = 0;  // bytes
    std::vector<std::uint64_t> shape;
    friend bool operator==(const BlobRef&, const BlobRef&) = default;
};

// Stream names used as blob keys: the three activation kinds, "attention", "answers".
inline constexpr std::string_view kAttentionStream = "attention";
inline constexpr std::string_view kAnswersStream = "answers";

struct DumpIndex {
    int format_version = kFormatVersion;
    int n_layers = 0;
    int n_heads = 0;
    std::map<ActivationKind, int> d_model;
    std::vector<std::string> sample_ids;  // sorted
    std::string token_position_policy = "unspecified";
    // Samples whose text-color channel is meaningless (caption has no color word).
    std::vector<std::string> text_channel_absent;
    std::map<std::string, BlobRef> blobs;
    nlohmann::json metadata = nlohmann::json::object();
};

nlohmann::json to_json(const DumpIndex& index);
DumpIndex index_from_json(const nlohmann::json& j);  // throws CorruptIndexError

struct AttentionPair {
    float text = 0.0f;   // weight to the text color token
    float image = 0.0f;  // summed weight to image tokens
};

// Dense in-memory dump. Layouts are row-major:
//   activations[kind]: [sample][layer][d_model]
//   attention:         [sample][layer][head][2]  (text, image)
//   answers:           [sample][3]               (p_image, p_text, modality code)
// An empty attention/answers vector means the stream is absent.
struct DumpData {
    DumpIndex index;
    std::map<ActivationKind, std::vector<float>> activations;
    std::vector<float> attention;
    std::vector<float> answers;

    std::size_t n_samples() const { return index.sample_ids.size(); }
    std::span<float> activation(std::size_t sample, int layer, ActivationKind kind);
    std::span<const float> activation(std::size_t sample, int layer, ActivationKind kind) const;
    void set_attention(std::size_t sample, int layer, int head, AttentionPair w);
    void set_answer(std::size_t sample, float p_image, float p_text, AlignedModality m);

    // Allocates zero-filled streams for the given shape.
    static DumpData allocate(std::vector<std::string> sample_ids, int n_layers, int n_heads,
                             const std::map<ActivationKind, int>& d_model, bool with_attention, bool with_answers);
};

struct DumpShape {
    int n_layers = 0;
    int n_heads = 0;
    std::map<ActivationKind, int> d_model;
    std::string token_position_policy = "unspecified";
    std::vector<std::string> text_channel_absent;
    nlohmann::json metadata = nlohmann::json::object();
};

// Assembles record streams into a dense dump. Every declared (sample, layer,
// kind) cell must be supplied exactly once; attention and answers, when any
// are supplied, must cover every sample.
DumpData assemble_dump(const DumpShape& shape, const std::vector<ActivationRecord>& activations,
                       const std::vector<AttentionRecord>& attention, const std::vector<AnswerProbRecord>& answers);

// Writes index.json and blobs/*.f32 (little-endian). Throws SchemaError when
// stream sizes disagree with the index.
void write_dump(const std::filesystem::path& dir, const DumpData& data);

void write_dump(const std::filesystem::path& dir, const DumpShape& shape,
                const std::vector<ActivationRecord>& activations, const std::vector<AttentionRecord>& attention,
                const std::vector<AnswerProbRecord>& answers);

struct RecordFilter {
    std::optional<std::vector<int>> layers;
    std::optional<std::vector<ActivationKind>> kinds;
    std::optional<std::vector<std::string>> sample_ids;
};

// Read-only handle over a dump directory. Streams are loaded on first use and
// checked for non-finite values then; concurrent readers are safe.
class Dump {
public:
    static Dump open(const std::filesystem::path& dir);

    const DumpIndex& index() const { return index_; }
    const std::filesystem::path& path() const { return dir_; }
    std::size_t n_samples() const { return index_.sample_ids.size(); }
    int n_layers() const { return index_.n_layers; }
    int n_heads() const { return index_.n_heads; }
    std::optional<std::size_t> sample_index(std::string_view sample_id) const;
    // Throws DataError naming the sample when absent.
    std::size_t require_sample(std::string_view sample_id) const;

    bool has_kind(ActivationKind k) const;
    bool has_attention() const;
    bool has_answers() const;
    int d_model(ActivationKind k) const;

    std::span<const float> activation(std::size_t sample, int layer, ActivationKind kind) const;
    AttentionPair attention(std::size_t sample, int layer, int head) const;
    AnswerProbRecord answer(std::size_t sample) const;

    // Records in deterministic (sample_id, layer, kind|head) order.
    void for_each_activation(const RecordFilter& filter, const std::function<void(const ActivationRecord&)>& fn) const;
    std::vector<ActivationRecord> activation_records(const RecordFilter& filter = {}) const;
    std::vector<AttentionRecord> attention_records(const RecordFilter& filter = {}) const;
    std::vector<AnswerProbRecord> answer_records() const;

    // Copies the whole dump into memory.
    DumpData load_all() const;

    // Drops a cached stream to bound memory during sweeps.
    void release(std::string_view stream) const;

private:
    Dump() = default;
    const std::vector<float>& stream(std::string_view name) const;

    std::filesystem::path dir_;
    DumpIndex index_;
    std::unordered_map<std::string, std::size_t> id_to_index_;
    struct Cache {
        std::mutex mutex;
        std::map<std::string, std::shared_ptr<const std::vector<float>>, std::less<>> streams;
    };
    std::shared_ptr<Cache> cache_ = std::make_shared<Cache>();
};

enum class ViolationKind {
    corrupt_index,
    truncated_blob,
    index_blob_mismatch,
    non_finite,
    range,
    duplicate_key,
    manifest_mismatch,
};

std::string_view to_string(ViolationKind k);

struct Violation {
    ViolationKind kind;
    std::string message;
};

struct ValidationReport {
    std::vector<Violation> violations;
    bool passed() const { return violations.empty(); }
    bool has(ViolationKind k) const;
    std::string summary() const;
};

ValidationReport validate_dump(const std::filesystem::path& dir, const DatasetManifest* manifest = nullptr);

}  // namespace modcon
