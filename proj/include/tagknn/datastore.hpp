#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "tagknn/corpus.hpp"
#include "tagknn/embed.hpp"

namespace tagknn {

/// Slots per value row. A tag is at most as long as the longest post.
inline constexpr std::size_t kDefaultValueWidth = 280;
/// Keys appended per batch while building.
inline constexpr std::size_t kDefaultBatchSize = 500'000;

using ValueRow = std::vector<std::uint16_t>;

/// UTF-8 bytes of `tag`, one per u16 slot, zero-padded to `width`.
/// Throws ValidationError when the tag is empty or longer than `width` bytes.
ValueRow encode_tag(std::string_view tag, std::size_t width);

/// Inverse of encode_tag. Throws ValidationError on an empty tag, a slot > 0xFF,
/// content after padding, or invalid UTF-8.
std::string decode_tag(std::span<const std::uint16_t> row);

struct EntryMeta {
    std::string source_id;
    std::int32_t week = 0;

    bool operator==(const EntryMeta&) const = default;
};

/// Unrolled key/value store: one row per (sample, tag) pair, the sample's
/// embedding repeated as the key of each of its rows. A Datastore value never
/// changes after construction; mutations produce a new value with a higher
/// generation.
class Datastore {
public:
    Datastore(std::size_t dimension, std::size_t value_width);

    std::size_t dimension() const noexcept { return dim_; }
    std::size_t value_width() const noexcept { return width_; }
    std::size_t size() const noexcept { return meta_.size(); }
    bool empty() const noexcept { return meta_.empty(); }
    std::uint64_t generation() const noexcept { return generation_; }

    std::span<const float> key(std::size_t row) const { return {keys_.data() + row * dim_, dim_}; }
    std::span<const std::uint16_t> value(std::size_t row) const { return {values_.data() + row * width_, width_}; }
    const EntryMeta& meta(std::size_t row) const { return meta_[row]; }

    /// Decoded tag of a row, served from a per-store intern table.
    const std::string& tag(std::size_t row) const { return tag_names_[tag_ids_[row]]; }
    std::uint32_t tag_id(std::size_t row) const { return tag_ids_[row]; }
    std::size_t distinct_tags() const noexcept { return tag_names_.size(); }
    const std::string& tag_name(std::uint32_t id) const { return tag_names_[id]; }

    std::span<const float> keys() const noexcept { return keys_; }
    std::span<const std::uint16_t> values() const noexcept { return values_; }

    std::size_t distinct_sources() const;

    /// Content hash over every field; indices use it with the generation to detect staleness.
    std::uint64_t fingerprint() const noexcept { return fingerprint_; }

    bool operator==(const Datastore& other) const;

private:
    friend class DatastoreBuilder;
    friend struct DatastoreAccess;

    void finalize();

    std::size_t dim_;
    std::size_t width_;
    std::uint64_t generation_ = 0;
    std::vector<float> keys_;
    std::vector<std::uint16_t> values_;
    std::vector<EntryMeta> meta_;
    std::vector<std::uint32_t> tag_ids_;
    std::vector<std::string> tag_names_;
    std::uint64_t fingerprint_ = 0;
};

struct BuildOptions {
    std::size_t dimension = 128;
    std::size_t value_width = kDefaultValueWidth;
    std::size_t batch_size = kDefaultBatchSize;
};

/// Incremental construction. Entries are staged and appended to the store in
/// batches of at most `batch_size` keys, in the order samples are added.
class DatastoreBuilder {
public:
    explicit DatastoreBuilder(const BuildOptions& options);

    /// Adds one entry per tag of `sample`. Throws DimensionMismatch or ValidationError.
    void add(const Sample& sample, std::span<const float> embedding);

    std::size_t batches_flushed() const noexcept { return batches_; }
    std::size_t entries() const noexcept { return store_.size() + pending_meta_.size(); }

    Datastore finish() &&;

private:
    void flush();

    BuildOptions options_;
    Datastore store_;
    std::vector<float> pending_keys_;
    std::vector<std::uint16_t> pending_values_;
    std::vector<EntryMeta> pending_meta_;
    std::size_t batches_ = 0;
};

using EmbeddingMap = std::unordered_map<std::string, Vector>;

/// Throws ValidationError when a sample has no embedding.
Datastore build(const std::vector<Sample>& samples, const EmbeddingMap& embeddings, const BuildOptions& options);

struct DeleteResult {
    Datastore store;
    std::size_t removed_entries = 0;
    std::size_t removed_samples = 0;
    std::size_t unknown_ids = 0;
};

/// Removes every entry whose source id is in `ids` and compacts the rows. The
/// result's generation is the input's plus one.
DeleteResult delete_samples(const Datastore& store, const std::unordered_set<std::string>& ids);

/// Writes header.bin, keys.f32, values.u16 and meta.bin into `dir` (created if needed).
void save(const Datastore& store, const std::filesystem::path& dir);
Datastore load(const std::filesystem::path& dir);

/// Single-writer, many-reader slot for the active store. Readers pin a
/// generation with pin() and keep using it after a swap.
class StoreHandle {
public:
    StoreHandle(std::size_t encoder_dimension, std::shared_ptr<const Datastore> initial);

    std::shared_ptr<const Datastore> pin() const;

    /// Installs `replacement`. Throws DimensionMismatch if its E differs from the encoder's.
    void swap(std::shared_ptr<const Datastore> replacement);

    std::size_t encoder_dimension() const noexcept { return encoder_dim_; }

private:
    std::size_t encoder_dim_;
    mutable std::mutex mutex_;
    std::shared_ptr<const Datastore> current_;
};

}  // namespace tagknn
