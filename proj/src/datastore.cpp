#include "tagknn/datastore.hpp"

#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "tagknn/error.hpp"
#include "tagknn/hash.hpp"

namespace tagknn {

namespace fs = std::filesystem;

ValueRow encode_tag(std::string_view tag, std::size_t width) {
    if (tag.empty()) throw ValidationError("cannot encode an empty tag");
    if (tag.size() > width)
        throw ValidationError("tag of " + std::to_string(tag.size()) + " bytes exceeds value width " +
                              std::to_string(width) + ": '" + std::string(tag.substr(0, 32)) + "...'");
    ValueRow row(width, 0);
    for (std::size_t i = 0; i < tag.size(); ++i) row[i] = static_cast<unsigned char>(tag[i]);
    return row;
}

std::string decode_tag(std::span<const std::uint16_t> row) {
    std::string out;
    std::size_t i = 0;
    for (; i < row.size() && row[i] != 0; ++i) {
        if (row[i] > 0xFF) throw ValidationError("value slot " + std::to_string(i) + " is not a byte");
        out.push_back(static_cast<char>(row[i]));
    }
    for (; i < row.size(); ++i)
        if (row[i] != 0) throw ValidationError("value row has content after padding");
    if (out.empty()) throw ValidationError("value row encodes an empty tag");
    if (!is_valid_utf8(out)) throw ValidationError("value row is not valid UTF-8");
    return out;
}

Datastore::Datastore(std::size_t dimension, std::size_t value_width) : dim_(dimension), width_(value_width) {
    if (dim_ < 1) throw ValidationError("datastore dimension must be >= 1");
    if (width_ < 1) throw ValidationError("datastore value width must be >= 1");
    finalize();
}

std::size_t Datastore::distinct_sources() const {
    std::unordered_set<std::string_view> ids;
    for (const auto& m : meta_) ids.insert(m.source_id);
    return ids.size();
}

bool Datastore::operator==(const Datastore& other) const {
    return dim_ == other.dim_ && width_ == other.width_ && generation_ == other.generation_ &&
           keys_ == other.keys_ && values_ == other.values_ && meta_ == other.meta_;
}

void Datastore::finalize() {
    tag_ids_.clear();
    tag_names_.clear();
    tag_ids_.reserve(meta_.size());
    std::unordered_map<std::string, std::uint32_t> interned;
    for (std::size_t row = 0; row < meta_.size(); ++row) {
        auto tag = decode_tag(value(row));
        const auto [it, inserted] = interned.emplace(tag, static_cast<std::uint32_t>(tag_names_.size()));
        if (inserted) tag_names_.push_back(std::move(tag));
        tag_ids_.push_back(it->second);
    }

    std::uint64_t h = stable_hash(std::string_view(reinterpret_cast<const char*>(keys_.data()),
                                                   keys_.size() * sizeof(float)));
    h = stable_hash(std::string_view(reinterpret_cast<const char*>(values_.data()),
                                     values_.size() * sizeof(std::uint16_t)),
                    h);
    for (const auto& m : meta_) h = stable_hash(m.source_id, h ^ static_cast<std::uint64_t>(m.week));
    fingerprint_ = mix64(h ^ mix64(dim_ * 31 + width_) ^ mix64(generation_ + 1));
}

DatastoreBuilder::DatastoreBuilder(const BuildOptions& options)
    : options_(options), store_(options.dimension, options.value_width) {
    if (options_.batch_size < 1) throw ValidationError("batch size must be >= 1");
}

void DatastoreBuilder::add(const Sample& sample, std::span<const float> embedding) {
    if (embedding.size() != options_.dimension) throw DimensionMismatch(options_.dimension, embedding.size());
    // Encode first so a bad tag leaves the builder unchanged.
    std::vector<ValueRow> rows;
    rows.reserve(sample.tags.size());
    for (const auto& t : sample.tags) rows.push_back(encode_tag(t, options_.value_width));
    for (auto& row : rows) {
        pending_keys_.insert(pending_keys_.end(), embedding.begin(), embedding.end());
        pending_values_.insert(pending_values_.end(), row.begin(), row.end());
        pending_meta_.push_back({sample.id, static_cast<std::int32_t>(sample.week)});
        if (pending_meta_.size() == options_.batch_size) flush();
    }
}

void DatastoreBuilder::flush() {
    if (pending_meta_.empty()) return;
    store_.keys_.insert(store_.keys_.end(), pending_keys_.begin(), pending_keys_.end());
    store_.values_.insert(store_.values_.end(), pending_values_.begin(), pending_values_.end());
    store_.meta_.insert(store_.meta_.end(), std::make_move_iterator(pending_meta_.begin()),
                        std::make_move_iterator(pending_meta_.end()));
    pending_keys_.clear();
    pending_values_.clear();
    pending_meta_.clear();
    ++batches_;
}

Datastore DatastoreBuilder::finish() && {
    flush();
    store_.finalize();
    return std::move(store_);
}

Datastore build(const std::vector<Sample>& samples, const EmbeddingMap& embeddings, const BuildOptions& options) {
    DatastoreBuilder builder(options);
    for (const auto& s : samples) {
        const auto it = embeddings.find(s.id);
        if (it == embeddings.end()) throw ValidationError("no embedding for sample '" + s.id + "'");
        builder.add(s, it->second);
    }
    return std::move(builder).finish();
}

// Grants the free functions below write access to a store's rows.
struct DatastoreAccess {
    static std::vector<float>& keys(Datastore& s) { return s.keys_; }
    static std::vector<std::uint16_t>& values(Datastore& s) { return s.values_; }
    static std::vector<EntryMeta>& meta(Datastore& s) { return s.meta_; }
    static void set_generation(Datastore& s, std::uint64_t g) { s.generation_ = g; }
    static void finalize(Datastore& s) { s.finalize(); }
};

DeleteResult delete_samples(const Datastore& store, const std::unordered_set<std::string>& ids) {
    Datastore next(store.dimension(), store.value_width());
    auto& keys = DatastoreAccess::keys(next);
    auto& values = DatastoreAccess::values(next);
    auto& meta = DatastoreAccess::meta(next);
    keys.reserve(store.keys().size());
    values.reserve(store.values().size());
    meta.reserve(store.size());

    std::unordered_set<std::string_view> hit;
    std::size_t removed = 0;
    for (std::size_t row = 0; row < store.size(); ++row) {
        const auto& m = store.meta(row);
        if (ids.count(m.source_id)) {
            ++removed;
            hit.insert(m.source_id);
            continue;
        }
        const auto k = store.key(row);
        const auto v = store.value(row);
        keys.insert(keys.end(), k.begin(), k.end());
        values.insert(values.end(), v.begin(), v.end());
        meta.push_back(m);
    }
    DatastoreAccess::set_generation(next, store.generation() + 1);
    DatastoreAccess::finalize(next);

    DeleteResult result{std::move(next), removed, hit.size(), ids.size() - hit.size()};
    return result;
}

namespace {

constexpr const char* kHeaderFile = "header.bin";
constexpr const char* kKeysFile = "keys.f32";
constexpr const char* kValuesFile = "values.u16";
constexpr const char* kMetaFile = "meta.bin";

std::ofstream open_out(const fs::path& p) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + p.string());
    return out;
}

std::ifstream open_in(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IoError("cannot open " + p.string());
    return in;
}

template <typename T>
void read_matrix(const fs::path& p, std::vector<T>& dst, std::size_t count) {
    const std::uintmax_t expected = count * sizeof(T);
    std::error_code ec;
    const std::uintmax_t actual = fs::file_size(p, ec);
    if (ec) throw IoError("cannot stat " + p.string());
    if (actual != expected)
        throw IoError(p.filename().string() + ": expected " + std::to_string(expected) + " bytes, found " +
                      std::to_string(actual));
    dst.resize(count);
    auto in = open_in(p);
    if (expected) io::read_exact(in, dst.data(), expected, p.filename().string().c_str());
}

}  // namespace

void save(const Datastore& store, const fs::path& dir) {
    fs::create_directories(dir);
    {
        auto out = open_out(dir / kHeaderFile);
        out.write("TDS1", 4);
        io::write_pod(out, static_cast<std::uint32_t>(store.dimension()));
        io::write_pod(out, static_cast<std::uint32_t>(store.value_width()));
        io::write_pod(out, static_cast<std::uint64_t>(store.size()));
        io::write_pod(out, static_cast<std::uint64_t>(store.generation()));
        if (!out) throw IoError("write failed: header");
    }
    {
        auto out = open_out(dir / kKeysFile);
        io::write_array(out, store.keys());
        if (!out) throw IoError("write failed: keys");
    }
    {
        auto out = open_out(dir / kValuesFile);
        io::write_array(out, store.values());
        if (!out) throw IoError("write failed: values");
    }
    {
        auto out = open_out(dir / kMetaFile);
        for (std::size_t row = 0; row < store.size(); ++row) {
            io::write_short_string(out, store.meta(row).source_id);
            io::write_pod(out, static_cast<std::uint32_t>(store.meta(row).week));
        }
        if (!out) throw IoError("write failed: meta");
    }
}

Datastore load(const fs::path& dir) {
    auto header = open_in(dir / kHeaderFile);
    io::expect_magic(header, "TDS1", "datastore header");
    const auto dim = io::read_pod<std::uint32_t>(header, "datastore header");
    const auto width = io::read_pod<std::uint32_t>(header, "datastore header");
    const auto n = io::read_pod<std::uint64_t>(header, "datastore header");
    const auto generation = io::read_pod<std::uint64_t>(header, "datastore header");
    if (dim == 0 || width == 0) throw IoError("corrupt datastore header: zero dimension or width");

    Datastore store(dim, width);
    read_matrix(dir / kKeysFile, DatastoreAccess::keys(store), static_cast<std::size_t>(n) * dim);
    read_matrix(dir / kValuesFile, DatastoreAccess::values(store), static_cast<std::size_t>(n) * width);

    auto meta_in = open_in(dir / kMetaFile);
    auto& meta = DatastoreAccess::meta(store);
    meta.reserve(n);
    for (std::uint64_t row = 0; row < n; ++row) {
        EntryMeta m;
        m.source_id = io::read_short_string(meta_in, "meta record");
        m.week = static_cast<std::int32_t>(io::read_pod<std::uint32_t>(meta_in, "meta record"));
        meta.push_back(std::move(m));
    }
    if (meta_in.peek() != std::char_traits<char>::eof()) throw IoError("meta.bin has trailing bytes");
    DatastoreAccess::set_generation(store, generation);
    DatastoreAccess::finalize(store);
    return store;
}

StoreHandle::StoreHandle(std::size_t encoder_dimension, std::shared_ptr<const Datastore> initial)
    : encoder_dim_(encoder_dimension) {
    swap(std::move(initial));
}

std::shared_ptr<const Datastore> StoreHandle::pin() const {
    std::lock_guard lock(mutex_);
    return current_;
}

void StoreHandle::swap(std::shared_ptr<const Datastore> replacement) {
    if (!replacement) throw ValidationError("cannot install a null datastore");
    if (replacement->dimension() != encoder_dim_) throw DimensionMismatch(encoder_dim_, replacement->dimension());
    std::lock_guard lock(mutex_);
    current_ = std::move(replacement);
}

}  // namespace tagknn
