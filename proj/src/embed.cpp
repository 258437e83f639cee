#include "tagknn/embed.hpp"

#include <cmath>
#include <fstream>

#include "binary_io.hpp"
#include "tagknn/error.hpp"
#include "tagknn/hash.hpp"

namespace tagknn {

void EmbeddingSpec::validate() const {
    if (dimension < 1) throw ValidationError("embedding dimension must be >= 1");
    if (ngram_min < 1 || ngram_min > ngram_max)
        throw ValidationError("invalid n-gram range [" + std::to_string(ngram_min) + ", " +
                              std::to_string(ngram_max) + "]");
}

EmbeddingProvider parse_embedding_provider(std::string_view name) {
    if (name == "hashed" || name == "hashed-ngram") return EmbeddingProvider::HashedNgram;
    if (name == "imported") return EmbeddingProvider::Imported;
    throw ValidationError("unknown embedding provider '" + std::string(name) + "'");
}

Vector embed_text(std::string_view text, const EmbeddingSpec& spec) {
    spec.validate();
    if (spec.provider != EmbeddingProvider::HashedNgram)
        throw ValidationError("embed_text needs the hashed-ngram provider; imported vectors come from a file");

    Vector out(spec.dimension, 0.0f);
    std::vector<std::size_t> starts;
    starts.reserve(text.size() + 1);
    for (std::size_t i = 0; i < text.size(); ++i)
        if ((static_cast<unsigned char>(text[i]) & 0xC0) != 0x80) starts.push_back(i);
    const std::size_t chars = starts.size();
    starts.push_back(text.size());

    for (std::size_t n = spec.ngram_min; n <= spec.ngram_max && n <= chars; ++n) {
        for (std::size_t i = 0; i + n <= chars; ++i) {
            const auto gram = text.substr(starts[i], starts[i + n] - starts[i]);
            const std::uint64_t h = stable_hash(gram);
            const std::size_t bucket = static_cast<std::size_t>(h % spec.dimension);
            out[bucket] += (h >> 63) ? -1.0f : 1.0f;
        }
    }

    if (spec.normalize) {
        double norm = 0.0;
        for (float v : out) norm += static_cast<double>(v) * v;
        if (norm > 0.0) {
            const double inv = 1.0 / std::sqrt(norm);
            for (float& v : out) v = static_cast<float>(v * inv);
        }
    }
    return out;
}

void export_vectors(std::ostream& out, std::span<const IdVector> vectors) {
    const std::size_t dim = vectors.empty() ? 0 : vectors.front().values.size();
    if (vectors.size() > UINT32_MAX || dim > UINT32_MAX) throw ValidationError("too many vectors for TSV1");
    out.write("TSV1", 4);
    io::write_pod(out, static_cast<std::uint32_t>(vectors.size()));
    io::write_pod(out, static_cast<std::uint32_t>(dim));
    for (const auto& v : vectors) {
        if (v.values.size() != dim) throw DimensionMismatch(dim, v.values.size());
        io::write_short_string(out, v.id);
        io::write_array(out, std::span<const float>(v.values));
    }
}

void export_vectors(const std::filesystem::path& path, std::span<const IdVector> vectors) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write vector file " + path.string());
    export_vectors(out, vectors);
    if (!out) throw IoError("write failed: " + path.string());
}

std::vector<IdVector> import_vectors(std::istream& in, std::size_t expected_dimension) {
    io::expect_magic(in, "TSV1", "vector file header");
    const auto count = io::read_pod<std::uint32_t>(in, "vector file header");
    const auto dim = io::read_pod<std::uint32_t>(in, "vector file header");
    if (expected_dimension != 0 && dim != expected_dimension) throw DimensionMismatch(expected_dimension, dim);

    std::vector<IdVector> vectors;
    vectors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        IdVector v;
        v.id = io::read_short_string(in, "vector record id");
        v.values.resize(dim);
        io::read_exact(in, v.values.data(), dim * sizeof(float), "vector record values");
        for (std::uint32_t k = 0; k < dim; ++k)
            if (!std::isfinite(v.values[k]))
                throw ValidationError("non-finite value in vector " + std::to_string(i) + " ('" + v.id +
                                      "') at coordinate " + std::to_string(k));
        vectors.push_back(std::move(v));
    }
    if (in.peek() != std::char_traits<char>::eof())
        throw IoError("vector file has trailing bytes after " + std::to_string(count) + " records");
    return vectors;
}

std::vector<IdVector> import_vectors(const std::filesystem::path& path, std::size_t expected_dimension) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open vector file " + path.string());
    return import_vectors(in, expected_dimension);
}

float squared_l2(std::span<const float> a, std::span<const float> b) noexcept {
    // Eight independent lanes let the compiler vectorize without reassociation flags.
    float acc[8] = {};
    const std::size_t n = a.size();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (std::size_t l = 0; l < 8; ++l) {
            const float d = a[i + l] - b[i + l];
            acc[l] += d * d;
        }
    float tail = 0.0f;
    for (; i < n; ++i) {
        const float d = a[i] - b[i];
        tail += d * d;
    }
    return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail;
}

}  // namespace tagknn
