#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tagknn {

/// Dense embedding: E finite 32-bit floats.
using Vector = std::vector<float>;

enum class EmbeddingProvider { Imported, HashedNgram };

struct EmbeddingSpec {
    std::size_t dimension = 128;
    EmbeddingProvider provider = EmbeddingProvider::HashedNgram;
    std::size_t ngram_min = 2;
    std::size_t ngram_max = 4;
    bool normalize = true;

    /// Throws ValidationError on E < 1 or an inverted/zero n-gram range.
    void validate() const;
};

EmbeddingProvider parse_embedding_provider(std::string_view name);

/// Signed character n-gram feature hashing. Each n-gram of code points (for n in
/// [ngram_min, ngram_max]) is hashed with stable_hash(); the hash picks the bucket
/// (h mod E) and the sign (top bit). Empty text or text shorter than ngram_min
/// maps to the zero vector, which is never normalized.
Vector embed_text(std::string_view text, const EmbeddingSpec& spec);

struct IdVector {
    std::string id;
    Vector values;

    bool operator==(const IdVector&) const = default;
};

/// Vector file: "TSV1", u32 N, u32 E, then N x (u16 id length, id bytes, E f32), little-endian.
void export_vectors(std::ostream& out, std::span<const IdVector> vectors);
void export_vectors(const std::filesystem::path& path, std::span<const IdVector> vectors);

/// Reads a vector file. expected_dimension = 0 accepts whatever the header says.
std::vector<IdVector> import_vectors(std::istream& in, std::size_t expected_dimension);
std::vector<IdVector> import_vectors(const std::filesystem::path& path, std::size_t expected_dimension);

/// Squared L2 distance; the one kernel every search path shares.
float squared_l2(std::span<const float> a, std::span<const float> b) noexcept;

}  // namespace tagknn
