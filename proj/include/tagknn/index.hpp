#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tagknn/datastore.hpp"

namespace tagknn {

struct Neighbor {
    std::size_t row = 0;
    float distance = 0.0f;  // squared L2
    std::string source_id;
    std::string tag;
};

/// Neighbors in ascending (distance, row) order, tagged with the store
/// generation and fingerprint they were drawn from.
struct SearchResult {
    std::uint64_t generation = 0;
    std::uint64_t fingerprint = 0;
    std::vector<Neighbor> neighbors;

    std::size_t size() const noexcept { return neighbors.size(); }
    bool empty() const noexcept { return neighbors.empty(); }
};

/// Exact top-k by squared L2 over every row of `store`, ties broken by lower row id.
/// Needs no index; rerankers use it to recover true distances.
SearchResult search_exact(const Datastore& store, std::span<const float> query, std::size_t k);

/// Common surface of the flat and IVF indices. An index is bound to one store
/// generation; searching it against any other store throws StaleIndexError.
class Index {
public:
    virtual ~Index() = default;

    virtual SearchResult search(const Datastore& store, std::span<const float> query, std::size_t k) const = 0;

    std::uint64_t generation() const noexcept { return generation_; }
    std::size_t rows() const noexcept { return rows_; }
    std::size_t dimension() const noexcept { return dim_; }

    bool valid_for(const Datastore& store) const noexcept;
    void require_valid(const Datastore& store) const;

protected:
    explicit Index(const Datastore& store);

    void check_query(const Datastore& store, std::span<const float> query, std::size_t k) const;

private:
    std::size_t dim_;
    std::size_t rows_;
    std::uint64_t generation_;
    std::uint64_t fingerprint_;
};

class FlatIndex final : public Index {
public:
    explicit FlatIndex(const Datastore& store) : Index(store) {}

    SearchResult search(const Datastore& store, std::span<const float> query, std::size_t k) const override;
};

inline FlatIndex build_flat(const Datastore& store) { return FlatIndex(store); }

struct KMeansResult {
    std::vector<float> centroids;         // nlist x E, row-major
    std::vector<std::uint32_t> assignment;  // nearest centroid per point
    std::size_t iterations_run = 0;
};

/// Lloyd's algorithm under squared L2. Initial centroids are distinct rows
/// drawn with `seed`; a cluster that empties is re-seeded with the point of the
/// largest cluster farthest from that cluster's centroid. Stops early once the
/// assignment is stable. Throws ValidationError unless 1 <= nlist <= N.
KMeansResult kmeans(std::span<const float> points, std::size_t dim, std::size_t nlist, std::size_t iterations,
                    std::uint64_t seed, std::size_t threads = 1);

/// Nearest centroid for each point (ties to the lower centroid id).
std::vector<std::uint32_t> assign_nearest(std::span<const float> points, std::size_t dim,
                                          std::span<const float> centroids, std::size_t threads = 1);

struct IvfOptions {
    std::size_t nlist = 0;   // 0: ceil(sqrt(N))
    std::size_t nprobe = 0;  // 0: max(1, nlist / 16)
    std::size_t iterations = 25;
    std::uint64_t seed = 1234;
    std::size_t threads = 1;
};

std::size_t default_nlist(std::size_t rows);
std::size_t default_nprobe(std::size_t nlist);

/// Inverted-file index: rows partitioned by nearest coarse centroid. A query
/// scans the nprobe lists with the nearest centroids and ranks the scanned rows
/// by their true squared L2 distance, so only candidate selection is approximate.
class IvfIndex final : public Index {
public:
    IvfIndex(const Datastore& store, std::vector<float> centroids, std::vector<std::vector<std::uint32_t>> lists,
             std::size_t nprobe);

    SearchResult search(const Datastore& store, std::span<const float> query, std::size_t k) const override;
    SearchResult search(const Datastore& store, std::span<const float> query, std::size_t k,
                        std::size_t nprobe) const;

    std::size_t nlist() const noexcept { return lists_.size(); }
    std::size_t nprobe() const noexcept { return nprobe_; }
    void set_nprobe(std::size_t nprobe);

    std::span<const float> centroids() const noexcept { return centroids_; }
    const std::vector<std::vector<std::uint32_t>>& lists() const noexcept { return lists_; }

    /// "TIX1", u32 nlist, u32 E, u64 generation, nlist x E f32 centroids,
    /// then per list u32 length and u32 row ids. Little-endian.
    void save(const std::filesystem::path& path) const;

    /// Reads an index file and binds it to `store`. Throws StaleIndexError when the
    /// recorded generation differs from the store's or the lists do not cover it.
    static IvfIndex load(const std::filesystem::path& path, const Datastore& store, std::size_t nprobe = 0);

private:
    std::vector<float> centroids_;
    std::vector<std::vector<std::uint32_t>> lists_;
    std::size_t nprobe_;
};

/// Throws ValidationError on an empty store or nlist > N.
IvfIndex build_ivf(const Datastore& store, const IvfOptions& options = {});

enum class IndexKind { Flat, Ivf };

IndexKind parse_index_kind(std::string_view name);

struct IndexConfig {
    IndexKind kind = IndexKind::Ivf;
    IvfOptions ivf;
};

/// Flat for `Flat` or for an empty store (IVF needs at least one row), IVF otherwise.
std::unique_ptr<Index> make_index(const Datastore& store, const IndexConfig& config);

}  // namespace tagknn
