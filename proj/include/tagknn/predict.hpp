#pragma once

#include <cstddef>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tagknn/corpus.hpp"
#include "tagknn/datastore.hpp"
#include "tagknn/embed.hpp"
#include "tagknn/index.hpp"

namespace tagknn {

enum class RerankMethod { DefaultDistance, ActualDistance, FrequencyBased };

RerankMethod parse_rerank_method(std::string_view name);
std::string_view rerank_name(RerankMethod method);

inline constexpr RerankMethod kAllRerankMethods[] = {RerankMethod::FrequencyBased, RerankMethod::DefaultDistance,
                                                     RerankMethod::ActualDistance};

struct QueryParams {
    std::size_t k = 50;  // retrieval depth
    std::size_t r = 5;   // tags returned
    RerankMethod method = RerankMethod::FrequencyBased;
    std::size_t nprobe = 0;  // IVF only; 0 keeps the index default

    /// Throws ValidationError unless k >= r >= 1.
    void validate() const;
};

struct ScoredTag {
    std::string tag;
    double score = 0.0;  // distance for the distance methods, neighbor count for frequency

    bool operator==(const ScoredTag&) const = default;
};

/// At most R distinct tags, best first.
struct Prediction {
    std::vector<ScoredTag> tags;

    std::size_t size() const noexcept { return tags.size(); }
    bool empty() const noexcept { return tags.empty(); }
    std::vector<std::string> tag_list() const;
    bool operator==(const Prediction&) const = default;
};

/// First occurrence of each tag in the given (distance) order, stopping at r tags.
Prediction rerank_default(std::span<const Neighbor> neighbors, std::size_t r);

/// Recomputes each neighbor's exact squared L2 to `query` from the stored key,
/// re-sorts by (distance, row) and then dedups like rerank_default.
/// Throws StaleIndexError if `neighbors` did not come from `store`.
Prediction rerank_actual(std::span<const float> query, const SearchResult& neighbors, const Datastore& store,
                         std::size_t r, std::size_t limit = SIZE_MAX);

/// Tags ranked by occurrence count among the neighbors; count ties go to the
/// smaller minimum distance, then to the lexicographically smaller tag.
Prediction rerank_frequency(std::span<const Neighbor> neighbors, std::size_t r);

/// Dispatches on `method`, reranking only the first `limit` neighbors.
Prediction rerank(RerankMethod method, std::span<const float> query, const SearchResult& neighbors,
                  const Datastore& store, std::size_t r, std::size_t limit = SIZE_MAX);

/// Embed, retrieve k neighbors, rerank to r tags.
Prediction predict(std::string_view query_text, const Datastore& store, const Index& index,
                   const EmbeddingSpec& embedder, const QueryParams& params);

/// Same pipeline starting from an already computed embedding.
Prediction predict_vector(std::span<const float> query, const Datastore& store, const Index& index,
                          const QueryParams& params);

/// Retrieval step shared by predict(): IVF indices honor params.nprobe.
SearchResult retrieve(std::span<const float> query, const Datastore& store, const Index& index, std::size_t k,
                      std::size_t nprobe);

/// The r most frequent training tags (ties lexicographic), whatever the query.
Prediction frequency_baseline(const std::vector<Sample>& train_samples, std::size_t r);

/// Serving slot pairing a datastore generation with its index. swap() builds
/// the replacement's index before installing both; predictions in flight keep
/// the snapshot they pinned.
class Engine {
public:
    struct Snapshot {
        std::shared_ptr<const Datastore> store;
        std::shared_ptr<const Index> index;
    };

    Engine(EmbeddingSpec embedder, IndexConfig index_config, std::shared_ptr<const Datastore> store);

    std::shared_ptr<const Snapshot> pin() const;
    void swap(std::shared_ptr<const Datastore> replacement);

    /// Deletes samples from the active store, rebuilds the index and installs both.
    DeleteResult delete_samples(const std::unordered_set<std::string>& ids);

    Prediction predict(std::string_view query_text, const QueryParams& params) const;

    const EmbeddingSpec& embedder() const noexcept { return embedder_; }

private:
    std::shared_ptr<const Snapshot> make_snapshot(std::shared_ptr<const Datastore> store) const;

    EmbeddingSpec embedder_;
    IndexConfig index_config_;
    mutable std::mutex mutex_;
    std::mutex writer_;
    std::shared_ptr<const Snapshot> current_;
};

}  // namespace tagknn
