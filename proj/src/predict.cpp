#include "tagknn/predict.hpp"

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

#include "tagknn/error.hpp"

namespace tagknn {

RerankMethod parse_rerank_method(std::string_view name) {
    if (name == "default" || name == "default-distance") return RerankMethod::DefaultDistance;
    if (name == "actual" || name == "actual-distance") return RerankMethod::ActualDistance;
    if (name == "frequency" || name == "frequency-based") return RerankMethod::FrequencyBased;
    throw ValidationError("unknown rerank method '" + std::string(name) + "'");
}

std::string_view rerank_name(RerankMethod method) {
    switch (method) {
        case RerankMethod::DefaultDistance: return "default-distance";
        case RerankMethod::ActualDistance: return "actual-distance";
        case RerankMethod::FrequencyBased: return "frequency-based";
    }
    return "?";
}

void QueryParams::validate() const {
    if (r < 1) throw ValidationError("R must be >= 1");
    if (k < r) throw ValidationError("K (" + std::to_string(k) + ") must be >= R (" + std::to_string(r) + ")");
}

std::vector<std::string> Prediction::tag_list() const {
    std::vector<std::string> out;
    out.reserve(tags.size());
    for (const auto& t : tags) out.push_back(t.tag);
    return out;
}

Prediction rerank_default(std::span<const Neighbor> neighbors, std::size_t r) {
    Prediction p;
    std::unordered_set<std::string_view> seen;
    for (const auto& n : neighbors) {
        if (p.tags.size() >= r) break;
        if (seen.insert(n.tag).second) p.tags.push_back({n.tag, n.distance});
    }
    return p;
}

Prediction rerank_actual(std::span<const float> query, const SearchResult& neighbors, const Datastore& store,
                         std::size_t r, std::size_t limit) {
    if (neighbors.generation != store.generation() || neighbors.fingerprint != store.fingerprint())
        throw StaleIndexError("search result from generation " + std::to_string(neighbors.generation) +
                              " reranked against store generation " + std::to_string(store.generation()));
    if (query.size() != store.dimension()) throw DimensionMismatch(store.dimension(), query.size());
    const std::size_t n = std::min(limit, neighbors.size());
    std::vector<std::pair<float, const Neighbor*>> exact;
    exact.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Neighbor& nb = neighbors.neighbors[i];
        if (nb.row >= store.size()) throw StaleIndexError("neighbor row outside the store");
        exact.emplace_back(squared_l2(query, store.key(nb.row)), &nb);
    }
    std::sort(exact.begin(), exact.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first < b.first : a.second->row < b.second->row;
    });
    Prediction p;
    std::unordered_set<std::string_view> seen;
    for (const auto& [distance, nb] : exact) {
        if (p.tags.size() >= r) break;
        if (seen.insert(nb->tag).second) p.tags.push_back({nb->tag, distance});
    }
    return p;
}

Prediction rerank_frequency(std::span<const Neighbor> neighbors, std::size_t r) {
    struct Tally {
        std::size_t count = 0;
        float min_distance = 0.0f;
    };
    std::unordered_map<std::string_view, Tally> tally;
    for (const auto& n : neighbors) {
        auto [it, inserted] = tally.try_emplace(n.tag, Tally{0, n.distance});
        ++it->second.count;
        it->second.min_distance = std::min(it->second.min_distance, n.distance);
    }
    std::vector<std::pair<std::string_view, Tally>> ranked(tally.begin(), tally.end());
    const std::size_t keep = std::min(r, ranked.size());
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(keep), ranked.end(),
                      [](const auto& a, const auto& b) {
                          if (a.second.count != b.second.count) return a.second.count > b.second.count;
                          if (a.second.min_distance != b.second.min_distance)
                              return a.second.min_distance < b.second.min_distance;
                          return a.first < b.first;
                      });
    Prediction p;
    for (std::size_t i = 0; i < keep; ++i)
        p.tags.push_back({std::string(ranked[i].first), static_cast<double>(ranked[i].second.count)});
    return p;
}

Prediction rerank(RerankMethod method, std::span<const float> query, const SearchResult& neighbors,
                  const Datastore& store, std::size_t r, std::size_t limit) {
    const auto prefix = std::span<const Neighbor>(neighbors.neighbors).first(std::min(limit, neighbors.size()));
    switch (method) {
        case RerankMethod::DefaultDistance: return rerank_default(prefix, r);
        case RerankMethod::ActualDistance: return rerank_actual(query, neighbors, store, r, limit);
        case RerankMethod::FrequencyBased: return rerank_frequency(prefix, r);
    }
    throw ValidationError("unknown rerank method");
}

SearchResult retrieve(std::span<const float> query, const Datastore& store, const Index& index, std::size_t k,
                      std::size_t nprobe) {
    if (const auto* ivf = dynamic_cast<const IvfIndex*>(&index); ivf && nprobe != 0)
        return ivf->search(store, query, k, std::min(nprobe, ivf->nlist()));
    return index.search(store, query, k);
}

Prediction predict_vector(std::span<const float> query, const Datastore& store, const Index& index,
                          const QueryParams& params) {
    params.validate();
    if (query.size() != store.dimension()) throw DimensionMismatch(store.dimension(), query.size());
    if (store.empty()) return {};
    const auto neighbors = retrieve(query, store, index, params.k, params.nprobe);
    return rerank(params.method, query, neighbors, store, params.r);
}

Prediction predict(std::string_view query_text, const Datastore& store, const Index& index,
                   const EmbeddingSpec& embedder, const QueryParams& params) {
    if (embedder.dimension != store.dimension()) throw DimensionMismatch(store.dimension(), embedder.dimension);
    const auto query = embed_text(query_text, embedder);
    return predict_vector(query, store, index, params);
}

Prediction frequency_baseline(const std::vector<Sample>& train_samples, std::size_t r) {
    if (train_samples.empty()) throw ValidationError("frequency baseline needs a non-empty training set");
    std::unordered_map<std::string_view, std::size_t> counts;
    for (const auto& s : train_samples)
        for (const auto& t : s.tags) ++counts[t];
    std::vector<std::pair<std::string_view, std::size_t>> ranked(counts.begin(), counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    Prediction p;
    for (std::size_t i = 0; i < std::min(r, ranked.size()); ++i)
        p.tags.push_back({std::string(ranked[i].first), static_cast<double>(ranked[i].second)});
    return p;
}

Engine::Engine(EmbeddingSpec embedder, IndexConfig index_config, std::shared_ptr<const Datastore> store)
    : embedder_(std::move(embedder)), index_config_(std::move(index_config)) {
    embedder_.validate();
    swap(std::move(store));
}

std::shared_ptr<const Engine::Snapshot> Engine::make_snapshot(std::shared_ptr<const Datastore> store) const {
    if (!store) throw ValidationError("cannot install a null datastore");
    if (store->dimension() != embedder_.dimension) throw DimensionMismatch(embedder_.dimension, store->dimension());
    auto snapshot = std::make_shared<Snapshot>();
    snapshot->index = make_index(*store, index_config_);
    snapshot->store = std::move(store);
    return snapshot;
}

std::shared_ptr<const Engine::Snapshot> Engine::pin() const {
    std::lock_guard lock(mutex_);
    return current_;
}

void Engine::swap(std::shared_ptr<const Datastore> replacement) {
    std::lock_guard writer(writer_);
    auto snapshot = make_snapshot(std::move(replacement));
    std::lock_guard lock(mutex_);
    current_ = std::move(snapshot);
}

DeleteResult Engine::delete_samples(const std::unordered_set<std::string>& ids) {
    std::lock_guard writer(writer_);
    const auto active = pin();
    DeleteResult result = tagknn::delete_samples(*active->store, ids);
    auto snapshot = make_snapshot(std::make_shared<const Datastore>(result.store));
    std::lock_guard lock(mutex_);
    current_ = std::move(snapshot);
    return result;
}

Prediction Engine::predict(std::string_view query_text, const QueryParams& params) const {
    const auto snapshot = pin();
    return tagknn::predict(query_text, *snapshot->store, *snapshot->index, embedder_, params);
}

}  // namespace tagknn
