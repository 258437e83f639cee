#include "tagknn/index.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>

#include "binary_io.hpp"
#include "tagknn/error.hpp"

namespace tagknn {

namespace {

using Candidate = std::pair<float, std::size_t>;  // (distance, row), compared lexicographically

/// Bounded max-heap keeping the k smallest (distance, row) pairs.
class TopK {
public:
    explicit TopK(std::size_t k) : k_(k) { heap_.reserve(k + 1); }

    void offer(float distance, std::size_t row) {
        const Candidate c{distance, row};
        if (heap_.size() < k_) {
            heap_.push_back(c);
            std::push_heap(heap_.begin(), heap_.end());
        } else if (c < heap_.front()) {
            std::pop_heap(heap_.begin(), heap_.end());
            heap_.back() = c;
            std::push_heap(heap_.begin(), heap_.end());
        }
    }

    std::vector<Candidate> sorted() && {
        std::sort_heap(heap_.begin(), heap_.end());
        return std::move(heap_);
    }

private:
    std::size_t k_;
    std::vector<Candidate> heap_;
};

SearchResult make_result(const Datastore& store, std::vector<Candidate> candidates) {
    SearchResult result;
    result.generation = store.generation();
    result.fingerprint = store.fingerprint();
    result.neighbors.reserve(candidates.size());
    for (const auto& [distance, row] : candidates)
        result.neighbors.push_back({row, distance, store.meta(row).source_id, store.tag(row)});
    return result;
}

void check_k(std::size_t k) {
    if (k < 1) throw ValidationError("search: k must be >= 1");
}

}  // namespace

SearchResult search_exact(const Datastore& store, std::span<const float> query, std::size_t k) {
    check_k(k);
    if (query.size() != store.dimension()) throw DimensionMismatch(store.dimension(), query.size());
    TopK top(k);
    for (std::size_t row = 0; row < store.size(); ++row) top.offer(squared_l2(query, store.key(row)), row);
    return make_result(store, std::move(top).sorted());
}

Index::Index(const Datastore& store)
    : dim_(store.dimension()), rows_(store.size()), generation_(store.generation()),
      fingerprint_(store.fingerprint()) {}

bool Index::valid_for(const Datastore& store) const noexcept {
    return store.generation() == generation_ && store.fingerprint() == fingerprint_ && store.size() == rows_ &&
           store.dimension() == dim_;
}

void Index::require_valid(const Datastore& store) const {
    if (!valid_for(store))
        throw StaleIndexError("index built for generation " + std::to_string(generation_) + " (" +
                              std::to_string(rows_) + " rows) used against a store at generation " +
                              std::to_string(store.generation()) + " (" + std::to_string(store.size()) + " rows)");
}

void Index::check_query(const Datastore& store, std::span<const float> query, std::size_t k) const {
    check_k(k);
    if (query.size() != dim_) throw DimensionMismatch(dim_, query.size());
    require_valid(store);
}

SearchResult FlatIndex::search(const Datastore& store, std::span<const float> query, std::size_t k) const {
    check_query(store, query, k);
    return search_exact(store, query, k);
}

std::size_t default_nlist(std::size_t rows) {
    if (rows == 0) return 1;
    auto n = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(rows))));
    while (n * n < rows) ++n;
    while (n > 1 && (n - 1) * (n - 1) >= rows) --n;
    return n;
}

std::size_t default_nprobe(std::size_t nlist) { return std::max<std::size_t>(1, nlist / 16); }

IvfIndex::IvfIndex(const Datastore& store, std::vector<float> centroids,
                   std::vector<std::vector<std::uint32_t>> lists, std::size_t nprobe)
    : Index(store), centroids_(std::move(centroids)), lists_(std::move(lists)), nprobe_(1) {
    if (lists_.empty()) throw ValidationError("IVF index needs at least one list");
    if (centroids_.size() != lists_.size() * store.dimension())
        throw DimensionMismatch(lists_.size() * store.dimension(), centroids_.size());
    set_nprobe(nprobe == 0 ? default_nprobe(lists_.size()) : nprobe);
}

void IvfIndex::set_nprobe(std::size_t nprobe) {
    if (nprobe < 1 || nprobe > lists_.size())
        throw ValidationError("nprobe " + std::to_string(nprobe) + " outside [1, " + std::to_string(lists_.size()) +
                              "]");
    nprobe_ = nprobe;
}

SearchResult IvfIndex::search(const Datastore& store, std::span<const float> query, std::size_t k) const {
    return search(store, query, k, nprobe_);
}

SearchResult IvfIndex::search(const Datastore& store, std::span<const float> query, std::size_t k,
                              std::size_t nprobe) const {
    check_query(store, query, k);
    if (nprobe < 1 || nprobe > lists_.size())
        throw ValidationError("nprobe " + std::to_string(nprobe) + " outside [1, " + std::to_string(lists_.size()) +
                              "]");
    const std::size_t dim = dimension();
    std::vector<Candidate> coarse(lists_.size());
    for (std::size_t c = 0; c < lists_.size(); ++c)
        coarse[c] = {squared_l2(query, std::span<const float>(centroids_.data() + c * dim, dim)), c};
    std::partial_sort(coarse.begin(), coarse.begin() + static_cast<std::ptrdiff_t>(nprobe), coarse.end());

    TopK top(k);
    for (std::size_t p = 0; p < nprobe; ++p)
        for (const std::uint32_t row : lists_[coarse[p].second]) top.offer(squared_l2(query, store.key(row)), row);
    return make_result(store, std::move(top).sorted());
}

void IvfIndex::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write index file " + path.string());
    out.write("TIX1", 4);
    io::write_pod(out, static_cast<std::uint32_t>(lists_.size()));
    io::write_pod(out, static_cast<std::uint32_t>(dimension()));
    io::write_pod(out, static_cast<std::uint64_t>(generation()));
    io::write_array(out, std::span<const float>(centroids_));
    for (const auto& list : lists_) {
        io::write_pod(out, static_cast<std::uint32_t>(list.size()));
        io::write_array(out, std::span<const std::uint32_t>(list));
    }
    if (!out) throw IoError("write failed: " + path.string());
}

IvfIndex IvfIndex::load(const std::filesystem::path& path, const Datastore& store, std::size_t nprobe) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open index file " + path.string());
    io::expect_magic(in, "TIX1", "index header");
    const auto nlist = io::read_pod<std::uint32_t>(in, "index header");
    const auto dim = io::read_pod<std::uint32_t>(in, "index header");
    const auto generation = io::read_pod<std::uint64_t>(in, "index header");
    if (nlist == 0) throw IoError("corrupt index header: nlist = 0");
    if (dim != store.dimension()) throw DimensionMismatch(store.dimension(), dim);
    if (generation != store.generation())
        throw StaleIndexError("index file generation " + std::to_string(generation) +
                              " does not match datastore generation " + std::to_string(store.generation()));

    std::vector<float> centroids(static_cast<std::size_t>(nlist) * dim);
    io::read_exact(in, centroids.data(), centroids.size() * sizeof(float), "index centroids");
    std::vector<std::vector<std::uint32_t>> lists(nlist);
    std::vector<bool> seen(store.size(), false);
    std::size_t total = 0;
    for (auto& list : lists) {
        const auto len = io::read_pod<std::uint32_t>(in, "posting list length");
        list.resize(len);
        if (len) io::read_exact(in, list.data(), len * sizeof(std::uint32_t), "posting list");
        for (const auto row : list) {
            if (row >= store.size() || seen[row])
                throw StaleIndexError("index posting lists do not partition the datastore rows");
            seen[row] = true;
        }
        total += len;
    }
    if (total != store.size())
        throw StaleIndexError("index covers " + std::to_string(total) + " rows, datastore has " +
                              std::to_string(store.size()));
    return IvfIndex(store, std::move(centroids), std::move(lists), nprobe);
}

IvfIndex build_ivf(const Datastore& store, const IvfOptions& options) {
    if (store.empty()) throw ValidationError("build_ivf on an empty datastore");
    const std::size_t nlist = options.nlist == 0 ? default_nlist(store.size()) : options.nlist;
    if (nlist > store.size())
        throw ValidationError("nlist " + std::to_string(nlist) + " exceeds row count " + std::to_string(store.size()));
    auto km = kmeans(store.keys(), store.dimension(), nlist, options.iterations, options.seed, options.threads);
    std::vector<std::vector<std::uint32_t>> lists(nlist);
    for (std::size_t row = 0; row < km.assignment.size(); ++row)
        lists[km.assignment[row]].push_back(static_cast<std::uint32_t>(row));
    return IvfIndex(store, std::move(km.centroids), std::move(lists), options.nprobe);
}

IndexKind parse_index_kind(std::string_view name) {
    if (name == "flat") return IndexKind::Flat;
    if (name == "ivf") return IndexKind::Ivf;
    throw ValidationError("unknown index kind '" + std::string(name) + "'");
}

std::unique_ptr<Index> make_index(const Datastore& store, const IndexConfig& config) {
    if (config.kind == IndexKind::Flat || store.empty()) return std::make_unique<FlatIndex>(store);
    IvfOptions options = config.ivf;
    if (options.nlist > store.size()) options.nlist = store.size();
    return std::make_unique<IvfIndex>(build_ivf(store, options));
}

}  // namespace tagknn
