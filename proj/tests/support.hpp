#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tagknn/datastore.hpp"
#include "tagknn/random.hpp"

namespace testing {

class TempDir {
public:
    explicit TempDir(const std::string& prefix = "tagknn") {
        static std::atomic<int> counter{0};
        const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
        path_ = std::filesystem::temp_directory_path() /
                (prefix + "-" + std::to_string(stamp) + "-" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline tagknn::Sample sample(std::string id, std::vector<std::string> tags, int week = 1, std::string text = "t") {
    return {std::move(id), std::move(text), week, std::move(tags)};
}

/// A store whose i-th sample has key rows[i] and the given tags.
inline tagknn::Datastore store_of(const std::vector<std::vector<float>>& keys,
                                  const std::vector<std::vector<std::string>>& tags, std::size_t value_width = 32) {
    tagknn::BuildOptions opt;
    opt.dimension = keys.empty() ? 2 : keys.front().size();
    opt.value_width = value_width;
    tagknn::DatastoreBuilder b(opt);
    for (std::size_t i = 0; i < keys.size(); ++i) b.add(sample("s" + std::to_string(i), tags[i]), keys[i]);
    return std::move(b).finish();
}

/// n single-tag samples with uniform random keys in [-1, 1]^dim.
inline tagknn::Datastore random_store(std::size_t n, std::size_t dim, std::uint64_t seed, std::size_t distinct_tags = 50) {
    tagknn::Rng rng(seed);
    tagknn::BuildOptions opt;
    opt.dimension = dim;
    opt.value_width = 16;
    tagknn::DatastoreBuilder b(opt);
    std::vector<float> key(dim);
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& v : key) v = static_cast<float>(2.0 * rng.uniform() - 1.0);
        b.add(sample("r" + std::to_string(i), {"t" + std::to_string(rng.below(distinct_tags))}), key);
    }
    return std::move(b).finish();
}

inline std::vector<float> random_vector(tagknn::Rng& rng, std::size_t dim) {
    std::vector<float> v(dim);
    for (auto& x : v) x = static_cast<float>(2.0 * rng.uniform() - 1.0);
    return v;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace testing
