#include <array>
#include <cmath>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "support.hpp"
#include "tagknn/error.hpp"
#include "tagknn/index.hpp"

using namespace tagknn;
using testing::store_of;

namespace {

std::vector<float> to_vec(std::span<const float> s) { return {s.begin(), s.end()}; }

std::vector<std::size_t> rows_of(const SearchResult& r) {
    std::vector<std::size_t> out;
    for (const auto& n : r.neighbors) out.push_back(n.row);
    return out;
}

std::set<std::size_t> row_set(const SearchResult& r) {
    const auto v = rows_of(r);
    return {v.begin(), v.end()};
}

/// n points around three well-separated means.
std::vector<float> blobs(std::size_t per_blob, const std::vector<std::array<float, 2>>& means, Rng& rng,
                         double sigma) {
    std::vector<float> out;
    for (const auto& m : means)
        for (std::size_t i = 0; i < per_blob; ++i) {
            out.push_back(static_cast<float>(m[0] + sigma * rng.normal()));
            out.push_back(static_cast<float>(m[1] + sigma * rng.normal()));
        }
    return out;
}

}  // namespace

TEST_SUITE("index") {

TEST_CASE("flat: empty, single row, hand distances") {
    const Datastore empty(2, 8);
    const FlatIndex e(empty);
    CHECK(e.search(empty, std::vector<float>{1, 1}, 5).empty());

    const auto one = store_of({{3, 4}}, {{"x"}});
    const FlatIndex o(one);
    const auto hit = o.search(one, std::vector<float>{-9, 9}, 3);
    REQUIRE(hit.size() == 1);
    CHECK(hit.neighbors[0].tag == "x");

    const auto two = store_of({{0, 0}, {3, 4}}, {{"a"}, {"b"}});
    const auto r = FlatIndex(two).search(two, std::vector<float>{0, 0}, 2);
    REQUIRE(r.size() == 2);
    CHECK(r.neighbors[0].row == 0);
    CHECK(r.neighbors[0].distance == 0.0f);
    CHECK(r.neighbors[1].row == 1);
    CHECK(r.neighbors[1].distance == 25.0f);
    CHECK(r.neighbors[1].source_id == "s1");
    CHECK(r.neighbors[1].tag == "b");
    CHECK(r.generation == two.generation());
    CHECK(r.fingerprint == two.fingerprint());
}

TEST_CASE("flat: K > N returns all rows sorted; ties to the lower row") {
    const auto s = store_of({{1, 0}, {0, 1}, {-1, 0}, {5, 5}}, {{"a"}, {"b"}, {"c"}, {"d"}});
    const auto r = FlatIndex(s).search(s, std::vector<float>{0, 0}, 10);
    CHECK(rows_of(r) == std::vector<std::size_t>{0, 1, 2, 3});
    CHECK_THROWS_AS(FlatIndex(s).search(s, std::vector<float>{0, 0, 0}, 1), DimensionMismatch);
    CHECK_THROWS_AS(FlatIndex(s).search(s, std::vector<float>{0, 0}, 0), ValidationError);
}

TEST_CASE("flat: 10k rows preserved") {
    const auto s = testing::random_store(10'000, 8, 4);
    const FlatIndex f(s);
    CHECK(f.rows() == 10'000);
    CHECK(f.valid_for(s));
}

TEST_CASE("search_exact: matches a naive double loop on 5k rows") {
    const auto s = testing::random_store(5'000, 16, 9);
    const std::vector<float> keys(s.keys().begin(), s.keys().end());
    Rng rng(10);
    const FlatIndex flat(s);
    for (int q = 0; q < 100; ++q) {
        const auto query = testing::random_vector(rng, 16);
        for (std::size_t k : {1, 7, 50}) {
            const auto got = search_exact(s, query, k);
            const auto want = oracle::brute_force_knn(keys, 16, query.data(), k);
            const auto m = oracle::compare_modulo_ties(rows_of(got), want, keys, 16, query.data());
            INFO(m.why);
            CHECK(m.ok);
            CHECK(rows_of(flat.search(s, query, k)) == rows_of(got));
            for (std::size_t i = 1; i < got.size(); ++i)
                CHECK(got.neighbors[i - 1].distance <= got.neighbors[i].distance);
        }
    }
    // a stored key comes back first at distance 0
    const auto self = search_exact(s, to_vec(s.key(1234)), 3);
    CHECK(self.neighbors[0].row == 1234);
    CHECK(self.neighbors[0].distance == 0.0f);
}

TEST_CASE("kmeans: nlist = N puts every point in its own cluster") {
    const std::vector<float> pts{0, 0, 1, 0, 0, 1, 5, 5, 9, -3};
    const auto km = kmeans(pts, 2, 5, 10, 3);
    CHECK(std::set<std::uint32_t>(km.assignment.begin(), km.assignment.end()).size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        const auto c = km.assignment[i];
        CHECK(oracle::sq_dist(&pts[2 * i], &km.centroids[2 * c], 2) == 0.0);
    }
}

TEST_CASE("kmeans: nlist = 1 gives the coordinate-wise mean") {
    Rng rng(4);
    std::vector<float> pts;
    for (int i = 0; i < 999; ++i) pts.push_back(static_cast<float>(rng.normal() * 3 + 1));
    const auto km = kmeans(pts, 3, 1, 5, 1);
    for (std::size_t d = 0; d < 3; ++d) {
        double mean = 0.0;
        for (std::size_t i = d; i < pts.size(); i += 3) mean += pts[i];
        mean /= 333.0;
        CHECK(km.centroids[d] == doctest::Approx(mean).epsilon(1e-5));
    }
}

TEST_CASE("kmeans: three separated blobs recover their means") {
    const std::vector<std::array<float, 2>> means{{0, 0}, {10, 0}, {0, 10}};
    Rng rng(8);
    const auto pts = blobs(400, means, rng, 0.5);
    const auto km = kmeans(pts, 2, 3, 50, 12);
    std::set<std::size_t> matched;
    for (std::size_t c = 0; c < 3; ++c) {
        double best = 1e9;
        std::size_t which = 0;
        for (std::size_t m = 0; m < 3; ++m) {
            const double d = oracle::sq_dist(&km.centroids[2 * c], means[m].data(), 2);
            if (d < best) best = d, which = m;
        }
        CHECK(std::sqrt(best) < 0.1);
        matched.insert(which);
    }
    CHECK(matched.size() == 3);
}

TEST_CASE("kmeans: deterministic, independent of threads, validated") {
    Rng rng(2);
    std::vector<float> pts;
    for (int i = 0; i < 3000; ++i) pts.push_back(static_cast<float>(rng.normal()));
    const auto a = kmeans(pts, 6, 20, 10, 99, 1);
    const auto b = kmeans(pts, 6, 20, 10, 99, 3);
    CHECK(a.centroids == b.centroids);
    CHECK(a.assignment == b.assignment);
    CHECK_THROWS_AS(kmeans(pts, 6, 501, 10, 1), ValidationError);
    CHECK_THROWS_AS(kmeans(pts, 6, 0, 10, 1), ValidationError);
    CHECK_THROWS_AS(kmeans(pts, 6, 2, 0, 1), ValidationError);
}

TEST_CASE("kmeans: repeated points, colliding seeds still end with one cluster per value") {
    // 3 distinct values, 20 copies each; seeds that draw two copies of one value
    // start with an empty cluster and must re-seed it.
    std::vector<float> pts;
    for (int copy = 0; copy < 20; ++copy)
        for (float v : {0.0f, 4.0f, 9.0f}) pts.insert(pts.end(), {v, -v});
    for (std::uint64_t seed = 1; seed <= 25; ++seed) {
        const auto km = kmeans(pts, 2, 3, 20, seed);
        std::vector<int> sizes(3, 0);
        for (auto c : km.assignment) ++sizes[c];
        CAPTURE(seed);
        for (int s : sizes) CHECK(s == 20);
    }
}

TEST_CASE("ivf: partition covers every row exactly once") {
    const auto s = testing::random_store(2'000, 8, 3);
    IvfOptions opt;
    const auto ivf = build_ivf(s, opt);
    CHECK(ivf.nlist() == default_nlist(2'000));
    CHECK(ivf.nlist() == 45);
    CHECK(ivf.nprobe() == default_nprobe(45));
    CHECK(ivf.centroids().size() == 45 * 8);
    std::vector<int> seen(s.size(), 0);
    std::size_t total = 0;
    for (const auto& l : ivf.lists()) {
        total += l.size();
        for (auto r : l) ++seen[r];
    }
    CHECK(total == s.size());
    for (int v : seen) CHECK(v == 1);
    opt.nlist = 2'001;
    CHECK_THROWS_AS(build_ivf(s, opt), ValidationError);
    CHECK_THROWS_AS(build_ivf(Datastore(8, 4)), ValidationError);
}

TEST_CASE("ivf: nlist = 1 equals flat exactly") {
    const auto s = testing::random_store(1'000, 8, 6);
    IvfOptions opt;
    opt.nlist = 1;
    const auto ivf = build_ivf(s, opt);
    Rng rng(1);
    for (int q = 0; q < 50; ++q) {
        const auto query = testing::random_vector(rng, 8);
        CHECK(rows_of(ivf.search(s, query, 20)) == rows_of(search_exact(s, query, 20)));
    }
}

TEST_CASE("ivf: full probe equals flat; distances are true distances") {
    const auto s = testing::random_store(1'000, 8, 7);
    const auto ivf = build_ivf(s);
    Rng rng(2);
    for (int q = 0; q < 100; ++q) {
        const auto query = testing::random_vector(rng, 8);
        const auto a = ivf.search(s, query, 25, ivf.nlist());
        CHECK(rows_of(a) == rows_of(search_exact(s, query, 25)));
        const auto p = ivf.search(s, query, 25, 2);
        for (const auto& n : p.neighbors) CHECK(n.distance == squared_l2(query, s.key(n.row)));
    }
    // every row is reachable
    for (std::size_t r = 0; r < s.size(); r += 97) {
        const auto got = ivf.search(s, to_vec(s.key(r)), 1, ivf.nlist());
        CHECK(got.neighbors[0].distance == 0.0f);
    }
    CHECK_THROWS_AS(ivf.search(s, std::vector<float>(8, 0), 5, 0), ValidationError);
    CHECK_THROWS_AS(ivf.search(s, std::vector<float>(8, 0), 5, ivf.nlist() + 1), ValidationError);
}

TEST_CASE("ivf: candidate pool grows with nprobe") {
    const auto s = testing::random_store(3'000, 8, 8);
    const auto ivf = build_ivf(s);
    Rng rng(3);
    for (int q = 0; q < 30; ++q) {
        const auto query = testing::random_vector(rng, 8);
        const auto exact = row_set(search_exact(s, query, 10));
        std::size_t previous = 0;
        for (std::size_t p = 1; p <= ivf.nlist(); ++p) {
            std::size_t found = 0;
            for (auto r : row_set(ivf.search(s, query, 10, p))) found += exact.count(r);
            CHECK(found >= previous);
            previous = found;
        }
        CHECK(previous == 10);
    }
}

TEST_CASE("ivf: save/load, staleness") {
    testing::TempDir dir;
    const auto s = testing::random_store(500, 4, 11);
    const auto ivf = build_ivf(s);
    ivf.save(dir / "i.tix");
    const auto back = IvfIndex::load(dir / "i.tix", s, 3);
    CHECK(back.nprobe() == 3);
    CHECK(back.lists() == ivf.lists());
    CHECK(std::equal(back.centroids().begin(), back.centroids().end(), ivf.centroids().begin()));
    const std::vector<float> q{0.1f, 0.2f, 0.3f, 0.4f};
    CHECK(rows_of(back.search(s, q, 9, 3)) == rows_of(ivf.search(s, q, 9, 3)));

    const auto pruned = delete_samples(s, {"r1"}).store;
    CHECK_THROWS_AS(IvfIndex::load(dir / "i.tix", pruned), StaleIndexError);
    CHECK_THROWS_AS(ivf.search(pruned, q, 3), StaleIndexError);
    CHECK_THROWS_AS(IvfIndex::load(dir / "none.tix", s), IoError);
    std::filesystem::resize_file(dir / "i.tix", 40);
    CHECK_THROWS(IvfIndex::load(dir / "i.tix", s));
}

TEST_CASE("make_index") {
    const auto s = testing::random_store(300, 4, 1);
    IndexConfig cfg;
    cfg.kind = IndexKind::Flat;
    CHECK(dynamic_cast<const FlatIndex*>(make_index(s, cfg).get()));
    cfg.kind = IndexKind::Ivf;
    CHECK(dynamic_cast<const IvfIndex*>(make_index(s, cfg).get()));
    const Datastore empty(4, 8);
    CHECK(dynamic_cast<const FlatIndex*>(make_index(empty, cfg).get()));
    cfg.ivf.nlist = 10'000;
    CHECK(dynamic_cast<const IvfIndex*>(make_index(s, cfg).get())->nlist() == 300);
    CHECK(parse_index_kind("flat") == IndexKind::Flat);
    CHECK_THROWS_AS(parse_index_kind("hnsw"), ValidationError);
}

}
