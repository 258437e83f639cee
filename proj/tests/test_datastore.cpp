#include <cstring>
#include <fstream>
#include <set>
#include <thread>

#include "doctest.h"
#include "support.hpp"
#include "tagknn/datastore.hpp"
#include "tagknn/error.hpp"
#include "tagknn/index.hpp"

using namespace tagknn;
using testing::sample;
using testing::store_of;

namespace {

/// Random tag of 1..max_cp code points drawn from 1-, 2-, 3- and 4-byte ranges.
std::string random_tag(Rng& rng, std::size_t max_cp) {
    std::string out;
    const auto n = 1 + rng.below(max_cp);
    for (std::uint64_t i = 0; i < n; ++i) {
        switch (rng.below(4)) {
            case 0: out += static_cast<char>('a' + rng.below(26)); break;
            case 1: {
                const auto cp = 0x80 + rng.below(0x800 - 0x80);
                out += static_cast<char>(0xC0 | (cp >> 6));
                out += static_cast<char>(0x80 | (cp & 0x3F));
                break;
            }
            case 2: {
                auto cp = 0x800 + rng.below(0x10000 - 0x800);
                if (cp >= 0xD800 && cp <= 0xDFFF) cp = 0x4E2D;
                out += static_cast<char>(0xE0 | (cp >> 12));
                out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
                out += static_cast<char>(0x80 | (cp & 0x3F));
                break;
            }
            default: {
                const auto cp = 0x10000 + rng.below(0x110000 - 0x10000);
                out += static_cast<char>(0xF0 | (cp >> 18));
                out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
                out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
                out += static_cast<char>(0x80 | (cp & 0x3F));
            }
        }
    }
    return out;
}

std::set<std::string> sources(const Datastore& s) {
    std::set<std::string> out;
    for (std::size_t r = 0; r < s.size(); ++r) out.insert(s.meta(r).source_id);
    return out;
}

}  // namespace

TEST_SUITE("datastore") {

TEST_CASE("encode_tag: ascii bytes, zero padded") {
    CHECK(encode_tag("ai", 8) == ValueRow{97, 105, 0, 0, 0, 0, 0, 0});
    const ValueRow row{97, 105, 0, 0, 0, 0, 0, 0};
    CHECK(decode_tag(row) == "ai");
}

TEST_CASE("encode_tag: length limit in bytes") {
    CHECK_THROWS_AS(encode_tag(std::string(281, 'x'), 280), ValidationError);
    CHECK(encode_tag(std::string(280, 'x'), 280).back() == 'x');
    CHECK_THROWS_AS(encode_tag("\xC3\xA9\xC3\xA9", 3), ValidationError);  // 2 code points, 4 bytes
    CHECK_THROWS_AS(encode_tag("", 8), ValidationError);
}

TEST_CASE("decode_tag rejects invalid rows") {
    CHECK_THROWS_AS(decode_tag(ValueRow(8, 0)), ValidationError);
    CHECK_THROWS_AS(decode_tag(ValueRow{97, 0, 98, 0}), ValidationError);
    CHECK_THROWS_AS(decode_tag(ValueRow{0x100, 0}), ValidationError);
    CHECK_THROWS_AS(decode_tag(ValueRow{0xC3, 0}), ValidationError);
}

TEST_CASE("encode/decode round trip on random tags") {
    Rng rng(2024);
    for (int i = 0; i < 1000; ++i) {
        const auto tag = random_tag(rng, 20);
        REQUIRE(tag.size() <= kDefaultValueWidth);
        CHECK(decode_tag(encode_tag(tag, kDefaultValueWidth)) == tag);
        CHECK(decode_tag(encode_tag(tag, tag.size())) == tag);
    }
}

TEST_CASE("build: one sample with four tags unrolls to four identical keys") {
    const auto s = store_of({{0.5f, -1.0f, 2.0f}}, {{"a", "b", "c", "d"}});
    REQUIRE(s.size() == 4);
    for (std::size_t r = 0; r < 4; ++r) {
        CHECK(std::memcmp(s.key(r).data(), s.key(0).data(), 3 * sizeof(float)) == 0);
        CHECK(s.meta(r).source_id == "s0");
    }
    CHECK(s.tag(0) == "a");
    CHECK(s.tag(3) == "d");
    CHECK(decode_tag(s.value(2)) == "c");
    CHECK(s.distinct_sources() == 1);
}

TEST_CASE("build: empty and summed") {
    BuildOptions opt;
    opt.dimension = 4;
    CHECK(build({}, {}, opt).size() == 0);
    const std::vector<Sample> three{sample("a", {"x"}), sample("b", {"x", "y"}), sample("c", {"x", "y", "z"})};
    EmbeddingMap emb{{"a", Vector(4, 1)}, {"b", Vector(4, 2)}, {"c", Vector(4, 3)}};
    const auto s = build(three, emb, opt);
    CHECK(s.size() == 6);
    CHECK(s.distinct_tags() == 3);
    CHECK(s.meta(1).source_id == "b");
    CHECK(s.meta(5).source_id == "c");
    emb.erase("b");
    CHECK_THROWS_AS(build(three, emb, opt), ValidationError);
    emb["b"] = Vector(5, 0);
    CHECK_THROWS_AS(build(three, emb, opt), DimensionMismatch);
    BuildOptions narrow = opt;
    narrow.value_width = 2;
    const std::vector<Sample> wide{sample("a", {"xyz"})};
    CHECK_THROWS_AS(build(wide, {{"a", Vector(4, 0)}}, narrow), ValidationError);
}

TEST_CASE("builder flushes in batches and keeps ingestion order") {
    BuildOptions opt;
    opt.dimension = 2;
    opt.value_width = 8;
    opt.batch_size = 3;
    DatastoreBuilder b(opt);
    for (int i = 0; i < 5; ++i)
        b.add(sample("s" + std::to_string(i), {"x", "y"}), std::vector<float>{float(i), float(-i)});
    CHECK(b.entries() == 10);
    const auto batches = b.batches_flushed();
    const auto s = std::move(b).finish();
    CHECK(batches >= 3);
    for (std::size_t r = 0; r < s.size(); ++r) {
        CHECK(s.meta(r).source_id == "s" + std::to_string(r / 2));
        CHECK(s.key(r)[0] == float(r / 2));
    }
    BuildOptions unbatched = opt;
    unbatched.batch_size = 1'000;
    DatastoreBuilder c(unbatched);
    for (int i = 0; i < 5; ++i)
        c.add(sample("s" + std::to_string(i), {"x", "y"}), std::vector<float>{float(i), float(-i)});
    CHECK(std::move(c).finish() == s);
}

TEST_CASE("delete_samples") {
    SUBCASE("the only sample") {
        const auto s = store_of({{1, 2}}, {{"a", "b"}});
        const auto r = delete_samples(s, {"s0"});
        CHECK(r.store.size() == 0);
        CHECK(r.removed_samples == 1);
        CHECK(r.removed_entries == 2);
    }
    SUBCASE("nothing: same content, next generation") {
        const auto s = store_of({{1, 2}, {3, 4}}, {{"a"}, {"b"}});
        const auto r = delete_samples(s, {});
        CHECK(r.store.generation() == s.generation() + 1);
        CHECK(r.store.size() == s.size());
        CHECK(std::equal(r.store.keys().begin(), r.store.keys().end(), s.keys().begin()));
        CHECK(r.store.fingerprint() != s.fingerprint());
        const auto again = delete_samples(s, {"missing"});
        CHECK(again.unknown_ids == 1);
        CHECK(again.removed_entries == 0);
    }
    SUBCASE("10 samples, 25 entries, delete 2 samples with 5 entries") {
        // tag counts 1,2,3,4,5,1,2,3,2,2 = 25; samples 2 and 7 carry 3 + 2 = 5
        const std::vector<std::size_t> counts{1, 2, 3, 4, 5, 1, 2, 3, 2, 2};
        std::vector<std::vector<float>> keys;
        std::vector<std::vector<std::string>> tags;
        for (std::size_t i = 0; i < counts.size(); ++i) {
            keys.push_back({float(i), 0});
            std::vector<std::string> t;
            for (std::size_t j = 0; j < counts[i]; ++j) t.push_back("t" + std::to_string(j));
            tags.push_back(t);
        }
        const auto s = store_of(keys, tags);
        REQUIRE(s.size() == 25);
        const auto r = delete_samples(s, {"s2", "s6"});
        CHECK(r.store.size() == 20);
        CHECK(r.removed_entries == 5);
        const auto left = sources(r.store);
        CHECK(left.count("s2") == 0);
        CHECK(left.count("s6") == 0);
        CHECK(left.size() == 8);
        // compaction keeps the surviving rows in order
        std::vector<std::string> order;
        for (std::size_t row = 0; row < r.store.size(); ++row)
            if (order.empty() || order.back() != r.store.meta(row).source_id) order.push_back(r.store.meta(row).source_id);
        CHECK(order == std::vector<std::string>{"s0", "s1", "s3", "s4", "s5", "s7", "s8", "s9"});
        for (std::size_t row = 0; row < r.store.size(); ++row)
            CHECK(r.store.key(row)[0] == float(std::stoi(r.store.meta(row).source_id.substr(1))));
    }
}

TEST_CASE("old index is stale after delete") {
    const auto s = store_of({{0, 0}, {1, 1}}, {{"a"}, {"b"}});
    const FlatIndex index(s);
    CHECK(index.valid_for(s));
    const auto r = delete_samples(s, {"s0"});
    CHECK_FALSE(index.valid_for(r.store));
    const std::vector<float> q{0, 0};
    CHECK_THROWS_AS(index.search(r.store, q, 1), StaleIndexError);
}

TEST_CASE("save/load round trip is bit-exact") {
    testing::TempDir dir;
    auto s = testing::random_store(100, 7, 5);
    s = delete_samples(s, {"r3"}).store;  // non-zero generation
    save(s, dir / "a");
    const auto back = load(dir / "a");
    CHECK(back == s);
    CHECK(back.generation() == s.generation());
    CHECK(back.fingerprint() == s.fingerprint());
    CHECK(std::memcmp(back.keys().data(), s.keys().data(), s.keys().size_bytes()) == 0);
    CHECK(std::memcmp(back.values().data(), s.values().data(), s.values().size_bytes()) == 0);
    for (std::size_t r = 0; r < s.size(); ++r) CHECK(back.meta(r) == s.meta(r));
    save(back, dir / "b");
    for (const char* f : {"header.bin", "keys.f32", "values.u16", "meta.bin"})
        CHECK(testing::slurp(dir / "a" / f) == testing::slurp(dir / "b" / f));
    CHECK(std::filesystem::file_size(dir / "a" / "keys.f32") == s.size() * 7 * 4);
    CHECK(std::filesystem::file_size(dir / "a" / "values.u16") == s.size() * 16 * 2);
    CHECK(std::filesystem::file_size(dir / "a" / "header.bin") == 4 + 4 + 4 + 8 + 8);
}

TEST_CASE("load: truncated keys name expected and actual sizes") {
    testing::TempDir dir;
    const auto s = testing::random_store(10, 4, 1);
    save(s, dir.path());
    std::filesystem::resize_file(dir / "keys.f32", 100);
    try {
        load(dir.path());
        FAIL("expected IoError");
    } catch (const IoError& e) {
        const std::string what = e.what();
        CHECK(what.find("160") != std::string::npos);
        CHECK(what.find("100") != std::string::npos);
    }
}

TEST_CASE("load: corrupt header and missing files") {
    testing::TempDir dir;
    save(testing::random_store(3, 2, 1), dir.path());
    {
        std::fstream f(dir / "header.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.write("XXXX", 4);
    }
    CHECK_THROWS_AS(load(dir.path()), IoError);
    CHECK_THROWS_AS(load(dir / "nowhere"), IoError);
}

TEST_CASE("load: empty store") {
    testing::TempDir dir;
    save(Datastore(8, 16), dir.path());
    const auto s = load(dir.path());
    CHECK(s.empty());
    CHECK(s.dimension() == 8);
    CHECK(s.value_width() == 16);
}

TEST_CASE("StoreHandle swap") {
    const auto one = std::make_shared<const Datastore>(store_of({{0, 0}, {1, 0}}, {{"a"}, {"b"}}));
    const auto two = std::make_shared<const Datastore>(store_of({{0, 0}, {0, 1}}, {{"z"}, {"y"}}));
    StoreHandle handle(2, one);
    const auto pinned = handle.pin();
    handle.swap(two);
    CHECK(handle.pin() == two);
    CHECK(pinned == one);  // reader keeps its generation
    CHECK(pinned->tag(0) == "a");
    handle.swap(handle.pin());
    CHECK(handle.pin() == two);
    CHECK_THROWS_AS(handle.swap(std::make_shared<const Datastore>(Datastore(3, 8))), DimensionMismatch);
    CHECK_THROWS_AS(StoreHandle(3, one), DimensionMismatch);
}

TEST_CASE("StoreHandle: concurrent readers see whole generations") {
    const auto one = std::make_shared<const Datastore>(store_of({{0, 0}, {1, 0}}, {{"a"}, {"a"}}));
    const auto two = std::make_shared<const Datastore>(store_of({{0, 0}, {0, 1}, {2, 2}}, {{"b"}, {"b"}, {"b"}}));
    StoreHandle handle(2, one);
    std::atomic<bool> stop{false};
    std::atomic<int> torn{0};
    std::vector<std::thread> readers;
    for (int t = 0; t < 3; ++t)
        readers.emplace_back([&] {
            while (!stop) {
                const auto s = handle.pin();
                const std::string want = s->size() == 2 ? "a" : "b";
                for (std::size_t r = 0; r < s->size(); ++r) torn += s->tag(r) != want;
            }
        });
    for (int i = 0; i < 2000; ++i) handle.swap(i % 2 ? one : two);
    stop = true;
    for (auto& t : readers) t.join();
    CHECK(torn == 0);
}

}
