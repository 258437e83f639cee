#include <cstdlib>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "json.hpp"
#include "support.hpp"
#include "tagknn/error.hpp"

using namespace tagknn;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::vector<std::string> synth_args(const fs::path& out) {
    return {"synth", "--weeks", "8", "--samples-per-week", "300", "--tags-per-week", "40", "--vocab-size", "1500",
            "--churn", "0.3", "--seed", "7", "--output", out.string()};
}

std::vector<nlohmann::json> records(const fs::path& p) {
    std::vector<nlohmann::json> out;
    std::istringstream in(testing::slurp(p));
    for (std::string line; std::getline(in, line);) out.push_back(nlohmann::json::parse(line));
    return out;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("parse_config") {
    std::istringstream in("# manifest\nk = 20\n--r=3  # inline\n\nout-dir = results dir\n");
    const auto c = cli::parse_config(in);
    CHECK(c.at("k") == "20");
    CHECK(c.at("r") == "3");
    CHECK(c.at("out-dir") == "results dir");
    std::istringstream bad("k = 1\nnot a pair\n");
    try {
        cli::parse_config(bad);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
}

TEST_CASE("synth twice gives byte-identical corpora") {
    testing::TempDir dir;
    REQUIRE(run(synth_args(dir / "a.jsonl")).code == 0);
    REQUIRE(run(synth_args(dir / "b.jsonl")).code == 0);
    CHECK(testing::slurp(dir / "a.jsonl") == testing::slurp(dir / "b.jsonl"));
    CHECK(!testing::slurp(dir / "a.jsonl").empty());
}

TEST_CASE("failures exit non-zero with one diagnostic line") {
    testing::TempDir dir;
    for (const auto& args : std::vector<std::vector<std::string>>{
             {},
             {"frobnicate"},
             {"stats", "--corpus", (dir / "missing.jsonl").string()},
             {"stats", "--no-such-flag"},
             {"evaluate", "--corpus", (dir / "missing.jsonl").string(), "--k", "2"},
             {"query"}}) {
        const auto r = run(args);
        CHECK(r.code != 0);
        CHECK(r.err.rfind("error: ", 0) == 0);
        CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
    }
}

TEST_CASE("config file supplies flags, command line wins, unknown keys fail") {
    testing::TempDir dir;
    REQUIRE(run(synth_args(dir / "c.jsonl")).code == 0);
    {
        std::ofstream cfg(dir / "run.cfg");
        cfg << "corpus = " << (dir / "c.jsonl").string() << "\nk = 10\nr = 2\nsetup = with-adaptation\n"
            << "timing = false\nout-dir = " << (dir / "from-config").string() << "\n";
    }
    auto r = run({"--config", (dir / "run.cfg").string(), "evaluate", "--r", "3"});
    REQUIRE(r.code == 0);
    const auto recs = records(dir / "from-config" / "results.jsonl");
    REQUIRE(!recs.empty());
    for (const auto& rec : recs) {
        if (rec["method"] != "frequency-baseline") CHECK(rec["K"] == 10);
        CHECK(rec["R"] == 3);
        CHECK(rec["setup"] == "with-adaptation");
        CHECK(rec["wall_ms"] == 0.0);
    }
    {
        std::ofstream cfg(dir / "bad.cfg");
        cfg << "kay = 10\n";
    }
    r = run({"--config", (dir / "bad.cfg").string(), "stats", "--corpus", (dir / "c.jsonl").string()});
    CHECK(r.code != 0);
    CHECK(r.err.find("kay") != std::string::npos);
}

TEST_CASE("output directory comes from the environment by default") {
    testing::TempDir dir;
    REQUIRE(run(synth_args(dir / "c.jsonl")).code == 0);
    ::setenv(cli::kOutDirEnv, (dir / "env-out").string().c_str(), 1);
    const auto r = run({"stats", "--corpus", (dir / "c.jsonl").string()});
    ::unsetenv(cli::kOutDirEnv);
    REQUIRE(r.code == 0);
    CHECK(fs::exists(dir / "env-out" / "stats.jsonl"));
}

TEST_CASE("churn 1 without adaptation: OOV recall column is zero") {
    testing::TempDir dir;
    auto args = synth_args(dir / "c.jsonl");
    args[10] = "1.0";  // --churn
    REQUIRE(run(args).code == 0);
    const auto r = run({"--out-dir", (dir / "o").string(), "evaluate", "--corpus", (dir / "c.jsonl").string(),
                        "--setup", "without-adaptation", "--baseline", "false"});
    REQUIRE(r.code == 0);
    std::size_t later = 0;
    for (const auto& rec : records(dir / "o" / "results.jsonl")) {
        if (rec["bucket"] == 1) continue;
        ++later;
        CHECK(rec["oov_recall"] == 0.0);
        CHECK(rec["iv_gold"] == 0);
    }
    CHECK(later == 1);
    CHECK(r.out.find("OOV R@5") != std::string::npos);
}

TEST_CASE("build-store, build-index, query, delete without touching inputs") {
    testing::TempDir dir;
    REQUIRE(run(synth_args(dir / "c.jsonl")).code == 0);
    const std::string out = (dir / "o").string();
    REQUIRE(run({"--out-dir", out, "build-store", "--corpus", (dir / "c.jsonl").string(), "--bucket", "1"}).code == 0);
    REQUIRE(run({"--out-dir", out, "build-index", "--store", out + "/store"}).code == 0);
    {
        std::ofstream q(dir / "queries.txt");
        q << "first query\nsecond one here\n";
    }
    const auto r = run({"query", "--store", out + "/store", "--index", out + "/index.tix", "--input",
                        (dir / "queries.txt").string(), "--r", "3", "--method", "actual"});
    REQUIRE(r.code == 0);
    std::istringstream lines(r.out);
    std::string line;
    int n = 0;
    while (std::getline(lines, line)) {
        ++n;
        const auto fields = std::count(line.begin(), line.end(), '\t');
        CHECK(fields == 6);  // query, then 3 x (tag, score)
    }
    CHECK(n == 2);

    const auto before = testing::slurp(dir / "o" / "store" / "keys.f32");
    const Datastore original = load(dir / "o" / "store");
    {
        std::ofstream ids(dir / "ids.txt");
        ids << original.meta(0).source_id << "\n" << original.meta(original.size() - 1).source_id << "\n";
    }
    REQUIRE(run({"build-store", "--from-store", out + "/store", "--delete-ids", (dir / "ids.txt").string(),
                 "--output", out + "/pruned"})
                .code == 0);
    CHECK(testing::slurp(dir / "o" / "store" / "keys.f32") == before);
    const Datastore pruned = load(dir / "o" / "pruned");
    CHECK(pruned.generation() == original.generation() + 1);
    for (std::size_t row = 0; row < pruned.size(); ++row) {
        CHECK(pruned.meta(row).source_id != original.meta(0).source_id);
        CHECK(pruned.meta(row).source_id != original.meta(original.size() - 1).source_id);
    }
    // the old index no longer matches
    const auto stale = run({"query", "--store", out + "/pruned", "--index", out + "/index.tix", "--input",
                            (dir / "queries.txt").string()});
    CHECK(stale.code != 0);
    CHECK(run({"build-store", "--from-store", out + "/store", "--delete-ids", (dir / "ids.txt").string(), "--output",
               out + "/store"})
              .code != 0);
}

TEST_CASE("pipeline twice with timing off writes identical results") {
    testing::TempDir dir;
    REQUIRE(run(synth_args(dir / "c.jsonl")).code == 0);
    for (const char* tag : {"a", "b"}) {
        const std::string out = (dir / tag).string();
        const std::string corpus = (dir / "c.jsonl").string();
        for (const auto& cmd : std::vector<std::vector<std::string>>{
                 {"--out-dir", out, "--threads", tag[0] == 'a' ? "1" : "2", "evaluate", "--corpus", corpus, "--timing", "false", "--plot-data"},
                 {"--out-dir", out, "ablate-k", "--corpus", corpus, "--ks", "5,20,50"},
                 {"--out-dir", out, "delete-sweep", "--corpus", corpus, "--timing", "false", "--bucket", "1"},
                 {"--out-dir", out, "oov", "--corpus", corpus, "--timing", "false"},
                 {"--out-dir", out, "overlap", "--corpus", corpus},
                 {"--out-dir", out, "bucketize", "--corpus", corpus}}) {
            const auto r = run(cmd);
            INFO(r.err);
            REQUIRE(r.code == 0);
        }
    }
    for (const char* f : {"results.jsonl", "evaluate_series.tsv", "ablate_k.jsonl", "delete_sweep.jsonl", "oov.jsonl",
                          "overlap.tsv", "buckets.tsv"}) {
        CAPTURE(f);
        const auto a = testing::slurp(dir / "a" / f);
        CHECK(!a.empty());
        CHECK(a == testing::slurp(dir / "b" / f));
    }
}

}
