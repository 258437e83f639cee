#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "tagknn/corpus.hpp"
#include "tagknn/embed.hpp"
#include "tagknn/eval.hpp"
#include "tagknn/index.hpp"
#include "tagknn/predict.hpp"

namespace tagknn::cli {

/// Environment variable naming the default output directory.
inline constexpr const char* kOutDirEnv = "TAGKNN_OUT_DIR";

/// Everything a subcommand can be configured with. Filled from the config
/// file first, then from flags.
struct RunConfig {
    std::filesystem::path out_dir;
    std::size_t threads = 1;

    // corpus
    std::filesystem::path corpus;
    std::string format = "jsonl";
    std::size_t top_tags = 0;  // 0: no weekly cap
    int weeks_per_bucket = 4;
    std::uint64_t split_seed = 1;
    std::string length_unit = "chars";

    SynthConfig synth;

    // embedder
    EmbeddingSpec embedding;
    std::string embedder = "hashed";
    std::filesystem::path vectors;

    // store / index
    BuildOptions build;
    std::filesystem::path store;
    std::filesystem::path index_path;
    std::filesystem::path from_store;
    std::filesystem::path delete_ids;
    int bucket = 1;
    std::string index_kind = "flat";
    IvfOptions ivf;

    // query / eval
    QueryParams query;
    std::string method = "frequency";
    std::filesystem::path input;
    std::filesystem::path query_vectors;
    std::filesystem::path output;
    std::string setup = "all";
    bool baseline = true;
    bool plot_data = false;
    bool timing = true;
    std::vector<std::size_t> ks = {20, 50, 100, 1024, 2048};
    std::vector<std::string> methods = {"frequency", "default", "actual"};
    std::vector<double> fractions = {0.0, 0.017, 0.2, 0.5, 0.8};
    std::uint64_t delete_seed = 17;
    int delete_bucket = 3;
    int reference_bucket = 1;
};

/// Parses "key = value" lines; '#' starts a comment. Throws ValidationError
/// (with the line number) on a line that is not a pair.
std::map<std::string, std::string> parse_config(std::istream& in);

/// Entry point. Returns 0 on success; otherwise prints a one-line diagnostic to
/// `err` and returns non-zero.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tagknn::cli
