#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tagknn {

/// Longest text accepted, in Unicode code points.
inline constexpr std::size_t kMaxTextChars = 280;

/// One tagged post. Tags are distinct, non-empty and carry no leading '#'.
struct Sample {
    std::string id;
    std::string text;
    int week = 1;
    std::vector<std::string> tags;

    bool operator==(const Sample&) const = default;
};

enum class CorpusFormat {
    Jsonl,  // {"id":..., "text":..., "week":..., "tags":[...]} per line
    Tsv,    // id <TAB> week <TAB> comma-separated tags <TAB> text
};

CorpusFormat parse_corpus_format(std::string_view name);

struct IngestResult {
    std::vector<Sample> samples;
    std::size_t dropped_empty = 0;  // records whose tag set was empty after cleanup
};

/// Reads and validates a corpus. Throws ParseError (with line number) on a
/// malformed record and ValidationError on duplicate ids or week < 1.
IngestResult ingest(std::istream& in, CorpusFormat format);
IngestResult ingest(const std::filesystem::path& path, CorpusFormat format);

/// Writes samples in the given format; ingest() reads them back unchanged.
void write_corpus(std::ostream& out, const std::vector<Sample>& samples,
                  CorpusFormat format = CorpusFormat::Jsonl);
void write_corpus(const std::filesystem::path& path, const std::vector<Sample>& samples,
                  CorpusFormat format = CorpusFormat::Jsonl);

/// Keeps, per week, only the `per_week_cap` most frequent tags (one count per
/// sample/tag pair, ties broken lexicographically) and drops samples left untagged.
std::vector<Sample> filter_top_tags(const std::vector<Sample>& samples, std::size_t per_week_cap);

enum class Split : std::uint8_t { Train, Val, Test };

std::string_view split_name(Split split);

/// Per-sample split labels, aligned with the sample vector they were computed from.
/// Within each week samples are ordered by a seeded hash of their id; the first
/// 80% go to Train, the next 10% to Val and the rest to Test.
class SplitAssignment {
public:
    SplitAssignment() = default;
    explicit SplitAssignment(std::unordered_map<std::string, Split> by_id)
        : by_id_(std::move(by_id)) {}

    Split of(const std::string& sample_id) const;
    bool contains(const std::string& sample_id) const { return by_id_.count(sample_id) != 0; }
    std::size_t size() const { return by_id_.size(); }

private:
    std::unordered_map<std::string, Split> by_id_;
};

SplitAssignment assign_splits(const std::vector<Sample>& samples, std::uint64_t seed);

/// A run of consecutive weeks; the last one is held out for testing.
struct TimeBucket {
    int index = 1;                 // 1-based
    std::vector<int> train_weeks;  // consecutive
    int test_week = 0;             // train_weeks.back() + 1

    bool operator==(const TimeBucket&) const = default;
};

/// Tiles weeks 1..max_week into buckets of `weeks_per_bucket`. Throws when the
/// corpus span is not a whole number of buckets.
std::vector<TimeBucket> bucketize(const std::vector<Sample>& samples, int weeks_per_bucket = 4);

/// Row i, column j: |V_i ∩ V_j| / |V_j| where V_k is the set of distinct
/// training-split tags of bucket k. Row bucket's coverage of the column bucket.
class OverlapMatrix {
public:
    explicit OverlapMatrix(std::size_t n) : n_(n), values_(n * n, 0.0) {}

    std::size_t size() const { return n_; }
    double operator()(std::size_t i, std::size_t j) const { return values_[i * n_ + j]; }
    double& operator()(std::size_t i, std::size_t j) { return values_[i * n_ + j]; }

private:
    std::size_t n_;
    std::vector<double> values_;
};

OverlapMatrix overlap_matrix(const std::vector<TimeBucket>& buckets, const std::vector<Sample>& samples,
                             const SplitAssignment& splits);

/// Same definition applied to arbitrary tag sets (one per row/column).
OverlapMatrix overlap_of_sets(const std::vector<std::vector<std::string>>& tag_sets);

enum class LengthUnit { Characters, WhitespaceTokens };

struct CorpusStats {
    std::map<int, std::size_t> samples_per_week;
    std::map<int, std::size_t> distinct_tags_per_week;
    double avg_tags_per_sample = 0.0;
    double avg_tag_length = 0.0;
    double avg_text_length = 0.0;
    LengthUnit unit = LengthUnit::Characters;
};

CorpusStats corpus_stats(const std::vector<Sample>& samples, LengthUnit unit = LengthUnit::Characters);

struct SynthConfig {
    int weeks = 48;
    std::size_t tags_per_week = 400;
    double churn_rate = 0.3;
    std::size_t samples_per_week = 5000;
    double tags_per_sample_mean = 3.0;
    std::size_t vocab_size = 20000;
    std::uint64_t seed = 7;
};

/// Drifting synthetic corpus. Every tag owns a fixed distribution over a small set
/// of vocabulary words; sample text mixes the distributions of its tags with
/// background words, so text is predictive of tags. Each week after the first
/// replaces round(churn_rate * tags_per_week) active tags with never-seen ones.
std::vector<Sample> synth_generate(const SynthConfig& config);

/// Number of Unicode code points in a UTF-8 string (invalid bytes count as one each).
std::size_t utf8_length(std::string_view s);
bool is_valid_utf8(std::string_view s);

}  // namespace tagknn
