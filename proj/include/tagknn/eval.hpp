#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "tagknn/corpus.hpp"
#include "tagknn/datastore.hpp"
#include "tagknn/embed.hpp"
#include "tagknn/index.hpp"
#include "tagknn/predict.hpp"

namespace tagknn {

enum class SetupKind { NonTemporal, WithoutAdaptation, WithAdaptation };

SetupKind parse_setup(std::string_view name);
std::string_view setup_name(SetupKind kind);

struct EvalSetup {
    SetupKind kind = SetupKind::WithAdaptation;
    std::vector<int> buckets;  // bucket indices whose test data is queried; empty means all
};

struct RecallHits {
    std::size_t hits = 0;
    std::size_t gold = 0;
};

/// |top-r of prediction ∩ gold| and |gold|. Throws ValidationError on an empty gold set.
RecallHits recall_at(const Prediction& prediction, const std::vector<std::string>& gold, std::size_t r);

/// Pooled counts. Micro recall is hits / gold; macro averages per-query recall.
struct RecallCounts {
    std::size_t queries = 0;
    std::size_t gold = 0;
    std::size_t hits_at_1 = 0;
    std::size_t hits_at_r = 0;
    double macro_sum_1 = 0.0;
    double macro_sum_r = 0.0;

    void add(const RecallCounts& other);
    double recall_at_1() const { return gold ? static_cast<double>(hits_at_1) / static_cast<double>(gold) : 0.0; }
    double recall_at_r() const { return gold ? static_cast<double>(hits_at_r) / static_cast<double>(gold) : 0.0; }
    double macro_at_1() const { return queries ? macro_sum_1 / static_cast<double>(queries) : 0.0; }
    double macro_at_r() const { return queries ? macro_sum_r / static_cast<double>(queries) : 0.0; }
};

/// One query's outcome, kept when EvalOptions::retain_predictions is set.
struct QueryOutcome {
    std::string sample_id;
    int week = 0;
    std::vector<std::string> gold;
    Prediction prediction;
};

struct WeekRecall {
    int bucket = 0;        // bucket whose test data was queried
    int week = 0;          // test week (NonTemporal: last training week of the bucket)
    int store_bucket = 0;  // bucket whose training data backed the store
    RecallCounts counts;
    double wall_ms = 0.0;
    std::vector<QueryOutcome> outcomes;
};

struct RecallReport {
    SetupKind setup = SetupKind::WithAdaptation;
    std::string method;  // reranker name, or "frequency-baseline"
    std::size_t k = 0;
    std::size_t r = 0;
    std::vector<WeekRecall> weeks;
    RecallCounts total;

    /// Mean over weeks of the per-week micro recall@R.
    double mean_weekly_recall_at_r() const;
};

struct OovWeek {
    int bucket = 0;
    int week = 0;
    std::size_t iv_gold = 0;
    std::size_t oov_gold = 0;
    std::size_t iv_hits = 0;
    std::size_t oov_hits = 0;
    std::optional<double> iv_recall;   // absent when iv_gold == 0
    std::optional<double> oov_recall;  // absent when oov_gold == 0
    double total_recall = 0.0;

    double oov_share() const {
        const auto all = iv_gold + oov_gold;
        return all ? static_cast<double>(oov_gold) / static_cast<double>(all) : 0.0;
    }
};

struct OovReport {
    std::vector<OovWeek> weeks;
};

/// Splits every retained gold tag into in-vocabulary / out-of-vocabulary with
/// respect to `reference_vocab` and scores each class separately (micro, at R).
/// Throws ValidationError when the report has no retained predictions.
OovReport oov_breakdown(const RecallReport& report, const std::unordered_set<std::string>& reference_vocab);

struct DeletionRow {
    double fraction = 0.0;
    std::size_t deleted_samples = 0;
    std::size_t deleted_entries = 0;
    std::size_t store_entries = 0;
    double delete_reindex_ms = 0.0;
    std::size_t violations = 0;  // retrieved neighbors whose source was deleted
    std::vector<WeekRecall> weeks;
    RecallCounts total;
};

struct DeletionReport {
    int bucket = 3;
    std::vector<DeletionRow> rows;
};

struct AblationCell {
    std::size_t k = 0;
    RerankMethod method = RerankMethod::FrequencyBased;
    RecallCounts pooled;
    double mean_weekly_recall = 0.0;
};

struct AblationReport {
    std::size_t r = 5;
    std::vector<AblationCell> cells;

    const AblationCell& at(std::size_t k, RerankMethod method) const;
};

enum class Purpose { Store, Query };

/// Every (week, split) group the harness reads, reported to EvalOptions::audit.
struct DataAccess {
    int week = 0;
    Split split = Split::Train;
    Purpose purpose = Purpose::Store;
    int bucket = 0;  // bucket the read is on behalf of
};

struct EvalOptions {
    QueryParams query;
    IndexConfig index;
    BuildOptions build;
    std::size_t threads = 1;
    bool retain_predictions = false;
    std::function<void(const DataAccess&)> audit;
};

/// Embeds every sample with the hashed provider.
std::vector<Vector> embed_samples(const std::vector<Sample>& samples, const EmbeddingSpec& spec,
                                  std::size_t threads = 1);

/// Orders imported vectors by sample. Throws ValidationError on a missing id.
std::vector<Vector> align_embeddings(const std::vector<Sample>& samples, const std::vector<IdVector>& imported);

/// The temporal evaluation harness: a bucketed, split corpus with one frozen
/// embedding per sample, from which setup-specific datastores are built.
class Experiment {
public:
    Experiment(std::vector<Sample> samples, SplitAssignment splits, std::vector<TimeBucket> buckets,
               std::vector<Vector> embeddings, EvalOptions options);

    const std::vector<Sample>& samples() const noexcept { return samples_; }
    const std::vector<TimeBucket>& buckets() const noexcept { return buckets_; }
    const SplitAssignment& splits() const noexcept { return splits_; }
    const EvalOptions& options() const noexcept { return options_; }
    EvalOptions& options() noexcept { return options_; }

    const TimeBucket& bucket(int index) const;

    /// Train-split samples of the bucket's training weeks, in corpus order.
    std::vector<std::size_t> store_samples(int bucket_index) const;
    /// Test-split samples of the bucket's test week (NonTemporal: of its training weeks).
    std::vector<std::size_t> query_samples(SetupKind kind, int bucket_index) const;

    Datastore build_store(int bucket_index) const;

    /// Distinct training tags of a bucket's store.
    std::unordered_set<std::string> bucket_vocab(int bucket_index) const;

    RecallReport evaluate(const EvalSetup& setup) const;

    /// The frequency baseline under the same setup.
    RecallReport evaluate_baseline(const EvalSetup& setup) const;

    /// Deletes seeded nested fractions of `bucket_index`'s training samples and
    /// evaluates each pruned store on the test weeks of that bucket and later
    /// (without-adaptation semantics). Throws on a fraction outside [0, 1].
    DeletionReport deletion_experiment(const std::vector<double>& fractions, std::uint64_t seed,
                                       int bucket_index = 3) const;

    /// recall@R for every (K, method) pair under the with-adaptation setup. Each
    /// query is retrieved once at max(K) and reranked on prefixes.
    AblationReport ablate_k(const std::vector<std::size_t>& ks,
                            const std::vector<RerankMethod>& methods = {std::begin(kAllRerankMethods),
                                                                        std::end(kAllRerankMethods)}) const;

    /// The sample ids deleted for `fraction` by deletion_experiment().
    std::vector<std::string> deletion_ids(double fraction, std::uint64_t seed, int bucket_index = 3) const;

private:
    struct ServingStore {
        std::shared_ptr<const Datastore> store;
        std::unique_ptr<Index> index;
    };

    ServingStore serve(Datastore store) const;
    std::vector<int> selected_buckets(const EvalSetup& setup) const;
    void audit(int week, Split split, Purpose purpose, int bucket) const;
    WeekRecall run_week(const ServingStore& serving, const std::vector<std::size_t>& queries,
                        const QueryParams& params, int bucket, int week, int store_bucket,
                        const std::unordered_set<std::string>* deleted, std::size_t* violations) const;

    std::vector<Sample> samples_;
    SplitAssignment splits_;
    std::vector<TimeBucket> buckets_;
    std::vector<Vector> embeddings_;
    EvalOptions options_;
    std::vector<Split> split_of_;  // aligned with samples_
};

}  // namespace tagknn
