#include "tagknn/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "tagknn/error.hpp"
#include "tagknn/parallel.hpp"
#include "tagknn/random.hpp"

namespace tagknn {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

struct QueryScore {
    RecallCounts counts;
    std::size_t violations = 0;
};

RecallCounts score_query(const Prediction& prediction, const std::vector<std::string>& gold, std::size_t r) {
    RecallCounts c;
    const auto at_1 = recall_at(prediction, gold, 1);
    const auto at_r = recall_at(prediction, gold, r);
    c.queries = 1;
    c.gold = at_r.gold;
    c.hits_at_1 = at_1.hits;
    c.hits_at_r = at_r.hits;
    c.macro_sum_1 = static_cast<double>(at_1.hits) / static_cast<double>(at_1.gold);
    c.macro_sum_r = static_cast<double>(at_r.hits) / static_cast<double>(at_r.gold);
    return c;
}

}  // namespace

SetupKind parse_setup(std::string_view name) {
    if (name == "non-temporal") return SetupKind::NonTemporal;
    if (name == "without-adaptation" || name == "wo-adaptation") return SetupKind::WithoutAdaptation;
    if (name == "with-adaptation" || name == "w-adaptation") return SetupKind::WithAdaptation;
    throw ValidationError("unknown evaluation setup '" + std::string(name) + "'");
}

std::string_view setup_name(SetupKind kind) {
    switch (kind) {
        case SetupKind::NonTemporal: return "non-temporal";
        case SetupKind::WithoutAdaptation: return "without-adaptation";
        case SetupKind::WithAdaptation: return "with-adaptation";
    }
    return "?";
}

RecallHits recall_at(const Prediction& prediction, const std::vector<std::string>& gold, std::size_t r) {
    if (gold.empty()) throw ValidationError("recall_at: empty gold set");
    RecallHits out;
    out.gold = gold.size();
    const std::size_t n = std::min(r, prediction.size());
    for (std::size_t i = 0; i < n; ++i)
        if (std::find(gold.begin(), gold.end(), prediction.tags[i].tag) != gold.end()) ++out.hits;
    return out;
}

void RecallCounts::add(const RecallCounts& other) {
    queries += other.queries;
    gold += other.gold;
    hits_at_1 += other.hits_at_1;
    hits_at_r += other.hits_at_r;
    macro_sum_1 += other.macro_sum_1;
    macro_sum_r += other.macro_sum_r;
}

double RecallReport::mean_weekly_recall_at_r() const {
    if (weeks.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& w : weeks) sum += w.counts.recall_at_r();
    return sum / static_cast<double>(weeks.size());
}

const AblationCell& AblationReport::at(std::size_t k, RerankMethod method) const {
    for (const auto& c : cells)
        if (c.k == k && c.method == method) return c;
    throw ValidationError("no ablation cell for K=" + std::to_string(k) + " " + std::string(rerank_name(method)));
}

OovReport oov_breakdown(const RecallReport& report, const std::unordered_set<std::string>& reference_vocab) {
    OovReport out;
    for (const auto& w : report.weeks) {
        if (w.outcomes.size() != w.counts.queries)
            throw ValidationError("oov_breakdown needs a report with retained predictions");
        OovWeek o;
        o.bucket = w.bucket;
        o.week = w.week;
        for (const auto& q : w.outcomes) {
            const std::size_t n = std::min(report.r, q.prediction.size());
            for (const auto& g : q.gold) {
                bool hit = false;
                for (std::size_t i = 0; i < n && !hit; ++i) hit = q.prediction.tags[i].tag == g;
                if (reference_vocab.count(g)) {
                    ++o.iv_gold;
                    o.iv_hits += hit;
                } else {
                    ++o.oov_gold;
                    o.oov_hits += hit;
                }
            }
        }
        if (o.iv_gold) o.iv_recall = static_cast<double>(o.iv_hits) / static_cast<double>(o.iv_gold);
        if (o.oov_gold) o.oov_recall = static_cast<double>(o.oov_hits) / static_cast<double>(o.oov_gold);
        const auto gold = o.iv_gold + o.oov_gold;
        o.total_recall = gold ? static_cast<double>(o.iv_hits + o.oov_hits) / static_cast<double>(gold) : 0.0;
        out.weeks.push_back(o);
    }
    return out;
}

std::vector<Vector> embed_samples(const std::vector<Sample>& samples, const EmbeddingSpec& spec, std::size_t threads) {
    spec.validate();
    std::vector<Vector> out(samples.size());
    parallel_for(samples.size(), threads, [&](std::size_t i) { out[i] = embed_text(samples[i].text, spec); });
    return out;
}

std::vector<Vector> align_embeddings(const std::vector<Sample>& samples, const std::vector<IdVector>& imported) {
    std::unordered_map<std::string_view, const Vector*> by_id;
    by_id.reserve(imported.size());
    for (const auto& v : imported) by_id.emplace(v.id, &v.values);
    std::vector<Vector> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        const auto it = by_id.find(s.id);
        if (it == by_id.end()) throw ValidationError("no imported vector for sample '" + s.id + "'");
        out.push_back(*it->second);
    }
    return out;
}

Experiment::Experiment(std::vector<Sample> samples, SplitAssignment splits, std::vector<TimeBucket> buckets,
                       std::vector<Vector> embeddings, EvalOptions options)
    : samples_(std::move(samples)), splits_(std::move(splits)), buckets_(std::move(buckets)),
      embeddings_(std::move(embeddings)), options_(std::move(options)) {
    if (embeddings_.size() != samples_.size())
        throw ValidationError("experiment: " + std::to_string(embeddings_.size()) + " embeddings for " +
                              std::to_string(samples_.size()) + " samples");
    for (const auto& e : embeddings_)
        if (e.size() != options_.build.dimension) throw DimensionMismatch(options_.build.dimension, e.size());
    if (buckets_.empty()) throw ValidationError("experiment needs at least one time bucket");
    split_of_.reserve(samples_.size());
    for (const auto& s : samples_) split_of_.push_back(splits_.of(s.id));
}

const TimeBucket& Experiment::bucket(int index) const {
    for (const auto& b : buckets_)
        if (b.index == index) return b;
    throw ValidationError("no time bucket " + std::to_string(index));
}

void Experiment::audit(int week, Split split, Purpose purpose, int bucket) const {
    if (options_.audit) options_.audit(DataAccess{week, split, purpose, bucket});
}

std::vector<std::size_t> Experiment::store_samples(int bucket_index) const {
    const auto& b = bucket(bucket_index);
    for (int w : b.train_weeks) audit(w, Split::Train, Purpose::Store, bucket_index);
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        if (split_of_[i] != Split::Train) continue;
        if (std::find(b.train_weeks.begin(), b.train_weeks.end(), samples_[i].week) != b.train_weeks.end())
            out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> Experiment::query_samples(SetupKind kind, int bucket_index) const {
    const auto& b = bucket(bucket_index);
    std::vector<int> weeks = kind == SetupKind::NonTemporal ? b.train_weeks : std::vector<int>{b.test_week};
    for (int w : weeks) audit(w, Split::Test, Purpose::Query, bucket_index);
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        if (split_of_[i] != Split::Test) continue;
        if (std::find(weeks.begin(), weeks.end(), samples_[i].week) != weeks.end()) out.push_back(i);
    }
    return out;
}

Datastore Experiment::build_store(int bucket_index) const {
    DatastoreBuilder builder(options_.build);
    for (const std::size_t i : store_samples(bucket_index)) builder.add(samples_[i], embeddings_[i]);
    return std::move(builder).finish();
}

std::unordered_set<std::string> Experiment::bucket_vocab(int bucket_index) const {
    std::unordered_set<std::string> vocab;
    for (const std::size_t i : store_samples(bucket_index)) vocab.insert(samples_[i].tags.begin(), samples_[i].tags.end());
    return vocab;
}

Experiment::ServingStore Experiment::serve(Datastore store) const {
    ServingStore s;
    s.store = std::make_shared<const Datastore>(std::move(store));
    IndexConfig config = options_.index;
    config.ivf.threads = options_.threads;
    s.index = make_index(*s.store, config);
    return s;
}

std::vector<int> Experiment::selected_buckets(const EvalSetup& setup) const {
    if (!setup.buckets.empty()) {
        for (int b : setup.buckets) (void)bucket(b);
        return setup.buckets;
    }
    std::vector<int> all;
    for (const auto& b : buckets_) all.push_back(b.index);
    return all;
}

WeekRecall Experiment::run_week(const ServingStore& serving, const std::vector<std::size_t>& queries,
                                const QueryParams& params, int bucket_index, int week, int store_bucket,
                                const std::unordered_set<std::string>* deleted, std::size_t* violations) const {
    const auto start = Clock::now();
    std::vector<QueryScore> scores(queries.size());
    std::vector<QueryOutcome> outcomes(options_.retain_predictions ? queries.size() : 0);
    const Datastore& store = *serving.store;
    parallel_for(queries.size(), options_.threads, [&](std::size_t q) {
        const Sample& s = samples_[queries[q]];
        const Vector& query = embeddings_[queries[q]];
        Prediction prediction;
        if (!store.empty()) {
            const auto neighbors = retrieve(query, store, *serving.index, params.k, params.nprobe);
            if (deleted)
                for (const auto& n : neighbors.neighbors) scores[q].violations += deleted->count(n.source_id);
            prediction = rerank(params.method, query, neighbors, store, params.r);
        }
        scores[q].counts = score_query(prediction, s.tags, params.r);
        if (options_.retain_predictions) outcomes[q] = {s.id, s.week, s.tags, std::move(prediction)};
    });
    WeekRecall w;
    w.bucket = bucket_index;
    w.week = week;
    w.store_bucket = store_bucket;
    for (const auto& sc : scores) {
        w.counts.add(sc.counts);
        if (violations) *violations += sc.violations;
    }
    w.outcomes = std::move(outcomes);
    w.wall_ms = elapsed_ms(start);
    return w;
}

RecallReport Experiment::evaluate(const EvalSetup& setup) const {
    const QueryParams& params = options_.query;
    params.validate();
    RecallReport report;
    report.setup = setup.kind;
    report.method = std::string(rerank_name(params.method));
    report.k = params.k;
    report.r = params.r;

    std::unique_ptr<ServingStore> frozen;
    if (setup.kind == SetupKind::WithoutAdaptation) frozen = std::make_unique<ServingStore>(serve(build_store(1)));

    for (const int b : selected_buckets(setup)) {
        const auto& tb = bucket(b);
        const int week = setup.kind == SetupKind::NonTemporal ? tb.train_weeks.back() : tb.test_week;
        if (frozen) {
            report.weeks.push_back(run_week(*frozen, query_samples(setup.kind, b), params, b, week, 1, nullptr, nullptr));
        } else {
            const auto serving = serve(build_store(b));
            report.weeks.push_back(run_week(serving, query_samples(setup.kind, b), params, b, week, b, nullptr, nullptr));
        }
        report.total.add(report.weeks.back().counts);
    }
    return report;
}

RecallReport Experiment::evaluate_baseline(const EvalSetup& setup) const {
    const QueryParams& params = options_.query;
    RecallReport report;
    report.setup = setup.kind;
    report.method = "frequency-baseline";
    report.k = 0;
    report.r = params.r;
    auto baseline_for = [&](int b) {
        std::vector<Sample> train;
        for (const std::size_t i : store_samples(b)) train.push_back(samples_[i]);
        return frequency_baseline(train, params.r);
    };
    std::optional<Prediction> frozen;
    if (setup.kind == SetupKind::WithoutAdaptation) frozen = baseline_for(1);
    for (const int b : selected_buckets(setup)) {
        const auto start = Clock::now();
        const auto& tb = bucket(b);
        const Prediction prediction = frozen ? *frozen : baseline_for(b);
        WeekRecall w;
        w.bucket = b;
        w.week = setup.kind == SetupKind::NonTemporal ? tb.train_weeks.back() : tb.test_week;
        w.store_bucket = frozen ? 1 : b;
        for (const std::size_t i : query_samples(setup.kind, b)) {
            w.counts.add(score_query(prediction, samples_[i].tags, params.r));
            if (options_.retain_predictions)
                w.outcomes.push_back({samples_[i].id, samples_[i].week, samples_[i].tags, prediction});
        }
        w.wall_ms = elapsed_ms(start);
        report.total.add(w.counts);
        report.weeks.push_back(std::move(w));
    }
    return report;
}

std::vector<std::string> Experiment::deletion_ids(double fraction, std::uint64_t seed, int bucket_index) const {
    if (!(fraction >= 0.0 && fraction <= 1.0))
        throw ValidationError("deletion fraction " + std::to_string(fraction) + " outside [0, 1]");
    auto members = store_samples(bucket_index);
    Rng rng(seed);
    rng.shuffle(std::span<std::size_t>(members));
    const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size())));
    std::vector<std::string> ids;
    ids.reserve(count);
    for (std::size_t i = 0; i < count; ++i) ids.push_back(samples_[members[i]].id);
    return ids;
}

DeletionReport Experiment::deletion_experiment(const std::vector<double>& fractions, std::uint64_t seed,
                                               int bucket_index) const {
    for (double f : fractions)
        if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("deletion fraction " + std::to_string(f) + " outside [0, 1]");
    const QueryParams& params = options_.query;
    params.validate();

    const Datastore base = build_store(bucket_index);
    DeletionReport report;
    report.bucket = bucket_index;
    for (const double f : fractions) {
        const auto ids_list = deletion_ids(f, seed, bucket_index);
        const std::unordered_set<std::string> ids(ids_list.begin(), ids_list.end());

        const auto start = Clock::now();
        DeleteResult deleted = delete_samples(base, ids);
        DeletionRow row;
        row.fraction = f;
        row.deleted_samples = deleted.removed_samples;
        row.deleted_entries = deleted.removed_entries;
        row.store_entries = deleted.store.size();
        const auto serving = serve(std::move(deleted.store));
        row.delete_reindex_ms = elapsed_ms(start);

        for (const auto& tb : buckets_) {
            if (tb.index < bucket_index) continue;
            row.weeks.push_back(run_week(serving, query_samples(SetupKind::WithoutAdaptation, tb.index), params,
                                         tb.index, tb.test_week, bucket_index, &ids, &row.violations));
            row.total.add(row.weeks.back().counts);
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

AblationReport Experiment::ablate_k(const std::vector<std::size_t>& ks, const std::vector<RerankMethod>& methods) const {
    if (ks.empty() || methods.empty()) throw ValidationError("ablate_k needs at least one K and one method");
    const std::size_t r = options_.query.r;
    for (std::size_t k : ks) QueryParams{k, r, RerankMethod::FrequencyBased, options_.query.nprobe}.validate();
    const std::size_t k_max = *std::max_element(ks.begin(), ks.end());

    AblationReport report;
    report.r = r;
    for (std::size_t k : ks)
        for (RerankMethod m : methods) report.cells.push_back({k, m, {}, 0.0});
    const std::size_t cells = report.cells.size();

    std::size_t weeks = 0;
    for (const auto& tb : buckets_) {
        const auto serving = serve(build_store(tb.index));
        const Datastore& store = *serving.store;
        const auto queries = query_samples(SetupKind::WithAdaptation, tb.index);
        std::vector<std::vector<RecallCounts>> per_query(queries.size(), std::vector<RecallCounts>(cells));
        parallel_for(queries.size(), options_.threads, [&](std::size_t q) {
            const Sample& s = samples_[queries[q]];
            const Vector& query = embeddings_[queries[q]];
            SearchResult neighbors;
            if (!store.empty()) neighbors = retrieve(query, store, *serving.index, k_max, options_.query.nprobe);
            for (std::size_t c = 0; c < cells; ++c) {
                const auto& cell = report.cells[c];
                const Prediction p = store.empty() ? Prediction{}
                                                   : rerank(cell.method, query, neighbors, store, r, cell.k);
                per_query[q][c] = score_query(p, s.tags, r);
            }
        });
        ++weeks;
        for (std::size_t c = 0; c < cells; ++c) {
            RecallCounts week_counts;
            for (const auto& pq : per_query) week_counts.add(pq[c]);
            report.cells[c].pooled.add(week_counts);
            report.cells[c].mean_weekly_recall += week_counts.recall_at_r();
        }
    }
    for (auto& c : report.cells) c.mean_weekly_recall /= static_cast<double>(weeks);
    return report;
}

}  // namespace tagknn
