#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <array>
#include <optional>
#include <unordered_map>
#include <unordered_set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "tagknn/datastore.hpp"
#include "tagknn/error.hpp"
#include "tagknn/parallel.hpp"

namespace tagknn::cli {

namespace fs = std::filesystem;
using Record = nlohmann::ordered_json;

std::map<std::string, std::string> parse_config(std::istream& in) {
    std::map<std::string, std::string> values;
    std::string line;
    std::size_t number = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
        ++number;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ParseError(number, "expected 'key = value' in config");
        auto key = trim(line.substr(0, eq));
        auto value = trim(line.substr(eq + 1));
        if (key.empty()) throw ParseError(number, "empty key in config");
        while (!key.empty() && key.front() == '-') key.erase(0, 1);
        values[key] = value;
    }
    return values;
}

namespace {

std::string fmt(const char* pattern, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, pattern, v);
    return buf;
}

fs::path output_dir(const RunConfig& cfg) {
    fs::path dir = cfg.out_dir;
    if (dir.empty()) {
        const char* env = std::getenv(kOutDirEnv);
        dir = env && *env ? fs::path(env) : fs::path("tagknn-out");
    }
    fs::create_directories(dir);
    return dir;
}

fs::path output_file(const RunConfig& cfg, const std::string& default_name) {
    if (!cfg.output.empty()) {
        if (cfg.output.has_parent_path()) fs::create_directories(cfg.output.parent_path());
        return cfg.output;
    }
    return output_dir(cfg) / default_name;
}

void require_path(const fs::path& p, const char* flag) {
    if (p.empty()) throw ValidationError(std::string("missing required ") + flag);
    if (!fs::exists(p)) throw IoError(std::string(flag) + " path does not exist: " + p.string());
}

EmbeddingSpec embedding_spec(const RunConfig& cfg) {
    EmbeddingSpec spec = cfg.embedding;
    spec.provider = parse_embedding_provider(cfg.embedder);
    spec.validate();
    return spec;
}

std::vector<Sample> load_corpus(const RunConfig& cfg, std::ostream& err) {
    require_path(cfg.corpus, "--corpus");
    auto result = ingest(cfg.corpus, parse_corpus_format(cfg.format));
    if (result.dropped_empty)
        err << "warning: dropped " << result.dropped_empty << " record(s) with no tags\n";
    if (cfg.top_tags > 0) return filter_top_tags(result.samples, cfg.top_tags);
    return std::move(result.samples);
}

std::vector<Vector> corpus_embeddings(const RunConfig& cfg, const std::vector<Sample>& samples) {
    const auto spec = embedding_spec(cfg);
    if (spec.provider == EmbeddingProvider::Imported) {
        require_path(cfg.vectors, "--vectors");
        return align_embeddings(samples, import_vectors(cfg.vectors, spec.dimension));
    }
    return embed_samples(samples, spec, cfg.threads);
}

void write_records(const fs::path& path, const std::vector<Record>& records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& r : records) out << r.dump() << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

Experiment make_experiment(const RunConfig& cfg, std::ostream& err, bool retain) {
    auto samples = load_corpus(cfg, err);
    auto splits = assign_splits(samples, cfg.split_seed);
    auto buckets = bucketize(samples, cfg.weeks_per_bucket);
    auto embeddings = corpus_embeddings(cfg, samples);
    EvalOptions options;
    options.query = cfg.query;
    options.query.method = parse_rerank_method(cfg.method);
    options.query.validate();
    options.index.kind = parse_index_kind(cfg.index_kind);
    options.index.ivf = cfg.ivf;
    options.build = cfg.build;
    options.build.dimension = embedding_spec(cfg).dimension;
    options.threads = cfg.threads;
    options.retain_predictions = retain;
    return Experiment(std::move(samples), std::move(splits), std::move(buckets), std::move(embeddings), options);
}

Record week_record(const RunConfig& cfg, std::string_view setup, std::string_view method, std::size_t k,
                   std::size_t r, const WeekRecall& w) {
    Record rec;
    rec["setup"] = setup;
    rec["bucket"] = w.bucket;
    rec["week"] = w.week;
    rec["store_bucket"] = w.store_bucket;
    rec["K"] = k;
    rec["method"] = method;
    rec["R"] = r;
    rec["hits"] = w.counts.hits_at_r;
    rec["gold"] = w.counts.gold;
    rec["recall"] = w.counts.recall_at_r();
    rec["hits_at_1"] = w.counts.hits_at_1;
    rec["recall_at_1"] = w.counts.recall_at_1();
    rec["macro_recall"] = w.counts.macro_at_r();
    rec["queries"] = w.counts.queries;
    rec["wall_ms"] = cfg.timing ? w.wall_ms : 0.0;
    return rec;
}

void add_oov_fields(Record& rec, const OovWeek& o) {
    rec["iv_hits"] = o.iv_hits;
    rec["iv_gold"] = o.iv_gold;
    rec["oov_hits"] = o.oov_hits;
    rec["oov_gold"] = o.oov_gold;
    rec["iv_recall"] = o.iv_recall ? Record(*o.iv_recall) : Record(nullptr);
    rec["oov_recall"] = o.oov_recall ? Record(*o.oov_recall) : Record(nullptr);
    rec["oov_share"] = o.oov_share();
}

std::string optional_pct(const std::optional<double>& v) { return v ? fmt("%7.2f", 100.0 * *v) : "      -"; }

void write_series(const fs::path& path, const std::vector<Record>& records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << "series\tweek\trecall_at_1\trecall\n";
    for (const auto& r : records) {
        std::string series = r["setup"].get<std::string>() + ":" + r["method"].get<std::string>();
        if (r.contains("fraction")) series += ":" + fmt("%.3f", r["fraction"].get<double>());
        out << series << '\t' << r["week"].get<int>() << '\t' << r["recall_at_1"].get<double>() << '\t'
            << r["recall"].get<double>() << '\n';
    }
}

// ---------------------------------------------------------------- subcommands

int cmd_synth(const RunConfig& cfg, std::ostream& out, std::ostream&) {
    const auto samples = synth_generate(cfg.synth);
    const auto path = output_file(cfg, "corpus.jsonl");
    write_corpus(path, samples, parse_corpus_format(cfg.format));
    out << "wrote " << samples.size() << " samples over " << cfg.synth.weeks << " weeks to " << path.string() << '\n';
    return 0;
}

int cmd_ingest(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const auto samples = load_corpus(cfg, err);
    const auto path = output_file(cfg, "ingested.jsonl");
    write_corpus(path, samples, CorpusFormat::Jsonl);
    out << "ingested " << samples.size() << " samples to " << path.string() << '\n';
    return 0;
}

int cmd_bucketize(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const auto samples = load_corpus(cfg, err);
    const auto splits = assign_splits(samples, cfg.split_seed);
    const auto buckets = bucketize(samples, cfg.weeks_per_bucket);
    std::map<int, std::array<std::size_t, 3>> per_week;
    for (const auto& s : samples) ++per_week[s.week][static_cast<std::size_t>(splits.of(s.id))];

    const auto path = output_file(cfg, "buckets.tsv");
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError("cannot write " + path.string());
    file << "bucket\ttrain_weeks\ttest_week\ttrain_samples\ttest_week_test_samples\n";
    out << "bucket  train weeks      test week  store samples  test queries\n";
    for (const auto& b : buckets) {
        std::size_t train = 0;
        std::string weeks;
        for (int w : b.train_weeks) {
            train += per_week[w][0];
            weeks += (weeks.empty() ? "" : ",") + std::to_string(w);
        }
        const std::size_t test = per_week[b.test_week][2];
        file << b.index << '\t' << weeks << '\t' << b.test_week << '\t' << train << '\t' << test << '\n';
        char line[128];
        std::snprintf(line, sizeof line, "%6d  %-15s  %9d  %13zu  %12zu\n", b.index, weeks.c_str(), b.test_week,
                      train, test);
        out << line;
    }
    return 0;
}

int cmd_build_store(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const fs::path target = cfg.output.empty() ? output_dir(cfg) / "store" : cfg.output;
    if (!cfg.from_store.empty()) {
        require_path(cfg.from_store, "--from-store");
        require_path(cfg.delete_ids, "--delete-ids");
        if (fs::exists(target) && fs::equivalent(target, cfg.from_store))
            throw ValidationError("--output must differ from --from-store; inputs are never modified");
        const Datastore source = load(cfg.from_store);
        std::unordered_set<std::string> ids;
        std::ifstream in(cfg.delete_ids);
        for (std::string line; std::getline(in, line);)
            if (!line.empty()) ids.insert(line);
        const auto result = delete_samples(source, ids);
        save(result.store, target);
        out << "deleted " << result.removed_samples << " samples (" << result.removed_entries << " entries, "
            << result.unknown_ids << " unknown ids); " << result.store.size() << " entries at generation "
            << result.store.generation() << " in " << target.string() << '\n';
        return 0;
    }

    const auto samples = load_corpus(cfg, err);
    std::vector<const Sample*> members;
    if (cfg.bucket == 0) {
        for (const auto& s : samples) members.push_back(&s);
    } else {
        const auto splits = assign_splits(samples, cfg.split_seed);
        const auto buckets = bucketize(samples, cfg.weeks_per_bucket);
        const auto it = std::find_if(buckets.begin(), buckets.end(), [&](const auto& b) { return b.index == cfg.bucket; });
        if (it == buckets.end()) throw ValidationError("no time bucket " + std::to_string(cfg.bucket));
        for (const auto& s : samples)
            if (splits.of(s.id) == Split::Train &&
                std::find(it->train_weeks.begin(), it->train_weeks.end(), s.week) != it->train_weeks.end())
                members.push_back(&s);
    }

    const auto spec = embedding_spec(cfg);
    BuildOptions build = cfg.build;
    build.dimension = spec.dimension;
    DatastoreBuilder builder(build);
    if (spec.provider == EmbeddingProvider::Imported) {
        require_path(cfg.vectors, "--vectors");
        std::unordered_map<std::string, Vector> by_id;
        for (auto& v : import_vectors(cfg.vectors, spec.dimension)) by_id.emplace(std::move(v.id), std::move(v.values));
        for (const Sample* s : members) {
            const auto found = by_id.find(s->id);
            if (found == by_id.end()) throw ValidationError("no imported vector for sample '" + s->id + "'");
            builder.add(*s, found->second);
        }
    } else {
        std::vector<Vector> vectors(members.size());
        parallel_for(members.size(), cfg.threads, [&](std::size_t i) { vectors[i] = embed_text(members[i]->text, spec); });
        for (std::size_t i = 0; i < members.size(); ++i) builder.add(*members[i], vectors[i]);
    }
    const std::size_t batches = builder.batches_flushed();
    const Datastore store = std::move(builder).finish();
    save(store, target);
    out << "built store with " << store.size() << " entries from " << members.size() << " samples (E="
        << store.dimension() << ", V=" << store.value_width() << ", batches=" << std::max<std::size_t>(batches, store.empty() ? 0 : 1)
        << ") in " << target.string() << '\n';
    return 0;
}

int cmd_build_index(const RunConfig& cfg, std::ostream& out, std::ostream&) {
    require_path(cfg.store, "--store");
    const Datastore store = load(cfg.store);
    IvfOptions options = cfg.ivf;
    options.threads = cfg.threads;
    const auto index = build_ivf(store, options);
    const auto path = output_file(cfg, "index.tix");
    index.save(path);
    std::size_t largest = 0;
    for (const auto& l : index.lists()) largest = std::max(largest, l.size());
    out << "built IVF index: nlist=" << index.nlist() << " nprobe=" << index.nprobe() << " rows=" << index.rows()
        << " largest list=" << largest << " generation=" << index.generation() << " -> " << path.string() << '\n';
    return 0;
}

void print_prediction(std::ostream& out, const std::string& label, const Prediction& p) {
    out << label;
    for (const auto& t : p.tags) out << '\t' << t.tag << '\t' << fmt("%.6g", t.score);
    out << '\n';
}

int cmd_query(const RunConfig& cfg, std::ostream& out, std::ostream&) {
    require_path(cfg.store, "--store");
    QueryParams params = cfg.query;
    params.method = parse_rerank_method(cfg.method);
    params.validate();
    const Datastore store = load(cfg.store);
    std::unique_ptr<Index> index;
    if (!cfg.index_path.empty()) {
        require_path(cfg.index_path, "--index");
        index = std::make_unique<IvfIndex>(IvfIndex::load(cfg.index_path, store, cfg.query.nprobe));
    } else {
        index = std::make_unique<FlatIndex>(store);
    }

    std::ostringstream buffer;
    if (!cfg.query_vectors.empty()) {
        for (const auto& v : import_vectors(cfg.query_vectors, store.dimension()))
            print_prediction(buffer, v.id, predict_vector(v.values, store, *index, params));
    } else {
        EmbeddingSpec spec = embedding_spec(cfg);
        if (spec.provider != EmbeddingProvider::HashedNgram)
            throw ValidationError("text queries need --embedder hashed; use --query-vectors for imported embeddings");
        std::ifstream file;
        std::istream* in = &std::cin;
        if (!cfg.input.empty()) {
            require_path(cfg.input, "--input");
            file.open(cfg.input, std::ios::binary);
            in = &file;
        }
        for (std::string line; std::getline(*in, line);) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            print_prediction(buffer, line, predict(line, store, *index, spec, params));
        }
    }
    out << buffer.str();
    if (!cfg.output.empty()) {
        std::ofstream file(output_file(cfg, ""), std::ios::binary | std::ios::trunc);
        file << buffer.str();
    }
    return 0;
}

std::vector<SetupKind> selected_setups(const std::string& name) {
    if (name == "all") return {SetupKind::NonTemporal, SetupKind::WithoutAdaptation, SetupKind::WithAdaptation};
    return {parse_setup(name)};
}

int cmd_evaluate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const Experiment ex = make_experiment(cfg, err, true);
    const auto vocab = ex.bucket_vocab(cfg.reference_bucket);
    std::vector<Record> records;
    out << "setup               method              bucket  week  queries   gold    R@1     R@" << cfg.query.r
        << "    IV R@" << cfg.query.r << "  OOV R@" << cfg.query.r << '\n';
    auto emit = [&](const RecallReport& report) {
        const auto oov = oov_breakdown(report, vocab);
        for (std::size_t i = 0; i < report.weeks.size(); ++i) {
            const auto& w = report.weeks[i];
            auto rec = week_record(cfg, setup_name(report.setup), report.method, report.k, report.r, w);
            add_oov_fields(rec, oov.weeks[i]);
            records.push_back(std::move(rec));
            char line[160];
            std::snprintf(line, sizeof line, "%-19s %-19s %6d %5d %8zu %6zu %7.2f %7.2f ",
                          std::string(setup_name(report.setup)).c_str(), report.method.c_str(), w.bucket, w.week,
                          w.counts.queries, w.counts.gold, 100.0 * w.counts.recall_at_1(),
                          100.0 * w.counts.recall_at_r());
            out << line << optional_pct(oov.weeks[i].iv_recall) << ' ' << optional_pct(oov.weeks[i].oov_recall)
                << '\n';
        }
        char line[160];
        std::snprintf(line, sizeof line, "%-19s %-19s    all   all %8zu %6zu %7.2f %7.2f  (macro %.2f / %.2f)\n",
                      std::string(setup_name(report.setup)).c_str(), report.method.c_str(), report.total.queries,
                      report.total.gold, 100.0 * report.total.recall_at_1(), 100.0 * report.total.recall_at_r(),
                      100.0 * report.total.macro_at_1(), 100.0 * report.total.macro_at_r());
        out << line;
    };
    for (const SetupKind kind : selected_setups(cfg.setup)) {
        emit(ex.evaluate({kind, {}}));
        if (cfg.baseline) emit(ex.evaluate_baseline({kind, {}}));
    }
    write_records(output_file(cfg, "results.jsonl"), records);
    if (cfg.plot_data) write_series(output_dir(cfg) / "evaluate_series.tsv", records);
    return 0;
}

int cmd_ablate_k(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const Experiment ex = make_experiment(cfg, err, false);
    std::vector<RerankMethod> methods;
    for (const auto& m : cfg.methods) methods.push_back(parse_rerank_method(m));
    const auto report = ex.ablate_k(cfg.ks, methods);
    std::vector<Record> records;
    out << "recall@" << report.r << " (with-adaptation, pooled over test weeks)\n" << "K/method          ";
    for (std::size_t k : cfg.ks) out << fmt("%9.0f", static_cast<double>(k));
    out << '\n';
    for (RerankMethod m : methods) {
        char label[32];
        std::snprintf(label, sizeof label, "%-18s", std::string(rerank_name(m)).c_str());
        out << label;
        for (std::size_t k : cfg.ks) {
            const auto& cell = report.at(k, m);
            out << fmt("%9.2f", 100.0 * cell.pooled.recall_at_r());
            Record rec;
            rec["setup"] = "with-adaptation";
            rec["week"] = nullptr;
            rec["K"] = k;
            rec["method"] = rerank_name(m);
            rec["R"] = report.r;
            rec["hits"] = cell.pooled.hits_at_r;
            rec["gold"] = cell.pooled.gold;
            rec["recall"] = cell.pooled.recall_at_r();
            rec["mean_weekly_recall"] = cell.mean_weekly_recall;
            rec["macro_recall"] = cell.pooled.macro_at_r();
            rec["queries"] = cell.pooled.queries;
            rec["wall_ms"] = 0.0;
            records.push_back(std::move(rec));
        }
        out << '\n';
    }
    write_records(output_file(cfg, "ablate_k.jsonl"), records);
    return 0;
}

int cmd_delete_sweep(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const Experiment ex = make_experiment(cfg, err, false);
    const auto report = ex.deletion_experiment(cfg.fractions, cfg.delete_seed, cfg.delete_bucket);
    std::vector<Record> records;
    out << "deletion sweep on bucket " << report.bucket << " (random draws; recall@" << cfg.query.r << ")\n";
    out << "fraction  deleted  entries  reindex_ms  violations  recall by test week\n";
    for (const auto& row : report.rows) {
        char line[128];
        std::snprintf(line, sizeof line, "%8.3f %8zu %8zu %11.1f %11zu ", row.fraction, row.deleted_samples,
                      row.store_entries, cfg.timing ? row.delete_reindex_ms : 0.0, row.violations);
        out << line;
        for (const auto& w : row.weeks) {
            out << " w" << w.week << '=' << fmt("%.2f", 100.0 * w.counts.recall_at_r());
            auto rec = week_record(cfg, "without-adaptation", rerank_name(parse_rerank_method(cfg.method)), cfg.query.k, cfg.query.r, w);
            rec["fraction"] = row.fraction;
            rec["deleted_samples"] = row.deleted_samples;
            rec["delete_reindex_ms"] = cfg.timing ? row.delete_reindex_ms : 0.0;
            rec["violations"] = row.violations;
            records.push_back(std::move(rec));
        }
        out << '\n';
    }
    write_records(output_file(cfg, "delete_sweep.jsonl"), records);
    if (cfg.plot_data) write_series(output_dir(cfg) / "delete_sweep_series.tsv", records);
    return 0;
}

int cmd_oov(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const Experiment ex = make_experiment(cfg, err, true);
    const auto report = ex.evaluate({SetupKind::WithAdaptation, {}});
    const auto oov = oov_breakdown(report, ex.bucket_vocab(cfg.reference_bucket));
    std::vector<Record> records;
    out << "OOV vs bucket " << cfg.reference_bucket << " training vocabulary (with-adaptation, recall@" << report.r
        << ")\n week  IV gold  OOV gold  OOV share   IV R    OOV R  total R\n";
    for (std::size_t i = 0; i < oov.weeks.size(); ++i) {
        const auto& o = oov.weeks[i];
        char line[128];
        std::snprintf(line, sizeof line, "%5d %8zu %9zu %10.3f ", o.week, o.iv_gold, o.oov_gold, o.oov_share());
        out << line << optional_pct(o.iv_recall) << ' ' << optional_pct(o.oov_recall) << fmt(" %7.2f", 100.0 * o.total_recall)
            << '\n';
        auto rec = week_record(cfg, "with-adaptation", report.method, report.k, report.r, report.weeks[i]);
        add_oov_fields(rec, o);
        records.push_back(std::move(rec));
    }
    write_records(output_file(cfg, "oov.jsonl"), records);
    if (cfg.plot_data) write_series(output_dir(cfg) / "oov_series.tsv", records);
    return 0;
}

int cmd_overlap(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const auto samples = load_corpus(cfg, err);
    const auto splits = assign_splits(samples, cfg.split_seed);
    const auto buckets = bucketize(samples, cfg.weeks_per_bucket);
    const auto m = overlap_matrix(buckets, samples, splits);
    const auto path = output_file(cfg, "overlap.tsv");
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError("cannot write " + path.string());
    out << "row bucket's coverage of column bucket's training tags\n     ";
    for (std::size_t j = 0; j < m.size(); ++j) out << fmt("%6.0f", static_cast<double>(j + 1));
    out << '\n';
    for (std::size_t i = 0; i < m.size(); ++i) {
        out << fmt("%4.0f ", static_cast<double>(i + 1));
        for (std::size_t j = 0; j < m.size(); ++j) {
            out << fmt("%6.3f", m(i, j));
            file << (j ? "\t" : "") << m(i, j);
        }
        out << '\n';
        file << '\n';
    }
    return 0;
}

int cmd_stats(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const auto samples = load_corpus(cfg, err);
    LengthUnit unit;
    if (cfg.length_unit == "chars") unit = LengthUnit::Characters;
    else if (cfg.length_unit == "tokens") unit = LengthUnit::WhitespaceTokens;
    else throw ValidationError("--length-unit must be chars or tokens");
    const auto stats = corpus_stats(samples, unit);
    Record rec;
    rec["samples"] = samples.size();
    rec["weeks"] = stats.samples_per_week.size();
    rec["avg_tags_per_sample"] = stats.avg_tags_per_sample;
    rec["avg_tag_length"] = stats.avg_tag_length;
    rec["avg_text_length"] = stats.avg_text_length;
    rec["length_unit"] = cfg.length_unit;
    double week_samples = 0, week_tags = 0;
    for (const auto& [w, n] : stats.samples_per_week) week_samples += static_cast<double>(n);
    for (const auto& [w, n] : stats.distinct_tags_per_week) week_tags += static_cast<double>(n);
    const auto weeks = static_cast<double>(stats.samples_per_week.size());
    rec["avg_samples_per_week"] = week_samples / weeks;
    rec["avg_distinct_tags_per_week"] = week_tags / weeks;
    out << "samples                  " << samples.size() << '\n'
        << "weeks                    " << stats.samples_per_week.size() << '\n'
        << "samples / week           " << fmt("%.1f", week_samples / weeks) << '\n'
        << "distinct tags / week     " << fmt("%.1f", week_tags / weeks) << '\n'
        << "tags / sample            " << fmt("%.3f", stats.avg_tags_per_sample) << '\n'
        << "tag length (" << cfg.length_unit << ")" << std::string(cfg.length_unit == "chars" ? 6 : 5, ' ')
        << fmt("%.2f", stats.avg_tag_length) << '\n'
        << "text length (" << cfg.length_unit << ")" << std::string(cfg.length_unit == "chars" ? 5 : 4, ' ')
        << fmt("%.2f", stats.avg_text_length) << '\n';
    write_records(output_file(cfg, "stats.jsonl"), {rec});
    return 0;
}

// ---------------------------------------------------------------- wiring

void add_corpus_options(CLI::App* sub, RunConfig& cfg) {
    sub->add_option("--corpus", cfg.corpus, "Corpus file");
    sub->add_option("--format", cfg.format, "Corpus format: jsonl or tsv")->capture_default_str();
    sub->add_option("--top-tags", cfg.top_tags, "Keep only the N most frequent tags per week (0: all)")
        ->capture_default_str();
}

void add_split_options(CLI::App* sub, RunConfig& cfg) {
    sub->add_option("--weeks-per-bucket", cfg.weeks_per_bucket, "Weeks per time bucket")->capture_default_str();
    sub->add_option("--split-seed", cfg.split_seed, "Seed of the train/val/test split")->capture_default_str();
}

void add_embedder_options(CLI::App* sub, RunConfig& cfg) {
    sub->add_option("--embedder", cfg.embedder, "hashed or imported")->capture_default_str();
    sub->add_option("--dim", cfg.embedding.dimension, "Embedding dimension E")->capture_default_str();
    sub->add_option("--ngram-min", cfg.embedding.ngram_min, "Shortest character n-gram")->capture_default_str();
    sub->add_option("--ngram-max", cfg.embedding.ngram_max, "Longest character n-gram")->capture_default_str();
    sub->add_option("--normalize", cfg.embedding.normalize, "L2-normalize hashed embeddings")->capture_default_str();
    sub->add_option("--vectors", cfg.vectors, "Vector file with one embedding per sample (imported embedder)");
}

void add_index_options(CLI::App* sub, RunConfig& cfg) {
    sub->add_option("--nlist", cfg.ivf.nlist, "IVF lists (0: ceil(sqrt(N)))")->capture_default_str();
    sub->add_option("--iterations", cfg.ivf.iterations, "k-means iterations")->capture_default_str();
    sub->add_option("--index-seed", cfg.ivf.seed, "k-means seed")->capture_default_str();
}

void add_query_options(CLI::App* sub, RunConfig& cfg) {
    sub->add_option("--k", cfg.query.k, "Neighbors retrieved")->capture_default_str();
    sub->add_option("--r", cfg.query.r, "Tags returned")->capture_default_str();
    sub->add_option("--method", cfg.method, "frequency, default or actual")->capture_default_str();
    sub->add_option("--nprobe", cfg.query.nprobe, "IVF lists scanned (0: index default)")->capture_default_str();
}

void add_eval_options(CLI::App* sub, RunConfig& cfg) {
    add_corpus_options(sub, cfg);
    add_split_options(sub, cfg);
    add_embedder_options(sub, cfg);
    add_index_options(sub, cfg);
    add_query_options(sub, cfg);
    sub->add_option("--index", cfg.index_kind, "Search index: flat or ivf")->capture_default_str();
    sub->add_option("--value-width", cfg.build.value_width, "Value slots per entry")->capture_default_str();
    sub->add_option("--output", cfg.output, "Results file");
    sub->add_option("--timing", cfg.timing, "Record wall-clock times (false writes 0)")->capture_default_str();
    sub->add_option("--reference-bucket", cfg.reference_bucket, "Bucket defining the IV vocabulary")
        ->capture_default_str();
    sub->add_flag("--plot-data", cfg.plot_data, "Also write per-week series for plotting");
}

std::vector<std::string> with_config(CLI::App& app, const std::vector<std::string>& args) {
    std::string config_path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
        else if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
    }
    if (config_path.empty()) return args;
    std::ifstream in(config_path);
    if (!in) throw IoError("cannot open config file " + config_path);
    const auto values = parse_config(in);

    CLI::App* selected = nullptr;
    for (const auto& a : args)
        if (auto* sub = app.get_subcommand_no_throw(a)) {
            selected = sub;
            break;
        }
    auto given = [&](const std::string& key) {
        const std::string flag = "--" + key;
        return std::any_of(args.begin(), args.end(),
                           [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
    };
    std::vector<std::string> out = args;
    for (const auto& [key, value] : values) {
        const std::string flag = "--" + key;
        bool known = app.get_option_no_throw(flag) != nullptr;
        for (const auto* sub : app.get_subcommands({})) known = known || sub->get_option_no_throw(flag) != nullptr;
        if (!known) throw ValidationError("invalid config: unknown key '" + key + "' in " + config_path);
        const bool applies = app.get_option_no_throw(flag) != nullptr ||
                             (selected && selected->get_option_no_throw(flag) != nullptr);
        if (applies && !given(key) && key != "config") out.push_back(flag + "=" + value);
    }
    return out;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    RunConfig cfg;
    CLI::App app{"Retrieval-based multi-label tag prediction over swappable datastores", "tagknn"};
    app.fallthrough();
    app.require_subcommand(1);
    std::string config_file;
    app.add_option("--config", config_file, "key = value file supplying defaults for any flag");
    app.add_option("--threads", cfg.threads, "Worker threads (0: hardware concurrency)")->capture_default_str();
    app.add_option("--out-dir", cfg.out_dir, std::string("Output directory (default $") + kOutDirEnv + " or ./tagknn-out)");

    auto* synth = app.add_subcommand("synth", "Generate a drifting synthetic corpus");
    synth->add_option("--weeks", cfg.synth.weeks)->capture_default_str();
    synth->add_option("--tags-per-week", cfg.synth.tags_per_week)->capture_default_str();
    synth->add_option("--churn", cfg.synth.churn_rate, "Fraction of active tags replaced each week")->capture_default_str();
    synth->add_option("--samples-per-week", cfg.synth.samples_per_week)->capture_default_str();
    synth->add_option("--tags-per-sample", cfg.synth.tags_per_sample_mean)->capture_default_str();
    synth->add_option("--vocab-size", cfg.synth.vocab_size)->capture_default_str();
    synth->add_option("--seed", cfg.synth.seed)->capture_default_str();
    synth->add_option("--format", cfg.format)->capture_default_str();
    synth->add_option("--output", cfg.output, "Corpus file (default <out-dir>/corpus.jsonl)");

    auto* ingest_cmd = app.add_subcommand("ingest", "Validate and normalize a corpus");
    add_corpus_options(ingest_cmd, cfg);
    ingest_cmd->add_option("--output", cfg.output, "Normalized corpus (default <out-dir>/ingested.jsonl)");

    auto* bucketize_cmd = app.add_subcommand("bucketize", "Show time buckets and split sizes");
    add_corpus_options(bucketize_cmd, cfg);
    add_split_options(bucketize_cmd, cfg);
    bucketize_cmd->add_option("--output", cfg.output);

    auto* build_store = app.add_subcommand("build-store", "Build a datastore from a bucket, or delete from one");
    add_corpus_options(build_store, cfg);
    add_split_options(build_store, cfg);
    add_embedder_options(build_store, cfg);
    build_store->add_option("--bucket", cfg.bucket, "Bucket whose training data is stored (0: whole corpus)")
        ->capture_default_str();
    build_store->add_option("--value-width", cfg.build.value_width)->capture_default_str();
    build_store->add_option("--batch-size", cfg.build.batch_size)->capture_default_str();
    build_store->add_option("--from-store", cfg.from_store, "Existing store to delete from");
    build_store->add_option("--delete-ids", cfg.delete_ids, "File of sample ids to delete, one per line");
    build_store->add_option("--output", cfg.output, "Store directory (default <out-dir>/store)");

    auto* build_index = app.add_subcommand("build-index", "Train an IVF index over a datastore");
    build_index->add_option("--store", cfg.store)->required();
    add_index_options(build_index, cfg);
    build_index->add_option("--output", cfg.output, "Index file (default <out-dir>/index.tix)");

    auto* query = app.add_subcommand("query", "Predict tags for each input line");
    query->add_option("--store", cfg.store)->required();
    query->add_option("--index", cfg.index_path, "IVF index file (default: exact flat search)");
    add_query_options(query, cfg);
    add_embedder_options(query, cfg);
    query->add_option("--input", cfg.input, "Text queries, one per line (default stdin)");
    query->add_option("--query-vectors", cfg.query_vectors, "Vector file of precomputed query embeddings");
    query->add_option("--output", cfg.output);

    auto* evaluate = app.add_subcommand("evaluate", "Temporal evaluation");
    add_eval_options(evaluate, cfg);
    evaluate->add_option("--setup", cfg.setup, "non-temporal, without-adaptation, with-adaptation or all")
        ->capture_default_str();
    evaluate->add_option("--baseline", cfg.baseline, "Also score the frequency baseline")->capture_default_str();

    auto* ablate = app.add_subcommand("ablate-k", "Recall over the K x rerank grid");
    add_eval_options(ablate, cfg);
    ablate->add_option("--ks", cfg.ks)->delimiter(',')->capture_default_str();
    ablate->add_option("--methods", cfg.methods)->delimiter(',')->capture_default_str();

    auto* sweep = app.add_subcommand("delete-sweep", "Deletion experiment");
    add_eval_options(sweep, cfg);
    sweep->add_option("--fractions", cfg.fractions)->delimiter(',')->capture_default_str();
    sweep->add_option("--delete-seed", cfg.delete_seed)->capture_default_str();
    sweep->add_option("--bucket", cfg.delete_bucket, "Bucket whose store is pruned")->capture_default_str();

    auto* oov = app.add_subcommand("oov", "In/out-of-vocabulary recall breakdown");
    add_eval_options(oov, cfg);

    auto* overlap = app.add_subcommand("overlap", "Tag-set overlap between buckets");
    add_corpus_options(overlap, cfg);
    add_split_options(overlap, cfg);
    overlap->add_option("--output", cfg.output);

    auto* stats = app.add_subcommand("stats", "Corpus statistics");
    add_corpus_options(stats, cfg);
    stats->add_option("--length-unit", cfg.length_unit, "chars or tokens")->capture_default_str();
    stats->add_option("--output", cfg.output);

    try {
        auto full = with_config(app, args);
        std::reverse(full.begin(), full.end());
        app.parse(full);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    }

    try {
        const std::string name = app.get_subcommands().front()->get_name();
        if (name == "synth") return cmd_synth(cfg, out, err);
        if (name == "ingest") return cmd_ingest(cfg, out, err);
        if (name == "bucketize") return cmd_bucketize(cfg, out, err);
        if (name == "build-store") return cmd_build_store(cfg, out, err);
        if (name == "build-index") return cmd_build_index(cfg, out, err);
        if (name == "query") return cmd_query(cfg, out, err);
        if (name == "evaluate") return cmd_evaluate(cfg, out, err);
        if (name == "ablate-k") return cmd_ablate_k(cfg, out, err);
        if (name == "delete-sweep") return cmd_delete_sweep(cfg, out, err);
        if (name == "oov") return cmd_oov(cfg, out, err);
        if (name == "overlap") return cmd_overlap(cfg, out, err);
        if (name == "stats") return cmd_stats(cfg, out, err);
        err << "error: unknown subcommand " << name << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::string what = e.what();
        std::replace(what.begin(), what.end(), '\n', ' ');
        err << "error: " << what << '\n';
        return 1;
    }
}

}  // namespace tagknn::cli
