#include "tagknn/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "json.hpp"

#include "tagknn/error.hpp"
#include "tagknn/hash.hpp"

namespace tagknn {

namespace {

using nlohmann::json;

// Strips leading '#', drops empties and duplicates while keeping first-seen order.
std::vector<std::string> clean_tags(const std::vector<std::string>& raw, std::size_t line) {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (const auto& t : raw) {
        std::string_view v = t;
        while (!v.empty() && v.front() == '#') v.remove_prefix(1);
        if (v.empty()) continue;
        if (!is_valid_utf8(v)) throw ParseError(line, "tag is not valid UTF-8");
        if (seen.emplace(v).second) out.emplace_back(v);
    }
    return out;
}

void validate_text(const std::string& text, std::size_t line) {
    if (!is_valid_utf8(text)) throw ParseError(line, "text is not valid UTF-8");
    if (utf8_length(text) > kMaxTextChars)
        throw ParseError(line, "text longer than " + std::to_string(kMaxTextChars) + " characters");
}

Sample parse_jsonl_record(const std::string& line_text, std::size_t line) {
    json record;
    try {
        record = json::parse(line_text);
    } catch (const json::exception& e) {
        throw ParseError(line, std::string("invalid JSON: ") + e.what());
    }
    if (!record.is_object()) throw ParseError(line, "record is not an object");
    auto field = [&](const char* name) -> const json& {
        const auto it = record.find(name);
        if (it == record.end()) throw ParseError(line, std::string("missing field '") + name + "'");
        return *it;
    };
    const json& id = field("id");
    const json& text = field("text");
    const json& week = field("week");
    const json& tags = field("tags");
    if (!id.is_string()) throw ParseError(line, "'id' must be a string");
    if (!text.is_string()) throw ParseError(line, "'text' must be a string");
    if (!week.is_number_integer()) throw ParseError(line, "'week' must be an integer");
    if (!tags.is_array()) throw ParseError(line, "'tags' must be an array");

    Sample s;
    s.id = id.get<std::string>();
    s.text = text.get<std::string>();
    const auto w = week.get<long long>();
    if (w < 1) throw ValidationError("line " + std::to_string(line) + ": week " + std::to_string(w) + " < 1");
    if (w > 1'000'000) throw ParseError(line, "week out of range");
    s.week = static_cast<int>(w);
    std::vector<std::string> raw;
    for (const auto& t : tags) {
        if (!t.is_string()) throw ParseError(line, "tags must be strings");
        raw.push_back(t.get<std::string>());
    }
    s.tags = clean_tags(raw, line);
    return s;
}

Sample parse_tsv_record(const std::string& line_text, std::size_t line) {
    std::vector<std::string> cols;
    std::size_t start = 0;
    for (int c = 0; c < 3; ++c) {
        const auto tab = line_text.find('\t', start);
        if (tab == std::string::npos) throw ParseError(line, "expected 4 tab-separated columns");
        cols.push_back(line_text.substr(start, tab - start));
        start = tab + 1;
    }
    cols.push_back(line_text.substr(start));

    Sample s;
    s.id = cols[0];
    long long w = 0;
    try {
        std::size_t used = 0;
        w = std::stoll(cols[1], &used);
        if (used != cols[1].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
        throw ParseError(line, "week '" + cols[1] + "' is not an integer");
    }
    if (w < 1) throw ValidationError("line " + std::to_string(line) + ": week " + std::to_string(w) + " < 1");
    s.week = static_cast<int>(w);
    std::vector<std::string> raw;
    std::stringstream tag_stream(cols[2]);
    for (std::string t; std::getline(tag_stream, t, ',');) raw.push_back(t);
    s.tags = clean_tags(raw, line);
    s.text = cols[3];
    return s;
}

}  // namespace

CorpusFormat parse_corpus_format(std::string_view name) {
    if (name == "jsonl" || name == "ndjson") return CorpusFormat::Jsonl;
    if (name == "tsv") return CorpusFormat::Tsv;
    throw ValidationError("unknown corpus format '" + std::string(name) + "'");
}

IngestResult ingest(std::istream& in, CorpusFormat format) {
    IngestResult result;
    std::unordered_set<std::string> ids;
    std::string line_text;
    std::size_t line = 0;
    while (std::getline(in, line_text)) {
        ++line;
        if (!line_text.empty() && line_text.back() == '\r') line_text.pop_back();
        if (line_text.find_first_not_of(" \t") == std::string::npos) continue;
        Sample s = format == CorpusFormat::Jsonl ? parse_jsonl_record(line_text, line)
                                                 : parse_tsv_record(line_text, line);
        if (s.id.empty()) throw ParseError(line, "empty id");
        validate_text(s.text, line);
        if (!ids.insert(s.id).second)
            throw ValidationError("line " + std::to_string(line) + ": duplicate sample id '" + s.id + "'");
        if (s.tags.empty()) {
            ++result.dropped_empty;
            continue;
        }
        result.samples.push_back(std::move(s));
    }
    return result;
}

IngestResult ingest(const std::filesystem::path& path, CorpusFormat format) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open corpus file " + path.string());
    return ingest(in, format);
}

void write_corpus(std::ostream& out, const std::vector<Sample>& samples, CorpusFormat format) {
    for (const auto& s : samples) {
        if (format == CorpusFormat::Jsonl) {
            nlohmann::ordered_json record;
            record["id"] = s.id;
            record["text"] = s.text;
            record["week"] = s.week;
            record["tags"] = s.tags;
            out << record.dump() << '\n';
        } else {
            out << s.id << '\t' << s.week << '\t';
            for (std::size_t i = 0; i < s.tags.size(); ++i) out << (i ? "," : "") << s.tags[i];
            out << '\t' << s.text << '\n';
        }
    }
}

void write_corpus(const std::filesystem::path& path, const std::vector<Sample>& samples, CorpusFormat format) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write corpus file " + path.string());
    write_corpus(out, samples, format);
    if (!out) throw IoError("write failed: " + path.string());
}

std::vector<Sample> filter_top_tags(const std::vector<Sample>& samples, std::size_t per_week_cap) {
    if (per_week_cap < 1) throw ValidationError("per_week_cap must be >= 1");

    std::map<int, std::unordered_map<std::string, std::size_t>> counts;
    for (const auto& s : samples)
        for (const auto& t : s.tags) ++counts[s.week][t];

    std::map<int, std::unordered_set<std::string>> keep;
    for (auto& [week, tag_counts] : counts) {
        std::vector<std::pair<std::string, std::size_t>> ranked(tag_counts.begin(), tag_counts.end());
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            return a.second != b.second ? a.second > b.second : a.first < b.first;
        });
        auto& kept = keep[week];
        for (std::size_t i = 0; i < std::min(per_week_cap, ranked.size()); ++i) kept.insert(ranked[i].first);
    }

    std::vector<Sample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        const auto& kept = keep[s.week];
        Sample filtered{s.id, s.text, s.week, {}};
        for (const auto& t : s.tags)
            if (kept.count(t)) filtered.tags.push_back(t);
        if (!filtered.tags.empty()) out.push_back(std::move(filtered));
    }
    return out;
}

std::string_view split_name(Split split) {
    switch (split) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

Split SplitAssignment::of(const std::string& sample_id) const {
    const auto it = by_id_.find(sample_id);
    if (it == by_id_.end()) throw ValidationError("sample '" + sample_id + "' has no split assignment");
    return it->second;
}

SplitAssignment assign_splits(const std::vector<Sample>& samples, std::uint64_t seed) {
    std::map<int, std::vector<std::pair<std::uint64_t, const std::string*>>> by_week;
    const std::uint64_t salt = mix64(seed ^ 0xA5A5A5A5A5A5A5A5ULL);
    for (const auto& s : samples) by_week[s.week].emplace_back(stable_hash(s.id, salt), &s.id);

    std::unordered_map<std::string, Split> labels;
    labels.reserve(samples.size());
    for (auto& [week, members] : by_week) {
        std::sort(members.begin(), members.end(), [](const auto& a, const auto& b) {
            return a.first != b.first ? a.first < b.first : *a.second < *b.second;
        });
        const std::size_t n = members.size();
        const std::size_t n_val = (n + 5) / 10;
        const std::size_t n_test = (n + 5) / 10;
        const std::size_t n_train = n - n_val - n_test;
        for (std::size_t i = 0; i < n; ++i) {
            const Split split = i < n_train ? Split::Train : (i < n_train + n_val ? Split::Val : Split::Test);
            labels.emplace(*members[i].second, split);
        }
    }
    return SplitAssignment(std::move(labels));
}

std::vector<TimeBucket> bucketize(const std::vector<Sample>& samples, int weeks_per_bucket) {
    if (weeks_per_bucket < 2) throw ValidationError("weeks_per_bucket must be >= 2");
    int max_week = 0;
    for (const auto& s : samples) max_week = std::max(max_week, s.week);
    if (max_week == 0) return {};
    if (max_week % weeks_per_bucket != 0)
        throw ValidationError("corpus spans " + std::to_string(max_week) + " weeks, not a multiple of " +
                              std::to_string(weeks_per_bucket));
    std::vector<TimeBucket> buckets;
    for (int b = 1; b <= max_week / weeks_per_bucket; ++b) {
        TimeBucket bucket;
        bucket.index = b;
        const int first = (b - 1) * weeks_per_bucket + 1;
        for (int w = first; w < first + weeks_per_bucket - 1; ++w) bucket.train_weeks.push_back(w);
        bucket.test_week = first + weeks_per_bucket - 1;
        buckets.push_back(std::move(bucket));
    }
    return buckets;
}

OverlapMatrix overlap_of_sets(const std::vector<std::vector<std::string>>& tag_sets) {
    const std::size_t n = tag_sets.size();
    std::vector<std::unordered_set<std::string>> sets;
    sets.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        sets.emplace_back(tag_sets[k].begin(), tag_sets[k].end());
        if (sets.back().empty()) throw ValidationError("empty tag set at position " + std::to_string(k + 1));
    }
    OverlapMatrix m(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) {
                m(i, j) = 1.0;
                continue;
            }
            std::size_t shared = 0;
            for (const auto& t : sets[j]) shared += sets[i].count(t);
            m(i, j) = static_cast<double>(shared) / static_cast<double>(sets[j].size());
        }
    }
    return m;
}

OverlapMatrix overlap_matrix(const std::vector<TimeBucket>& buckets, const std::vector<Sample>& samples,
                             const SplitAssignment& splits) {
    if (buckets.empty()) throw ValidationError("overlap_matrix needs at least one bucket");
    std::map<int, std::size_t> bucket_of_week;
    for (std::size_t b = 0; b < buckets.size(); ++b)
        for (int w : buckets[b].train_weeks) bucket_of_week[w] = b;

    std::vector<std::unordered_set<std::string>> vocab(buckets.size());
    for (const auto& s : samples) {
        const auto it = bucket_of_week.find(s.week);
        if (it == bucket_of_week.end() || splits.of(s.id) != Split::Train) continue;
        vocab[it->second].insert(s.tags.begin(), s.tags.end());
    }
    std::vector<std::vector<std::string>> sets;
    for (std::size_t b = 0; b < buckets.size(); ++b) {
        if (vocab[b].empty())
            throw ValidationError("bucket " + std::to_string(buckets[b].index) + " has no training tags");
        sets.emplace_back(vocab[b].begin(), vocab[b].end());
    }
    return overlap_of_sets(sets);
}

CorpusStats corpus_stats(const std::vector<Sample>& samples, LengthUnit unit) {
    if (samples.empty()) throw ValidationError("corpus_stats on an empty corpus");
    CorpusStats stats;
    stats.unit = unit;
    std::map<int, std::unordered_set<std::string>> week_tags;
    std::size_t tag_total = 0;
    double tag_len_total = 0.0;
    double text_len_total = 0.0;
    auto token_count = [](std::string_view s) {
        std::size_t n = 0;
        bool in_token = false;
        for (char c : s) {
            const bool space = c == ' ' || c == '\t' || c == '\n' || c == '\r';
            if (!space && !in_token) ++n;
            in_token = !space;
        }
        return n;
    };
    auto length = [&](std::string_view s) {
        return static_cast<double>(unit == LengthUnit::Characters ? utf8_length(s) : token_count(s));
    };
    for (const auto& s : samples) {
        ++stats.samples_per_week[s.week];
        tag_total += s.tags.size();
        text_len_total += length(s.text);
        for (const auto& t : s.tags) {
            tag_len_total += length(t);
            week_tags[s.week].insert(t);
        }
    }
    for (const auto& [week, tags] : week_tags) stats.distinct_tags_per_week[week] = tags.size();
    stats.avg_tags_per_sample = static_cast<double>(tag_total) / static_cast<double>(samples.size());
    stats.avg_tag_length = tag_total ? tag_len_total / static_cast<double>(tag_total) : 0.0;
    stats.avg_text_length = text_len_total / static_cast<double>(samples.size());
    return stats;
}

std::size_t utf8_length(std::string_view s) {
    std::size_t n = 0;
    for (unsigned char c : s)
        if ((c & 0xC0) != 0x80) ++n;
    return n;
}

bool is_valid_utf8(std::string_view s) {
    std::size_t i = 0;
    while (i < s.size()) {
        const auto c = static_cast<unsigned char>(s[i]);
        std::size_t len = 0;
        std::uint32_t cp = 0;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c & 0xE0) == 0xC0) {
            len = 2;
            cp = c & 0x1F;
        } else if ((c & 0xF0) == 0xE0) {
            len = 3;
            cp = c & 0x0F;
        } else if ((c & 0xF8) == 0xF0) {
            len = 4;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + len > s.size()) return false;
        for (std::size_t k = 1; k < len; ++k) {
            const auto cc = static_cast<unsigned char>(s[i + k]);
            if ((cc & 0xC0) != 0x80) return false;
            cp = (cp << 6) | (cc & 0x3F);
        }
        // Overlong forms, surrogates and values past U+10FFFF.
        if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000)) return false;
        if ((cp >= 0xD800 && cp <= 0xDFFF) || cp > 0x10FFFF) return false;
        i += len;
    }
    return true;
}

}  // namespace tagknn
