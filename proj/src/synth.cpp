#include <algorithm>
#include <cmath>
#include <cstdio>
#include <unordered_set>

#include "tagknn/corpus.hpp"
#include "tagknn/error.hpp"
#include "tagknn/random.hpp"

namespace tagknn {

namespace {

// Generator shape. Fixed so that a seed fully determines the corpus.
constexpr std::size_t kSignatureWords = 6;
constexpr std::size_t kMinTokens = 8;
constexpr std::size_t kMaxTokens = 16;
constexpr double kBackgroundShare = 0.3;
constexpr double kPopularitySigma = 1.0;
constexpr std::size_t kMaxTagsPerSample = 10;

constexpr std::string_view kConsonants = "bdfgklmnprstvz";
constexpr std::string_view kVowels = "aeiou";

std::string pseudo_word(Rng& rng, std::size_t syllables) {
    std::string w;
    for (std::size_t i = 0; i < syllables; ++i) {
        w += kConsonants[rng.below(kConsonants.size())];
        w += kVowels[rng.below(kVowels.size())];
    }
    return w;
}

struct SynthTag {
    std::string name;
    double popularity = 1.0;
    std::vector<std::size_t> words;      // vocabulary indices
    std::vector<double> word_cumulative;  // prefix sums of word weights
};

class Generator {
public:
    explicit Generator(const SynthConfig& config) : config_(config), rng_(config.seed) {
        build_vocabulary();
        for (std::size_t i = 0; i < config_.tags_per_week; ++i) active_.push_back(new_tag());
    }

    std::vector<Sample> run() {
        std::vector<Sample> corpus;
        corpus.reserve(config_.samples_per_week * static_cast<std::size_t>(config_.weeks));
        for (int week = 1; week <= config_.weeks; ++week) {
            if (week > 1) churn();
            refresh_popularity();
            for (std::size_t i = 0; i < config_.samples_per_week; ++i) corpus.push_back(sample(week, i));
        }
        return corpus;
    }

private:
    void build_vocabulary() {
        std::unordered_set<std::string> seen;
        vocab_.reserve(config_.vocab_size);
        while (vocab_.size() < config_.vocab_size) {
            auto w = pseudo_word(rng_, 2 + rng_.below(3));
            if (seen.insert(w).second) vocab_.push_back(std::move(w));
        }
        // Zipf-shaped background distribution over the shared vocabulary.
        background_cumulative_.resize(vocab_.size());
        double total = 0.0;
        for (std::size_t r = 0; r < vocab_.size(); ++r) {
            total += 1.0 / static_cast<double>(r + 1);
            background_cumulative_[r] = total;
        }
    }

    SynthTag new_tag() {
        SynthTag tag;
        tag.name = pseudo_word(rng_, 2) + std::to_string(serial_++);
        tag.popularity = std::exp(kPopularitySigma * rng_.normal());
        std::unordered_set<std::size_t> chosen;
        const std::size_t words = std::min(kSignatureWords, vocab_.size());
        double total = 0.0;
        while (tag.words.size() < words) {
            const auto w = static_cast<std::size_t>(rng_.below(vocab_.size()));
            if (!chosen.insert(w).second) continue;
            tag.words.push_back(w);
            total += 0.5 + rng_.uniform();
            tag.word_cumulative.push_back(total);
        }
        return tag;
    }

    void churn() {
        const auto replaced = static_cast<std::size_t>(
            std::llround(config_.churn_rate * static_cast<double>(active_.size())));
        std::vector<std::size_t> slots(active_.size());
        for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
        // Partial Fisher-Yates: the first `replaced` slots are a uniform draw.
        for (std::size_t i = 0; i < replaced; ++i) {
            const auto j = i + static_cast<std::size_t>(rng_.below(slots.size() - i));
            std::swap(slots[i], slots[j]);
            active_[slots[i]] = new_tag();
        }
    }

    void refresh_popularity() {
        popularity_cumulative_.resize(active_.size());
        double total = 0.0;
        for (std::size_t i = 0; i < active_.size(); ++i) {
            total += active_[i].popularity;
            popularity_cumulative_[i] = total;
        }
    }

    Sample sample(int week, std::size_t ordinal) {
        Sample s;
        char id[32];
        std::snprintf(id, sizeof id, "w%02d-%06zu", week, ordinal);
        s.id = id;
        s.week = week;

        const std::size_t cap = std::min(kMaxTagsPerSample, active_.size());
        const auto count = std::clamp<std::size_t>(
            static_cast<std::size_t>(rng_.poisson(config_.tags_per_sample_mean)), 1, cap);
        std::vector<std::size_t> picked;
        while (picked.size() < count) {
            const std::size_t t = rng_.weighted(popularity_cumulative_);
            if (std::find(picked.begin(), picked.end(), t) == picked.end()) picked.push_back(t);
        }
        for (std::size_t t : picked) s.tags.push_back(active_[t].name);

        const std::size_t tokens = kMinTokens + static_cast<std::size_t>(rng_.below(kMaxTokens - kMinTokens + 1));
        for (std::size_t k = 0; k < tokens; ++k) {
            std::size_t word;
            if (rng_.uniform() < kBackgroundShare) {
                word = rng_.weighted(background_cumulative_);
            } else {
                const SynthTag& tag = active_[picked[rng_.below(picked.size())]];
                word = tag.words[rng_.weighted(tag.word_cumulative)];
            }
            if (k) s.text += ' ';
            s.text += vocab_[word];
        }
        return s;
    }

    SynthConfig config_;
    Rng rng_;
    std::vector<std::string> vocab_;
    std::vector<double> background_cumulative_;
    std::vector<SynthTag> active_;
    std::vector<double> popularity_cumulative_;
    std::size_t serial_ = 0;
};

}  // namespace

std::vector<Sample> synth_generate(const SynthConfig& config) {
    if (config.weeks < 1 || config.tags_per_week < 1 || config.samples_per_week < 1 || config.vocab_size < 1)
        throw ValidationError("synth: weeks, tags_per_week, samples_per_week and vocab_size must be >= 1");
    if (!(config.churn_rate >= 0.0 && config.churn_rate <= 1.0))
        throw ValidationError("synth: churn_rate must be in [0, 1]");
    if (!(config.tags_per_sample_mean > 0.0) || config.tags_per_sample_mean > 50.0)
        throw ValidationError("synth: tags_per_sample_mean must be in (0, 50]");
    return Generator(config).run();
}

}  // namespace tagknn
