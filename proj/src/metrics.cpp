#include "langadapt/metrics.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace langadapt::metrics {

double pearson(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw Error("pearson: length mismatch (" + std::to_string(x.size()) + " vs " + std::to_string(y.size()) + ")");
    }
    if (x.size() < 2) {
        throw UndefinedMetric("pearson: need at least two points");
    }
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0;
    double sxx = 0.0;
    double syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) {
        throw UndefinedMetric("pearson: zero variance");
    }
    const double r = sxy / std::sqrt(sxx * syy);
    return std::clamp(r, -1.0, 1.0);
}

double accuracy(std::span<const int> predicted, std::span<const int> gold) {
    if (predicted.size() != gold.size()) {
        throw Error("accuracy: length mismatch");
    }
    if (gold.empty()) {
        throw Error("accuracy: no examples");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        hits += predicted[i] == gold[i];
    }
    return static_cast<double>(hits) / static_cast<double>(gold.size());
}

std::vector<Entity> extract_entities(std::span<const std::string> tags) {
    std::vector<Entity> out;
    bool open = false;
    Entity current;
    const auto close = [&](std::size_t at) {
        if (open) {
            current.end = at;
            out.push_back(current);
            open = false;
        }
    };
    for (std::size_t i = 0; i < tags.size(); ++i) {
        const std::string& t = tags[i];
        if (t == "O") {
            close(i);
            continue;
        }
        if (t.size() < 3 || t[1] != '-' || (t[0] != 'B' && t[0] != 'I')) {
            throw Error("invalid BIO tag '" + t + "'");
        }
        const std::string type = t.substr(2);
        if (t[0] == 'I' && open && current.type == type) {
            continue;
        }
        close(i);
        current = Entity{type, i, i};
        open = true;
    }
    close(tags.size());
    return out;
}

Scores score_counts(std::size_t correct, std::size_t predicted, std::size_t gold) {
    Scores s;
    s.correct = correct;
    s.predicted = predicted;
    s.support = gold;
    if (predicted == 0 && gold == 0) {
        s.precision = s.recall = s.f1 = 1.0;
        return s;
    }
    s.precision = predicted ? static_cast<double>(correct) / static_cast<double>(predicted) : 0.0;
    s.recall = gold ? static_cast<double>(correct) / static_cast<double>(gold) : 0.0;
    s.f1 = s.precision + s.recall > 0.0 ? 2.0 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    return s;
}

namespace {

struct Counts {
    std::size_t correct = 0;
    std::size_t predicted = 0;
    std::size_t gold = 0;
};

std::map<std::string, Counts> count_by_type(const TagSequences& predicted, const TagSequences& gold) {
    if (predicted.size() != gold.size()) {
        throw Error("entity f1: sentence count mismatch");
    }
    std::map<std::string, Counts> counts;
    for (std::size_t s = 0; s < gold.size(); ++s) {
        if (predicted[s].size() != gold[s].size()) {
            throw Error("entity f1: length mismatch in sentence " + std::to_string(s));
        }
        const auto p = extract_entities(predicted[s]);
        const auto g = extract_entities(gold[s]);
        const std::set<Entity> gold_set(g.begin(), g.end());
        for (const auto& e : p) {
            ++counts[e.type].predicted;
            counts[e.type].correct += gold_set.count(e);
        }
        for (const auto& e : g) {
            ++counts[e.type].gold;
        }
    }
    return counts;
}

} // namespace

Scores bio_entity_f1(const TagSequences& predicted, const TagSequences& gold) {
    Counts total;
    for (const auto& [type, c] : count_by_type(predicted, gold)) {
        total.correct += c.correct;
        total.predicted += c.predicted;
        total.gold += c.gold;
    }
    return score_counts(total.correct, total.predicted, total.gold);
}

std::map<std::string, Scores> bio_entity_f1_by_type(const TagSequences& predicted, const TagSequences& gold) {
    std::map<std::string, Scores> out;
    for (const auto& [type, c] : count_by_type(predicted, gold)) {
        out[type] = score_counts(c.correct, c.predicted, c.gold);
    }
    return out;
}

std::map<int, Scores> classification_by_class(std::span<const int> predicted, std::span<const int> gold) {
    if (predicted.size() != gold.size()) {
        throw Error("classification scores: length mismatch");
    }
    std::map<int, Counts> counts;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        ++counts[predicted[i]].predicted;
        ++counts[gold[i]].gold;
        if (predicted[i] == gold[i]) ++counts[gold[i]].correct;
    }
    std::map<int, Scores> out;
    for (const auto& [label, c] : counts) {
        out[label] = score_counts(c.correct, c.predicted, c.gold);
    }
    return out;
}

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) {
        throw Error("roc_auc: length mismatch");
    }
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Mann-Whitney U with midranks for ties.
    double positive_rank_sum = 0.0;
    std::size_t positives = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]]) {
                positive_rank_sum += midrank;
                ++positives;
            }
        }
        i = j;
    }
    const std::size_t negatives = scores.size() - positives;
    if (positives == 0 || negatives == 0) {
        throw UndefinedMetric("roc_auc: need both classes");
    }
    const double p = static_cast<double>(positives);
    return (positive_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(negatives));
}

} // namespace langadapt::metrics
