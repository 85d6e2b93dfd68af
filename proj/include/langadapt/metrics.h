#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "langadapt/error.h"

namespace langadapt::metrics {

/// The metric has no value for the given inputs (e.g. zero variance).
class UndefinedMetric : public Error {
public:
    using Error::Error;
};

/// Sample Pearson correlation. Throws UndefinedMetric for fewer than two
/// points or zero variance, Error on length mismatch.
double pearson(std::span<const double> x, std::span<const double> y);

/// Fraction of equal entries. Throws Error on empty or mismatched input.
double accuracy(std::span<const int> predicted, std::span<const int> gold);

struct Entity {
    std::string type;
    std::size_t start = 0;
    std::size_t end = 0; // exclusive
    friend auto operator<=>(const Entity&, const Entity&) = default;
};

/// Maximal BIO spans. An I-X that does not continue an X span opens a new one.
/// Throws Error on tags other than O, B-*, I-*.
std::vector<Entity> extract_entities(std::span<const std::string> tags);

struct Scores {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::size_t support = 0; // gold count
    std::size_t predicted = 0;
    std::size_t correct = 0;
};

/// Precision/recall/F1 from counts. Both sets empty gives 1/1/1.
Scores score_counts(std::size_t correct, std::size_t predicted, std::size_t gold);

using TagSequences = std::vector<std::vector<std::string>>;

/// Micro-averaged exact-match entity scores over all sentences.
Scores bio_entity_f1(const TagSequences& predicted, const TagSequences& gold);

/// Per-type scores, keyed by entity type.
std::map<std::string, Scores> bio_entity_f1_by_type(const TagSequences& predicted, const TagSequences& gold);

/// Per-class precision/recall/F1 for single-label classification.
std::map<int, Scores> classification_by_class(std::span<const int> predicted, std::span<const int> gold);

/// Area under the ROC curve with ties counted as one half. Throws
/// UndefinedMetric when either class is absent.
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

} // namespace langadapt::metrics
