#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "langadapt/metrics.h"
#include "langadapt/model.h"
#include "langadapt/optimizer.h"
#include "langadapt/tokenizer.h"

namespace langadapt::finetune {

using model::ModelConfig;
using tokenizer::TokenId;

enum class TaskKind { token_classification, sequence_classification, regression };

struct TaskSpec {
    TaskKind kind = TaskKind::sequence_classification;
    /// Tag set (token kind) or class names (sequence kind); index = class id.
    std::vector<std::string> labels;
    double min_score = 0.0;
    double max_score = 5.0;
    std::size_t max_len = 512;

    static TaskSpec ner(std::vector<std::string> tags);
    static TaskSpec classification(std::size_t num_classes);
    static TaskSpec regression(double lo = 0.0, double hi = 5.0);

    std::size_t outputs() const { return kind == TaskKind::regression ? 1 : labels.size(); }
    const char* metric_name() const;
    /// Throws Error for an empty label set or an I-X tag without B-X.
    void validate() const;
};

/// Label marker for subtokens that take no part in loss or metrics.
inline constexpr int kIgnore = -1;

struct Example {
    std::vector<TokenId> ids; // framed with CLS ... SEP
    std::vector<int> token_labels; // token kind: one per id, kIgnore where unlabeled
    int label = 0;                 // sequence kind
    double target = 0.0;           // regression
};

/// CoNLL-style `token<TAB>tag` lines, blank line between sentences. Only the
/// first subtoken of a word is labelled. Throws FormatError with the line number.
std::vector<Example> load_ner_conll(const std::filesystem::path& path, const tokenizer::Vocabulary& vocab,
                                    const TaskSpec& task);

/// `text_a<TAB>text_b<TAB>target` rows; text_b may be empty (single segment).
/// Throws FormatError with the line number.
std::vector<Example> load_pair_dataset(const std::filesystem::path& path, const tokenizer::Vocabulary& vocab,
                                       const TaskSpec& task, bool has_header = false);

/// CLS a SEP [b SEP], trimming the longer text first (b on ties) to fit max_len.
std::vector<TokenId> frame_pair(std::vector<TokenId> a, std::vector<TokenId> b, bool two_segments,
                                std::size_t max_len = 512);

struct FineTuneConfig {
    double learning_rate = 5e-5;
    std::size_t max_epochs = 20;
    std::size_t patience = 3;
    std::size_t batch_size = 16;
    AdamWConfig adamw;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Tracks the best dev metric; improvement must be strict.
class EarlyStopper {
public:
    explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

    /// Records the metric of the next epoch. Returns true when it is a new best.
    bool update(double metric);
    bool should_stop() const { return since_best_ >= patience_; }
    std::size_t best_epoch() const { return best_epoch_; }
    double best_metric() const { return best_; }
    std::size_t epochs() const { return epochs_; }

private:
    std::size_t patience_;
    std::size_t epochs_ = 0;
    std::size_t best_epoch_ = 0;
    std::size_t since_best_ = 0;
    double best_ = 0.0;
};

struct TaskModel {
    ModelConfig config;
    model::EncoderWeights<float> encoder;
    std::vector<float> head_weight; // [hidden x outputs]
    std::vector<float> head_bias;   // [outputs]
};

inline constexpr const char* kHeadWeightName = "task_head.weight";
inline constexpr const char* kHeadBiasName = "task_head.bias";

/// Encoder from `base` (extra tensors ignored) plus a fresh head.
TaskModel attach_head(const TensorMap& base, const TaskSpec& task, const ModelConfig& defaults, std::uint64_t seed);
/// Encoder and an existing head; throws FormatError if the head is missing or mis-shaped.
TaskModel load_task_model(const TensorMap& tensors, const TaskSpec& task, const ModelConfig& defaults);
TensorMap to_tensor_map(const TaskModel& model);

struct Predictions {
    std::vector<std::vector<int>> tags; // token kind: predicted class per labelled position
    std::vector<int> classes;
    std::vector<double> scores;
};

Predictions predict(const TaskModel& model, const TaskSpec& task, const std::vector<Example>& examples);

struct EvalReport {
    std::string task;
    std::string metric;
    double value = 0.0;
    std::size_t examples = 0;
    std::map<std::string, metrics::Scores> per_class;
};

EvalReport evaluate(const TaskModel& model, const TaskSpec& task, const std::vector<Example>& examples,
                    const std::string& task_name);
/// Pretty-printed JSON: task, metric, value, examples, per_class.
std::string format_report(const EvalReport& report);

struct FineTuneResult {
    TaskModel model; // weights of the best dev epoch
    EvalReport dev_report;
    std::vector<double> dev_history;
    std::size_t best_epoch = 0; // 1-based
};

/// Trains encoder and head with AdamW at a constant learning rate, scoring dev
/// after every epoch and stopping after `patience` epochs without a strict
/// improvement. Throws Error on an empty training set, NumericError on a
/// non-finite loss.
FineTuneResult finetune_task(const TaskSpec& task, const TaskModel& initial, const std::vector<Example>& train,
                             const std::vector<Example>& dev, const FineTuneConfig& config,
                             const std::string& task_name,
                             const std::function<void(std::size_t epoch, double loss, double dev_metric)>& on_epoch = {});

} // namespace langadapt::finetune
