#include "langadapt/finetune.h"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include <json.hpp>

#include "langadapt/error.h"
#include "langadapt/nn.h"
#include "langadapt/random.h"

namespace langadapt::finetune {

TaskSpec TaskSpec::ner(std::vector<std::string> tags) {
    TaskSpec t;
    t.kind = TaskKind::token_classification;
    t.labels = std::move(tags);
    return t;
}

TaskSpec TaskSpec::classification(std::size_t num_classes) {
    TaskSpec t;
    t.kind = TaskKind::sequence_classification;
    for (std::size_t i = 0; i < num_classes; ++i) t.labels.push_back(std::to_string(i));
    return t;
}

TaskSpec TaskSpec::regression(double lo, double hi) {
    TaskSpec t;
    t.kind = TaskKind::regression;
    t.min_score = lo;
    t.max_score = hi;
    return t;
}

const char* TaskSpec::metric_name() const {
    switch (kind) {
    case TaskKind::token_classification:
        return "entity_f1";
    case TaskKind::sequence_classification:
        return "accuracy";
    case TaskKind::regression:
        return "pearson";
    }
    return "";
}

void TaskSpec::validate() const {
    if (max_len < 3 || max_len > 512) {
        throw Error("task max_len must lie in [3, 512]");
    }
    if (kind == TaskKind::regression) {
        if (!(min_score < max_score)) {
            throw Error("regression range is empty");
        }
        return;
    }
    if (labels.empty()) {
        throw Error("classification task needs at least one label");
    }
    const std::set<std::string> set(labels.begin(), labels.end());
    if (set.size() != labels.size()) {
        throw Error("duplicate task label");
    }
    if (kind == TaskKind::token_classification) {
        for (const auto& l : labels) {
            if (l == "O") continue;
            if (l.size() < 3 || l[1] != '-' || (l[0] != 'B' && l[0] != 'I')) {
                throw Error("tag '" + l + "' is not O, B-X or I-X");
            }
            if (l[0] == 'I' && !set.count("B-" + l.substr(2))) {
                throw Error("tag " + l + " has no matching B-" + l.substr(2));
            }
        }
    }
}

void FineTuneConfig::validate() const {
    if (max_epochs == 0 || patience == 0 || batch_size == 0) {
        throw Error("max_epochs, patience and batch_size must be at least 1");
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw Error("fine-tune learning_rate must be positive");
    }
}

bool EarlyStopper::update(double metric) {
    ++epochs_;
    if (std::isnan(metric)) {
        metric = -std::numeric_limits<double>::infinity();
    }
    if (best_epoch_ == 0 || metric > best_) {
        best_ = metric;
        best_epoch_ = epochs_;
        since_best_ = 0;
        return true;
    }
    ++since_best_;
    return false;
}

// ---------------------------------------------------------------------------
// Data

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto tab = line.find('\t', start);
        out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
    }
    return out;
}

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    return in;
}

} // namespace

std::vector<Example> load_ner_conll(const std::filesystem::path& path, const tokenizer::Vocabulary& vocab,
                                    const TaskSpec& task) {
    task.validate();
    if (task.kind != TaskKind::token_classification) {
        throw Error("load_ner_conll needs a token classification task");
    }
    std::map<std::string, int> tag_ids;
    for (std::size_t i = 0; i < task.labels.size(); ++i) tag_ids[task.labels[i]] = static_cast<int>(i);

    std::vector<Example> out;
    std::vector<TokenId> ids;
    std::vector<int> labels;
    const std::size_t budget = task.max_len - 2;
    const auto flush = [&] {
        if (ids.empty()) return;
        Example ex;
        ex.ids.push_back(tokenizer::kCls);
        ex.token_labels.push_back(kIgnore);
        const std::size_t keep = std::min(ids.size(), budget);
        ex.ids.insert(ex.ids.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(keep));
        ex.token_labels.insert(ex.token_labels.end(), labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(keep));
        ex.ids.push_back(tokenizer::kSep);
        ex.token_labels.push_back(kIgnore);
        out.push_back(std::move(ex));
        ids.clear();
        labels.clear();
    };

    auto in = open_input(path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) {
            flush();
            continue;
        }
        if (line.rfind("-DOCSTART-", 0) == 0) continue;
        const auto fields = split_tabs(line);
        if (fields.size() != 2 || fields[0].empty()) {
            throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": expected 'token<TAB>tag'");
        }
        const auto tag = tag_ids.find(fields[1]);
        if (tag == tag_ids.end()) {
            throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": unknown tag '" + fields[1] +
                              "'");
        }
        const auto word = tokenizer::encode(fields[0], vocab);
        if (word.empty()) {
            throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": token has no content");
        }
        for (std::size_t k = 0; k < word.size(); ++k) {
            ids.push_back(word[k]);
            labels.push_back(k == 0 ? tag->second : kIgnore);
        }
    }
    flush();
    return out;
}

std::vector<TokenId> frame_pair(std::vector<TokenId> a, std::vector<TokenId> b, bool two_segments,
                                std::size_t max_len) {
    const std::size_t overhead = two_segments ? 3 : 2;
    if (max_len < overhead) {
        throw Error("max_len too small for the framing");
    }
    const std::size_t budget = max_len - overhead;
    while (a.size() + b.size() > budget) {
        if (a.size() > b.size()) {
            a.pop_back();
        } else {
            b.pop_back();
        }
    }
    std::vector<TokenId> ids;
    ids.reserve(a.size() + b.size() + overhead);
    ids.push_back(tokenizer::kCls);
    ids.insert(ids.end(), a.begin(), a.end());
    ids.push_back(tokenizer::kSep);
    if (two_segments) {
        ids.insert(ids.end(), b.begin(), b.end());
        ids.push_back(tokenizer::kSep);
    }
    return ids;
}

std::vector<Example> load_pair_dataset(const std::filesystem::path& path, const tokenizer::Vocabulary& vocab,
                                       const TaskSpec& task, bool has_header) {
    task.validate();
    if (task.kind == TaskKind::token_classification) {
        throw Error("load_pair_dataset needs a sequence or regression task");
    }
    std::vector<Example> out;
    auto in = open_input(path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1 && has_header) continue;
        if (line.empty()) continue;
        const auto fail = [&](const std::string& what) {
            throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": " + what);
        };
        auto fields = split_tabs(line);
        if (fields.size() == 2) {
            fields.insert(fields.begin() + 1, std::string());
        }
        if (fields.size() != 3) {
            fail("expected 'text_a<TAB>text_b<TAB>target'");
        }
        Example ex;
        const std::string& target = fields[2];
        if (task.kind == TaskKind::regression) {
            char* end = nullptr;
            const double v = std::strtod(target.c_str(), &end);
            if (target.empty() || end != target.c_str() + target.size() || !std::isfinite(v)) {
                fail("unparseable score '" + target + "'");
            }
            if (v < task.min_score || v > task.max_score) {
                fail("score " + target + " outside [" + std::to_string(task.min_score) + ", " +
                     std::to_string(task.max_score) + "]");
            }
            ex.target = v;
        } else {
            const auto it = std::find(task.labels.begin(), task.labels.end(), target);
            if (it == task.labels.end()) {
                fail("unknown class '" + target + "'");
            }
            ex.label = static_cast<int>(it - task.labels.begin());
        }
        const bool two = !fields[1].empty();
        ex.ids = frame_pair(tokenizer::encode(fields[0], vocab), tokenizer::encode(fields[1], vocab), two,
                            task.max_len);
        out.push_back(std::move(ex));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Model

TaskModel attach_head(const TensorMap& base, const TaskSpec& task, const ModelConfig& defaults, std::uint64_t seed) {
    task.validate();
    TaskModel m;
    m.config = model::infer_config(base, defaults);
    m.encoder = model::from_tensor_map(base, m.config);
    const std::size_t k = task.outputs();
    m.head_weight = model::init_tensor(kHeadWeightName, m.config.hidden_dim * k, seed);
    m.head_bias.assign(k, 0.0f);
    return m;
}

TaskModel load_task_model(const TensorMap& tensors, const TaskSpec& task, const ModelConfig& defaults) {
    task.validate();
    TaskModel m;
    m.config = model::infer_config(tensors, defaults);
    m.encoder = model::from_tensor_map(tensors, m.config);
    const auto h = static_cast<std::uint32_t>(m.config.hidden_dim);
    const auto k = static_cast<std::uint32_t>(task.outputs());
    const Tensor* w = tensors.find(kHeadWeightName);
    const Tensor* b = tensors.find(kHeadBiasName);
    if (w == nullptr || b == nullptr) {
        throw FormatError("checkpoint has no task head");
    }
    if (w->shape != std::vector<std::uint32_t>{h, k} || b->shape != std::vector<std::uint32_t>{k}) {
        throw FormatError("task head shape does not match the task (" + std::to_string(k) + " outputs)");
    }
    m.head_weight = w->values;
    m.head_bias = b->values;
    return m;
}

TensorMap to_tensor_map(const TaskModel& m) {
    TensorMap map = model::to_tensor_map(m.encoder, m.config);
    const auto h = static_cast<std::uint32_t>(m.config.hidden_dim);
    const auto k = static_cast<std::uint32_t>(m.head_bias.size());
    map.insert(kHeadWeightName, Tensor{{h, k}, m.head_weight});
    map.insert(kHeadBiasName, Tensor{{k}, m.head_bias});
    return map;
}

namespace {

template <typename T>
std::span<const T> cs(const std::vector<T>& v) {
    return {v.data(), v.size()};
}

/// Head outputs: one row per position (token kind) or a single row read at CLS.
std::vector<float> run(const TaskModel& m, const TaskSpec& task, const Example& ex,
                       model::SequenceCache<float>& cache, Rng* dropout) {
    const std::size_t n = ex.ids.size();
    const std::size_t h = m.config.hidden_dim;
    const std::size_t k = task.outputs();
    const auto embedded = model::gather_rows<float>(cs(m.encoder.word_embedding), ex.ids, h);
    model::encode_sequence<float>(m.encoder.body, m.config, cs(embedded), n, n, cache, dropout);
    const std::size_t rows = task.kind == TaskKind::token_classification ? n : 1;
    std::vector<float> out(rows * k);
    nn::linear_forward<float>(std::span<const float>(cache.output.data(), rows * h), cs(m.head_weight),
                              cs(m.head_bias), rows, h, k, out);
    return out;
}

int argmax(const float* v, std::size_t k) {
    return static_cast<int>(std::max_element(v, v + k) - v);
}

TaskModel zeros_like(const TaskModel& m) {
    TaskModel g;
    g.config = m.config;
    g.encoder = model::zeros_like<float>(m.config);
    g.head_weight.assign(m.head_weight.size(), 0.0f);
    g.head_bias.assign(m.head_bias.size(), 0.0f);
    return g;
}

template <typename Fn>
void visit_task(TaskModel& m, Fn&& fn) {
    model::visit_weights(m.encoder, m.config,
                         [&](const std::string& name, const auto&, std::vector<float>& v) { fn(name, v); });
    fn(std::string(kHeadWeightName), m.head_weight);
    fn(std::string(kHeadBiasName), m.head_bias);
}

/// Loss normaliser for one batch: labelled tokens or examples.
std::size_t batch_units(const TaskSpec& task, const std::vector<const Example*>& batch) {
    if (task.kind != TaskKind::token_classification) return batch.size();
    std::size_t n = 0;
    for (const auto* ex : batch) {
        n += static_cast<std::size_t>(std::count_if(ex->token_labels.begin(), ex->token_labels.end(),
                                                    [](int l) { return l != kIgnore; }));
    }
    return n;
}

/// Forward and backward for one example; returns its summed loss.
double accumulate(const TaskModel& m, const TaskSpec& task, const Example& ex, double scale, TaskModel& g,
                  model::SequenceCache<float>& cache, Rng* dropout) {
    const std::size_t n = ex.ids.size();
    const std::size_t h = m.config.hidden_dim;
    const std::size_t k = task.outputs();
    const auto out = run(m, task, ex, cache, dropout);
    const std::size_t rows = out.size() / k;
    std::vector<float> dout(out.size(), 0.0f);
    double loss = 0.0;
    const auto ce = [&](std::size_t row, int gold) {
        const std::span<const float> z(out.data() + row * k, k);
        const float lse = nn::log_sum_exp(z);
        loss += static_cast<double>(lse - z[static_cast<std::size_t>(gold)]);
        for (std::size_t c = 0; c < k; ++c) {
            dout[row * k + c] = static_cast<float>((std::exp(z[c] - lse) - (static_cast<int>(c) == gold)) * scale);
        }
    };
    switch (task.kind) {
    case TaskKind::token_classification:
        for (std::size_t i = 0; i < n; ++i) {
            if (ex.token_labels[i] != kIgnore) ce(i, ex.token_labels[i]);
        }
        break;
    case TaskKind::sequence_classification:
        ce(0, ex.label);
        break;
    case TaskKind::regression: {
        const double diff = static_cast<double>(out[0]) - ex.target;
        loss += diff * diff;
        dout[0] = static_cast<float>(2.0 * diff * scale);
        break;
    }
    }
    std::vector<float> dhidden(n * h, 0.0f);
    nn::linear_backward<float>(std::span<const float>(cache.output.data(), rows * h), cs(m.head_weight), cs(dout),
                               rows, h, k, g.head_weight, g.head_bias,
                               std::span<float>(dhidden.data(), rows * h));
    std::vector<float> demb;
    model::backward_sequence<float>(m.encoder.body, m.config, cache, cs(dhidden), g.encoder.body, demb);
    model::scatter_add_rows<float>(std::span<float>(g.encoder.word_embedding), ex.ids, cs(demb), h);
    return loss;
}

std::string class_name(const TaskSpec& task, int c) {
    return c >= 0 && static_cast<std::size_t>(c) < task.labels.size() ? task.labels[static_cast<std::size_t>(c)]
                                                                       : std::to_string(c);
}

} // namespace

Predictions predict(const TaskModel& m, const TaskSpec& task, const std::vector<Example>& examples) {
    Predictions p;
    model::SequenceCache<float> cache;
    const std::size_t k = task.outputs();
    for (const auto& ex : examples) {
        const auto out = run(m, task, ex, cache, nullptr);
        switch (task.kind) {
        case TaskKind::token_classification: {
            std::vector<int> tags;
            for (std::size_t i = 0; i < ex.ids.size(); ++i) {
                if (ex.token_labels[i] != kIgnore) tags.push_back(argmax(out.data() + i * k, k));
            }
            p.tags.push_back(std::move(tags));
            break;
        }
        case TaskKind::sequence_classification:
            p.classes.push_back(argmax(out.data(), k));
            break;
        case TaskKind::regression:
            p.scores.push_back(out[0]);
            break;
        }
    }
    return p;
}

EvalReport evaluate(const TaskModel& m, const TaskSpec& task, const std::vector<Example>& examples,
                    const std::string& task_name) {
    if (examples.empty()) {
        throw Error("evaluation set is empty");
    }
    EvalReport r;
    r.task = task_name;
    r.metric = task.metric_name();
    r.examples = examples.size();
    const Predictions p = predict(m, task, examples);
    switch (task.kind) {
    case TaskKind::token_classification: {
        metrics::TagSequences pred, gold;
        for (std::size_t s = 0; s < examples.size(); ++s) {
            std::vector<std::string> gs, ps;
            std::size_t j = 0;
            for (int l : examples[s].token_labels) {
                if (l == kIgnore) continue;
                gs.push_back(class_name(task, l));
                ps.push_back(class_name(task, p.tags[s][j++]));
            }
            gold.push_back(std::move(gs));
            pred.push_back(std::move(ps));
        }
        r.value = metrics::bio_entity_f1(pred, gold).f1;
        r.per_class = metrics::bio_entity_f1_by_type(pred, gold);
        break;
    }
    case TaskKind::sequence_classification: {
        std::vector<int> gold;
        for (const auto& ex : examples) gold.push_back(ex.label);
        r.value = metrics::accuracy(p.classes, gold);
        for (const auto& [c, s] : metrics::classification_by_class(p.classes, gold)) {
            r.per_class[class_name(task, c)] = s;
        }
        break;
    }
    case TaskKind::regression: {
        std::vector<double> gold;
        for (const auto& ex : examples) gold.push_back(ex.target);
        r.value = metrics::pearson(p.scores, gold);
        break;
    }
    }
    return r;
}

std::string format_report(const EvalReport& report) {
    nlohmann::ordered_json j;
    j["task"] = report.task;
    j["metric"] = report.metric;
    j["value"] = report.value;
    j["examples"] = report.examples;
    j["per_class"] = nlohmann::ordered_json::object();
    for (const auto& [name, s] : report.per_class) {
        j["per_class"][name] = {{"precision", s.precision},
                                {"recall", s.recall},
                                {"f1", s.f1},
                                {"support", s.support}};
    }
    return j.dump(2) + "\n";
}

FineTuneResult finetune_task(const TaskSpec& task, const TaskModel& initial, const std::vector<Example>& train,
                             const std::vector<Example>& dev, const FineTuneConfig& config,
                             const std::string& task_name,
                             const std::function<void(std::size_t, double, double)>& on_epoch) {
    task.validate();
    config.validate();
    if (train.empty()) {
        throw Error("training set is empty");
    }
    if (dev.empty()) {
        throw Error("dev set is empty");
    }
    FineTuneResult result;
    result.model = initial;
    TaskModel current = initial;
    AdamW optimizer(config.adamw);
    Rng order_rng(mix_seed(config.seed, 3));
    Rng dropout_rng(mix_seed(config.seed, 4));
    Rng* dropout = current.config.dropout_rate > 0.0 ? &dropout_rng : nullptr;
    EarlyStopper stopper(config.patience);
    model::SequenceCache<float> cache;

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<const Example*> batch;
    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[order_rng.below(i)]);
        }
        double epoch_loss = 0.0;
        std::size_t epoch_units = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            batch.clear();
            for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
                batch.push_back(&train[order[i]]);
            }
            const std::size_t units = batch_units(task, batch);
            if (units == 0) continue;
            ++step;
            TaskModel grads = zeros_like(current);
            double loss = 0.0;
            for (const auto* ex : batch) {
                loss += accumulate(current, task, *ex, 1.0 / static_cast<double>(units), grads, cache, dropout);
            }
            if (!std::isfinite(loss)) {
                throw NumericError("non-finite fine-tuning loss at epoch " + std::to_string(epoch) + " step " +
                                   std::to_string(step));
            }
            epoch_loss += loss;
            epoch_units += units;
            std::vector<ParamRef> params;
            visit_task(grads, [&](const std::string& name, std::vector<float>& g) {
                const bool decay = !(name.size() >= 5 && (name.ends_with(".bias") || name.ends_with(".gain")));
                params.push_back({nullptr, &g, decay});
            });
            std::size_t k = 0;
            visit_task(current, [&](const std::string&, std::vector<float>& w) { params[k++].value = &w; });
            optimizer.step(params, config.learning_rate);
        }
        double metric;
        try {
            metric = evaluate(current, task, dev, task_name).value;
        } catch (const metrics::UndefinedMetric&) {
            metric = std::numeric_limits<double>::quiet_NaN();
        }
        result.dev_history.push_back(metric);
        if (on_epoch) {
            on_epoch(epoch, epoch_units ? epoch_loss / static_cast<double>(epoch_units) : 0.0, metric);
        }
        if (stopper.update(metric)) {
            result.model = current;
        }
        if (stopper.should_stop()) break;
    }
    result.best_epoch = stopper.best_epoch();
    result.dev_report = evaluate(result.model, task, dev, task_name);
    return result;
}

} // namespace langadapt::finetune
