#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "langadapt/model.h"
#include "langadapt/optimizer.h"
#include "langadapt/packing.h"
#include "langadapt/random.h"

namespace langadapt::rtd {

using model::EncoderBody;
using model::EncoderWeights;
using model::ModelConfig;
using tokenizer::TokenId;

struct Phase {
    std::size_t epochs = 1;
    std::size_t batch_size = 1;
    friend bool operator==(const Phase&, const Phase&) = default;
};

struct PretrainConfig {
    double lambda = 50.0;
    double mask_rate = 0.15;
    std::vector<Phase> phases = {{1, 1664}, {2, 288}};
    double learning_rate = 5e-4;
    /// Fraction of all optimizer steps spent in linear warmup.
    double warmup_fraction = 0.1;
    AdamWConfig adamw;
    /// Generator depth; 0 means half the discriminator's layers, rounded up.
    std::size_t generator_layers = 0;
    double temperature = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Generator and discriminator sharing one embedding table. The discriminator
/// reads E_G + E_delta but only E_delta receives its gradient.
template <typename T>
struct GdesPair {
    ModelConfig generator_config;
    ModelConfig discriminator_config;
    std::vector<T> shared_embedding; // E_G [vocab x hidden]
    std::vector<T> delta_embedding;  // E_delta [vocab x hidden]
    EncoderBody<T> generator;
    EncoderBody<T> discriminator;
    std::vector<T> generator_head_bias;       // [vocab]
    std::vector<T> discriminator_head_weight; // [hidden]
    std::vector<T> discriminator_head_bias;   // [1]
};

std::size_t generator_depth(const PretrainConfig& config, const ModelConfig& discriminator);

/// E_G and the generator body (its first generator_layers layers) come from
/// `generator_init`; the discriminator body from `discriminator_init`.
/// E_delta and the generator head bias start at zero; the discriminator head
/// weight is drawn like any other matrix.
GdesPair<float> make_pair(const EncoderWeights<float>& generator_init, const EncoderWeights<float>& discriminator_init,
                          const ModelConfig& config, std::size_t generator_layers, std::uint64_t seed);

/// Zero tensors shaped like `pair`.
template <typename T>
GdesPair<T> zeros_like(const GdesPair<T>& pair);

template <typename U, typename T>
GdesPair<U> cast_pair(const GdesPair<T>& pair) {
    GdesPair<U> out;
    out.generator_config = pair.generator_config;
    out.discriminator_config = pair.discriminator_config;
    out.shared_embedding.assign(pair.shared_embedding.begin(), pair.shared_embedding.end());
    out.delta_embedding.assign(pair.delta_embedding.begin(), pair.delta_embedding.end());
    out.generator = model::cast_body<U>(pair.generator, pair.generator_config);
    out.discriminator = model::cast_body<U>(pair.discriminator, pair.discriminator_config);
    out.generator_head_bias.assign(pair.generator_head_bias.begin(), pair.generator_head_bias.end());
    out.discriminator_head_weight.assign(pair.discriminator_head_weight.begin(),
                                         pair.discriminator_head_weight.end());
    out.discriminator_head_bias.assign(pair.discriminator_head_bias.begin(), pair.discriminator_head_bias.end());
    return out;
}

/// Visits every trainable tensor as (name, values).
template <typename Pair, typename Fn>
void visit_pair(Pair& p, Fn&& fn) {
    fn(std::string("shared_embedding"), p.shared_embedding);
    fn(std::string("delta_embedding"), p.delta_embedding);
    model::visit_body(p.generator, p.generator_config,
                      [&](const std::string& name, const auto&, auto& v) { fn("generator." + name, v); });
    model::visit_body(p.discriminator, p.discriminator_config,
                      [&](const std::string& name, const auto&, auto& v) { fn("discriminator." + name, v); });
    fn(std::string("generator_head.bias"), p.generator_head_bias);
    fn(std::string("discriminator_head.weight"), p.discriminator_head_weight);
    fn(std::string("discriminator_head.bias"), p.discriminator_head_bias);
}

/// Flattened [B x 512] views; booleans stored as bytes.
struct RtdBatch {
    std::size_t size = 0;
    std::vector<TokenId> original_ids;
    std::vector<TokenId> corrupted_ids;
    std::vector<std::uint8_t> mask_positions;
    /// Filled by build_rtd_inputs (or during a training pass).
    std::vector<TokenId> discriminator_ids;
    std::vector<std::uint8_t> rtd_labels;
    std::vector<std::size_t> real_lens;

    std::span<const TokenId> row(const std::vector<TokenId>& v, std::size_t b) const {
        return {v.data() + b * packing::kSeqLen, real_lens[b]};
    }
    std::size_t masked_count() const;
    /// Positions scored by the discriminator: everything except CLS, SEP, PAD.
    std::size_t scored_count() const;
};

/// Positions 1..real_len-2 are eligible. Each is selected independently with
/// probability mask_rate; an example with no selection gets one uniformly
/// chosen eligible position.
RtdBatch mask_batch(std::span<const packing::PackedExample> examples, double mask_rate, Rng& rng);

struct MlmOutput {
    double loss = 0.0;
    /// [masked_count x vocab], in batch-major position order.
    std::vector<float> logits;
};

/// Mean cross-entropy over masked positions (no dropout).
MlmOutput generator_mlm_loss(const GdesPair<float>& pair, const RtdBatch& batch);

/// One categorical draw per row of `logits` [rows x vocab] from
/// softmax(logits / temperature). Throws NumericError on non-finite logits.
std::vector<TokenId> sample_replacements(std::span<const float> logits, std::size_t vocab, Rng& rng,
                                         double temperature = 1.0);

struct RtdInputs {
    std::vector<TokenId> discriminator_ids;
    std::vector<std::uint8_t> labels;
};

/// `samples` holds one id per set entry of mask_positions, in order.
RtdInputs build_rtd_inputs(std::span<const TokenId> original, std::span<const std::uint8_t> mask_positions,
                           std::span<const TokenId> samples);

/// Per-position discriminator logits, [B x 512] with zeros outside 1..real_len-2.
std::vector<float> discriminator_logits(const GdesPair<float>& pair, std::span<const TokenId> discriminator_ids,
                                        std::span<const std::size_t> real_lens);

/// Mean BCE over every non-CLS/SEP/PAD position.
double discriminator_rtd_loss(const GdesPair<float>& pair, std::span<const TokenId> discriminator_ids,
                              std::span<const std::uint8_t> rtd_labels, std::span<const std::size_t> real_lens);

inline double total_loss(double l_mlm, double l_rtd, double lambda) { return l_mlm + lambda * l_rtd; }

struct LossReport {
    double mlm = 0.0;
    double rtd = 0.0;
    double total = 0.0;
};

enum class LossPath { mlm, rtd, both };

template <typename T>
struct GradientOptions {
    LossPath path = LossPath::both;
    /// When set, replacements are sampled from the generator logits during the
    /// pass and written into the batch; otherwise discriminator_ids must be filled.
    Rng* sampler = nullptr;
    double temperature = 1.0;
    Rng* dropout = nullptr;
    /// Values standing in for E_G on the discriminator side; empty means
    /// pair.shared_embedding. Finite-difference checks pass a frozen copy so
    /// that perturbing E_G leaves the discriminator input unchanged, which is
    /// what the stop-gradient means.
    std::span<const T> frozen_shared{};
    /// Skip the backward pass and only report the losses.
    bool backward = true;
};

/// Forward and backward over the batch. Gradients are accumulated into
/// `grads` (shaped like the pair). Losses are batch means, so one call
/// realises one optimizer step however large the batch is.
template <typename T>
LossReport accumulate_gradients(const GdesPair<T>& pair, RtdBatch& batch, double lambda, GdesPair<T>& grads,
                                const GradientOptions<T>& options = {});

/// Trainer state carried across steps and phases.
struct TrainerState {
    AdamW optimizer;
    std::size_t step = 0;
};

/// Masks, samples, back-propagates and applies one AdamW update at the given
/// learning rate. Throws NumericError (leaving the pair untouched) if the loss
/// or any gradient is non-finite.
LossReport backward_and_step(GdesPair<float>& pair, std::span<const packing::PackedExample> examples,
                             const PretrainConfig& config, TrainerState& state, double learning_rate, Rng& data_rng,
                             Rng* dropout_rng);

struct StepRecord {
    std::size_t step = 0;
    std::size_t phase = 0;
    LossReport loss;
};

std::size_t total_steps(const PretrainConfig& config, std::size_t dataset_size);
double learning_rate_at(const PretrainConfig& config, std::size_t step, std::size_t total);

struct TrainResult {
    GdesPair<float> pair;
    std::vector<StepRecord> history;
    /// Set when training stopped on a non-finite loss; `pair` is then the
    /// state after the last good step.
    std::optional<std::string> error;
};

/// Runs every phase in order. Examples are reshuffled each epoch; the last
/// batch of an epoch may be smaller.
TrainResult train_rtd(std::span<const packing::PackedExample> dataset, const PretrainConfig& config,
                      const EncoderWeights<float>& initial_generator,
                      const EncoderWeights<float>& initial_discriminator, const ModelConfig& model_config,
                      const std::function<void(const StepRecord&)>& on_step = {});

/// Generator: word_embedding = E_G, its body, generator_head.bias.
TensorMap generator_tensors(const GdesPair<float>& pair);
/// Discriminator: word_embedding = E_G + E_delta, its body, discriminator_head.*.
TensorMap discriminator_tensors(const GdesPair<float>& pair);
void export_generator(const GdesPair<float>& pair, const std::filesystem::path& path);
void export_discriminator(const GdesPair<float>& pair, const std::filesystem::path& path);

std::string format_history_csv(std::span<const StepRecord> history);

} // namespace langadapt::rtd
