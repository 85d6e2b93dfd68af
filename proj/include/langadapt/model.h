#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "langadapt/random.h"
#include "langadapt/tensor_map.h"
#include "langadapt/tokenizer.h"

namespace langadapt::model {

using tokenizer::TokenId;

struct ModelConfig {
    std::size_t vocab_size = 64;
    std::size_t hidden_dim = 16;
    std::size_t num_layers = 2;
    std::size_t num_heads = 2;
    std::size_t ffn_dim = 32;
    std::size_t max_rel_distance = 64;
    double layer_norm_eps = 1e-7;
    double dropout_rate = 0.1;

    std::size_t head_dim() const { return hidden_dim / num_heads; }
    std::size_t rel_buckets() const { return 2 * max_rel_distance + 1; }
    /// Throws Error when an invariant does not hold.
    void validate() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// 12 layers, 384 hidden, 1536 FFN, 6 heads, 50 000 pieces.
ModelConfig reference_preset();
/// 2 layers, 16 hidden, 32 FFN, 2 heads, 64 pieces; dropout off.
ModelConfig desk_preset();

template <typename T>
struct LayerNormWeights {
    std::vector<T> gain;
    std::vector<T> bias;
};

/// weight is [in x out].
template <typename T>
struct LinearWeights {
    std::vector<T> weight;
    std::vector<T> bias;
};

template <typename T>
struct EncoderLayer {
    LayerNormWeights<T> attention_norm;
    LinearWeights<T> query;
    LinearWeights<T> key;
    LinearWeights<T> value;
    LinearWeights<T> output;
    /// [(2 * max_rel_distance + 1) x num_heads]
    std::vector<T> relative_bias;
    LayerNormWeights<T> ffn_norm;
    LinearWeights<T> ffn_intermediate;
    LinearWeights<T> ffn_output;
};

/// Everything except the vocabulary-dependent word embedding.
template <typename T>
struct EncoderBody {
    LayerNormWeights<T> embedding_norm;
    std::vector<EncoderLayer<T>> layers;
};

template <typename T>
struct EncoderWeights {
    std::vector<T> word_embedding; // [vocab x hidden]
    EncoderBody<T> body;
};

inline constexpr const char* kWordEmbeddingName = "embeddings.word_embedding";

/// Visits (name, shape, values) for every body tensor in a stable order.
/// Works for const and mutable bodies.
template <typename Body, typename Fn>
void visit_body(Body& body, const ModelConfig& c, Fn&& fn) {
    using V = std::vector<std::uint32_t>;
    const auto h = static_cast<std::uint32_t>(c.hidden_dim);
    const auto f = static_cast<std::uint32_t>(c.ffn_dim);
    fn(std::string("embeddings.layernorm.gain"), V{h}, body.embedding_norm.gain);
    fn(std::string("embeddings.layernorm.bias"), V{h}, body.embedding_norm.bias);
    for (std::size_t i = 0; i < body.layers.size(); ++i) {
        auto& l = body.layers[i];
        const std::string p = "layer." + std::to_string(i) + ".";
        fn(p + "attention.norm.gain", V{h}, l.attention_norm.gain);
        fn(p + "attention.norm.bias", V{h}, l.attention_norm.bias);
        fn(p + "attention.query.weight", V{h, h}, l.query.weight);
        fn(p + "attention.query.bias", V{h}, l.query.bias);
        fn(p + "attention.key.weight", V{h, h}, l.key.weight);
        fn(p + "attention.key.bias", V{h}, l.key.bias);
        fn(p + "attention.value.weight", V{h, h}, l.value.weight);
        fn(p + "attention.value.bias", V{h}, l.value.bias);
        fn(p + "attention.output.weight", V{h, h}, l.output.weight);
        fn(p + "attention.output.bias", V{h}, l.output.bias);
        fn(p + "attention.relative_bias",
           V{static_cast<std::uint32_t>(c.rel_buckets()), static_cast<std::uint32_t>(c.num_heads)},
           l.relative_bias);
        fn(p + "ffn.norm.gain", V{h}, l.ffn_norm.gain);
        fn(p + "ffn.norm.bias", V{h}, l.ffn_norm.bias);
        fn(p + "ffn.intermediate.weight", V{h, f}, l.ffn_intermediate.weight);
        fn(p + "ffn.intermediate.bias", V{f}, l.ffn_intermediate.bias);
        fn(p + "ffn.output.weight", V{f, h}, l.ffn_output.weight);
        fn(p + "ffn.output.bias", V{h}, l.ffn_output.bias);
    }
}

/// Word embedding first, then the body.
template <typename Weights, typename Fn>
void visit_weights(Weights& w, const ModelConfig& c, Fn&& fn) {
    using V = std::vector<std::uint32_t>;
    fn(std::string(kWordEmbeddingName),
       V{static_cast<std::uint32_t>(c.vocab_size), static_cast<std::uint32_t>(c.hidden_dim)}, w.word_embedding);
    visit_body(w.body, c, fn);
}

/// Zero-filled body with shapes for `c` (used for gradients).
template <typename T>
EncoderBody<T> zeros_body(const ModelConfig& c);
template <typename T>
EncoderWeights<T> zeros_like(const ModelConfig& c);

template <typename U, typename T>
EncoderBody<U> cast_body(const EncoderBody<T>& body, const ModelConfig& c) {
    EncoderBody<U> out = zeros_body<U>(c);
    std::vector<const std::vector<T>*> src;
    visit_body(body, c, [&](const std::string&, const auto&, const std::vector<T>& v) { src.push_back(&v); });
    std::size_t k = 0;
    visit_body(out, c, [&](const std::string&, const auto&, std::vector<U>& v) {
        const auto& s = *src[k++];
        v.assign(s.begin(), s.end());
    });
    return out;
}

template <typename U, typename T>
EncoderWeights<U> cast_weights(const EncoderWeights<T>& w, const ModelConfig& c) {
    return {std::vector<U>(w.word_embedding.begin(), w.word_embedding.end()), cast_body<U>(w.body, c)};
}

/// Gains 1, biases 0, everything else N(0, 0.02^2). Each tensor draws from its
/// own stream derived from (seed, tensor name), so a tensor's values depend
/// only on its name, shape and the seed.
EncoderWeights<float> init_model(const ModelConfig& config, std::uint64_t seed);
std::vector<float> init_tensor(const std::string& name, std::size_t numel, std::uint64_t seed);

std::size_t count_params(const EncoderWeights<float>& weights);
/// Closed-form count from the tensor shapes of `config`.
std::size_t count_params(const ModelConfig& config);

TensorMap to_tensor_map(const EncoderWeights<float>& weights, const ModelConfig& config);
/// Throws FormatError listing every missing or mis-shaped tensor. Extra
/// tensors (task heads) are ignored.
EncoderWeights<float> from_tensor_map(const TensorMap& tensors, const ModelConfig& config);
/// Reads architecture sizes from the tensor shapes; eps and dropout come from `base`.
ModelConfig infer_config(const TensorMap& tensors, const ModelConfig& base = ModelConfig{});

struct SurgeryOptions {
    /// Copy relative-bias tables from the donor instead of re-initializing them.
    bool transfer_relative_bias = false;
};

/// Fresh word embedding (and, by default, relative-bias tables) drawn as in
/// init_model with vocab_size = new_vocab_size; every other tensor copied
/// bit-for-bit from the donor.
EncoderWeights<float> embedding_surgery(const TensorMap& donor, std::size_t new_vocab_size,
                                        const ModelConfig& config, std::uint64_t seed,
                                        const SurgeryOptions& options = {});
/// Names re-initialized by surgery under the given options.
bool is_reinitialized_by_surgery(const std::string& name, const SurgeryOptions& options = {});

// ---------------------------------------------------------------------------
// Forward / backward on one sequence

template <typename T>
struct LayerCache {
    std::vector<T> input;
    std::vector<T> norm1_xhat, norm1_rstd, norm1_out;
    std::vector<T> q, k, v;
    std::vector<T> probs; // [heads x n x valid]
    std::vector<T> context;
    std::vector<T> attn_dropout;
    std::vector<T> mid;
    std::vector<T> norm2_xhat, norm2_rstd, norm2_out;
    std::vector<T> ffn_pre, ffn_act;
    std::vector<T> ffn_dropout;
};

template <typename T>
struct SequenceCache {
    std::size_t n = 0;
    std::size_t valid = 0;
    std::vector<T> embedded;
    std::vector<T> emb_xhat, emb_rstd;
    std::vector<T> emb_dropout;
    std::vector<LayerCache<T>> layers;
    std::vector<T> output; // [n x hidden]

    /// Attention probability of query i on key j for layer l, head h.
    T attention(std::size_t l, std::size_t h, std::size_t i, std::size_t j) const {
        return j < valid ? layers[l].probs[(h * n + i) * valid + j] : T(0);
    }
};

/// Runs the encoder over already-embedded rows `embedded` [n x hidden]. Keys at
/// positions >= valid_len are masked. Dropout is applied only when
/// `dropout_rng` is non-null and the configured rate is positive.
template <typename T>
void encode_sequence(const EncoderBody<T>& body, const ModelConfig& config, std::span<const T> embedded,
                     std::size_t n, std::size_t valid_len, SequenceCache<T>& cache, Rng* dropout_rng = nullptr);

/// Accumulates parameter gradients into `grads` and writes d(loss)/d(embedded)
/// into grad_embedded (resized to n x hidden).
template <typename T>
void backward_sequence(const EncoderBody<T>& body, const ModelConfig& config, const SequenceCache<T>& cache,
                       std::span<const T> grad_output, EncoderBody<T>& grads, std::vector<T>& grad_embedded);

/// Rows of `table` [vocab x hidden] for each id.
template <typename T>
std::vector<T> gather_rows(std::span<const T> table, std::span<const TokenId> ids, std::size_t hidden);
template <typename T>
void scatter_add_rows(std::span<T> table, std::span<const TokenId> ids, std::span<const T> rows,
                      std::size_t hidden);

/// Batched inference: ids is [batch x 512] row-major; returns hidden states
/// [batch x 512 x hidden]. Deterministic (no dropout). Throws Error on shape
/// mismatch or out-of-range ids.
std::vector<float> forward(const EncoderWeights<float>& weights, const ModelConfig& config,
                           std::span<const TokenId> ids, std::span<const std::size_t> real_lens,
                           std::size_t seq_len = 512);

} // namespace langadapt::model
