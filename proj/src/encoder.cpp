#include <algorithm>
#include <cmath>
#include <sstream>

#include "langadapt/error.h"
#include "langadapt/model.h"
#include "langadapt/nn.h"

namespace langadapt::model {

void ModelConfig::validate() const {
    if (vocab_size < 5) {
        throw Error("vocab_size must be at least 5");
    }
    if (hidden_dim == 0 || num_heads == 0 || ffn_dim == 0 || max_rel_distance == 0) {
        throw Error("model dimensions must be at least 1");
    }
    if (hidden_dim % num_heads != 0) {
        throw Error("hidden_dim " + std::to_string(hidden_dim) + " is not divisible by num_heads " +
                    std::to_string(num_heads));
    }
    if (!(layer_norm_eps > 0.0)) {
        throw Error("layer_norm_eps must be positive");
    }
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
        throw Error("dropout_rate must lie in [0, 1)");
    }
}

ModelConfig reference_preset() {
    ModelConfig c;
    c.vocab_size = 50000;
    c.hidden_dim = 384;
    c.num_layers = 12;
    c.num_heads = 6;
    c.ffn_dim = 1536;
    return c;
}

ModelConfig desk_preset() {
    ModelConfig c;
    c.vocab_size = 64;
    c.hidden_dim = 16;
    c.num_layers = 2;
    c.num_heads = 2;
    c.ffn_dim = 32;
    c.dropout_rate = 0.0;
    return c;
}

template <typename T>
EncoderBody<T> zeros_body(const ModelConfig& c) {
    EncoderBody<T> body;
    body.layers.resize(c.num_layers);
    visit_body(body, c, [](const std::string&, const std::vector<std::uint32_t>& shape, std::vector<T>& v) {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        v.assign(n, T(0));
    });
    return body;
}

template <typename T>
EncoderWeights<T> zeros_like(const ModelConfig& c) {
    return {std::vector<T>(c.vocab_size * c.hidden_dim, T(0)), zeros_body<T>(c)};
}

namespace {

bool ends_with(const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

} // namespace

std::vector<float> init_tensor(const std::string& name, std::size_t numel, std::uint64_t seed) {
    if (ends_with(name, ".gain")) {
        return std::vector<float>(numel, 1.0f);
    }
    if (ends_with(name, ".bias")) {
        return std::vector<float>(numel, 0.0f);
    }
    Rng rng(mix_seed(seed, hash_name(name)));
    std::vector<float> v(numel);
    for (auto& x : v) {
        x = static_cast<float>(0.02 * rng.normal());
    }
    return v;
}

EncoderWeights<float> init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    EncoderWeights<float> w = zeros_like<float>(config);
    visit_weights(w, config, [&](const std::string& name, const std::vector<std::uint32_t>&, std::vector<float>& v) {
        v = init_tensor(name, v.size(), seed);
    });
    return w;
}

std::size_t count_params(const EncoderWeights<float>& weights) {
    std::size_t n = weights.word_embedding.size() + weights.body.embedding_norm.gain.size() +
                    weights.body.embedding_norm.bias.size();
    for (const auto& l : weights.body.layers) {
        for (const auto* v : {&l.attention_norm.gain, &l.attention_norm.bias, &l.query.weight, &l.query.bias,
                              &l.key.weight, &l.key.bias, &l.value.weight, &l.value.bias, &l.output.weight,
                              &l.output.bias, &l.relative_bias, &l.ffn_norm.gain, &l.ffn_norm.bias,
                              &l.ffn_intermediate.weight, &l.ffn_intermediate.bias, &l.ffn_output.weight,
                              &l.ffn_output.bias}) {
            n += v->size();
        }
    }
    return n;
}

std::size_t count_params(const ModelConfig& c) {
    const std::size_t h = c.hidden_dim;
    const std::size_t per_layer = 2 * h + 4 * (h * h + h) + c.rel_buckets() * c.num_heads + 2 * h +
                                  (h * c.ffn_dim + c.ffn_dim) + (c.ffn_dim * h + h);
    return c.vocab_size * h + 2 * h + c.num_layers * per_layer;
}

TensorMap to_tensor_map(const EncoderWeights<float>& weights, const ModelConfig& config) {
    TensorMap map;
    visit_weights(weights, config,
                  [&](const std::string& name, const std::vector<std::uint32_t>& shape, const std::vector<float>& v) {
                      map.insert(name, Tensor{shape, v});
                  });
    return map;
}

EncoderWeights<float> from_tensor_map(const TensorMap& tensors, const ModelConfig& config) {
    config.validate();
    EncoderWeights<float> w = zeros_like<float>(config);
    std::vector<std::string> problems;
    visit_weights(w, config, [&](const std::string& name, const std::vector<std::uint32_t>& shape, std::vector<float>& v) {
        const Tensor* t = tensors.find(name);
        if (t == nullptr) {
            problems.push_back(name + " (missing)");
        } else if (t->shape != shape) {
            problems.push_back(name + " (shape mismatch)");
        } else {
            v = t->values;
        }
    });
    if (!problems.empty()) {
        std::string msg = "incompatible tensors:";
        for (const auto& p : problems) msg += " " + p;
        throw FormatError(msg);
    }
    return w;
}

ModelConfig infer_config(const TensorMap& tensors, const ModelConfig& base) {
    ModelConfig c = base;
    const Tensor& emb = tensors.at(kWordEmbeddingName);
    if (emb.shape.size() != 2) {
        throw FormatError(std::string(kWordEmbeddingName) + " must be rank 2");
    }
    c.vocab_size = emb.shape[0];
    c.hidden_dim = emb.shape[1];
    c.num_layers = 0;
    while (tensors.contains("layer." + std::to_string(c.num_layers) + ".attention.query.weight")) {
        ++c.num_layers;
    }
    if (c.num_layers > 0) {
        const Tensor& rel = tensors.at("layer.0.attention.relative_bias");
        const Tensor& ffn = tensors.at("layer.0.ffn.intermediate.weight");
        if (rel.shape.size() != 2 || rel.shape[0] % 2 == 0 || ffn.shape.size() != 2) {
            throw FormatError("layer.0 tensors have unexpected ranks");
        }
        c.max_rel_distance = (rel.shape[0] - 1) / 2;
        c.num_heads = rel.shape[1];
        c.ffn_dim = ffn.shape[1];
    }
    c.validate();
    return c;
}

bool is_reinitialized_by_surgery(const std::string& name, const SurgeryOptions& options) {
    if (name == kWordEmbeddingName) {
        return true;
    }
    return !options.transfer_relative_bias && ends_with(name, ".attention.relative_bias");
}

EncoderWeights<float> embedding_surgery(const TensorMap& donor, std::size_t new_vocab_size, const ModelConfig& config,
                                        std::uint64_t seed, const SurgeryOptions& options) {
    ModelConfig target = config;
    target.vocab_size = new_vocab_size;
    EncoderWeights<float> w = init_model(target, seed);
    std::vector<std::string> problems;
    visit_weights(w, target, [&](const std::string& name, const std::vector<std::uint32_t>& shape, std::vector<float>& v) {
        if (is_reinitialized_by_surgery(name, options)) {
            return;
        }
        const Tensor* t = donor.find(name);
        if (t == nullptr) {
            problems.push_back(name + " (missing)");
        } else if (t->shape != shape) {
            problems.push_back(name + " (shape mismatch)");
        } else {
            v = t->values;
        }
    });
    if (!problems.empty()) {
        std::string msg = "donor checkpoint is incompatible:";
        for (const auto& p : problems) msg += " " + p;
        throw FormatError(msg);
    }
    return w;
}

// ---------------------------------------------------------------------------
// Encoder

namespace {

template <typename T>
std::span<const T> cs(const std::vector<T>& v) {
    return {v.data(), v.size()};
}

template <typename T>
std::span<T> ms(std::vector<T>& v) {
    return {v.data(), v.size()};
}

template <typename T>
void make_dropout(std::vector<T>& mask, std::size_t n, double rate, Rng* rng) {
    if (rng == nullptr || rate <= 0.0) {
        mask.clear();
        return;
    }
    mask.resize(n);
    const T scale = static_cast<T>(1.0 / (1.0 - rate));
    for (auto& m : mask) {
        m = rng->bernoulli(rate) ? T(0) : scale;
    }
}

template <typename T>
void apply_mask(std::vector<T>& x, const std::vector<T>& mask) {
    if (mask.empty()) return;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] *= mask[i];
}

std::size_t rel_index(std::size_t i, std::size_t j, std::size_t max_rel) {
    const auto d = static_cast<long long>(j) - static_cast<long long>(i);
    const auto r = static_cast<long long>(max_rel);
    return static_cast<std::size_t>(std::clamp(d, -r, r) + r);
}

} // namespace

template <typename T>
void encode_sequence(const EncoderBody<T>& body, const ModelConfig& c, std::span<const T> embedded, std::size_t n,
                     std::size_t valid, SequenceCache<T>& cache, Rng* dropout_rng) {
    const std::size_t h = c.hidden_dim;
    const std::size_t f = c.ffn_dim;
    const std::size_t nh = c.num_heads;
    const std::size_t d = c.head_dim();
    const T eps = static_cast<T>(c.layer_norm_eps);
    const T scale = T(1) / std::sqrt(static_cast<T>(d));
    if (embedded.size() != n * h) {
        throw Error("embedded input has the wrong size");
    }
    if (valid == 0 || valid > n) {
        throw Error("valid length must lie in [1, n]");
    }
    cache.n = n;
    cache.valid = valid;
    cache.embedded.assign(embedded.begin(), embedded.end());
    cache.emb_xhat.resize(n * h);
    cache.emb_rstd.resize(n);
    std::vector<T> x(n * h);
    nn::layer_norm_forward(embedded, cs(body.embedding_norm.gain), cs(body.embedding_norm.bias), n, h, eps, ms(x),
                           ms(cache.emb_xhat), ms(cache.emb_rstd));
    make_dropout(cache.emb_dropout, n * h, c.dropout_rate, dropout_rng);
    apply_mask(x, cache.emb_dropout);

    cache.layers.resize(body.layers.size());
    std::vector<T> logits(valid);
    for (std::size_t li = 0; li < body.layers.size(); ++li) {
        const auto& L = body.layers[li];
        auto& lc = cache.layers[li];
        lc.input = x;
        lc.norm1_xhat.resize(n * h);
        lc.norm1_rstd.resize(n);
        lc.norm1_out.resize(n * h);
        nn::layer_norm_forward(cs(x), cs(L.attention_norm.gain), cs(L.attention_norm.bias), n, h, eps,
                               ms(lc.norm1_out), ms(lc.norm1_xhat), ms(lc.norm1_rstd));
        lc.q.resize(n * h);
        lc.k.resize(n * h);
        lc.v.resize(n * h);
        nn::linear_forward(cs(lc.norm1_out), cs(L.query.weight), cs(L.query.bias), n, h, h, ms(lc.q));
        nn::linear_forward(cs(lc.norm1_out), cs(L.key.weight), cs(L.key.bias), n, h, h, ms(lc.k));
        nn::linear_forward(cs(lc.norm1_out), cs(L.value.weight), cs(L.value.bias), n, h, h, ms(lc.v));

        lc.probs.assign(nh * n * valid, T(0));
        lc.context.assign(n * h, T(0));
        for (std::size_t hd = 0; hd < nh; ++hd) {
            for (std::size_t i = 0; i < n; ++i) {
                const T* qi = lc.q.data() + i * h + hd * d;
                T hi = -std::numeric_limits<T>::infinity();
                for (std::size_t j = 0; j < valid; ++j) {
                    const T* kj = lc.k.data() + j * h + hd * d;
                    T dot = 0;
                    for (std::size_t e = 0; e < d; ++e) dot += qi[e] * kj[e];
                    logits[j] = dot * scale + L.relative_bias[rel_index(i, j, c.max_rel_distance) * nh + hd];
                    hi = std::max(hi, logits[j]);
                }
                T sum = 0;
                T* p = lc.probs.data() + (hd * n + i) * valid;
                for (std::size_t j = 0; j < valid; ++j) {
                    p[j] = std::exp(logits[j] - hi);
                    sum += p[j];
                }
                T* ctx = lc.context.data() + i * h + hd * d;
                for (std::size_t j = 0; j < valid; ++j) {
                    p[j] /= sum;
                    const T* vj = lc.v.data() + j * h + hd * d;
                    for (std::size_t e = 0; e < d; ++e) ctx[e] += p[j] * vj[e];
                }
            }
        }
        std::vector<T> attn_out(n * h);
        nn::linear_forward(cs(lc.context), cs(L.output.weight), cs(L.output.bias), n, h, h, ms(attn_out));
        make_dropout(lc.attn_dropout, n * h, c.dropout_rate, dropout_rng);
        apply_mask(attn_out, lc.attn_dropout);
        for (std::size_t i = 0; i < n * h; ++i) x[i] += attn_out[i];
        lc.mid = x;

        lc.norm2_xhat.resize(n * h);
        lc.norm2_rstd.resize(n);
        lc.norm2_out.resize(n * h);
        nn::layer_norm_forward(cs(x), cs(L.ffn_norm.gain), cs(L.ffn_norm.bias), n, h, eps, ms(lc.norm2_out),
                               ms(lc.norm2_xhat), ms(lc.norm2_rstd));
        lc.ffn_pre.resize(n * f);
        lc.ffn_act.resize(n * f);
        nn::linear_forward(cs(lc.norm2_out), cs(L.ffn_intermediate.weight), cs(L.ffn_intermediate.bias), n, h, f,
                           ms(lc.ffn_pre));
        for (std::size_t i = 0; i < n * f; ++i) lc.ffn_act[i] = nn::gelu(lc.ffn_pre[i]);
        std::vector<T> ffn_out(n * h);
        nn::linear_forward(cs(lc.ffn_act), cs(L.ffn_output.weight), cs(L.ffn_output.bias), n, f, h, ms(ffn_out));
        make_dropout(lc.ffn_dropout, n * h, c.dropout_rate, dropout_rng);
        apply_mask(ffn_out, lc.ffn_dropout);
        for (std::size_t i = 0; i < n * h; ++i) x[i] += ffn_out[i];
    }
    cache.output = std::move(x);
}

template <typename T>
void backward_sequence(const EncoderBody<T>& body, const ModelConfig& c, const SequenceCache<T>& cache,
                       std::span<const T> grad_output, EncoderBody<T>& g, std::vector<T>& grad_embedded) {
    const std::size_t n = cache.n;
    const std::size_t valid = cache.valid;
    const std::size_t h = c.hidden_dim;
    const std::size_t f = c.ffn_dim;
    const std::size_t nh = c.num_heads;
    const std::size_t d = c.head_dim();
    const T scale = T(1) / std::sqrt(static_cast<T>(d));

    std::vector<T> dx(grad_output.begin(), grad_output.end());
    std::vector<T> dbranch(n * h);
    std::vector<T> dnorm(n * h);
    std::vector<T> dffn(n * f);
    std::vector<T> dctx(n * h);
    std::vector<T> dq(n * h), dk(n * h), dv(n * h);
    std::vector<T> dprob(valid);

    for (std::size_t li = body.layers.size(); li-- > 0;) {
        const auto& L = body.layers[li];
        const auto& lc = cache.layers[li];
        auto& G = g.layers[li];

        // FFN branch: x_out = mid + drop(W2 gelu(W1 LN2(mid)))
        dbranch = dx;
        apply_mask(dbranch, lc.ffn_dropout);
        std::fill(dffn.begin(), dffn.end(), T(0));
        nn::linear_backward(cs(lc.ffn_act), cs(L.ffn_output.weight), cs(dbranch), n, f, h, ms(G.ffn_output.weight),
                            ms(G.ffn_output.bias), ms(dffn));
        for (std::size_t i = 0; i < n * f; ++i) dffn[i] *= nn::gelu_grad(lc.ffn_pre[i]);
        std::fill(dnorm.begin(), dnorm.end(), T(0));
        nn::linear_backward(cs(lc.norm2_out), cs(L.ffn_intermediate.weight), cs(dffn), n, h, f,
                            ms(G.ffn_intermediate.weight), ms(G.ffn_intermediate.bias), ms(dnorm));
        nn::layer_norm_backward(cs(dnorm), cs(lc.norm2_xhat), cs(lc.norm2_rstd), cs(L.ffn_norm.gain), n, h,
                                ms(G.ffn_norm.gain), ms(G.ffn_norm.bias), ms(dx));

        // Attention branch: mid = input + drop(Wo attn(LN1(input)))
        dbranch = dx;
        apply_mask(dbranch, lc.attn_dropout);
        std::fill(dctx.begin(), dctx.end(), T(0));
        nn::linear_backward(cs(lc.context), cs(L.output.weight), cs(dbranch), n, h, h, ms(G.output.weight),
                            ms(G.output.bias), ms(dctx));
        std::fill(dq.begin(), dq.end(), T(0));
        std::fill(dk.begin(), dk.end(), T(0));
        std::fill(dv.begin(), dv.end(), T(0));
        for (std::size_t hd = 0; hd < nh; ++hd) {
            for (std::size_t i = 0; i < n; ++i) {
                const T* p = lc.probs.data() + (hd * n + i) * valid;
                const T* dci = dctx.data() + i * h + hd * d;
                T weighted = 0;
                for (std::size_t j = 0; j < valid; ++j) {
                    const T* vj = lc.v.data() + j * h + hd * d;
                    T* dvj = dv.data() + j * h + hd * d;
                    T dp = 0;
                    for (std::size_t e = 0; e < d; ++e) {
                        dp += dci[e] * vj[e];
                        dvj[e] += p[j] * dci[e];
                    }
                    dprob[j] = dp;
                    weighted += p[j] * dp;
                }
                const T* qi = lc.q.data() + i * h + hd * d;
                T* dqi = dq.data() + i * h + hd * d;
                for (std::size_t j = 0; j < valid; ++j) {
                    const T dlogit = p[j] * (dprob[j] - weighted);
                    G.relative_bias[rel_index(i, j, c.max_rel_distance) * nh + hd] += dlogit;
                    const T* kj = lc.k.data() + j * h + hd * d;
                    T* dkj = dk.data() + j * h + hd * d;
                    const T ds = dlogit * scale;
                    for (std::size_t e = 0; e < d; ++e) {
                        dqi[e] += ds * kj[e];
                        dkj[e] += ds * qi[e];
                    }
                }
            }
        }
        std::fill(dnorm.begin(), dnorm.end(), T(0));
        nn::linear_backward(cs(lc.norm1_out), cs(L.query.weight), cs(dq), n, h, h, ms(G.query.weight),
                            ms(G.query.bias), ms(dnorm));
        nn::linear_backward(cs(lc.norm1_out), cs(L.key.weight), cs(dk), n, h, h, ms(G.key.weight), ms(G.key.bias),
                            ms(dnorm));
        nn::linear_backward(cs(lc.norm1_out), cs(L.value.weight), cs(dv), n, h, h, ms(G.value.weight),
                            ms(G.value.bias), ms(dnorm));
        nn::layer_norm_backward(cs(dnorm), cs(lc.norm1_xhat), cs(lc.norm1_rstd), cs(L.attention_norm.gain), n, h,
                                ms(G.attention_norm.gain), ms(G.attention_norm.bias), ms(dx));
    }
    apply_mask(dx, cache.emb_dropout);
    grad_embedded.assign(n * h, T(0));
    nn::layer_norm_backward(cs(dx), cs(cache.emb_xhat), cs(cache.emb_rstd), cs(body.embedding_norm.gain), n, h,
                            ms(g.embedding_norm.gain), ms(g.embedding_norm.bias), ms(grad_embedded));
}

template <typename T>
std::vector<T> gather_rows(std::span<const T> table, std::span<const TokenId> ids, std::size_t hidden) {
    std::vector<T> out(ids.size() * hidden);
    const std::size_t rows = table.size() / hidden;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto id = static_cast<std::size_t>(ids[i]);
        if (ids[i] < 0 || id >= rows) {
            throw Error("token id " + std::to_string(ids[i]) + " outside embedding table of " + std::to_string(rows) +
                        " rows");
        }
        std::copy_n(table.data() + id * hidden, hidden, out.data() + i * hidden);
    }
    return out;
}

template <typename T>
void scatter_add_rows(std::span<T> table, std::span<const TokenId> ids, std::span<const T> rows, std::size_t hidden) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
        T* dst = table.data() + static_cast<std::size_t>(ids[i]) * hidden;
        const T* src = rows.data() + i * hidden;
        for (std::size_t k = 0; k < hidden; ++k) dst[k] += src[k];
    }
}

std::vector<float> forward(const EncoderWeights<float>& weights, const ModelConfig& config,
                           std::span<const TokenId> ids, std::span<const std::size_t> real_lens, std::size_t seq_len) {
    config.validate();
    if (weights.word_embedding.size() != config.vocab_size * config.hidden_dim ||
        weights.body.layers.size() != config.num_layers) {
        throw Error("weights do not match the model config");
    }
    if (seq_len == 0 || ids.size() != real_lens.size() * seq_len) {
        throw Error("ids must be [batch x " + std::to_string(seq_len) + "] with one real length per row");
    }
    const std::size_t h = config.hidden_dim;
    std::vector<float> out(ids.size() * h);
    SequenceCache<float> cache;
    for (std::size_t b = 0; b < real_lens.size(); ++b) {
        const auto row = ids.subspan(b * seq_len, seq_len);
        const auto embedded = gather_rows<float>(cs(weights.word_embedding), row, h);
        encode_sequence<float>(weights.body, config, cs(embedded), seq_len, real_lens[b], cache, nullptr);
        std::copy(cache.output.begin(), cache.output.end(), out.begin() + static_cast<std::ptrdiff_t>(b * seq_len * h));
    }
    return out;
}

#define LANGADAPT_INSTANTIATE(T)                                                                                   \
    template EncoderBody<T> zeros_body<T>(const ModelConfig&);                                                     \
    template EncoderWeights<T> zeros_like<T>(const ModelConfig&);                                                  \
    template void encode_sequence<T>(const EncoderBody<T>&, const ModelConfig&, std::span<const T>, std::size_t,   \
                                     std::size_t, SequenceCache<T>&, Rng*);                                        \
    template void backward_sequence<T>(const EncoderBody<T>&, const ModelConfig&, const SequenceCache<T>&,         \
                                       std::span<const T>, EncoderBody<T>&, std::vector<T>&);                      \
    template std::vector<T> gather_rows<T>(std::span<const T>, std::span<const TokenId>, std::size_t);             \
    template void scatter_add_rows<T>(std::span<T>, std::span<const TokenId>, std::span<const T>, std::size_t);

LANGADAPT_INSTANTIATE(float)
LANGADAPT_INSTANTIATE(double)

#undef LANGADAPT_INSTANTIATE

} // namespace langadapt::model
