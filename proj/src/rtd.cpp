#include "langadapt/rtd.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "langadapt/error.h"
#include "langadapt/nn.h"

namespace langadapt::rtd {

using packing::kSeqLen;

void PretrainConfig::validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) {
        throw Error("pretrain lambda must be positive");
    }
    if (!(mask_rate > 0.0 && mask_rate < 1.0)) {
        throw Error("pretrain mask_rate must lie in (0, 1)");
    }
    if (phases.empty()) {
        throw Error("pretrain needs at least one phase");
    }
    for (const auto& p : phases) {
        if (p.epochs == 0 || p.batch_size == 0) {
            throw Error("phase epochs and batch size must be at least 1");
        }
    }
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw Error("pretrain learning_rate must be positive");
    }
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
        throw Error("pretrain warmup_fraction must lie in [0, 1)");
    }
    if (!(temperature > 0.0)) {
        throw Error("pretrain temperature must be positive");
    }
}

std::size_t generator_depth(const PretrainConfig& config, const ModelConfig& discriminator) {
    if (config.generator_layers != 0) {
        return config.generator_layers;
    }
    return (discriminator.num_layers + 1) / 2;
}

GdesPair<float> make_pair(const EncoderWeights<float>& generator_init, const EncoderWeights<float>& discriminator_init,
                          const ModelConfig& config, std::size_t generator_layers, std::uint64_t seed) {
    config.validate();
    const std::size_t table = config.vocab_size * config.hidden_dim;
    if (generator_init.word_embedding.size() != table || discriminator_init.word_embedding.size() != table) {
        throw Error("initial weights do not match the model config");
    }
    if (discriminator_init.body.layers.size() != config.num_layers) {
        throw Error("discriminator init has " + std::to_string(discriminator_init.body.layers.size()) +
                    " layers, config says " + std::to_string(config.num_layers));
    }
    if (generator_layers == 0 || generator_layers > generator_init.body.layers.size()) {
        throw Error("generator depth " + std::to_string(generator_layers) + " not available in the initial weights");
    }
    GdesPair<float> pair;
    pair.discriminator_config = config;
    pair.generator_config = config;
    pair.generator_config.num_layers = generator_layers;
    pair.shared_embedding = generator_init.word_embedding;
    pair.delta_embedding.assign(table, 0.0f);
    pair.generator.embedding_norm = generator_init.body.embedding_norm;
    pair.generator.layers.assign(generator_init.body.layers.begin(),
                                 generator_init.body.layers.begin() + static_cast<std::ptrdiff_t>(generator_layers));
    pair.discriminator = discriminator_init.body;
    pair.generator_head_bias.assign(config.vocab_size, 0.0f);
    pair.discriminator_head_weight = model::init_tensor("discriminator_head.weight", config.hidden_dim, seed);
    pair.discriminator_head_bias.assign(1, 0.0f);
    return pair;
}

template <typename T>
GdesPair<T> zeros_like(const GdesPair<T>& pair) {
    GdesPair<T> out;
    out.generator_config = pair.generator_config;
    out.discriminator_config = pair.discriminator_config;
    out.generator = model::zeros_body<T>(pair.generator_config);
    out.discriminator = model::zeros_body<T>(pair.discriminator_config);
    out.shared_embedding.assign(pair.shared_embedding.size(), T(0));
    out.delta_embedding.assign(pair.delta_embedding.size(), T(0));
    out.generator_head_bias.assign(pair.generator_head_bias.size(), T(0));
    out.discriminator_head_weight.assign(pair.discriminator_head_weight.size(), T(0));
    out.discriminator_head_bias.assign(pair.discriminator_head_bias.size(), T(0));
    return out;
}

template GdesPair<float> zeros_like<float>(const GdesPair<float>&);
template GdesPair<double> zeros_like<double>(const GdesPair<double>&);

std::size_t RtdBatch::masked_count() const {
    return static_cast<std::size_t>(std::count(mask_positions.begin(), mask_positions.end(), std::uint8_t{1}));
}

std::size_t RtdBatch::scored_count() const {
    std::size_t n = 0;
    for (auto len : real_lens) {
        n += len >= 2 ? len - 2 : 0;
    }
    return n;
}

RtdBatch mask_batch(std::span<const packing::PackedExample> examples, double mask_rate, Rng& rng) {
    RtdBatch batch;
    batch.size = examples.size();
    batch.original_ids.reserve(examples.size() * kSeqLen);
    for (const auto& ex : examples) {
        batch.original_ids.insert(batch.original_ids.end(), ex.ids.begin(), ex.ids.end());
        batch.real_lens.push_back(ex.real_len);
    }
    batch.corrupted_ids = batch.original_ids;
    batch.mask_positions.assign(batch.original_ids.size(), 0);
    for (std::size_t b = 0; b < examples.size(); ++b) {
        const std::size_t len = batch.real_lens[b];
        if (len < 3) {
            continue;
        }
        std::uint8_t* mask = batch.mask_positions.data() + b * kSeqLen;
        bool any = false;
        for (std::size_t i = 1; i + 1 < len; ++i) {
            if (rng.bernoulli(mask_rate)) {
                mask[i] = 1;
                any = true;
            }
        }
        if (!any) {
            mask[1 + rng.below(len - 2)] = 1;
        }
        for (std::size_t i = 1; i + 1 < len; ++i) {
            if (mask[i]) {
                batch.corrupted_ids[b * kSeqLen + i] = tokenizer::kMask;
            }
        }
    }
    return batch;
}

namespace {

template <typename T>
std::span<const T> cs(const std::vector<T>& v) {
    return {v.data(), v.size()};
}

template <typename T>
TokenId sample_row(const T* logits, std::size_t vocab, Rng& rng, double temperature) {
    T hi = logits[0];
    for (std::size_t v = 0; v < vocab; ++v) {
        if (!std::isfinite(static_cast<double>(logits[v]))) {
            throw NumericError("non-finite generator logit");
        }
        hi = std::max(hi, logits[v]);
    }
    std::vector<double> p(vocab);
    double sum = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) {
        p[v] = std::exp((static_cast<double>(logits[v]) - static_cast<double>(hi)) / temperature);
        sum += p[v];
    }
    const double u = rng.uniform() * sum;
    double acc = 0.0;
    for (std::size_t v = 0; v < vocab; ++v) {
        acc += p[v];
        if (u < acc) {
            return static_cast<TokenId>(v);
        }
    }
    // Rounding left u at the very top; take the last token with mass.
    for (std::size_t v = vocab; v-- > 0;) {
        if (p[v] > 0.0) return static_cast<TokenId>(v);
    }
    return 0;
}

/// Generator forward on one row. Returns logits [masked x vocab] for the
/// masked positions listed in `positions`.
template <typename T>
std::vector<T> generator_forward(const GdesPair<T>& pair, std::span<const TokenId> row,
                                 const std::vector<std::size_t>& positions, model::SequenceCache<T>& cache,
                                 Rng* dropout) {
    const auto& c = pair.generator_config;
    const std::size_t h = c.hidden_dim;
    const std::size_t vocab = c.vocab_size;
    const auto embedded = model::gather_rows<T>(cs(pair.shared_embedding), row, h);
    model::encode_sequence<T>(pair.generator, c, cs(embedded), row.size(), row.size(), cache, dropout);
    std::vector<T> logits(positions.size() * vocab);
    for (std::size_t m = 0; m < positions.size(); ++m) {
        const T* hid = cache.output.data() + positions[m] * h;
        T* out = logits.data() + m * vocab;
        for (std::size_t v = 0; v < vocab; ++v) {
            const T* e = pair.shared_embedding.data() + v * h;
            T dot = pair.generator_head_bias[v];
            for (std::size_t k = 0; k < h; ++k) dot += hid[k] * e[k];
            out[v] = dot;
        }
    }
    return logits;
}

/// Discriminator forward on one row; `shared` stands in for E_G.
template <typename T>
std::vector<T> discriminator_forward(const GdesPair<T>& pair, std::span<const T> shared, std::span<const TokenId> row,
                                     model::SequenceCache<T>& cache, Rng* dropout) {
    const auto& c = pair.discriminator_config;
    const std::size_t h = c.hidden_dim;
    auto embedded = model::gather_rows<T>(shared, row, h);
    const auto delta = model::gather_rows<T>(cs(pair.delta_embedding), row, h);
    for (std::size_t i = 0; i < embedded.size(); ++i) embedded[i] += delta[i];
    model::encode_sequence<T>(pair.discriminator, c, cs(embedded), row.size(), row.size(), cache, dropout);
    std::vector<T> logits(row.size(), T(0));
    for (std::size_t i = 1; i + 1 < row.size(); ++i) {
        const T* hid = cache.output.data() + i * h;
        T z = pair.discriminator_head_bias[0];
        for (std::size_t k = 0; k < h; ++k) z += hid[k] * pair.discriminator_head_weight[k];
        logits[i] = z;
    }
    return logits;
}

std::vector<std::size_t> masked_in_row(const RtdBatch& batch, std::size_t b) {
    std::vector<std::size_t> out;
    const std::uint8_t* mask = batch.mask_positions.data() + b * kSeqLen;
    for (std::size_t i = 0; i < batch.real_lens[b]; ++i) {
        if (mask[i]) out.push_back(i);
    }
    return out;
}

void check_batch(const RtdBatch& batch) {
    const std::size_t cells = batch.size * kSeqLen;
    if (batch.original_ids.size() != cells || batch.corrupted_ids.size() != cells ||
        batch.mask_positions.size() != cells || batch.real_lens.size() != batch.size) {
        throw Error("inconsistent batch shapes");
    }
    for (auto len : batch.real_lens) {
        if (len < 2 || len > kSeqLen) {
            throw Error("batch real length " + std::to_string(len) + " out of range");
        }
    }
}

} // namespace

MlmOutput generator_mlm_loss(const GdesPair<float>& pair, const RtdBatch& batch) {
    check_batch(batch);
    const std::size_t vocab = pair.generator_config.vocab_size;
    MlmOutput out;
    model::SequenceCache<float> cache;
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t b = 0; b < batch.size; ++b) {
        const auto positions = masked_in_row(batch, b);
        if (positions.empty()) continue;
        const auto logits = generator_forward<float>(pair, batch.row(batch.corrupted_ids, b), positions, cache, nullptr);
        for (std::size_t m = 0; m < positions.size(); ++m) {
            const std::span<const float> row(logits.data() + m * vocab, vocab);
            const auto target = static_cast<std::size_t>(batch.original_ids[b * kSeqLen + positions[m]]);
            sum += static_cast<double>(nn::log_sum_exp(row)) - row[target];
            ++count;
        }
        out.logits.insert(out.logits.end(), logits.begin(), logits.end());
    }
    out.loss = count ? sum / static_cast<double>(count) : 0.0;
    return out;
}

std::vector<TokenId> sample_replacements(std::span<const float> logits, std::size_t vocab, Rng& rng,
                                         double temperature) {
    if (vocab == 0 || logits.size() % vocab != 0) {
        throw Error("logits are not a whole number of vocabulary rows");
    }
    if (!(temperature > 0.0)) {
        throw Error("temperature must be positive");
    }
    std::vector<TokenId> out(logits.size() / vocab);
    for (std::size_t r = 0; r < out.size(); ++r) {
        out[r] = sample_row(logits.data() + r * vocab, vocab, rng, temperature);
    }
    return out;
}

RtdInputs build_rtd_inputs(std::span<const TokenId> original, std::span<const std::uint8_t> mask_positions,
                           std::span<const TokenId> samples) {
    if (original.size() != mask_positions.size()) {
        throw Error("mask does not match the original ids");
    }
    RtdInputs out{{original.begin(), original.end()}, std::vector<std::uint8_t>(original.size(), 0)};
    std::size_t k = 0;
    for (std::size_t i = 0; i < original.size(); ++i) {
        if (!mask_positions[i]) continue;
        if (k >= samples.size()) {
            throw Error("fewer samples than masked positions");
        }
        out.discriminator_ids[i] = samples[k++];
        out.labels[i] = out.discriminator_ids[i] != original[i] ? 1 : 0;
    }
    if (k != samples.size()) {
        throw Error("more samples than masked positions");
    }
    return out;
}

std::vector<float> discriminator_logits(const GdesPair<float>& pair, std::span<const TokenId> discriminator_ids,
                                        std::span<const std::size_t> real_lens) {
    if (discriminator_ids.size() != real_lens.size() * kSeqLen) {
        throw Error("discriminator ids must be [batch x 512]");
    }
    std::vector<float> out(discriminator_ids.size(), 0.0f);
    model::SequenceCache<float> cache;
    for (std::size_t b = 0; b < real_lens.size(); ++b) {
        const auto row = discriminator_ids.subspan(b * kSeqLen, real_lens[b]);
        const auto z = discriminator_forward<float>(pair, cs(pair.shared_embedding), row, cache, nullptr);
        std::copy(z.begin(), z.end(), out.begin() + static_cast<std::ptrdiff_t>(b * kSeqLen));
    }
    return out;
}

double discriminator_rtd_loss(const GdesPair<float>& pair, std::span<const TokenId> discriminator_ids,
                              std::span<const std::uint8_t> rtd_labels, std::span<const std::size_t> real_lens) {
    if (rtd_labels.size() != discriminator_ids.size()) {
        throw Error("labels do not match the discriminator ids");
    }
    const auto z = discriminator_logits(pair, discriminator_ids, real_lens);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t b = 0; b < real_lens.size(); ++b) {
        for (std::size_t i = 1; i + 1 < real_lens[b]; ++i) {
            const std::size_t k = b * kSeqLen + i;
            const double zi = z[k];
            sum += nn::softplus(zi) - (rtd_labels[k] ? zi : 0.0);
            ++count;
        }
    }
    return count ? sum / static_cast<double>(count) : 0.0;
}

template <typename T>
LossReport accumulate_gradients(const GdesPair<T>& pair, RtdBatch& batch, double lambda, GdesPair<T>& grads,
                                const GradientOptions<T>& options) {
    check_batch(batch);
    const bool sampling = options.sampler != nullptr;
    if (sampling) {
        batch.discriminator_ids = batch.original_ids;
        batch.rtd_labels.assign(batch.original_ids.size(), 0);
    } else if (batch.discriminator_ids.size() != batch.original_ids.size() ||
               batch.rtd_labels.size() != batch.original_ids.size()) {
        throw Error("batch has no discriminator inputs and no sampler was given");
    }
    const std::span<const T> shared = options.frozen_shared.empty() ? cs(pair.shared_embedding) : options.frozen_shared;
    if (shared.size() != pair.shared_embedding.size()) {
        throw Error("frozen embedding has the wrong size");
    }
    const bool mlm_grad = options.backward && options.path != LossPath::rtd;
    const bool rtd_grad = options.backward && options.path != LossPath::mlm;
    const auto& gc = pair.generator_config;
    const auto& dc = pair.discriminator_config;
    const std::size_t h = gc.hidden_dim;
    const std::size_t vocab = gc.vocab_size;
    const std::size_t masked_total = batch.masked_count();
    const std::size_t scored_total = batch.scored_count();
    const T mlm_scale = masked_total ? T(1) / static_cast<T>(masked_total) : T(0);
    const T rtd_scale = scored_total ? static_cast<T>(lambda) / static_cast<T>(scored_total) : T(0);

    double mlm_sum = 0.0;
    double rtd_sum = 0.0;
    model::SequenceCache<T> cache;
    std::vector<T> dhidden;
    std::vector<T> demb;
    std::vector<T> prob(vocab);
    for (std::size_t b = 0; b < batch.size; ++b) {
        const std::size_t n = batch.real_lens[b];
        const std::size_t base = b * kSeqLen;

        // Generator: MLM on the corrupted row.
        const auto positions = masked_in_row(batch, b);
        if (!positions.empty()) {
            const auto corrupted = batch.row(batch.corrupted_ids, b);
            const auto logits = generator_forward<T>(pair, corrupted, positions, cache, options.dropout);
            if (mlm_grad) dhidden.assign(n * h, T(0));
            for (std::size_t m = 0; m < positions.size(); ++m) {
                const T* z = logits.data() + m * vocab;
                const auto target = static_cast<std::size_t>(batch.original_ids[base + positions[m]]);
                const T lse = nn::log_sum_exp(std::span<const T>(z, vocab));
                mlm_sum += static_cast<double>(lse - z[target]);
                if (sampling) {
                    const TokenId s = sample_row(z, vocab, *options.sampler, options.temperature);
                    batch.discriminator_ids[base + positions[m]] = s;
                    batch.rtd_labels[base + positions[m]] = s != batch.original_ids[base + positions[m]] ? 1 : 0;
                }
                if (!mlm_grad) continue;
                const T* hid = cache.output.data() + positions[m] * h;
                T* dh = dhidden.data() + positions[m] * h;
                for (std::size_t v = 0; v < vocab; ++v) {
                    prob[v] = std::exp(z[v] - lse);
                }
                prob[target] -= T(1);
                for (std::size_t v = 0; v < vocab; ++v) {
                    const T dz = prob[v] * mlm_scale;
                    grads.generator_head_bias[v] += dz;
                    const T* e = pair.shared_embedding.data() + v * h;
                    T* de = grads.shared_embedding.data() + v * h;
                    for (std::size_t k = 0; k < h; ++k) {
                        de[k] += dz * hid[k];
                        dh[k] += dz * e[k];
                    }
                }
            }
            if (mlm_grad) {
                model::backward_sequence<T>(pair.generator, gc, cache, cs(dhidden), grads.generator, demb);
                model::scatter_add_rows<T>(std::span<T>(grads.shared_embedding), corrupted, cs(demb), h);
            }
        }

        // Discriminator: RTD over every non-special position.
        const auto disc_row = batch.row(batch.discriminator_ids, b);
        const auto z = discriminator_forward<T>(pair, shared, disc_row, cache, options.dropout);
        if (rtd_grad) dhidden.assign(n * h, T(0));
        for (std::size_t i = 1; i + 1 < n; ++i) {
            const T y = batch.rtd_labels[base + i] ? T(1) : T(0);
            rtd_sum += static_cast<double>(nn::softplus(z[i]) - y * z[i]);
            if (!rtd_grad) continue;
            const T dz = (nn::sigmoid(z[i]) - y) * rtd_scale;
            grads.discriminator_head_bias[0] += dz;
            const T* hid = cache.output.data() + i * h;
            T* dh = dhidden.data() + i * h;
            for (std::size_t k = 0; k < h; ++k) {
                grads.discriminator_head_weight[k] += dz * hid[k];
                dh[k] = dz * pair.discriminator_head_weight[k];
            }
        }
        if (rtd_grad) {
            model::backward_sequence<T>(pair.discriminator, dc, cache, cs(dhidden), grads.discriminator, demb);
            // Stop-gradient: the embedding gradient lands in E_delta only.
            model::scatter_add_rows<T>(std::span<T>(grads.delta_embedding), disc_row, cs(demb), h);
        }
    }
    LossReport report;
    report.mlm = masked_total ? mlm_sum / static_cast<double>(masked_total) : 0.0;
    report.rtd = scored_total ? rtd_sum / static_cast<double>(scored_total) : 0.0;
    report.total = total_loss(report.mlm, report.rtd, lambda);
    return report;
}

template LossReport accumulate_gradients<float>(const GdesPair<float>&, RtdBatch&, double, GdesPair<float>&,
                                                const GradientOptions<float>&);
template LossReport accumulate_gradients<double>(const GdesPair<double>&, RtdBatch&, double, GdesPair<double>&,
                                                 const GradientOptions<double>&);

namespace {

bool decays(const std::string& name) {
    const auto ends = [&](std::string_view s) {
        return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
    };
    return !ends(".bias") && !ends(".gain");
}

} // namespace

LossReport backward_and_step(GdesPair<float>& pair, std::span<const packing::PackedExample> examples,
                             const PretrainConfig& config, TrainerState& state, double learning_rate, Rng& data_rng,
                             Rng* dropout_rng) {
    RtdBatch batch = mask_batch(examples, config.mask_rate, data_rng);
    GdesPair<float> grads = zeros_like(pair);
    GradientOptions<float> options;
    options.sampler = &data_rng;
    options.temperature = config.temperature;
    options.dropout = dropout_rng;
    const LossReport report = accumulate_gradients(pair, batch, config.lambda, grads, options);
    const std::size_t step = state.step + 1;
    if (!std::isfinite(report.total)) {
        throw NumericError("non-finite loss at step " + std::to_string(step));
    }
    std::vector<ParamRef> params;
    visit_pair(grads, [&](const std::string& name, const std::vector<float>& g) {
        for (float x : g) {
            if (!std::isfinite(x)) {
                throw NumericError("non-finite gradient in " + name + " at step " + std::to_string(step));
            }
        }
        params.push_back({nullptr, &g, decays(name)});
    });
    std::size_t k = 0;
    visit_pair(pair, [&](const std::string&, std::vector<float>& w) { params[k++].value = &w; });
    state.optimizer.step(params, learning_rate);
    state.step = step;
    return report;
}

std::size_t total_steps(const PretrainConfig& config, std::size_t dataset_size) {
    std::size_t total = 0;
    for (const auto& p : config.phases) {
        total += p.epochs * ((dataset_size + p.batch_size - 1) / p.batch_size);
    }
    return total;
}

double learning_rate_at(const PretrainConfig& config, std::size_t step, std::size_t total) {
    const auto warmup = static_cast<std::size_t>(std::floor(config.warmup_fraction * static_cast<double>(total)));
    if (warmup > 0 && step <= warmup) {
        return config.learning_rate * static_cast<double>(step) / static_cast<double>(warmup);
    }
    return config.learning_rate;
}

TrainResult train_rtd(std::span<const packing::PackedExample> dataset, const PretrainConfig& config,
                      const EncoderWeights<float>& initial_generator,
                      const EncoderWeights<float>& initial_discriminator, const ModelConfig& model_config,
                      const std::function<void(const StepRecord&)>& on_step) {
    config.validate();
    if (dataset.empty()) {
        throw Error("pre-training dataset is empty");
    }
    TrainResult result;
    result.pair = make_pair(initial_generator, initial_discriminator, model_config,
                            generator_depth(config, model_config), config.seed);
    TrainerState state{AdamW(config.adamw), 0};
    Rng data_rng(mix_seed(config.seed, 1));
    Rng dropout_rng(mix_seed(config.seed, 2));
    Rng* dropout = model_config.dropout_rate > 0.0 ? &dropout_rng : nullptr;
    const std::size_t total = total_steps(config, dataset.size());

    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<packing::PackedExample> batch;
    for (std::size_t p = 0; p < config.phases.size(); ++p) {
        const Phase& phase = config.phases[p];
        for (std::size_t epoch = 0; epoch < phase.epochs; ++epoch) {
            for (std::size_t i = order.size(); i > 1; --i) {
                std::swap(order[i - 1], order[data_rng.below(i)]);
            }
            for (std::size_t start = 0; start < order.size(); start += phase.batch_size) {
                const std::size_t end = std::min(order.size(), start + phase.batch_size);
                batch.clear();
                for (std::size_t i = start; i < end; ++i) batch.push_back(dataset[order[i]]);
                const double lr = learning_rate_at(config, state.step + 1, total);
                StepRecord record;
                try {
                    record.loss = backward_and_step(result.pair, batch, config, state, lr, data_rng, dropout);
                } catch (const NumericError& e) {
                    result.error = e.what();
                    return result;
                }
                record.step = state.step;
                record.phase = p + 1;
                result.history.push_back(record);
                if (on_step) on_step(record);
            }
        }
    }
    return result;
}

namespace {

void add_body(TensorMap& map, const EncoderBody<float>& body, const ModelConfig& c) {
    model::visit_body(body, c,
                      [&](const std::string& name, const std::vector<std::uint32_t>& shape,
                          const std::vector<float>& v) { map.insert(name, Tensor{shape, v}); });
}

std::uint32_t u32(std::size_t v) { return static_cast<std::uint32_t>(v); }

} // namespace

TensorMap generator_tensors(const GdesPair<float>& pair) {
    const auto& c = pair.generator_config;
    TensorMap map;
    map.insert(model::kWordEmbeddingName, Tensor{{u32(c.vocab_size), u32(c.hidden_dim)}, pair.shared_embedding});
    add_body(map, pair.generator, c);
    map.insert("generator_head.bias", Tensor{{u32(c.vocab_size)}, pair.generator_head_bias});
    return map;
}

TensorMap discriminator_tensors(const GdesPair<float>& pair) {
    const auto& c = pair.discriminator_config;
    std::vector<float> fused(pair.shared_embedding.size());
    for (std::size_t i = 0; i < fused.size(); ++i) {
        fused[i] = pair.shared_embedding[i] + pair.delta_embedding[i];
    }
    TensorMap map;
    map.insert(model::kWordEmbeddingName, Tensor{{u32(c.vocab_size), u32(c.hidden_dim)}, std::move(fused)});
    add_body(map, pair.discriminator, c);
    map.insert("discriminator_head.weight", Tensor{{u32(c.hidden_dim), 1}, pair.discriminator_head_weight});
    map.insert("discriminator_head.bias", Tensor{{1}, pair.discriminator_head_bias});
    return map;
}

void export_generator(const GdesPair<float>& pair, const std::filesystem::path& path) {
    save_checkpoint(generator_tensors(pair), path);
}

void export_discriminator(const GdesPair<float>& pair, const std::filesystem::path& path) {
    save_checkpoint(discriminator_tensors(pair), path);
}

std::string format_history_csv(std::span<const StepRecord> history) {
    std::string out = "step,phase,L_mlm,L_rtd,total\n";
    char line[160];
    for (const auto& r : history) {
        std::snprintf(line, sizeof line, "%zu,%zu,%.17g,%.17g,%.17g\n", r.step, r.phase, r.loss.mlm, r.loss.rtd,
                      r.loss.total);
        out += line;
    }
    return out;
}

} // namespace langadapt::rtd
