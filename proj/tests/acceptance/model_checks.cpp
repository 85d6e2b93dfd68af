#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "acceptance.h"
#include "langadapt/metrics.h"
#include "langadapt/model.h"
#include "langadapt/random.h"

using namespace langadapt;

namespace acceptance {

Outcome metric_oracles(const Context&) {
    const std::vector<double> x = {1, 2, 3, 4}, y = {1, 3, 2, 4};
    const double r = metrics::pearson(x, y);

    const metrics::TagSequences gold = {{"B-PER", "I-PER", "O", "B-LOC"}};
    const metrics::TagSequences pred = {{"B-PER", "I-PER", "O", "O"}};
    const auto s = metrics::bio_entity_f1(pred, gold);
    const bool bio_ok = std::abs(s.precision - 1.0) <= 1e-12 && std::abs(s.recall - 0.5) <= 1e-12 &&
                        std::abs(s.f1 - 2.0 / 3.0) <= 1e-12;

    // Symmetry and affine invariance on random vectors.
    Rng rng(8);
    double worst = 0.0;
    const std::size_t trials = 1000;
    for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t n = 3 + rng.below(62);
        std::vector<double> a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = rng.normal();
            b[i] = 0.5 * a[i] + rng.normal();
        }
        const double base = metrics::pearson(a, b);
        const double scale = std::exp(6.0 * rng.uniform() - 3.0);
        const double shift = 200.0 * rng.uniform() - 100.0;
        std::vector<double> up(n), down(n);
        for (std::size_t i = 0; i < n; ++i) {
            up[i] = scale * a[i] + shift;
            down[i] = -scale * a[i] + shift;
        }
        worst = std::max({worst, std::abs(metrics::pearson(b, a) - base), std::abs(metrics::pearson(up, b) - base),
                          std::abs(metrics::pearson(down, b) + base), std::max(0.0, std::abs(base) - 1.0)});
    }

    char buf[300];
    std::snprintf(buf, sizeof buf,
                  "pearson((1,2,3,4),(1,3,2,4)) = %.17g; BIO fixture P=%.17g R=%.17g F1=%.17g; "
                  "%zu random vectors: max deviation under swap / a*x+b (a>0) / a<0 sign flip %.3g (tol 1e-12)",
                  r, s.precision, s.recall, s.f1, trials, worst);
    return {std::abs(r - 0.8) <= 1e-12 && bio_ok && worst <= 1e-12, buf};
}

namespace {

struct Moments {
    double mean = 0.0;
    double std = 0.0;
};

Moments moments(const std::vector<float>& v) {
    double m = 0.0;
    for (float x : v) m += x;
    m /= double(v.size());
    double ss = 0.0;
    for (float x : v) ss += (x - m) * (x - m);
    return {m, std::sqrt(ss / double(v.size()))};
}

} // namespace

Outcome surgery_preservation(const Context&) {
    auto donor_cfg = model::desk_preset();
    donor_cfg.vocab_size = 96;
    // A donor that no longer looks freshly initialized: gains and biases
    // moved off 1 and 0 like trained weights would be.
    auto donor_weights = model::init_model(donor_cfg, 5);
    Rng noise(55);
    model::visit_weights(donor_weights, donor_cfg, [&](const std::string&, const auto&, std::vector<float>& v) {
        for (auto& x : v) x += static_cast<float>(0.1 * noise.normal());
    });
    const auto donor = model::to_tensor_map(donor_weights, donor_cfg);

    const std::size_t new_vocab = 8000; // 128 000 embedding values at hidden 16
    const std::uint64_t seed = 9;
    std::size_t copied = 0, copied_bad = 0, fresh = 0, fresh_bad = 0, transferred_bad = 0;
    std::string first_bad;
    const auto note = [&](const std::string& what) {
        if (first_bad.empty()) first_bad = what;
    };
    double worst_sigma = 0.0;
    for (int transfer = 0; transfer < 2; ++transfer) {
        model::SurgeryOptions opts;
        opts.transfer_relative_bias = transfer == 1;
        auto target_cfg = donor_cfg;
        target_cfg.vocab_size = new_vocab;
        const auto result =
            model::to_tensor_map(model::embedding_surgery(donor, new_vocab, donor_cfg, seed, opts), target_cfg);
        for (const auto& [name, tensor] : result) {
            const bool is_embedding =
                name == model::kWordEmbeddingName || name.find(".attention.relative_bias") != std::string::npos;
            const Tensor* from = donor.find(name);
            if (!is_embedding || (opts.transfer_relative_bias && name != model::kWordEmbeddingName)) {
                // Carried over: must match the donor bit for bit.
                const bool same = from != nullptr && *from == tensor;
                if (transfer == 0) {
                    ++copied;
                    copied_bad += same ? 0 : 1;
                } else {
                    transferred_bad += same ? 0 : 1;
                }
                if (!same) note(name + " not bit-identical");
                continue;
            }
            if (transfer == 1) continue;
            ++fresh;
            const auto expected = model::init_tensor(name, tensor.numel(), seed);
            const auto m = moments(tensor.values);
            const double n = double(tensor.numel());
            const double mean_sigma = std::abs(m.mean) / (0.02 / std::sqrt(n));
            const double std_sigma = std::abs(m.std - 0.02) / (0.02 / std::sqrt(2.0 * n));
            worst_sigma = std::max({worst_sigma, mean_sigma, std_sigma});
            const bool differs = from == nullptr || from->values != tensor.values;
            const bool ok = tensor.values == expected && mean_sigma <= 3.0 && std_sigma <= 3.0 && differs &&
                            model::is_reinitialized_by_surgery(name, opts);
            fresh_bad += ok ? 0 : 1;
            if (!ok) note(name + " fails the init oracle");
        }
    }

    char buf[400];
    std::snprintf(buf, sizeof buf,
                  "%zu donor tensors copied (%zu not bit-identical); %zu embedding tensors re-drawn "
                  "(word embedding %zu values; %zu off the seeded init, worst moment deviation %.2f sigma); "
                  "with relative-bias transfer %zu mismatches%s%s",
                  copied, copied_bad, fresh, new_vocab * donor_cfg.hidden_dim, fresh_bad, worst_sigma,
                  transferred_bad, first_bad.empty() ? "" : "; first problem: ", first_bad.c_str());
    return {copied > 0 && fresh > 0 && copied_bad == 0 && fresh_bad == 0 && transferred_bad == 0, buf};
}

} // namespace acceptance
