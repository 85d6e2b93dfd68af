#include "langadapt/config.h"

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "langadapt/error.h"

namespace langadapt {

namespace {

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

double to_double(const std::string& v) {
    char* end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(d)) {
        throw Error("expected a number, got '" + v + "'");
    }
    return d;
}

std::uint64_t to_u64(const std::string& v) {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
        throw Error("expected a non-negative integer, got '" + v + "'");
    }
    errno = 0;
    const unsigned long long x = std::strtoull(v.c_str(), nullptr, 10);
    if (errno == ERANGE) {
        throw Error("integer out of range: '" + v + "'");
    }
    return x;
}

std::size_t to_size(const std::string& v) { return static_cast<std::size_t>(to_u64(v)); }

bool to_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw Error("expected true or false, got '" + v + "'");
}

std::vector<std::string> to_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) throw Error("empty item in list '" + v + "'");
        out.push_back(item);
    }
    return out;
}

using Setter = std::function<void(PipelineConfig&, const std::string&)>;

const std::map<std::string, std::map<std::string, Setter>>& schema() {
    static const std::map<std::string, std::map<std::string, Setter>> table = {
        {"global",
         {
             {"seed", [](PipelineConfig& c, const std::string& v) { c.seed = to_u64(v); }},
         }},
        {"model",
         {
             {"preset",
              [](PipelineConfig& c, const std::string& v) {
                  if (v == "desk") {
                      c.model = model::desk_preset();
                  } else if (v == "reference") {
                      c.model = model::reference_preset();
                  } else {
                      throw Error("unknown preset '" + v + "'");
                  }
              }},
             {"vocab_size", [](PipelineConfig& c, const std::string& v) { c.model.vocab_size = to_size(v); }},
             {"hidden_dim", [](PipelineConfig& c, const std::string& v) { c.model.hidden_dim = to_size(v); }},
             {"num_layers", [](PipelineConfig& c, const std::string& v) { c.model.num_layers = to_size(v); }},
             {"num_heads", [](PipelineConfig& c, const std::string& v) { c.model.num_heads = to_size(v); }},
             {"ffn_dim", [](PipelineConfig& c, const std::string& v) { c.model.ffn_dim = to_size(v); }},
             {"max_rel_distance",
              [](PipelineConfig& c, const std::string& v) { c.model.max_rel_distance = to_size(v); }},
             {"layer_norm_eps",
              [](PipelineConfig& c, const std::string& v) { c.model.layer_norm_eps = to_double(v); }},
             {"dropout_rate", [](PipelineConfig& c, const std::string& v) { c.model.dropout_rate = to_double(v); }},
         }},
        {"tokenizer",
         {
             {"vocab_size",
              [](PipelineConfig& c, const std::string& v) { c.tokenizer.target_size = to_size(v); }},
             {"seed_size", [](PipelineConfig& c, const std::string& v) { c.tokenizer.seed_size = to_size(v); }},
             {"max_piece_len",
              [](PipelineConfig& c, const std::string& v) { c.tokenizer.max_piece_len = to_size(v); }},
             {"em_iterations",
              [](PipelineConfig& c, const std::string& v) { c.tokenizer.em_iterations_per_round = to_size(v); }},
             {"prune_keep_ratio",
              [](PipelineConfig& c, const std::string& v) { c.tokenizer.prune_keep_ratio = to_double(v); }},
             {"unk_penalty",
              [](PipelineConfig& c, const std::string& v) { c.tokenizer.unk_penalty = to_double(v); }},
         }},
        {"pretrain",
         {
             {"lambda", [](PipelineConfig& c, const std::string& v) { c.pretrain.lambda = to_double(v); }},
             {"mask_rate", [](PipelineConfig& c, const std::string& v) { c.pretrain.mask_rate = to_double(v); }},
             {"phases", [](PipelineConfig& c, const std::string& v) { c.pretrain.phases = parse_phases(v); }},
             {"learning_rate",
              [](PipelineConfig& c, const std::string& v) { c.pretrain.learning_rate = to_double(v); }},
             {"warmup_fraction",
              [](PipelineConfig& c, const std::string& v) { c.pretrain.warmup_fraction = to_double(v); }},
             {"beta1", [](PipelineConfig& c, const std::string& v) { c.pretrain.adamw.beta1 = to_double(v); }},
             {"beta2", [](PipelineConfig& c, const std::string& v) { c.pretrain.adamw.beta2 = to_double(v); }},
             {"epsilon", [](PipelineConfig& c, const std::string& v) { c.pretrain.adamw.epsilon = to_double(v); }},
             {"weight_decay",
              [](PipelineConfig& c, const std::string& v) { c.pretrain.adamw.weight_decay = to_double(v); }},
             {"generator_layers",
              [](PipelineConfig& c, const std::string& v) { c.pretrain.generator_layers = to_size(v); }},
             {"temperature",
              [](PipelineConfig& c, const std::string& v) { c.pretrain.temperature = to_double(v); }},
         }},
        {"finetune",
         {
             {"learning_rate",
              [](PipelineConfig& c, const std::string& v) { c.finetune.train.learning_rate = to_double(v); }},
             {"max_epochs",
              [](PipelineConfig& c, const std::string& v) { c.finetune.train.max_epochs = to_size(v); }},
             {"patience", [](PipelineConfig& c, const std::string& v) { c.finetune.train.patience = to_size(v); }},
             {"batch_size",
              [](PipelineConfig& c, const std::string& v) { c.finetune.train.batch_size = to_size(v); }},
             {"weight_decay",
              [](PipelineConfig& c, const std::string& v) { c.finetune.train.adamw.weight_decay = to_double(v); }},
             {"ner_labels", [](PipelineConfig& c, const std::string& v) { c.finetune.ner_labels = to_list(v); }},
             {"num_classes", [](PipelineConfig& c, const std::string& v) { c.finetune.num_classes = to_size(v); }},
             {"score_min", [](PipelineConfig& c, const std::string& v) { c.finetune.score_min = to_double(v); }},
             {"score_max", [](PipelineConfig& c, const std::string& v) { c.finetune.score_max = to_double(v); }},
             {"pair_header", [](PipelineConfig& c, const std::string& v) { c.finetune.pair_header = to_bool(v); }},
         }},
    };
    return table;
}

} // namespace

std::vector<rtd::Phase> parse_phases(std::string_view text) {
    std::vector<rtd::Phase> out;
    for (const auto& item : to_list(std::string(text))) {
        const auto x = item.find('x');
        if (x == std::string::npos) {
            throw Error("phase '" + item + "' is not <epochs>x<batch_size>");
        }
        out.push_back({to_size(trim(item.substr(0, x))), to_size(trim(item.substr(x + 1)))});
    }
    if (out.empty()) {
        throw Error("no phases given");
    }
    return out;
}

std::string format_phases(const std::vector<rtd::Phase>& phases) {
    std::string out;
    for (const auto& p : phases) {
        if (!out.empty()) out += ',';
        out += std::to_string(p.epochs) + "x" + std::to_string(p.batch_size);
    }
    return out;
}

void PipelineConfig::apply_seed(std::uint64_t s) {
    seed = s;
    tokenizer.seed = s;
    pretrain.seed = s;
    finetune.train.seed = s;
}

void PipelineConfig::validate() const {
    model.validate();
    pretrain.validate();
    finetune.train.validate();
    finetune::TaskSpec::ner(finetune.ner_labels).validate();
    if (finetune.num_classes < 2) {
        throw Error("finetune num_classes must be at least 2");
    }
    finetune::TaskSpec::regression(finetune.score_min, finetune.score_max).validate();
    if (tokenizer.max_piece_len == 0 || tokenizer.em_iterations_per_round == 0) {
        throw Error("tokenizer max_piece_len and em_iterations must be at least 1");
    }
    if (!(tokenizer.prune_keep_ratio > 0.0 && tokenizer.prune_keep_ratio < 1.0)) {
        throw Error("tokenizer prune_keep_ratio must lie in (0, 1)");
    }
    if (!(tokenizer.unk_penalty < 0.0)) {
        throw Error("tokenizer unk_penalty must be negative");
    }
}

PipelineConfig parse_config(std::string_view text, const std::string& origin) {
    PipelineConfig config;
    std::string section;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string raw;
    while (std::getline(in, raw)) {
        ++line_no;
        const auto fail = [&](const std::string& what) {
            throw FormatError(origin + ": line " + std::to_string(line_no) + ": " + what);
        };
        const auto hash = raw.find_first_of("#;");
        const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail("unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (!schema().count(section)) fail("unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail("expected key = value");
        if (section.empty()) fail("key outside of any section");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto& keys = schema().at(section);
        const auto it = keys.find(key);
        if (it == keys.end()) fail("unknown key '" + key + "' in [" + section + "]");
        try {
            it->second(config, value);
        } catch (const FormatError&) {
            throw;
        } catch (const Error& e) {
            fail(key + ": " + e.what());
        }
    }
    config.apply_seed(config.seed);
    try {
        config.validate();
    } catch (const Error& e) {
        throw FormatError(origin + ": " + e.what());
    }
    return config;
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_config(buffer.str(), path.string());
}

} // namespace langadapt
