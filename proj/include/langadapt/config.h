#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "langadapt/finetune.h"
#include "langadapt/model.h"
#include "langadapt/rtd.h"
#include "langadapt/tokenizer.h"

namespace langadapt {

/// Fine-tuning options plus the label sets that define each task.
struct FinetuneSection {
    finetune::FineTuneConfig train;
    std::vector<std::string> ner_labels = {"O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG", "I-ORG"};
    std::size_t num_classes = 2;
    double score_min = 0.0;
    double score_max = 5.0;
    bool pair_header = false;
};

/// INI-style key = value file with sections [global], [model], [tokenizer],
/// [pretrain] and [finetune]. '#' and ';' start comments.
struct PipelineConfig {
    std::uint64_t seed = 0;
    model::ModelConfig model = model::desk_preset();
    tokenizer::TrainerConfig tokenizer;
    rtd::PretrainConfig pretrain;
    FinetuneSection finetune;

    /// Copies the global seed into every stage section.
    void apply_seed(std::uint64_t s);
    void validate() const;
};

/// Throws FormatError "<origin>: line N: ..." on syntax errors, unknown
/// sections or keys, and unparseable values.
PipelineConfig parse_config(std::string_view text, const std::string& origin = "config");
PipelineConfig load_config(const std::filesystem::path& path);

/// "1x1664,2x288" <-> phases.
std::vector<rtd::Phase> parse_phases(std::string_view text);
std::string format_phases(const std::vector<rtd::Phase>& phases);

} // namespace langadapt
