// Command-line entry point: one pipeline stage per invocation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "langadapt/config.h"
#include "langadapt/corpus.h"
#include "langadapt/error.h"
#include "langadapt/finetune.h"
#include "langadapt/metrics.h"
#include "langadapt/model.h"
#include "langadapt/packing.h"
#include "langadapt/rtd.h"
#include "langadapt/tensor_map.h"
#include "langadapt/tokenizer.h"

namespace fs = std::filesystem;
using namespace langadapt;

namespace {

/// Raised for invalid flag combinations found after parsing.
struct UsageError : Error {
    using Error::Error;
};

std::string one_line(std::string s) {
    for (auto& c : s) {
        if (c == '\n' || c == '\r') c = ' ';
    }
    return s;
}

void info(const std::string& stage, const std::string& fields) {
    std::cerr << "info stage=" << stage << ' ' << fields << '\n';
}

void require_file(const fs::path& p) {
    if (!fs::exists(p)) {
        throw IoError("input does not exist: " + p.string());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !(out << text) || !out.flush()) {
        throw IoError("cannot write " + path.string());
    }
}

struct Options {
    bool dry_run = false;
    std::optional<std::uint64_t> seed;
    fs::path config;

    // clean
    std::vector<std::string> inputs;
    fs::path emoji_ranges;
    // shared paths
    fs::path output, corpus, vocab, data, init, donor, checkpoint, train, dev, test, report, log;
    fs::path out_generator, out_discriminator, out;
    std::size_t vocab_size = 0;
    std::size_t min_chunk = packing::kDefaultMinChunk;
    bool transfer_relative_bias = false;
    std::string text;
    bool from_stdin = false;
    std::string task;
};

PipelineConfig stage_config(const Options& o) {
    PipelineConfig c = o.config.empty() ? PipelineConfig{} : load_config(o.config);
    if (o.seed) c.apply_seed(*o.seed);
    return c;
}

// ---------------------------------------------------------------------------

int run_clean(const Options& o) {
    const corpus::EmojiTable table =
        o.emoji_ranges.empty() ? corpus::EmojiTable() : corpus::EmojiTable::load(o.emoji_ranges);
    std::vector<fs::path> inputs(o.inputs.begin(), o.inputs.end());
    for (const auto& p : inputs) require_file(p);
    if (o.dry_run) return 0;
    const auto result = corpus::ingest_corpus(inputs, o.output, table);
    for (const auto& e : result.file_errors) {
        std::cerr << "warn stage=clean msg=" << one_line(e) << '\n';
    }
    const auto& s = result.stats;
    info("clean", "docs_in=" + std::to_string(s.docs_in) + " docs_out=" + std::to_string(s.docs_out) +
                      " dropped_empty=" + std::to_string(s.docs_dropped_empty) + " tags=" +
                      std::to_string(s.tags_stripped) + " escapes=" + std::to_string(s.escapes_decoded) +
                      " mojibake=" + std::to_string(s.mojibake_fixed) + " emoji=" + std::to_string(s.emoji_removed));
    return 0;
}

int run_train_tokenizer(const Options& o) {
    PipelineConfig c = stage_config(o);
    c.tokenizer.target_size = o.vocab_size;
    require_file(o.corpus);
    if (o.dry_run) return 0;
    const auto vocab = tokenizer::train_unigram(o.corpus, c.tokenizer);
    tokenizer::save_vocab(vocab, o.output);
    info("train-tokenizer", "size=" + std::to_string(vocab.size()));
    return 0;
}

int run_encode(const Options& o) {
    require_file(o.vocab);
    if (o.dry_run) return 0;
    const auto vocab = tokenizer::load_vocab(o.vocab);
    const auto emit = [&](const std::string& line) {
        const auto ids = tokenizer::encode(line, vocab);
        std::string out;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (i) out += ' ';
            out += std::to_string(ids[i]);
        }
        std::cout << out << '\n';
    };
    if (o.from_stdin) {
        std::string line;
        while (std::getline(std::cin, line)) emit(line);
    } else {
        emit(o.text);
    }
    return 0;
}

int run_pack(const Options& o) {
    require_file(o.corpus);
    require_file(o.vocab);
    if (o.min_chunk == 0 || o.min_chunk > packing::kMaxChunk) {
        throw UsageError("--min-chunk must lie in [1, 510]");
    }
    if (o.dry_run) return 0;
    const auto vocab = tokenizer::load_vocab(o.vocab);
    const auto s = packing::pack_corpus(o.corpus, vocab, o.output, o.min_chunk);
    info("pack", "documents=" + std::to_string(s.documents) + " examples=" + std::to_string(s.examples) +
                     " tokens=" + std::to_string(s.tokens) + " dropped_chunks=" + std::to_string(s.dropped_chunks));
    return 0;
}

int run_init(const Options& o) {
    const PipelineConfig c = stage_config(o);
    if (o.dry_run) return 0;
    const auto weights = model::init_model(c.model, c.seed);
    save_checkpoint(model::to_tensor_map(weights, c.model), o.output);
    info("init", "params=" + std::to_string(model::count_params(weights)));
    return 0;
}

int run_surgery(const Options& o) {
    const PipelineConfig c = stage_config(o);
    require_file(o.donor);
    if (o.dry_run) return 0;
    const TensorMap donor = load_checkpoint(o.donor);
    model::ModelConfig arch = model::infer_config(donor, c.model);
    arch.vocab_size = o.vocab_size;
    model::SurgeryOptions opts;
    opts.transfer_relative_bias = o.transfer_relative_bias;
    const auto weights = model::embedding_surgery(donor, o.vocab_size, arch, c.seed, opts);
    save_checkpoint(model::to_tensor_map(weights, arch), o.output);
    info("surgery", "vocab_size=" + std::to_string(o.vocab_size) +
                        " params=" + std::to_string(model::count_params(weights)));
    return 0;
}

int run_pretrain(const Options& o) {
    const PipelineConfig c = stage_config(o);
    require_file(o.data);
    require_file(o.init);
    if (o.dry_run) return 0;
    const auto data = packing::read_packed(o.data);
    const TensorMap init = load_checkpoint(o.init);
    const model::ModelConfig arch = model::infer_config(init, c.model);
    const auto weights = model::from_tensor_map(init, arch);
    const std::size_t total = rtd::total_steps(c.pretrain, data.size());
    info("pretrain", "examples=" + std::to_string(data.size()) + " steps=" + std::to_string(total) +
                         " phases=" + format_phases(c.pretrain.phases));
    const auto log_every = std::max<std::size_t>(1, total / 20);
    const auto result = rtd::train_rtd(data, c.pretrain, weights, weights, arch, [&](const rtd::StepRecord& r) {
        if (r.step % log_every == 0 || r.step == total) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "step=%zu phase=%zu mlm=%.4f rtd=%.4f total=%.4f", r.step, r.phase,
                          r.loss.mlm, r.loss.rtd, r.loss.total);
            info("pretrain", buf);
        }
    });
    write_text(o.log, rtd::format_history_csv(result.history));
    rtd::export_generator(result.pair, o.out_generator);
    rtd::export_discriminator(result.pair, o.out_discriminator);
    if (result.error) {
        throw NumericError(*result.error + " (checkpoints hold the last good step)");
    }
    return 0;
}

finetune::TaskSpec task_spec(const std::string& task, const PipelineConfig& c) {
    if (task == "ner") return finetune::TaskSpec::ner(c.finetune.ner_labels);
    if (task == "cls") return finetune::TaskSpec::classification(c.finetune.num_classes);
    if (task == "sts") return finetune::TaskSpec::regression(c.finetune.score_min, c.finetune.score_max);
    throw UsageError("--task must be ner, cls or sts");
}

std::vector<finetune::Example> load_task_data(const std::string& task, const fs::path& path,
                                              const tokenizer::Vocabulary& vocab, const finetune::TaskSpec& spec,
                                              const PipelineConfig& c) {
    if (task == "ner") return finetune::load_ner_conll(path, vocab, spec);
    return finetune::load_pair_dataset(path, vocab, spec, c.finetune.pair_header);
}

int run_finetune(const Options& o) {
    const PipelineConfig c = stage_config(o);
    const auto spec = task_spec(o.task, c);
    for (const auto& p : {o.checkpoint, o.train, o.dev, o.vocab}) require_file(p);
    if (o.dry_run) return 0;
    const auto vocab = tokenizer::load_vocab(o.vocab);
    const auto train = load_task_data(o.task, o.train, vocab, spec, c);
    const auto dev = load_task_data(o.task, o.dev, vocab, spec, c);
    const auto base = finetune::attach_head(load_checkpoint(o.checkpoint), spec, c.model, c.seed);
    info("finetune", "task=" + o.task + " train=" + std::to_string(train.size()) +
                         " dev=" + std::to_string(dev.size()));
    const auto result = finetune::finetune_task(
        spec, base, train, dev, c.finetune.train, o.task, [&](std::size_t epoch, double loss, double metric) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "epoch=%zu loss=%.5f dev_%s=%.5f", epoch, loss, spec.metric_name(),
                          metric);
            info("finetune", buf);
        });
    save_checkpoint(finetune::to_tensor_map(result.model), o.out);
    write_text(o.report, finetune::format_report(result.dev_report));
    info("finetune", "best_epoch=" + std::to_string(result.best_epoch));
    return 0;
}

int run_evaluate(const Options& o) {
    const PipelineConfig c = stage_config(o);
    const auto spec = task_spec(o.task, c);
    for (const auto& p : {o.checkpoint, o.test, o.vocab}) require_file(p);
    if (o.dry_run) return 0;
    const auto vocab = tokenizer::load_vocab(o.vocab);
    const auto test = load_task_data(o.task, o.test, vocab, spec, c);
    const auto m = finetune::load_task_model(load_checkpoint(o.checkpoint), spec, c.model);
    const auto report = finetune::evaluate(m, spec, test, o.task);
    write_text(o.report, finetune::format_report(report));
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s=%.6f", report.metric.c_str(), report.value);
    info("evaluate", buf);
    return 0;
}

const char* error_kind(const std::exception& e) {
    if (dynamic_cast<const UsageError*>(&e)) return "usage";
    if (dynamic_cast<const FormatError*>(&e)) return "format";
    if (dynamic_cast<const IoError*>(&e)) return "io";
    if (dynamic_cast<const NumericError*>(&e)) return "numeric";
    if (dynamic_cast<const metrics::UndefinedMetric*>(&e)) return "metric";
    if (dynamic_cast<const Error*>(&e)) return "invalid";
    return "internal";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Language adaptation toolkit: clean, tokenize, pack, transplant, pre-train, fine-tune, evaluate"};
    app.require_subcommand(1);
    Options o;
    app.add_flag("--dry-run", o.dry_run, "Validate inputs and config without writing anything");

    const auto seed_opt = [&](CLI::App* sub) {
        sub->add_option_function<std::uint64_t>(
            "--seed", [&](const std::uint64_t& s) { o.seed = s; }, "Overrides the config seed");
    };

    auto* clean = app.add_subcommand("clean", "Clean raw text files into a one-document-per-line corpus");
    clean->add_option("--input", o.inputs, "Input files or directories")->required()->expected(1, -1);
    clean->add_option("--output", o.output)->required();
    clean->add_option("--emoji-ranges", o.emoji_ranges, "Code point ranges to strip, one per line");

    auto* train_tok = app.add_subcommand("train-tokenizer", "Train a unigram vocabulary");
    train_tok->add_option("--corpus", o.corpus)->required();
    train_tok->add_option("--vocab-size", o.vocab_size)->required();
    train_tok->add_option("--output", o.output)->required();
    train_tok->add_option("--config", o.config);
    seed_opt(train_tok);

    auto* enc = app.add_subcommand("encode", "Print token ids for text");
    enc->add_option("--vocab", o.vocab)->required();
    auto* text_opt = enc->add_option("--text", o.text);
    auto* stdin_opt = enc->add_flag("--stdin", o.from_stdin, "Encode each line of standard input");
    text_opt->excludes(stdin_opt);

    auto* pack = app.add_subcommand("pack", "Pack a cleaned corpus into 512-token examples");
    pack->add_option("--corpus", o.corpus)->required();
    pack->add_option("--vocab", o.vocab)->required();
    pack->add_option("--output", o.output)->required();
    pack->add_option("--min-chunk", o.min_chunk, "Drop chunks shorter than this");

    auto* init = app.add_subcommand("init", "Write a randomly initialized donor checkpoint");
    init->add_option("--config", o.config);
    init->add_option("--output", o.output)->required();
    seed_opt(init);

    auto* surgery = app.add_subcommand("surgery", "Replace a donor's vocabulary-dependent tensors");
    surgery->add_option("--donor", o.donor)->required();
    surgery->add_option("--vocab-size", o.vocab_size)->required();
    surgery->add_option("--config", o.config);
    surgery->add_option("--output", o.output)->required();
    surgery->add_flag("--transfer-relative-bias", o.transfer_relative_bias,
                      "Copy relative position tables instead of re-initializing them");
    seed_opt(surgery);

    auto* pretrain = app.add_subcommand("pretrain", "Generator/discriminator pre-training");
    pretrain->add_option("--data", o.data)->required();
    pretrain->add_option("--config", o.config);
    pretrain->add_option("--init", o.init)->required();
    pretrain->add_option("--out-generator", o.out_generator)->required();
    pretrain->add_option("--out-discriminator", o.out_discriminator)->required();
    pretrain->add_option("--log", o.log)->required();
    seed_opt(pretrain);

    auto* ft = app.add_subcommand("finetune", "Fine-tune on a downstream task");
    ft->add_option("--task", o.task)->required()->check(CLI::IsMember({"ner", "cls", "sts"}));
    ft->add_option("--checkpoint", o.checkpoint)->required();
    ft->add_option("--train", o.train)->required();
    ft->add_option("--dev", o.dev)->required();
    ft->add_option("--vocab", o.vocab)->required();
    ft->add_option("--config", o.config);
    ft->add_option("--out", o.out)->required();
    ft->add_option("--report", o.report)->required();
    seed_opt(ft);

    auto* ev = app.add_subcommand("evaluate", "Score a fine-tuned checkpoint");
    ev->add_option("--task", o.task)->required()->check(CLI::IsMember({"ner", "cls", "sts"}));
    ev->add_option("--checkpoint", o.checkpoint)->required();
    ev->add_option("--test", o.test)->required();
    ev->add_option("--vocab", o.vocab)->required();
    ev->add_option("--config", o.config);
    ev->add_option("--report", o.report)->required();

    std::string stage = "cli";
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        std::cout << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "error stage=cli kind=usage msg=" << one_line(e.what()) << '\n' << app.help();
        return 2;
    }

    try {
        const auto* sub = app.get_subcommands().front();
        stage = sub->get_name();
        int rc = 0;
        if (stage == "clean") rc = run_clean(o);
        else if (stage == "train-tokenizer") rc = run_train_tokenizer(o);
        else if (stage == "encode") rc = run_encode(o);
        else if (stage == "pack") rc = run_pack(o);
        else if (stage == "init") rc = run_init(o);
        else if (stage == "surgery") rc = run_surgery(o);
        else if (stage == "pretrain") rc = run_pretrain(o);
        else if (stage == "finetune") rc = run_finetune(o);
        else if (stage == "evaluate") rc = run_evaluate(o);
        if (o.dry_run) info(stage, "dry_run=ok");
        return rc;
    } catch (const UsageError& e) {
        std::cerr << "error stage=" << stage << " kind=usage msg=" << one_line(e.what()) << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error stage=" << stage << " kind=" << error_kind(e) << " msg=" << one_line(e.what()) << '\n';
        return 1;
    }
}
