// Acceptance suite: one line per criterion, non-zero exit if any fails.
//
//   acceptance <langadapt-binary> <data-dir> <work-dir> [criterion-number...]

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <set>
#include <string>

#include "acceptance.h"

using namespace acceptance;

int main(int argc, char** argv) {
    if (argc < 4) {
        std::fprintf(stderr, "usage: %s <langadapt> <data-dir> <work-dir> [criterion...]\n", argv[0]);
        return 2;
    }
    Context ctx{argv[1], argv[2], argv[3]};
    std::filesystem::remove_all(ctx.work_dir);
    std::filesystem::create_directories(ctx.work_dir);
    std::set<int> only;
    for (int i = 4; i < argc; ++i) only.insert(std::atoi(argv[i]));

    struct Criterion {
        int id;
        const char* name;
        Outcome (*run)(const Context&);
    };
    const Criterion criteria[] = {
        {1, "gradient oracle", gradient_oracle},
        {2, "embedding sharing isolation", gdes_isolation},
        {3, "tokenizer oracles", tokenizer_oracles},
        {4, "packing contract", packing_contract},
        {5, "parameter count", parameter_count},
        {6, "pre-training learns", pretraining_learns},
        {7, "fine-tune capacity and early stopping", finetune_capacity},
        {8, "metric oracles", metric_oracles},
        {9, "embedding surgery", surgery_preservation},
        {10, "end-to-end pipeline", end_to_end},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && !only.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome out;
        try {
            out = c.run(ctx);
        } catch (const std::exception& e) {
            out = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s [%d] %s (%.1fs): %s\n", out.pass ? "PASS" : "FAIL", c.id, c.name, secs, out.detail.c_str());
        std::fflush(stdout);
        failed += out.pass ? 0 : 1;
    }
    return failed == 0 ? 0 : 1;
}
