#include <doctest.h>

#include "langadapt/config.h"
#include "langadapt/error.h"

using namespace langadapt;

TEST_CASE("defaults") {
    const auto c = parse_config("");
    CHECK(c.model == model::desk_preset());
    CHECK(c.pretrain.lambda == 50.0);
    CHECK(c.pretrain.mask_rate == 0.15);
    CHECK(c.finetune.train.learning_rate == 5e-5);
}

TEST_CASE("sections and seed propagation") {
    const auto c = parse_config("# comment\n[global]\nseed = 17\n\n[model]\npreset = reference\n"
                                "[pretrain]\nphases = 1x16, 1x8 ; trailing\nlearning_rate = 1e-3\n");
    CHECK(c.seed == 17);
    CHECK(c.pretrain.seed == 17);
    CHECK(c.finetune.train.seed == 17);
    CHECK(c.model.hidden_dim == 384);
    CHECK(c.pretrain.phases == std::vector<rtd::Phase>{{1, 16}, {1, 8}});
    CHECK(c.pretrain.learning_rate == 1e-3);
}

TEST_CASE("errors carry line numbers") {
    const auto line_of = [](const char* text) {
        try {
            parse_config(text, "cfg");
        } catch (const FormatError& e) {
            return std::string(e.what());
        }
        return std::string("no error");
    };
    CHECK(line_of("[model]\nhidden_dim = 16\nbogus = 1\n").find("line 3") != std::string::npos);
    CHECK(line_of("[nope]\n").find("line 1") != std::string::npos);
    CHECK(line_of("[model]\nhidden_dim = abc\n").find("line 2") != std::string::npos);
    CHECK(line_of("seed 3\n").find("line 1") != std::string::npos);
}

TEST_CASE("phases") {
    CHECK(parse_phases("1x1664,2x288") == std::vector<rtd::Phase>{{1, 1664}, {2, 288}});
    CHECK(format_phases({{1, 1664}, {2, 288}}) == "1x1664,2x288");
    CHECK_THROWS(parse_phases(""));
    rtd::PretrainConfig zero;
    zero.phases = parse_phases("0x4");
    CHECK_THROWS(zero.validate());
    CHECK_THROWS(parse_phases("2x"));
}
