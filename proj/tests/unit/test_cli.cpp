#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <sys/wait.h>

#include "support.h"

namespace {

struct Run {
    int status = -1;
    std::string output;
};

/// Runs the CLI with `args`, capturing stdout and stderr together.
Run run_cli(const std::string& args) {
    Run r;
    const std::string cmd = std::string("'") + LANGADAPT_CLI + "' " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[512];
    while (std::fgets(buf, sizeof buf, pipe)) r.output += buf;
    const int raw = pclose(pipe);
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    return r;
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

} // namespace

TEST_CASE("usage errors exit with status 2") {
    const auto r = run_cli("frobnicate");
    CHECK(r.status == 2);
    CHECK(r.output.find("clean") != std::string::npos);
    CHECK(run_cli("").status == 2);
    CHECK(run_cli("clean").status == 2);
}

TEST_CASE("clean writes the corpus") {
    unit::TempDir dir("cli_clean");
    unit::write_file(dir / "raw.txt", "<p>ol\\u00e1</p>\n\n  mundo  \n");
    const auto r = run_cli("clean --input " + q(dir / "raw.txt") + " --output " + q(dir / "out.txt"));
    CHECK(r.status == 0);
    CHECK(unit::read_file(dir / "out.txt") == "olá\nmundo\n");
}

TEST_CASE("dry run writes nothing") {
    unit::TempDir dir("cli_dry");
    unit::write_file(dir / "raw.txt", "texto\n");
    const auto r = run_cli("--dry-run clean --input " + q(dir / "raw.txt") + " --output " + q(dir / "out.txt"));
    CHECK(r.status == 0);
    CHECK_FALSE(std::filesystem::exists(dir / "out.txt"));

    const auto init = run_cli("--dry-run init --output " + q(dir / "m.ckpt"));
    CHECK(init.status == 0);
    CHECK_FALSE(std::filesystem::exists(dir / "m.ckpt"));
}

TEST_CASE("failures report the stage") {
    unit::TempDir dir("cli_fail");
    unit::write_file(dir / "bad.vocab", "[PAD]\t-20\n");
    const auto r = run_cli("encode --vocab " + q(dir / "bad.vocab") + " --text oi");
    CHECK(r.status != 0);
    CHECK(r.status != 2);
    CHECK(r.output.find("error stage=") != std::string::npos);
}
