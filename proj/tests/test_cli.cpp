#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "support.hpp"

namespace {

struct Run {
    std::string out;
    int code = -1;
};

// Captures stdout, or stderr when `stderr_only`.
Run cli(const std::string& args, bool stderr_only = false) {
    const std::string cmd = std::string(MERRY_CLI) + " " + args + (stderr_only ? " 2>&1 >/dev/null" : " 2>/dev/null");
    Run r;
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    std::array<char, 4096> buf{};
    std::size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

}  // namespace

TEST_CASE("cli: lift prints the relation graph") {
    merry::test::TempDir dir("cli_lift");
    std::ofstream(dir.path / "kg.tsv") << "a\tr1\tb\nb\tr2\tc\n";
    const Run r = cli("lift --kg " + (dir.path / "kg.tsv").string() + " --no-inverses --no-self-loops");
    CHECK(r.code == 0);
    CHECK(r.out == "r1\tt2h\tr2\nr2\th2t\tr1\n");
}

TEST_CASE("cli: help lists subcommands and flags") {
    const Run top = cli("--help");
    CHECK(top.code == 0);
    for (const char* sub : {"pretrain", "eval-kgc", "adapt-kgqa", "score", "lift", "embed-hash", "check-grad"}) {
        CHECK(top.out.find(sub) != std::string::npos);
    }
    const Run ev = cli("eval-kgc --help");
    for (const char* flag : {"--checkpoint", "--split", "--per-query", "--seed"}) {
        CHECK(ev.out.find(flag) != std::string::npos);
    }
}

TEST_CASE("cli: errors are JSON with stable exit codes") {
    merry::test::TempDir dir("cli_err");
    std::ofstream(dir.path / "bad.tsv") << "a\tb\n";
    auto error_of = [](const Run& r) { return nlohmann::json::parse(r.out); };

    const Run usage = cli("lift", true);
    CHECK(usage.code == 1);
    CHECK(error_of(usage)["error"] == "usage");

    const Run data = cli("lift --kg " + (dir.path / "bad.tsv").string(), true);
    CHECK(data.code == 2);
    const auto j = error_of(data);
    CHECK(j["exit_code"] == 2);
    CHECK(j["message"].get<std::string>().find(":1:") != std::string::npos);

    CHECK(cli("eval-kgc --checkpoint " + (dir.path / "nope").string() + " --split " + dir.path.string()).code == 2);
}

TEST_CASE("cli: evaluation output is reproducible") {
    merry::test::TempDir dir("cli_eval");
    const std::string w = dir.path.string();
    std::ofstream(dir.path / "model.json")
        << R"({"dim":8,"text":{"provider":"hash","dim":4,"path":"","hash_fallback":true},)"
        << R"("qcmp_relation_layers":1,"qcmp_entity_layers":2,"gcmp_relation_layers":1,"gcmp_entity_layers":1})";
    REQUIRE(cli("synth --kind toy --out " + w + "/toy --seed 2").code == 0);
    REQUIRE(cli("init --config " + w + "/model.json --output " + w + "/ckpt --seed 2").code == 0);
    const std::string eval = "eval-kgc --checkpoint " + w + "/ckpt --split " + w + "/toy";
    const Run a = cli(eval), b = cli(eval);
    CHECK(a.code == 0);
    CHECK(a.out == b.out);
    const auto report = nlohmann::json::parse(a.out);
    CHECK(report.contains("mrr"));
}
