#include "doctest.h"

#include "commands.hpp"
#include "run_config.hpp"

#include "nst/data.hpp"
#include "nst/errors.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace nst;
using namespace nst::cli;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code = 0;
    std::string out;
    std::string err;
};

Result nst_cmd(const std::vector<std::string>& args) {
    std::ostringstream out;
    std::ostringstream err;
    const int code = run(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / "nst_cli_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string read(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path write(const fs::path& p, const std::string& text) {
    std::ofstream(p) << text;
    return p;
}

const char* kTinyConfig = R"(version: 1
output_dir: run
data:
  synthetic: {kind: trend_seasonal, length: 600, channels: 2, seed: 3}
model: {input_len: 16, pred_len: 8, d_model: 16, n_heads: 2, projector_hidden: 16}
train: {epochs: 2, lr: 0.001, train_stride: 4}
)";

} // namespace

TEST_CASE("help lists every subcommand") {
    const auto r = nst_cmd({"--help"});
    CHECK(r.code == 0);
    for (const char* sub : {"train", "eval", "verify", "stationarity", "ablate", "gen-synth"}) {
        CHECK(r.out.find(sub) != std::string::npos);
    }
    const auto t = nst_cmd({"train", "--help"});
    CHECK(t.code == 0);
    for (const char* flag : {"--set", "--output", "--force"}) {
        CHECK(t.out.find(flag) != std::string::npos);
    }
}

TEST_CASE("unknown subcommands and flags are usage errors") {
    CHECK(nst_cmd({"fly"}).code == kExitConfig);
    CHECK(nst_cmd({"verify", "--bogus"}).code == kExitConfig);
    CHECK(nst_cmd({}).code == kExitConfig);
}

TEST_CASE("config errors cite line and field") {
    const auto dir = scratch("config_errors");
    SUBCASE("missing dataset") {
        const auto cfg = write(dir / "a.yaml", "version: 1\noutput_dir: out\nmodel:\n  d_model: 16\n");
        const auto r = nst_cmd({"train", cfg.string()});
        CHECK(r.code == kExitConfig);
        CHECK(r.err.find("'data") != std::string::npos);
    }
    SUBCASE("missing csv file") {
        const auto cfg = write(dir / "b.yaml", "version: 1\noutput_dir: out\ndata:\n  csv: nope.csv\n");
        const auto r = nst_cmd({"train", cfg.string()});
        CHECK(r.code == kExitConfig);
        CHECK(r.err.find("data.csv") != std::string::npos);
    }
    SUBCASE("bad value") {
        const auto cfg = write(dir / "c.yaml", std::string(kTinyConfig) + "# end\n");
        const auto text = read(cfg);
        write(cfg, text.substr(0, text.find("train:")) + "train: {epochs: two}\n");
        const auto r = nst_cmd({"train", cfg.string()});
        CHECK(r.code == kExitConfig);
        CHECK(r.err.find("line 6") != std::string::npos);
        CHECK(r.err.find("train.epochs") != std::string::npos);
    }
    SUBCASE("unknown key") {
        const auto cfg = write(dir / "d.yaml", std::string(kTinyConfig) + "trian: {}\n");
        const auto r = nst_cmd({"train", cfg.string()});
        CHECK(r.code == kExitConfig);
        CHECK(r.err.find("line 7, field 'trian': unknown key") != std::string::npos);
    }
    SUBCASE("invalid model field") {
        const auto cfg = write(dir / "e.yaml", kTinyConfig);
        const auto r = nst_cmd({"train", cfg.string(), "--set", "model.input_len=15"});
        CHECK(r.code == kExitConfig);
        CHECK(r.err.find("model.input_len") != std::string::npos);
    }
    SUBCASE("version") {
        const auto cfg = write(dir / "f.yaml", "output_dir: out\ndata:\n  csv: x.csv\n");
        CHECK(nst_cmd({"train", cfg.string()}).err.find("'version'") != std::string::npos);
        write(cfg, "version: 2\n");
        const auto r = nst_cmd({"train", cfg.string()});
        CHECK(r.code == kExitConfig);
        CHECK(r.err.find("unsupported version 2") != std::string::npos);
    }
    SUBCASE("yaml syntax") {
        const auto cfg = write(dir / "g.yaml", "version: 1\ndata: [\n");
        const auto r = nst_cmd({"train", cfg.string()});
        CHECK(r.code == kExitConfig);
        CHECK(r.err.find("line") != std::string::npos);
    }
}

TEST_CASE("resolved config round-trips and overrides apply") {
    RunConfig c = parse_run_config(kTinyConfig, {parse_override("model.mode=tau_only"),
                                                 parse_override("train.lr=0.01"),
                                                 parse_override("data.synthetic.channels=3")});
    CHECK(c.model.mode == AttentionMode::tau_only);
    CHECK(c.train.lr == 0.01);
    CHECK(c.model.channels == 3);
    CHECK(c.model.ffn_width == 64);
    const RunConfig back = parse_run_config(to_yaml(c));
    CHECK(to_yaml(back) == to_yaml(c));
    CHECK(back.model.to_key_values() == c.model.to_key_values());
    CHECK_THROWS_AS(parse_override("noequals"), ConfigError);
}

TEST_CASE("train writes its artifacts, refuses to overwrite and reproduces metrics") {
    const auto dir = scratch("train");
    const auto cfg = write(dir / "tiny.yaml", kTinyConfig);
    const auto a = nst_cmd({"train", cfg.string()});
    REQUIRE(a.code == kExitOk);
    for (const char* f : {"checkpoint.txt", "history.csv", "config.yaml", "train_summary.txt"}) {
        CHECK(fs::exists(dir / "run" / f));
    }
    const auto first = read(dir / "run" / "history.csv");

    const auto again = nst_cmd({"train", cfg.string()});
    CHECK(again.code == kExitConfig);
    CHECK(again.err.find("--force") != std::string::npos);
    CHECK(read(dir / "run" / "history.csv") == first);

    REQUIRE(nst_cmd({"train", cfg.string(), "--output", (dir / "run2").string()}).code == kExitOk);
    CHECK(read(dir / "run2" / "history.csv") == first);
    REQUIRE(nst_cmd({"train", cfg.string(), "--force"}).code == kExitOk);
    CHECK(read(dir / "run" / "history.csv") == first);

    // Training from the resolved config reproduces the run.
    REQUIRE(nst_cmd({"train", (dir / "run" / "config.yaml").string(), "--output", (dir / "run3").string()}).code ==
            kExitOk);
    CHECK(read(dir / "run3" / "history.csv") == first);

    const auto e1 = nst_cmd({"eval", cfg.string()});
    REQUIRE(e1.code == kExitOk);
    const auto report = read(dir / "run" / "eval_test.txt");
    CHECK(report.find("mse=") != std::string::npos);
    CHECK(report.find("relative_stationarity=") != std::string::npos);
    CHECK(nst_cmd({"eval", cfg.string()}).code == kExitConfig);
    REQUIRE(nst_cmd({"eval", cfg.string(), "--force"}).code == kExitOk);
    CHECK(read(dir / "run" / "eval_test.txt") == report);
    const auto table = read(dir / "run" / "eval_test.csv");
    CHECK(table.rfind("horizon,mse,mae\nall,", 0) == 0);
    CHECK(std::count(table.begin(), table.end(), '\n') == 2 + 8);
}

TEST_CASE("eval rejects a checkpoint whose channels differ from the data") {
    const auto dir = scratch("eval_mismatch");
    const auto cfg = write(dir / "tiny.yaml", kTinyConfig);
    REQUIRE(nst_cmd({"train", cfg.string()}).code == kExitOk);
    const auto r = nst_cmd({"eval", cfg.string(), "--set", "data.synthetic.channels=3"});
    CHECK(r.code == kExitConfig);
    CHECK(r.err.find("channels") != std::string::npos);
}

TEST_CASE("verify exit codes and report") {
    const auto dir = scratch("verify");
    const auto ok = nst_cmd({"verify", "--instances", "50", "--report", (dir / "r.json").string()});
    CHECK(ok.code == kExitOk);
    const auto j = nlohmann::json::parse(read(dir / "r.json"));
    CHECK(j["results"].size() == 50);
    CHECK(j["passed"] == true);
    CHECK(nst_cmd({"verify", "--instances", "5", "--report", (dir / "r.json").string()}).code == kExitConfig);

    const auto tight = nst_cmd({"verify", "--instances", "50", "--tolerance", "1e-15"});
    CHECK(tight.code == kExitRuntime);
    CHECK(tight.err.find("worst instance") != std::string::npos);

    const auto none = nst_cmd({"verify", "--instances", "0"});
    CHECK(none.code == kExitOk);
    CHECK(none.err.find("warning") != std::string::npos);
}

TEST_CASE("stationarity orders random walks above white noise") {
    const auto dir = scratch("stationarity");
    auto stat = [&](const std::string& kind) {
        const auto file = dir / (kind + ".csv");
        REQUIRE(nst_cmd({"gen-synth", "--kind", kind, "--length", "2000", "--channels", "2", "--seed", "5",
                         "--output", file.string()})
                    .code == kExitOk);
        const auto r = nst_cmd({"stationarity", file.string()});
        REQUIRE(r.code == kExitOk);
        const auto pos = r.out.find("mean,");
        REQUIRE(pos != std::string::npos);
        return std::stod(r.out.substr(pos + 5));
    };
    const double walk = stat("random_walk");
    const double noise = stat("white_noise");
    // Monte Carlo thresholds from tests/oracles/adf_oracle.py (T = 2000).
    CHECK(noise < -0.077510);
    CHECK(walk > -9.798702);
    CHECK(walk > noise);

    const auto constant = write(dir / "constant.csv", [] {
        std::string s = "a,b\n";
        for (int i = 0; i < 50; ++i) {
            s += std::to_string(std::sin(0.013 * i * i + 1.7 * i)) + ",3\n";
        }
        return s;
    }());
    const auto r = nst_cmd({"stationarity", constant.string()});
    CHECK(r.code == kExitRuntime);
    CHECK(r.err.find("variable 'b'") != std::string::npos);
}

TEST_CASE("gen-synth is deterministic and never overwrites silently") {
    const auto dir = scratch("synth");
    const auto file = (dir / "s.csv").string();
    REQUIRE(nst_cmd({"gen-synth", "--kind", "ar1", "--length", "300", "--output", file}).code == kExitOk);
    const auto first = read(file);
    CHECK(nst_cmd({"gen-synth", "--kind", "ar1", "--length", "300", "--output", file}).code == kExitConfig);
    REQUIRE(nst_cmd({"gen-synth", "--kind", "ar1", "--length", "300", "--output", file, "--force"}).code == kExitOk);
    CHECK(read(file) == first);
    CHECK(load_csv(file).rows == 300);
    CHECK(nst_cmd({"gen-synth", "--kind", "sawtooth", "--output", (dir / "t.csv").string()}).code == kExitConfig);
}

TEST_CASE("ablate emits one row per variant") {
    const auto dir = scratch("ablate");
    const auto cfg = write(dir / "tiny.yaml", kTinyConfig);
    const auto r = nst_cmd({"ablate", cfg.string(), "--set", "train.epochs=1"});
    REQUIRE(r.code == kExitOk);
    const auto table = read(dir / "run" / "ablation.csv");
    CHECK(table.rfind("mode,mse,mae,relative_stationarity\n", 0) == 0);
    CHECK(std::count(table.begin(), table.end(), '\n') == 6);
    for (const char* mode : {"vanilla", "stationarization_only", "tau_only", "delta_only", "both"}) {
        CHECK(table.find(std::string("\n") + mode + ",") != std::string::npos);
    }
}

TEST_CASE("shipped example configs parse") {
    for (const char* name : {"tiny.yaml", "desk_synthetic.yaml"}) {
        const RunConfig c = load_run_config(fs::path(NST_SOURCE_DIR) / "configs" / name);
        CHECK(c.synthetic.has_value());
        CHECK(c.model.input_len % 2 == 0);
    }
}
