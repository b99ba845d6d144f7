/// @file test_harness.cpp
/// Config schema, experiment orchestration, the worker pool's deterministic
/// merge, replay from embedded configs, and the CLI end to end.
///
/// SNSE_CLI_PATH and SNSE_TEST_DATA are injected by the build: the compiled
/// CLI binary and the directory of sample configs.

#include "snse/harness.hpp"

#include "catch2/catch_amalgamated.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

using namespace snse;

namespace {

std::string data_file(const char* name) { return std::string(SNSE_TEST_DATA) + "/" + name; }

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<nlohmann::json> parse_ndjson(const std::string& text) {
    std::vector<nlohmann::json> records;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) records.push_back(nlohmann::json::parse(line));
    return records;
}

/// Run the CLI; returns the exit status and whatever it wrote to stderr.
std::pair<int, std::string> run_cli(const std::string& args) {
    const std::string err_file = "cli_stderr.txt";
    const std::string cmd =
        std::string(SNSE_CLI_PATH) + " " + args + " > /dev/null 2> " + err_file;
    const int rc = std::system(cmd.c_str());
    REQUIRE(rc != -1);
    REQUIRE(WIFEXITED(rc));
    return {WEXITSTATUS(rc), slurp(err_file)};
}

} // namespace

TEST_CASE("config parsing and normalization") {
    const ExperimentConfig cfg = load_config_file(data_file("transform_small.json"));
    CHECK(cfg.experiment == "transform-check");
    CHECK(cfg.seed == 7);
    CHECK(cfg.N == 256);
    CHECK(cfg.n_paths == 2);
    CHECK(cfg.sigma == 1.0);
    REQUIRE(cfg.f.size() == 6);
    CHECK(cfg.f[5] == 0.5);

    // The normalized form round-trips through the parser unchanged.
    const nlohmann::json j = cfg.to_json();
    CHECK(config_from_json(j).to_json().dump() == j.dump());
}

TEST_CASE("config rejections") {
    auto bad = [](const char* text) { CHECK_THROWS_AS(load_config(text), ConfigError); };
    bad(R"({"experiment":"ensemble"})");                          // no schema
    bad(R"({"schema":"snse-config/0","experiment":"ensemble"})"); // wrong schema
    bad(R"({"schema":"snse-config/1","experiment":"dance"})");
    bad(R"({"schema":"snse-config/1","banana":3})");
    bad(R"({"schema":"snse-config/1","sigma":1,"sigmas":[1]})");
    bad(R"({"schema":"snse-config/1","sigmas":[0,0]})");
    bad(R"({"schema":"snse-config/1","sigma":-1})");
    bad(R"({"schema":"snse-config/1","T":0})");
    bad(R"({"schema":"snse-config/1","N":0})");
    bad(R"({"schema":"snse-config/1","K":0})");
    bad(R"({"schema":"snse-config/1","n_paths":0})");
    bad(R"({"schema":"snse-config/1","scheme":"rk4"})");
    bad(R"({"schema":"snse-config/1","study":"magic"})");
    bad(R"({"schema":"snse-config/1","n_sweep":[512,256]})");
    bad(R"({"schema":"snse-config/1","n_sweep":[300]})");
    bad(R"({"schema":"snse-config/1","Y":{"taus":[2.0],"components":[{"mode":0,"phi":"w1"}]}})");
    bad(R"({"schema":"snse-config/1","Y":{"taus":[0.5]}})");
    bad(R"({"schema":"snse-config/1","Y":{"taus":[0.5],"components":[],"extra":1}})");
    bad(R"({"schema":"snse-config/1","Y":{"taus":[0.5],"components":[]}})");
    bad("{not json");
    CHECK_THROWS_AS(load_config_file("no_such_config.json"), ConfigError);
}

TEST_CASE("noise vector collapses to its euclidean size") {
    const ExperimentConfig cfg =
        load_config(R"({"schema":"snse-config/1","experiment":"ensemble","sigmas":[3,4]})");
    CHECK(cfg.sigma == 5.0);
    // The collapsed value is embedded as plain sigma.
    CHECK(cfg.to_json().at("sigma").get<double>() == 5.0);
    CHECK_FALSE(cfg.to_json().contains("sigmas"));
}

TEST_CASE("subcommand binding") {
    ExperimentConfig cfg = load_config(R"({"schema":"snse-config/1"})");
    select_experiment(cfg, "b-audit");
    CHECK(cfg.experiment == "b-audit");
    CHECK_THROWS_AS(select_experiment(cfg, "ensemble"), ConfigError);
    CHECK_THROWS_AS(select_experiment(cfg, "dance"), ConfigError);
}

TEST_CASE("worker count comes from the environment") {
    unsetenv("SNSE_WORKERS");
    CHECK(worker_count() == 1);
    setenv("SNSE_WORKERS", "3", 1);
    CHECK(worker_count() == 3);
    setenv("SNSE_WORKERS", "0", 1);
    CHECK_THROWS_AS(worker_count(), ConfigError);
    setenv("SNSE_WORKERS", "abc", 1);
    CHECK_THROWS_AS(worker_count(), ConfigError);
    unsetenv("SNSE_WORKERS");
}

TEST_CASE("deterministic data lifts to a constant initial field") {
    ExperimentConfig cfg;
    cfg.f = {1.0, 0.0, 0.5};
    const RandomInitialField Y = config_Y(cfg, 4);
    CHECK(Y.n_times() == 0);
    const WienerPath p = sample_path(1.0, 16, 1);
    const VelocityCoeffs y = evaluate_Y(Y, p);
    CHECK(y[0] == 1.0);
    CHECK(y[1] == 0.0);
    CHECK(y[2] == 0.5);
    CHECK(y[3] == 0.0);

    ExperimentConfig missing;
    CHECK_THROWS_AS(config_Y(missing, 4), ConfigError);
    cfg.f = {1, 2, 3, 4, 5};
    CHECK_THROWS_AS(config_f(cfg, 4), ConfigError);
}

TEST_CASE("transform-check run: report shape and embedded config") {
    const ExperimentConfig cfg = load_config_file(data_file("transform_small.json"));
    const RunReport rep = run_experiment(cfg);
    CHECK(rep.exit_code == 0);

    REQUIRE(rep.csv.rfind("path,gap,rel_gap\n", 0) == 0);
    CHECK(std::count(rep.csv.begin(), rep.csv.end(), '\n') == 3); // header + one row per path

    const auto records = parse_ndjson(rep.ndjson);
    REQUIRE(records.size() >= 4);
    CHECK(records.front().at("record") == "config");
    CHECK(records.front().at("config").at("seed") == 7);
    CHECK(records.back().at("record") == "summary");
    CHECK(records.back().at("status") == "ok");
    CHECK(records.back().at("max_rel_gap").get<double>() < 0.1);
    CHECK(rep.summary_line.find("transform-check: ok") == 0);
}

TEST_CASE("replay from the embedded config is byte-identical") {
    const ExperimentConfig cfg = load_config_file(data_file("transform_small.json"));
    const RunReport first = run_experiment(cfg);

    const auto records = parse_ndjson(first.ndjson);
    const ExperimentConfig replay = config_from_json(records.front().at("config"));
    const RunReport second = run_experiment(replay);
    CHECK(first.csv == second.csv);
    CHECK(first.ndjson == second.ndjson);
}

TEST_CASE("worker pool merge is independent of the worker count") {
    const ExperimentConfig cfg = load_config_file(data_file("energy_small.json"));
    unsetenv("SNSE_WORKERS");
    const RunReport serial = run_experiment(cfg);
    setenv("SNSE_WORKERS", "3", 1);
    const RunReport pooled = run_experiment(cfg);
    unsetenv("SNSE_WORKERS");
    CHECK(serial.csv == pooled.csv);
    CHECK(serial.ndjson == pooled.ndjson);
    CHECK(serial.exit_code == 0);
}

TEST_CASE("anticipating runs") {
    SECTION("sigma = 0: the two residual forms coincide exactly") {
        const RunReport rep = run_experiment(load_config_file(data_file("anticipating_sigma0.json")));
        CHECK(rep.exit_code == 0);
        const auto records = parse_ndjson(rep.ndjson);
        CHECK(records.back().at("max_forms_gap").get<double>() == 0.0);
        CHECK(records.back().at("max_rel_residual").get<double>() <= 0.05);
    }
    SECTION("anticipating field: forms agree to rounding, correction carries weight") {
        const RunReport rep = run_experiment(load_config_file(data_file("anticipating_sin.json")));
        CHECK(rep.exit_code == 0);
        const auto records = parse_ndjson(rep.ndjson);
        CHECK(records.back().at("max_forms_gap").get<double>() <= 1e-12);
        CHECK(records.back().at("min_ablation_ratio").get<double>() >= 2.0);
    }
    SECTION("grid constraints are config errors") {
        ExperimentConfig cfg = load_config_file(data_file("anticipating_sigma0.json"));
        cfg.N = 254; // not divisible by 4
        CHECK_THROWS_AS(run_experiment(cfg), ConfigError);
        cfg.N = 256;
        cfg.partition_k = 128;
        CHECK_THROWS_AS(run_experiment(cfg), ConfigError);
    }
}

TEST_CASE("malliavin-check requires an even grid and passes its oracles") {
    ExperimentConfig cfg = load_config_file(data_file("malliavin_small.json"));
    {
        ExperimentConfig odd = cfg;
        odd.N = 127;
        CHECK_THROWS_AS(run_experiment(odd), ConfigError);
    }
    const RunReport rep = run_experiment(cfg);
    CHECK(rep.exit_code == 0);
    const auto records = parse_ndjson(rep.ndjson);
    CHECK(records.back().at("violations").get<std::size_t>() == 0);
    CHECK(records.back().at("max_duality_rel").get<double>() <= 0.02);
    CHECK(records.back().at("max_frechet_rel").get<double>() <= 1e-3);
}

TEST_CASE("remaining experiments smoke-run from their sample configs") {
    SECTION("energy-audit") {
        const RunReport rep = run_experiment(load_config_file(data_file("energy_small.json")));
        CHECK(rep.exit_code == 0);
        const auto records = parse_ndjson(rep.ndjson);
        CHECK(records.back().at("violations").get<std::size_t>() == 0);
    }
    SECTION("ensemble") {
        const RunReport rep = run_experiment(load_config_file(data_file("ensemble_small.json")));
        CHECK(rep.exit_code == 0);
        const auto records = parse_ndjson(rep.ndjson);
        CHECK(records.back().at("mean_sup_Q").get<double>() >= 1.0);
        CHECK(rep.csv.rfind("path,sup_Q,sup_h,integral_v2,final_h\n", 0) == 0);
    }
    SECTION("b-audit") {
        const RunReport rep = run_experiment(load_config_file(data_file("b_audit_small.json")));
        CHECK(rep.exit_code == 0);
        const auto records = parse_ndjson(rep.ndjson);
        CHECK(records.back().at("all_within_caps").get<bool>());
    }
    SECTION("convergence") {
        const RunReport rep = run_experiment(load_config_file(data_file("convergence_small.json")));
        CHECK(rep.exit_code == 0);
        CHECK(std::count(rep.csv.begin(), rep.csv.end(), '\n') == 4); // header + 3 levels
        const auto records = parse_ndjson(rep.ndjson);
        const double order = records.back().at("min_order").get<double>();
        CHECK(order > 0.7);
        CHECK(order < 1.3);
    }
}

TEST_CASE("failed paths are skipped and the policy failure is exit 2") {
    const ExperimentConfig cfg = load_config_file(data_file("unstable_energy.json"));
    const RunReport rep = run_experiment(cfg);
    CHECK(rep.exit_code == 2);
    const auto records = parse_ndjson(rep.ndjson);
    bool saw_path_error = false;
    for (const auto& r : records)
        if (r.at("record") == "path-error") saw_path_error = true;
    CHECK(saw_path_error);
    CHECK(records.back().at("status") == "failed");
}

TEST_CASE("run_experiment_files writes the report pair") {
    ExperimentConfig cfg = load_config_file(data_file("ensemble_small.json"));
    cfg.out = "harness_files_out";
    std::filesystem::remove_all(cfg.out);
    CHECK(run_experiment_files(cfg) == 0);
    CHECK(std::filesystem::exists("harness_files_out/ensemble.csv"));
    CHECK(std::filesystem::exists("harness_files_out/ensemble.ndjson"));
    const std::string csv = slurp("harness_files_out/ensemble.csv");
    CHECK(csv.rfind("path,sup_Q", 0) == 0);
}

TEST_CASE("cli end to end") {
    SECTION("successful run writes reports and embeds overrides") {
        std::filesystem::remove_all("cli_out_a");
        const auto [code, err] = run_cli("transform-check --config " +
                                         data_file("transform_small.json") +
                                         " --seed 99 --out cli_out_a");
        CHECK(code == 0);
        CHECK(err.empty());
        const auto records = parse_ndjson(slurp("cli_out_a/transform-check.ndjson"));
        CHECK(records.front().at("config").at("seed") == 99);
        CHECK(records.front().at("config").at("schema") == "snse-config/1");
        CHECK(records.back().at("status") == "ok");
    }
    SECTION("same invocation twice is byte-identical") {
        std::filesystem::remove_all("cli_out_b1");
        std::filesystem::remove_all("cli_out_b2");
        const std::string base =
            "transform-check --config " + data_file("transform_small.json") + " --out ";
        CHECK(run_cli(base + "cli_out_b1").first == 0);
        CHECK(run_cli(base + "cli_out_b2").first == 0);
        CHECK(slurp("cli_out_b1/transform-check.csv") == slurp("cli_out_b2/transform-check.csv"));
        CHECK(slurp("cli_out_b1/transform-check.ndjson") ==
              slurp("cli_out_b2/transform-check.ndjson"));
    }
    SECTION("config errors exit 1 with a structured record") {
        const auto [code, err] =
            run_cli("transform-check --config " + data_file("bad_key.json"));
        CHECK(code == 1);
        CHECK(err.find("\"record\":\"error\"") != std::string::npos);
        CHECK(err.find("\"kind\":\"config\"") != std::string::npos);
    }
    SECTION("missing config file exits 1") {
        CHECK(run_cli("ensemble --config nope.json").first == 1);
    }
    SECTION("subcommand/config mismatch exits 1") {
        const auto [code, err] =
            run_cli("ensemble --config " + data_file("transform_small.json"));
        CHECK(code == 1);
        CHECK(err.find("does not match") != std::string::npos);
    }
    SECTION("unknown subcommand exits nonzero") {
        CHECK(run_cli("dance --config x.json").first != 0);
    }
    SECTION("numerical failure beyond the skip policy exits 2") {
        std::filesystem::remove_all("cli_out_c");
        const auto [code, err] = run_cli("energy-audit --config " +
                                         data_file("unstable_energy.json") + " --out cli_out_c");
        CHECK(code == 2);
        const std::string nd = slurp("cli_out_c/energy-audit.ndjson");
        CHECK(nd.find("path-error") != std::string::npos);
    }
}
