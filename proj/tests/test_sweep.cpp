#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "kvq/sweep.hpp"
#include "kvq/wire.hpp"
#include "test_util.hpp"

using namespace kvq;
using kvqtest::raised_kind;

namespace {

struct Csv {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

Csv parse_csv(const std::string& text) {
    Csv csv;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cells;
        std::istringstream row(line);
        std::string cell;
        while (std::getline(row, cell, ',')) cells.push_back(cell);
        if (csv.header.empty()) csv.header = cells;
        else csv.rows.push_back(cells);
    }
    return csv;
}

std::size_t column(const Csv& csv, const std::string& name) {
    for (std::size_t i = 0; i < csv.header.size(); ++i)
        if (csv.header[i] == name) return i;
    throw std::logic_error("missing csv column " + name);
}

}  // namespace

TEST_SUITE("sweep") {

TEST_CASE("named suites resolve to fixed generator settings") {
    SynthSpec standard = suite_spec("standard", 0, 0, 5);
    CHECK(standard.kind == SynthKind::periodic_frames);
    CHECK(standard.tokens == 96);
    CHECK(standard.channels == 64);
    CHECK(standard.seed == 5);

    SynthSpec channels = suite_spec("outlier_channels", 0, 0, 1);
    CHECK(channels.kind == SynthKind::gaussian_outlier_channels);
    CHECK(channels.outlier_count == channels.channels / 2);

    SynthSpec tokens = suite_spec("outlier_tokens", 0, 0, 1);
    CHECK(tokens.kind == SynthKind::gaussian_outlier_tokens);

    SynthSpec periodic = suite_spec("periodic", 0, 0, 1);
    CHECK(periodic.kind == SynthKind::periodic_frames);
    CHECK(periodic.frame_len == 32);

    CHECK(suite_spec("iid", 0, 0, 1).outlier_magnitude == 1.0);
    CHECK(suite_spec("uniform", 0, 0, 1).kind == SynthKind::uniform_noise);

    SynthSpec sized = suite_spec("standard", 128, 32, 1);
    CHECK(sized.tokens == 128);
    CHECK(sized.channels == 32);

    CHECK(raised_kind([] { suite_spec("nope", 0, 0, 1); }) == ErrorKind::config);
}

TEST_CASE("grids parse from json with strict key checking") {
    SweepGrid grid = parse_grid_text(R"({
        "suite": "periodic",
        "tokens": 64,
        "channels": 32,
        "steps": 4,
        "seeds": 3,
        "seed0": 7,
        "base": {"value_mode": "ternary", "G": 32},
        "axes": {"key_k": [0.5, 0.25], "fft_mode": ["on", "off"]}
    })");
    CHECK(grid.workload.suite == "periodic");
    CHECK(grid.workload.seeds == 3);
    CHECK(grid.workload.seed0 == 7);
    CHECK(grid.base.value_mode == ValueMode::ternary);
    REQUIRE(grid.axes.size() == 2);
    CHECK(grid.axes[0].first == "key_k");
    CHECK(grid.axes[0].second == std::vector<std::string>{"0.5", "0.25"});
    CHECK(grid.axes[1].second == std::vector<std::string>{"on", "off"});
}

TEST_CASE("bad grids fail with named offenders") {
    CHECK(raised_kind([] { parse_grid_text("not json"); }) == ErrorKind::format);

    try {
        parse_grid_text(R"({"workload": 1, "speed": 2})");
        FAIL("expected a config error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::config);
        CHECK(std::string(e.what()).find("workload") != std::string::npos);
        CHECK(std::string(e.what()).find("speed") != std::string::npos);
    }

    try {
        parse_grid_text(R"({"base": {"key_q": 1}, "axes": {"key_k": []}})");
        FAIL("expected a config error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::config);
        CHECK(std::string(e.what()).find("base.key_q") != std::string::npos);
        CHECK(std::string(e.what()).find("axes.key_k") != std::string::npos);
    }

    CHECK(raised_kind([] { parse_grid_text(R"({"seeds": 0})"); }) == ErrorKind::config);

    // out-of-range axis values parse but fail point validation when expanded
    SweepGrid invalid_point = parse_grid_text(R"({"axes": {"key_k": [2.0]}})");
    try {
        run_sweep(invalid_point);
        FAIL("expected a config error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::config);
        CHECK(std::string(e.what()).find("key_k=2") != std::string::npos);
    }
}

TEST_CASE("sweeps are deterministic byte for byte") {
    SweepGrid grid = parse_grid_text(R"({
        "suite": "standard", "tokens": 64, "channels": 32, "steps": 4, "seeds": 2,
        "axes": {"key_k": [0.5, 0.25]}
    })");
    SweepOutputs a = run_sweep(grid);
    SweepOutputs b = run_sweep(grid);
    CHECK(a.csv_text == b.csv_text);
    CHECK(a.summary_json == b.summary_json);
    CHECK(a.csv_text.rfind("# quality proxies", 0) == 0);

    Csv csv = parse_csv(a.csv_text);
    CHECK(csv.rows.size() == 2 * 2);  // two grid points, two seeds
    CHECK(csv.header.front() == "suite");
}

TEST_CASE("sweep files land on disk deterministically") {
    SweepGrid grid = parse_grid_text(R"({
        "suite": "uniform", "tokens": 32, "channels": 32, "seeds": 2,
        "axes": {"value_mode": ["ternary", "uniform2"]}
    })");
    run_sweep_to_files(grid, "sweep_a.csv", "sweep_a.json");
    run_sweep_to_files(grid, "sweep_b.csv", "sweep_b.json");
    CHECK(wire::read_file("sweep_a.csv") == wire::read_file("sweep_b.csv"));
    CHECK(wire::read_file("sweep_a.json") == wire::read_file("sweep_b.json"));
    for (const char* p : {"sweep_a.csv", "sweep_a.json", "sweep_b.csv", "sweep_b.json"})
        std::remove(p);
}

TEST_CASE("the key budget column follows the bit ledger monotonically") {
    SweepGrid grid = parse_grid_text(R"({
        "suite": "standard", "tokens": 64, "channels": 32, "seeds": 1,
        "axes": {"key_k": [1.0, 0.75, 0.5, 0.25]}
    })");
    Csv csv = parse_csv(run_sweep(grid).csv_text);
    REQUIRE(csv.rows.size() == 4);
    const std::size_t bits = column(csv, "key_code_bits");
    const std::vector<std::string> want{"2", "1.75", "1.5", "1.25"};
    for (std::size_t i = 0; i < 4; ++i) CHECK(csv.rows[i][bits] == want[i]);
}

TEST_CASE("sign coding strictly lowers key error on the periodic suite") {
    SweepGrid grid = parse_grid_text(R"({
        "suite": "periodic", "seeds": 5,
        "base": {"key_k": 0.5},
        "axes": {"fft_mode": ["on", "off"]}
    })");
    Csv csv = parse_csv(run_sweep(grid).csv_text);
    REQUIRE(csv.rows.size() == 10);
    const std::size_t mode = column(csv, "fft_mode");
    const std::size_t mse = column(csv, "key_mse");
    const std::size_t seed = column(csv, "seed");
    std::map<std::string, double> on_rows;
    for (const auto& row : csv.rows)
        if (row[mode] == "on") on_rows[row[seed]] = std::stod(row[mse]);
    for (const auto& row : csv.rows)
        if (row[mode] == "off") CHECK(on_rows.at(row[seed]) < std::stod(row[mse]));
}

TEST_CASE("range scoring ranks lowest on the outlier-channel suite") {
    SweepGrid grid = parse_grid_text(R"({
        "suite": "outlier_channels", "seeds": 5,
        "base": {"key_k": 0.5},
        "axes": {"key_metric": ["range", "variance", "outlier_count"]}
    })");
    Csv csv = parse_csv(run_sweep(grid).csv_text);
    const std::size_t metric = column(csv, "key_metric");
    const std::size_t mse = column(csv, "key_mse");
    std::map<std::string, double> means;
    for (const auto& row : csv.rows) means[row[metric]] += std::stod(row[mse]);
    CHECK(means.at("range") <= means.at("variance"));
    CHECK(means.at("range") < means.at("outlier_count"));
}

TEST_CASE("the summary publishes per-point means") {
    SweepGrid grid = parse_grid_text(R"({
        "suite": "uniform", "tokens": 32, "channels": 32, "seeds": 2,
        "axes": {"key_k": [0.5]}
    })");
    std::string json = run_sweep(grid).summary_json;
    CHECK(json.find("\"points\"") != std::string::npos);
    CHECK(json.find("\"mean_key_mse\"") != std::string::npos);
    CHECK(json.find("\"workload\"") != std::string::npos);
    CHECK(json.find("quality proxies") != std::string::npos);
}

TEST_CASE("axis comparison pairs the two grouping directions per seed") {
    WorkloadSpec spec;
    spec.suite = "outlier_tokens";
    spec.seeds = 10;
    spec.seed0 = 1;
    AxisComparison ternary = compare_axes(spec, "ternary");
    REQUIRE(ternary.per_channel_mse.size() == 10);
    REQUIRE(ternary.per_token_mse.size() == 10);
    CHECK(ternary.win_rate >= 0.8);

    AxisComparison again = compare_axes(spec, "ternary");
    CHECK(again.per_channel_mse == ternary.per_channel_mse);
    CHECK(again.per_token_mse == ternary.per_token_mse);
    CHECK(again.win_rate == ternary.win_rate);

    CHECK(raised_kind([&] { compare_axes(spec, "fancy"); }) == ErrorKind::config);
}

TEST_CASE("workloads carry embeddings only when requested") {
    WorkloadSpec spec;
    spec.suite = "standard";
    spec.steps = 4;
    SweepWorkload with = make_workload(spec, 3, true);
    CHECK(with.keys.tokens == 96);
    CHECK(with.values.tokens == 96);
    CHECK(with.trace.steps.size() == 4);
    CHECK(with.vision_embed.tokens == 96);
    CHECK(with.text_embed.tokens == 8);
    CHECK(with.segments.total() == 96);

    SweepWorkload without = make_workload(spec, 3, false);
    CHECK(without.vision_embed.empty());
    CHECK(without.keys == with.keys);

    // the standard suite pairs periodic keys with token-outlier values
    CHECK(with.keys != with.values);
}

}  // TEST_SUITE
