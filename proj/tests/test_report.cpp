// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "metaseg/report.hpp"

using namespace metaseg;
namespace fs = std::filesystem;

namespace {

fs::path test_dir() {
    auto d = fs::temp_directory_path() / "metaseg_report_test";
    fs::create_directories(d);
    return d;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path);
    REQUIRE(is.good());
    return std::string((std::istreambuf_iterator<char>(is)), {});
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) lines.push_back(line);
    return lines;
}

ProcedureRecords sample_records() {
    return {
        {"baseline",
         {{"s1", 80.0, 2.0}, {"s2", 70.0, 3.0}, {"s3", 75.0, 2.5}}},
        {"mldg",
         {{"s1", 85.0, 1.5}, {"s2", 78.0, 2.2}, {"s3", 81.0, 1.9}}},
    };
}

} // namespace

TEST_CASE("records csv round trip") {
    const auto dir = test_dir();
    const auto path = (dir / "records.csv").string();
    write_records_csv(path, sample_records());
    auto loaded = read_records_csv(path);
    REQUIRE(loaded.size() == 2);
    REQUIRE(loaded[0].first == "baseline");
    REQUIRE(loaded[1].second.size() == 3);
    REQUIRE(loaded[1].second[0].dice == 85.0);
    REQUIRE(loaded[1].second[2].assd == 1.9);
}

TEST_CASE("emit_report: long rows, summary recompute, baseline stars empty") {
    const auto dir = test_dir();
    ReportPaths paths{(dir / "long.csv").string(), (dir / "summary.csv").string()};
    emit_report(sample_records(), paths);

    const auto long_lines = lines_of(slurp(paths.long_csv));
    REQUIRE(long_lines.size() == 1 + 6); // header + 2 procedures x 3 subjects
    REQUIRE(long_lines[0] == "subject,procedure,dice,assd");
    REQUIRE(long_lines[1] == "s1,baseline,80,2");

    const auto summary_lines = lines_of(slurp(paths.summary_csv));
    REQUIRE(summary_lines.size() == 3);
    REQUIRE(summary_lines[0] == "procedure,dice_mean,dice_std,assd_mean,assd_std,stars");

    // baseline row: mean 75, sample std 5, empty stars
    const auto base = detail::split_csv_line(summary_lines[1]);
    REQUIRE(base[0] == "baseline");
    REQUIRE(detail::parse_double_field(base[1], "t") == Catch::Approx(75.0));
    REQUIRE(detail::parse_double_field(base[2], "t") == Catch::Approx(5.0));
    REQUIRE(detail::parse_double_field(base[3], "t") == Catch::Approx(2.5));
    REQUIRE(base[5].empty());

    // mldg row: mean of {85,78,81}
    const auto mldg = detail::split_csv_line(summary_lines[2]);
    REQUIRE(detail::parse_double_field(mldg[1], "t") ==
            Catch::Approx((85.0 + 78.0 + 81.0) / 3.0));
    // n=3 all-positive differences cannot reach p<0.05; stars stay empty
    REQUIRE(mldg[5].empty());
}

TEST_CASE("emit_report: stars appear when the paired test is significant") {
    ProcedureRecords records;
    std::vector<MetricsRecord> base, other;
    for (int i = 0; i < 8; ++i) {
        base.push_back({"s" + std::to_string(i), 70.0 + i, 3.0});
        other.push_back({"s" + std::to_string(i), 75.0 + i, 2.0});
    }
    records.push_back({"baseline", base});
    records.push_back({"mldg", other});
    const auto dir = test_dir();
    ReportPaths paths{(dir / "long2.csv").string(), (dir / "summary2.csv").string()};
    emit_report(records, paths);
    const auto summary_lines = lines_of(slurp(paths.summary_csv));
    const auto mldg = detail::split_csv_line(summary_lines[2]);
    // n=8, all differences positive: exact p = 2/256 = 0.0078 -> "*"
    REQUIRE(mldg[5] == "*");
}

TEST_CASE("emit_report contract violations") {
    const auto dir = test_dir();
    ReportPaths paths{(dir / "l.csv").string(), (dir / "s.csv").string()};

    auto records = sample_records();
    records[1].second[2].subject = "s9";
    REQUIRE_THROWS_AS(emit_report(records, paths), ContractError);

    ProcedureRecords no_baseline{{"mldg", {{"s1", 80.0, 2.0}, {"s2", 70.0, 2.0}}}};
    REQUIRE_THROWS_AS(emit_report(no_baseline, paths), ContractError);
}

TEST_CASE("train log csv: blank G for baseline-style logs") {
    const auto dir = test_dir();
    std::vector<EpochLog> log(2);
    log[0].epoch = 1;
    log[0].f_loss = 0.5;
    log[0].g_loss = 0.25;
    log[0].val_dice = 80.0;
    log[0].checkpoint_path = "checkpoint_best.mckpt";
    log[1].epoch = 2;
    log[1].f_loss = 0.4;
    log[1].val_dice = 82.5; // g_loss stays NaN
    const auto path = (dir / "train_log.csv").string();
    write_train_log_csv(path, log);
    const auto lines = lines_of(slurp(path));
    REQUIRE(lines[0] == "epoch,f_loss,g_loss,val_dice,checkpoint");
    REQUIRE(lines[1] == "1,0.5,0.25,80,checkpoint_best.mckpt");
    REQUIRE(lines[2] == "2,0.4,,82.5,");
}

TEST_CASE("export_features_csv: row count, column count, determinism") {
    NetworkConfig ncfg;
    ncfg.encoder_channels = {4, 8};
    ncfg.patch_extent = 8;
    auto [net, params] = build_network<float>(ncfg, 11);

    std::vector<PatchPair> patches(3);
    Rng rng(5);
    for (size_t i = 0; i < patches.size(); ++i) {
        auto& p = patches[i];
        p.extent = 8;
        p.subject_id = "subj" + std::to_string(i);
        p.domain = "dom";
        p.image.resize(512);
        p.label.assign(512, 0);
        for (auto& v : p.image) v = static_cast<float>(rng.uniform(0, 1));
    }
    const auto dir = test_dir();
    const auto path = (dir / "features.csv").string();
    export_features_csv(path, net, params, patches);
    const auto lines = lines_of(slurp(path));
    REQUIRE(lines.size() == 1 + 3);
    const auto header = detail::split_csv_line(lines[0]);
    REQUIRE(static_cast<int64_t>(header.size()) == 2 + bottleneck_feature_length(net));
    REQUIRE(header[2] == "f0");

    const auto again = (dir / "features_again.csv").string();
    export_features_csv(again, net, params, patches);
    REQUIRE(slurp(path) == slurp(again));
}
