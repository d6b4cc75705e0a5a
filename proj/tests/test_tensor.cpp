// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "metaseg/params.hpp"
#include "metaseg/rng.hpp"
#include "metaseg/tensor.hpp"

using namespace metaseg;

TEST_CASE("tensor shape and scalar conventions") {
    Tensor<double> t({2, 3, 4});
    REQUIRE(t.numel() == 24);
    Tensor<double> s = Tensor<double>::scalar(5.0);
    REQUIRE(s.is_scalar());
    REQUIRE(s[0] == 5.0);
    REQUIRE_THROWS_AS(Tensor<double>({2, 0, 4}), ShapeError);
}

TEST_CASE("ensure_finite rejects NaN and inf") {
    Tensor<float> t({4});
    ensure_finite(t, "t");
    t[2] = std::numeric_limits<float>::infinity();
    REQUIRE_THROWS_AS(ensure_finite(t, "t"), NumericsError);
}

TEST_CASE("paramset uniqueness, order, congruence") {
    ParamSet<double> p;
    p.add("w", Tensor<double>({2, 2}));
    p.add("b", Tensor<double>({2}));
    REQUIRE_THROWS_AS(p.add("w", Tensor<double>({1})), ContractError);

    ParamSet<double> q;
    q.add("w", Tensor<double>({2, 2}));
    q.add("b", Tensor<double>({2}));
    REQUIRE(congruent(p, q));

    ParamSet<double> reordered;
    reordered.add("b", Tensor<double>({2}));
    reordered.add("w", Tensor<double>({2, 2}));
    REQUIRE_FALSE(congruent(p, reordered));

    ParamSet<double> reshaped;
    reshaped.add("w", Tensor<double>({4}));
    reshaped.add("b", Tensor<double>({2}));
    REQUIRE_FALSE(congruent(p, reshaped));
}

TEST_CASE("paramset arithmetic helpers") {
    ParamSet<double> p;
    p.add("w", Tensor<double>({2}, 1.0));
    ParamSet<double> g;
    g.add("w", Tensor<double>({2}, 0.5));
    axpy(p, -2.0, g);
    REQUIRE(p.at("w")[0] == 0.0);
    scale(p, 3.0);
    REQUIRE(p.at("w")[1] == 0.0);
    REQUIRE(max_abs(g) == 0.5);
}

static ParamSet<float> random_params(uint64_t seed) {
    Rng rng(seed);
    ParamSet<float> p;
    p.add("alpha/weight", Tensor<float>({3, 2, 2}));
    p.add("alpha/bias", Tensor<float>({3}));
    p.add("beta.scale", Tensor<float>({7}));
    for (auto& [_, t] : p.entries)
        for (auto& v : t.data) v = static_cast<float>(rng.uniform(-2, 2));
    return p;
}

TEST_CASE("checkpoint round-trip is bitwise lossless") {
    const auto dir = std::filesystem::temp_directory_path() / "metaseg_ckpt_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "a.mckpt").string();
    for (uint64_t seed : {1ull, 2ull, 3ull, 99ull}) {
        ParamSet<float> p = random_params(seed);
        save_checkpoint(path, p);
        ParamSet<float> q = load_checkpoint<float>(path);
        REQUIRE(bitwise_equal(p, q));
    }
}

TEST_CASE("checkpoint format errors") {
    const auto dir = std::filesystem::temp_directory_path() / "metaseg_ckpt_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "b.mckpt").string();
    ParamSet<float> p = random_params(7);
    save_checkpoint(path, p);

    SECTION("bad magic") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XX", 2);
        f.close();
        REQUIRE_THROWS_AS(load_checkpoint<float>(path), FormatError);
    }
    SECTION("truncation") {
        const auto size = std::filesystem::file_size(path);
        std::filesystem::resize_file(path, size - 5);
        REQUIRE_THROWS_AS(load_checkpoint<float>(path), FormatError);
    }
    SECTION("dtype mismatch") {
        REQUIRE_THROWS_AS(load_checkpoint<double>(path), ContractError);
    }
    SECTION("missing file") {
        REQUIRE_THROWS_AS(load_checkpoint<float>((dir / "nope.mckpt").string()), IOError);
    }
}

TEST_CASE("seed fan-out gives unrelated deterministic streams") {
    const uint64_t a1 = seed_fold(42, "batch", uint64_t(3), uint64_t(1));
    const uint64_t a2 = seed_fold(42, "batch", uint64_t(3), uint64_t(1));
    const uint64_t b = seed_fold(42, "batch", uint64_t(3), uint64_t(2));
    const uint64_t c = seed_fold(42, "dropout", uint64_t(3), uint64_t(1));
    REQUIRE(a1 == a2);
    REQUIRE(a1 != b);
    REQUIRE(a1 != c);
}

TEST_CASE("rng uniform_int covers range uniformly enough") {
    Rng rng(123);
    int counts[3] = {0, 0, 0};
    for (int i = 0; i < 30000; ++i) counts[rng.uniform_int(0, 2)]++;
    for (int c : counts) REQUIRE(std::abs(c - 10000) < 600);
}
