#include <array>
#include <set>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"

#include "bdscan/attack.hpp"
#include "bdscan/errors.hpp"
#include "fixtures.hpp"

using namespace bdscan;
namespace fs = std::filesystem;

TEST_CASE("sparse patterns touch one channel of n pixels at the requested norm") {
    const Shape3 s{32, 32, 3};
    const BackdoorPattern p = gen_sparse_pattern(s, 4, 0.6, 11);
    CHECK(p.mechanism == Mechanism::additive);
    CHECK(std::abs(p.values.l2_norm() - 0.6) < 1e-9);
    std::size_t nonzero = 0;
    for (std::size_t px = 0; px < s.h * s.w; ++px) {
        std::size_t channels = 0;
        for (std::size_t c = 0; c < 3; ++c) channels += p.values[px * 3 + c] != 0.0;
        CHECK(channels <= 1);
        nonzero += channels;
    }
    CHECK(nonzero == 4);
    CHECK(gen_sparse_pattern(s, 4, 0.6, 11).values == p.values);

    const BackdoorPattern one = gen_sparse_pattern(s, 1, 0.3, 2);
    double only = 0.0;
    for (double v : one.values.raw())
        if (v != 0.0) only = v;
    CHECK(std::abs(std::abs(only) - 0.3) < 1e-12);
    CHECK_THROWS_AS(gen_sparse_pattern({2, 2, 3}, 5, 0.6, 1), ConfigError);
}

TEST_CASE("chessboard patterns perturb exactly one of each adjacent pair") {
    const Shape3 s{32, 32, 3};
    const BackdoorPattern p = gen_chessboard_pattern(s, 0.2, 5);
    CHECK(std::abs(p.values.l2_norm() - 0.2) < 1e-9);
    auto on = [&](std::size_t y, std::size_t x) {
        bool all = true, any = false;
        for (std::size_t c = 0; c < 3; ++c) {
            const double v = p.values[(y * s.w + x) * 3 + c];
            all = all && v > 0.0;
            any = any || v != 0.0;
        }
        CHECK(all == any);  // all channels or none, always positive
        return all;
    };
    for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x) {
            if (x + 1 < s.w) CHECK(on(y, x) != on(y, x + 1));
            if (y + 1 < s.h) CHECK(on(y, x) != on(y + 1, x));
        }
    // 0.2 spread over 512 pixels x 3 channels: 0.2 / sqrt(1536) ~ 5.1e-3 per entry
    double sum = 0.0;
    std::size_t n = 0;
    for (double v : p.values.raw())
        if (v > 0.0) {
            sum += v;
            ++n;
        }
    CHECK(n == 1536);
    CHECK(sum / double(n) == doctest::Approx(5.1e-3).epsilon(0.02));
}

TEST_CASE("scaling a pattern scales its norm exactly") {
    const BackdoorPattern p = gen_chessboard_pattern({16, 16, 3}, 0.6, 1);
    const BackdoorPattern q = scaled(p, 0.5);
    CHECK(std::abs(q.values.l2_norm() - 0.3) < 1e-12);
}

TEST_CASE("embedding follows each mechanism and stays in range") {
    const Shape3 s{8, 8, 3};
    SUBCASE("additive saturates at one") {
        const Tensor ones(s, 1.0);
        CHECK(embed(ones, gen_chessboard_pattern(s, 0.5, 1)) == ones);
    }
    SUBCASE("unit multiplicative factors are the identity") {
        const Tensor x = fixture::random_tensor(s, 3, 0.0, 1.0);
        CHECK(embed(x, BackdoorPattern{Mechanism::multiplicative, Tensor(s, 1.0), {}}) == x);
    }
    SUBCASE("full mask returns the pattern") {
        const Tensor x = fixture::random_tensor(s, 4, 0.0, 1.0);
        const Tensor v = fixture::random_tensor(s, 5, 0.0, 1.0);
        CHECK(embed(x, BackdoorPattern{Mechanism::patch, v, Tensor(Shape3{8, 8, 1}, 1.0)}) == v);
    }
    SUBCASE("output is clipped") {
        const Tensor x = fixture::random_tensor(s, 6, 0.0, 1.0);
        const Tensor add = embed(x, BackdoorPattern{Mechanism::additive, fixture::random_tensor(s, 7, -1.0, 1.0), {}});
        const Tensor mul = embed(x, gen_multiplicative_chessboard(s, 3.0, 1));
        for (double v : add.raw()) CHECK((v >= 0.0 && v <= 1.0));
        for (double v : mul.raw()) CHECK((v >= 0.0 && v <= 1.0));
    }
    CHECK_THROWS_AS(embed(Tensor(Shape3{4, 4, 3}), gen_chessboard_pattern(s, 0.5, 1)), ConfigError);
}

TEST_CASE("poisoning appends relabeled copies and keeps the originals") {
    const Dataset d = generate_synthetic(4, 50, 8, 8, 1);
    AttackSpec spec;
    spec.sources = {1};
    spec.target = 3;
    spec.pattern = gen_chessboard_pattern({8, 8, 3}, 0.5, 2);
    spec.seed = 3;

    spec.n_poison = 0;
    const PoisonResult none = poison(d, spec);
    CHECK(none.data.size() == d.size());

    spec.n_poison = 10;
    const PoisonResult pr = poison(d, spec);
    REQUIRE(pr.data.size() == d.size() + 10);
    for (std::size_t i = 0; i < d.size(); ++i) {
        CHECK(pr.data[i].image == d[i].image);
        CHECK(pr.data[i].label == d[i].label);
    }
    std::set<std::size_t> distinct(pr.source_indices.begin(), pr.source_indices.end());
    CHECK(distinct.size() == 10);
    for (std::size_t j = 0; j < 10; ++j) {
        const auto& item = pr.data[pr.poisoned_indices[j]];
        CHECK(item.label == 3);
        CHECK(d[pr.source_indices[j]].label == 1);
        CHECK(item.image == embed(d[pr.source_indices[j]].image, spec.pattern));
    }

    spec.sources = {0, 1, 2};
    spec.n_poison = 9;
    const PoisonResult multi = poison(d, spec);
    std::array<int, 4> per{};
    for (auto i : multi.source_indices) per[d[i].label]++;
    CHECK(per[0] == 3);
    CHECK(per[1] == 3);
    CHECK(per[2] == 3);

    spec.n_poison = 200;
    CHECK_THROWS_AS(poison(d, spec), ConfigError);
    spec.sources = {3};
    spec.n_poison = 1;
    CHECK_THROWS_AS(poison(d, spec), ConfigError);
}

TEST_CASE("attack reports on a clean model") {
    const auto& m = fixture::clean_desk_model();
    AttackSpec spec;
    spec.sources = {1};
    spec.target = 3;
    spec.pattern = gen_chessboard_pattern({16, 16, 3}, 0.6, 1);
    const AttackReport r = evaluate_attack(m.net, m.test, spec);
    CHECK(r.success_rate < 0.5);
    CHECK(r.clean_accuracy >= 0.9);
    REQUIRE(r.collateral.size() == 5);
    CHECK(r.collateral[1] == -1.0);
    CHECK(r.collateral[3] == -1.0);
    for (std::size_t c : {0, 2, 4}) CHECK((r.collateral[c] >= 0.0 && r.collateral[c] <= 1.0));
}

TEST_CASE("pattern files round trip and reject bad input") {
    const fs::path dir = fs::temp_directory_path() / "bdscan_patterns";
    fs::create_directories(dir);
    const BackdoorPattern p = gen_patch_pattern({16, 16, 3}, 3, 4);
    save_pattern(dir / "p.bspt", p);
    const BackdoorPattern q = load_pattern(dir / "p.bspt");
    CHECK(q.mechanism == Mechanism::patch);
    CHECK(q.values == p.values);
    CHECK(q.mask == p.mask);

    std::ifstream is(dir / "p.bspt", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(is)), {});
    std::string bad = bytes;
    bad[0] = 'Q';
    std::ofstream(dir / "bad.bspt", std::ios::binary) << bad;
    CHECK_THROWS_AS(load_pattern(dir / "bad.bspt"), FormatError);
    std::string newer = bytes;
    newer[4] = 2;
    std::ofstream(dir / "new.bspt", std::ios::binary) << newer;
    CHECK_THROWS_AS(load_pattern(dir / "new.bspt"), VersionError);
}
