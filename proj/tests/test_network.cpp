#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "doctest.h"

#include "bdscan/errors.hpp"
#include "bdscan/kernels.hpp"
#include "bdscan/model_io.hpp"
#include "bdscan/network.hpp"
#include "bdscan/train.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace bdscan;
namespace fs = std::filesystem;

TEST_CASE("softmax with zero weights is uniform") {
    Network net({2, 2, 1}, {LayerSpec::flatten(), LayerSpec::dense(4), LayerSpec::softmax()});
    const Tensor post = forward(net, fixture::random_batch(3, {2, 2, 1}, 5));
    for (double p : post.raw()) CHECK(p == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("identity dense layer reproduces the closed-form softmax") {
    Network net({1, 1, 2}, {LayerSpec::dense(2), LayerSpec::softmax()});
    net.params()[0] = {1, 0, 0, 1, 0, 0};
    const Tensor post = forward(net, Tensor({1, 1, 1, 2}, std::vector<double>{2.0, 0.0}));
    const double e2 = std::exp(2.0);
    CHECK(post[0] == doctest::Approx(e2 / (e2 + 1)).epsilon(1e-12));
    CHECK(post[1] == doctest::Approx(1 / (e2 + 1)).epsilon(1e-12));
    CHECK(post[0] == doctest::Approx(0.8808).epsilon(1e-4));
}

TEST_CASE("posterior rows sum to one") {
    const Network net = fixture::random_reference({16, 16, 3}, 5, 3, 6.0f);
    const Tensor post = forward(net, fixture::random_batch(20, {16, 16, 3}, 4));
    for (std::size_t i = 0; i < 20; ++i) {
        double s = 0.0;
        for (double p : post.sample(i)) {
            CHECK(p >= 0.0);
            s += p;
        }
        CHECK(std::abs(s - 1.0) < 1e-6);
    }
}

TEST_CASE("forward rejects a mismatched batch") {
    const Network net = Network::reference({16, 16, 3}, 5);
    CHECK_THROWS_AS(forward(net, fixture::random_batch(2, {8, 8, 3}, 1)), ConfigError);
}

TEST_CASE("f2(f1(x)) equals forward exactly") {
    const Network net = fixture::random_reference({16, 16, 3}, 5, 8);
    const Tensor x = fixture::random_batch(6, {16, 16, 3}, 9);
    const std::size_t cut = *net.cut_index();
    const Tensor direct = forward(net, x);
    const Tensor split = forward_from(net, features(net, x, cut), cut);
    CHECK(direct == split);
}

namespace {

// -mean_i p(t | x_i) with x given as a flat vector.
double mean_target_posterior(const Network& net, const std::vector<double>& flat, const std::vector<std::size_t>& shape,
                             std::size_t begin, std::size_t target) {
    const Tensor post = forward_from(net, Tensor(shape, flat), begin, Exec::serial);
    double s = 0.0;
    for (std::size_t i = 0; i < post.dim(0); ++i) s += post.sample(i)[target];
    return -s / double(post.dim(0));
}

void check_against_differences(const Network& net, const Tensor& x, const Tensor& g, std::size_t begin,
                               std::size_t target, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
    const double floor = 1e-3 * g.l2_norm() / std::sqrt(double(g.size()));
    auto f = [&](const std::vector<double>& v) { return mean_target_posterior(net, v, x.shape(), begin, target); };
    for (int k = 0; k < 50; ++k) {
        const std::size_t i = pick(rng);
        const double fd = oracle::central_difference(f, x.raw(), i);
        CHECK(oracle::relative_error(g[i], fd, floor) < 1e-4);
    }
}

}  // namespace

TEST_CASE("input gradient matches central differences") {
    const Network net = fixture::random_reference({16, 16, 3}, 5, 21);
    const Tensor x = fixture::random_batch(4, {16, 16, 3}, 22);
    SUBCASE("image space") {
        check_against_differences(net, x, input_gradient(net, x, 2), 0, 2, 23);
    }
    SUBCASE("cut layer") {
        const std::size_t cut = *net.cut_index();
        const Tensor z = features(net, x, cut);
        check_against_differences(net, z, input_gradient(net, x, 1, cut), cut, 1, 24);
    }
}

TEST_CASE("input gradient needs a cut index for feature mode") {
    Network net = fixture::random_reference({16, 16, 3}, 5, 1);
    net.set_cut_index(std::nullopt);
    CHECK_THROWS_AS(input_gradient(net, fixture::random_batch(1, {16, 16, 3}, 1), 0, 1), ConfigError);
}

TEST_CASE("saturated target posterior has a vanishing gradient") {
    Network net({2, 2, 1}, {LayerSpec::flatten(), LayerSpec::dense(3), LayerSpec::softmax()});
    net.init_params(4);
    auto& p = net.params()[1];
    p[12 + 1] = 60.0f;  // bias of class 1
    const Tensor g = input_gradient(net, fixture::random_batch(5, {2, 2, 1}, 2), 1);
    CHECK(g.l2_norm() < 1e-6);
}

TEST_CASE("serial and parallel kernels agree bit for bit") {
    const Network net = fixture::random_reference({16, 16, 3}, 5, 31);
    const Tensor x = fixture::random_batch(17, {16, 16, 3}, 32);
    CHECK(forward(net, x, Exec::serial) == forward(net, x, Exec::parallel));
    std::vector<double> w(17, 1.0 / 17);
    const auto a = target_objective(net, x, 0, 3, w, Exec::serial);
    const auto b = target_objective(net, x, 0, 3, w, Exec::parallel);
    CHECK(a.value == b.value);
    CHECK(a.gradient == b.gradient);
}

namespace {

Dataset blobs(std::uint64_t seed) {
    Dataset d({4, 4, 1}, 2);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.05);
    for (std::size_t i = 0; i < 200; ++i) {
        const std::size_t label = i % 2;
        Tensor img({4, 4, 1});
        for (auto& v : img.raw()) v = std::clamp((label ? 0.75 : 0.25) + noise(rng), 0.0, 1.0);
        d.add({img, label});
    }
    return d;
}

}  // namespace

TEST_CASE("training separates two blobs") {
    const Dataset d = blobs(1);
    Network net = Network::reference({4, 4, 1}, 2);
    net.init_params(1);
    TrainConfig cfg;
    cfg.epochs = 10;
    const TrainReport rep = train(net, d, cfg);
    CHECK(rep.epoch_loss.size() == 10);
    CHECK(rep.epoch_loss.back() < rep.epoch_loss.front());
    CHECK(accuracy(net, d) >= 0.99);
}

TEST_CASE("zero epochs leave parameters unchanged") {
    Network net = Network::reference({4, 4, 1}, 2);
    net.init_params(3);
    const Network before = net;
    TrainConfig cfg;
    cfg.epochs = 0;
    train(net, blobs(2), cfg);
    CHECK(net == before);
}

TEST_CASE("training is bit-reproducible for a fixed seed") {
    const Dataset d = blobs(3);
    Network a = Network::reference({4, 4, 1}, 2), b = Network::reference({4, 4, 1}, 2);
    a.init_params(5);
    b.init_params(5);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.seed = 9;
    train(a, d, cfg);
    train(b, d, cfg);
    CHECK(a == b);
    Network c = Network::reference({4, 4, 1}, 2);
    c.init_params(5);
    cfg.seed = 10;
    train(c, d, cfg);
    CHECK_FALSE(a == c);
}

TEST_CASE("non-finite loss raises a divergence error with the epoch") {
    Network net = Network::reference({4, 4, 1}, 2);
    net.init_params(1);
    for (auto it = net.params().rbegin(); it != net.params().rend(); ++it)
        if (!it->empty()) {
            it->back() = std::numeric_limits<float>::quiet_NaN();
            break;
        }
    TrainConfig cfg;
    cfg.epochs = 2;
    try {
        train(net, blobs(4), cfg);
        FAIL("expected TrainingDivergence");
    } catch (const TrainingDivergence& e) {
        CHECK(e.epoch() == 0);
    }
}

TEST_CASE("model files round trip and reject bad input") {
    const fs::path dir = fs::temp_directory_path() / "bdscan_model_io";
    fs::create_directories(dir);
    const fs::path file = dir / "m.bsnn";
    const Network net = fixture::random_reference({16, 16, 3}, 5, 41);
    save_model(file, net);
    const Network back = load_model(file);
    CHECK(back == net);
    const Tensor x = fixture::random_batch(3, {16, 16, 3}, 42);
    CHECK(forward(back, x) == forward(net, x));

    auto patch_byte = [&](std::size_t offset, char value, const fs::path& out) {
        std::ifstream is(file, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(is)), {});
        bytes[offset] = value;
        std::ofstream(out, std::ios::binary) << bytes;
    };
    SUBCASE("bad magic") {
        patch_byte(0, 'X', dir / "bad.bsnn");
        CHECK_THROWS_AS(load_model(dir / "bad.bsnn"), FormatError);
    }
    SUBCASE("newer version") {
        patch_byte(4, 9, dir / "new.bsnn");
        CHECK_THROWS_AS(load_model(dir / "new.bsnn"), VersionError);
    }
    SUBCASE("truncated") {
        const auto size = fs::file_size(file);
        fs::copy_file(file, dir / "short.bsnn", fs::copy_options::overwrite_existing);
        fs::resize_file(dir / "short.bsnn", size - 7);
        CHECK_THROWS_AS(load_model(dir / "short.bsnn"), FormatError);
    }
}
