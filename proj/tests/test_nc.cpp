#include <cmath>
#include <vector>

#include "doctest.h"

#include "bdscan/errors.hpp"
#include "bdscan/nc.hpp"
#include "fixtures.hpp"

using namespace bdscan;

TEST_CASE("MAD index worked examples") {
    CHECK_THROWS_AS(mad_index(std::vector<double>{1, 1, 1, 1, 1}), DegenerateData);

    const MadResult fb = mad_index(std::vector<double>{10, 10, 10, 10, 2});
    CHECK(fb.fallback);
    CHECK(fb.median == 10.0);
    // mean absolute deviation 8/5 stands in for the zero MAD
    CHECK(fb.indices[4] == doctest::Approx(8.0 / (1.4826 * 1.6)).epsilon(1e-12));

    const MadResult r = mad_index(std::vector<double>{8, 9, 10, 11, 12, 1});
    CHECK_FALSE(r.fallback);
    CHECK(r.median == 9.5);
    CHECK(r.indices[5] == doctest::Approx(3.82).epsilon(1e-3));

    AnomalyReport rep;
    rep.norms = {8, 9, 10, 11, 12, 1};
    rep.indices = r.indices;
    rep.median = r.median;
    REQUIRE(nc_decide(rep).has_value());
    CHECK(*nc_decide(rep) == 5);
    CHECK_FALSE(nc_decide(rep, 4.0).has_value());
}

TEST_CASE("no class is flagged when every index is below two") {
    const std::vector<double> norms{10, 11, 9.5, 10.5, 9};
    const MadResult r = mad_index(norms);
    for (double x : r.indices) CHECK(x < 2.0);
    AnomalyReport rep;
    rep.norms = norms;
    rep.indices = r.indices;
    rep.median = r.median;
    CHECK_FALSE(nc_decide(rep).has_value());
}

TEST_CASE("large-side outliers are never flagged") {
    AnomalyReport rep;
    rep.norms = {8, 9, 10, 11, 12, 40};
    const MadResult r = mad_index(rep.norms);
    rep.indices = r.indices;
    rep.median = r.median;
    CHECK(rep.indices[5] > 2.0);
    CHECK_FALSE(nc_decide(rep).has_value());
}

TEST_CASE("MAD index is invariant to positive affine maps") {
    const std::vector<double> x{3.1, 4.7, 2.2, 9.0, 5.5, 4.1, 0.4};
    std::vector<double> y;
    for (double v : x) y.push_back(2.5 * v + 7.0);
    const MadResult a = mad_index(x), b = mad_index(y);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(a.indices[i] == doctest::Approx(b.indices[i]).epsilon(1e-12));
}

TEST_CASE("MAD index rejects too few or non-finite norms") {
    CHECK_THROWS_AS(mad_index(std::vector<double>{1, 2}), DegenerateData);
    CHECK_THROWS_AS(mad_index(std::vector<double>{1, 2, NAN}), DegenerateData);
}

namespace {

NCConfig quick() {
    NCConfig c;
    c.max_iters = 120;
    return c;
}

}  // namespace

TEST_CASE("reverse-engineered masks and patterns stay in the unit box") {
    const auto& m = fixture::clean_desk_model();
    const Dataset det = sample_detection_set(m.test, 8, 3);
    const NCResult r = nc_optimize(m.net, det, 2, quick());
    CHECK(r.target == 2);
    CHECK(r.iterations > 0);
    for (double v : r.estimate.mask.raw()) CHECK((v >= 0.0 && v <= 1.0));
    for (double v : r.estimate.pattern.raw()) CHECK((v >= 0.0 && v <= 1.0));
    double l1 = 0.0;
    for (double v : r.estimate.mask.raw()) l1 += v;
    CHECK(r.mask_norm == doctest::Approx(l1).epsilon(1e-9));
}

TEST_CASE("a weaker sparsity penalty grows the mask") {
    const auto& m = fixture::clean_desk_model();
    const Dataset det = sample_detection_set(m.test, 8, 4);
    NCConfig strong = quick(), weak = quick();
    weak.lambda = 0.01;
    const NCResult a = nc_optimize(m.net, det, 0, strong);
    const NCResult b = nc_optimize(m.net, det, 0, weak);
    CHECK(b.mask_norm > a.mask_norm);
}

TEST_CASE("NC detection is identical serially and in parallel") {
    const auto& m = fixture::clean_desk_model();
    const Dataset det = sample_detection_set(m.test, 6, 5);
    NCConfig c = quick();
    c.max_iters = 60;
    const AnomalyReport a = nc_detect(m.net, det, c, 2.0, Exec::serial);
    const AnomalyReport b = nc_detect(m.net, det, c, 2.0, Exec::parallel);
    REQUIRE(a.norms.size() == 5);
    for (std::size_t t = 0; t < 5; ++t) {
        CHECK(a.results[t].mask_norm == b.results[t].mask_norm);
        CHECK(a.results[t].estimate.mask == b.results[t].estimate.mask);
    }
    CHECK(a.detected == b.detected);
}

TEST_CASE("NC configuration is validated") {
    NCConfig c;
    c.lambda = -1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = NCConfig{};
    c.pi = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}
