#include "bdscan/attack.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "binio.hpp"
#include "bdscan/errors.hpp"
#include "bdscan/kernels.hpp"
#include "bdscan/train.hpp"

namespace bdscan {

const char* to_string(Mechanism m) {
    switch (m) {
        case Mechanism::additive: return "additive";
        case Mechanism::multiplicative: return "multiplicative";
        case Mechanism::patch: return "patch";
    }
    return "?";
}

Mechanism mechanism_from_string(const std::string& s) {
    if (s == "additive") return Mechanism::additive;
    if (s == "multiplicative") return Mechanism::multiplicative;
    if (s == "patch") return Mechanism::patch;
    throw ConfigError("unknown embedding mechanism '" + s + "'");
}

void BackdoorPattern::validate() const {
    if (values.rank() != 3) throw ConfigError("pattern values must be an H x W x C tensor");
    if (!values.all_finite()) throw ConfigError("pattern contains non-finite values");
    const auto vals = values.values();
    switch (mechanism) {
        case Mechanism::additive:
            if (std::any_of(vals.begin(), vals.end(), [](double v) { return v < -1.0 || v > 1.0; }))
                throw ConfigError("additive pattern entries must lie in [-1, 1]");
            break;
        case Mechanism::multiplicative:
            if (std::any_of(vals.begin(), vals.end(), [](double v) { return v <= 0.0; }))
                throw ConfigError("multiplicative factors must be positive");
            break;
        case Mechanism::patch: {
            const Shape3 s = shape();
            if (mask.rank() != 3 || mask.image_shape() != Shape3{s.h, s.w, 1})
                throw ConfigError("patch mask must be H x W x 1");
            const auto m = mask.values();
            if (std::any_of(m.begin(), m.end(), [](double v) { return !(v >= 0.0 && v <= 1.0); }))
                throw ConfigError("patch mask entries must lie in [0, 1]");
            if (std::any_of(vals.begin(), vals.end(), [](double v) { return v < 0.0 || v > 1.0; }))
                throw ConfigError("patch values must lie in [0, 1]");
            break;
        }
    }
}

namespace {

void rescale_to(Tensor& v, double l2_target) {
    const double n = v.l2_norm();
    for (double& x : v.raw()) x *= l2_target / n;
}

}  // namespace

BackdoorPattern gen_sparse_pattern(Shape3 shape, std::size_t n_pixels, double l2_target, std::uint64_t seed) {
    const std::size_t pixels = shape.h * shape.w;
    if (n_pixels == 0) throw ConfigError("sparse pattern needs at least one pixel");
    if (n_pixels > pixels)
        throw ConfigError("sparse pattern asks for " + std::to_string(n_pixels) + " pixels but the image has " +
                          std::to_string(pixels));
    if (!(l2_target > 0.0)) throw ConfigError("pattern norm must be positive");
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(pixels);
    for (std::size_t i = 0; i < pixels; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::uniform_int_distribution<std::size_t> channel(0, shape.c - 1);
    std::bernoulli_distribution sign(0.5);
    std::normal_distribution<double> jitter(1.0, 0.05);

    BackdoorPattern p{Mechanism::additive, Tensor(shape), {}};
    for (std::size_t i = 0; i < n_pixels; ++i) {
        const std::size_t c = channel(rng);
        const double s = sign(rng) ? 1.0 : -1.0;
        p.values[order[i] * shape.c + c] = s * std::abs(jitter(rng));
    }
    rescale_to(p.values, l2_target);
    p.validate();
    return p;
}

BackdoorPattern gen_chessboard_pattern(Shape3 shape, double l2_target, std::uint64_t seed) {
    if (!(l2_target > 0.0)) throw ConfigError("pattern norm must be positive");
    std::mt19937_64 rng(seed);
    const std::size_t phase = std::bernoulli_distribution(0.5)(rng) ? 1 : 0;
    std::normal_distribution<double> jitter(1.0, 0.05);
    BackdoorPattern p{Mechanism::additive, Tensor(shape), {}};
    for (std::size_t y = 0; y < shape.h; ++y)
        for (std::size_t x = 0; x < shape.w; ++x) {
            if ((y + x) % 2 != phase) continue;
            for (std::size_t c = 0; c < shape.c; ++c) p.values[(y * shape.w + x) * shape.c + c] = std::abs(jitter(rng));
        }
    rescale_to(p.values, l2_target);
    p.validate();
    return p;
}

BackdoorPattern gen_multiplicative_chessboard(Shape3 shape, double factor, std::uint64_t seed) {
    if (!(factor > 0.0)) throw ConfigError("multiplicative factor must be positive");
    std::mt19937_64 rng(seed);
    const std::size_t phase = std::bernoulli_distribution(0.5)(rng) ? 1 : 0;
    BackdoorPattern p{Mechanism::multiplicative, Tensor(shape, 1.0), {}};
    for (std::size_t y = 0; y < shape.h; ++y)
        for (std::size_t x = 0; x < shape.w; ++x)
            if ((y + x) % 2 == phase)
                for (std::size_t c = 0; c < shape.c; ++c) p.values[(y * shape.w + x) * shape.c + c] = factor;
    return p;
}

BackdoorPattern gen_patch_pattern(Shape3 shape, std::size_t side, std::uint64_t seed) {
    if (side == 0 || side > shape.h || side > shape.w) throw ConfigError("patch side out of range");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> row(0, shape.h - side), col(0, shape.w - side);
    std::uniform_real_distribution<double> color(0.2, 0.8);
    const std::size_t y0 = row(rng), x0 = col(rng);
    std::vector<double> rgb(shape.c);
    for (double& v : rgb) v = color(rng);

    BackdoorPattern p{Mechanism::patch, Tensor(shape), Tensor(Shape3{shape.h, shape.w, 1})};
    for (std::size_t y = 0; y < shape.h; ++y)
        for (std::size_t x = 0; x < shape.w; ++x) {
            for (std::size_t c = 0; c < shape.c; ++c) p.values[(y * shape.w + x) * shape.c + c] = rgb[c];
            if (y >= y0 && y < y0 + side && x >= x0 && x < x0 + side) p.mask[y * shape.w + x] = 1.0;
        }
    return p;
}

BackdoorPattern scaled(const BackdoorPattern& p, double s) {
    if (p.mechanism != Mechanism::additive) throw ConfigError("only additive patterns can be rescaled");
    BackdoorPattern out = p;
    for (double& v : out.values.raw()) v *= s;
    return out;
}

Tensor embed(const Tensor& x, const BackdoorPattern& p) {
    if (x.shape() != p.values.shape())
        throw ConfigError("embed: image shape " + shape_string(x.shape()) + " does not match pattern " +
                          shape_string(p.values.shape()));
    Tensor out = x;
    const std::size_t n = x.size();
    switch (p.mechanism) {
        case Mechanism::additive:
            for (std::size_t i = 0; i < n; ++i) out[i] = std::clamp(x[i] + p.values[i], 0.0, 1.0);
            break;
        case Mechanism::multiplicative:
            for (std::size_t i = 0; i < n; ++i) out[i] = std::clamp(x[i] * p.values[i], 0.0, 1.0);
            break;
        case Mechanism::patch: {
            const std::size_t c = p.shape().c;
            for (std::size_t i = 0; i < n; ++i) {
                const double m = p.mask[i / c];
                out[i] = x[i] * (1.0 - m) + p.values[i] * m;
            }
            break;
        }
    }
    return out;
}

Tensor embed_batch(const Tensor& batch, const BackdoorPattern& p) {
    if (batch.rank() != 4) throw ConfigError("embed_batch expects an N x H x W x C batch");
    std::vector<Tensor> items;
    items.reserve(batch.dim(0));
    const auto& s = p.values.shape();
    for (std::size_t i = 0; i < batch.dim(0); ++i) {
        const auto row = batch.sample(i);
        items.push_back(embed(Tensor(s, std::vector<double>(row.begin(), row.end())), p));
    }
    if (items.empty()) return Tensor(batch.shape());
    return stack(items);
}

void AttackSpec::validate(std::size_t num_classes) const {
    if (sources.empty()) throw ConfigError("attack needs at least one source class");
    if (target >= num_classes) throw ConfigError("attack target class out of range");
    for (auto s : sources) {
        if (s >= num_classes) throw ConfigError("attack source class out of range");
        if (s == target) throw ConfigError("attack target must not be a source class");
    }
    auto sorted = sources;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
        throw ConfigError("attack source classes must be distinct");
    pattern.validate();
}

PoisonResult poison(const Dataset& ds, const AttackSpec& spec) {
    spec.validate(ds.num_classes());
    if (spec.pattern.shape() != ds.shape()) throw ConfigError("pattern shape does not match the dataset");
    PoisonResult res{ds, {}, {}};
    if (spec.n_poison == 0) return res;

    std::mt19937_64 rng(spec.seed);
    const std::size_t ns = spec.sources.size();
    for (std::size_t j = 0; j < ns; ++j) {
        const std::size_t count = spec.n_poison / ns + (j < spec.n_poison % ns ? 1 : 0);
        auto idx = ds.class_indices(spec.sources[j]);
        if (count > idx.size())
            throw ConfigError("class " + std::to_string(spec.sources[j]) + " has only " +
                              std::to_string(idx.size()) + " images, cannot poison " + std::to_string(count));
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t i = 0; i < count; ++i) {
            res.source_indices.push_back(idx[i]);
            res.poisoned_indices.push_back(res.data.size());
            res.data.add({embed(ds[idx[i]].image, spec.pattern), spec.target});
        }
    }
    return res;
}

AttackReport evaluate_attack(const Network& net, const Dataset& test, const AttackSpec& spec) {
    spec.validate(test.num_classes());
    AttackReport rep;
    const std::size_t k = test.num_classes();
    rep.clean_accuracy = test.empty() ? 0.0 : accuracy(net, test);

    // Embedded images of class c that land in the target.
    auto hits_in = [&](std::size_t c) {
        if (test.class_size(c) == 0) return std::size_t{0};
        const Tensor post = forward(net, embed_batch(test.class_batch(c), spec.pattern));
        std::size_t hits = 0;
        for (std::size_t i = 0; i < post.dim(0); ++i) hits += argmax(post.sample(i)) == spec.target;
        return hits;
    };

    std::size_t hits_n = 0, total = 0;
    rep.collateral.assign(k, -1.0);
    for (std::size_t c = 0; c < k; ++c) {
        if (c == spec.target) continue;
        const std::size_t h = hits_in(c);
        if (std::find(spec.sources.begin(), spec.sources.end(), c) != spec.sources.end()) {
            hits_n += h;
            total += test.class_size(c);
        } else if (test.class_size(c) > 0) {
            rep.collateral[c] = double(h) / double(test.class_size(c));
        }
    }
    rep.success_rate = total ? double(hits_n) / double(total) : 0.0;
    return rep;
}

// ---------------------------------------------------------------------------
// Pattern files

namespace {

void put_tensor(std::ostream& os, const Tensor& t) {
    detail::put_le<std::uint32_t>(os, std::uint32_t(t.rank()));
    for (auto d : t.shape()) detail::put_le<std::uint64_t>(os, d);
    for (double v : t.values()) detail::put_f64(os, v);
}

Tensor get_tensor(std::istream& is) {
    const auto rank = detail::get_le<std::uint32_t>(is, "tensor rank");
    if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank));
    std::vector<std::size_t> shape(rank);
    std::size_t n = rank ? 1 : 0;
    for (auto& d : shape) {
        d = detail::get_le<std::uint64_t>(is, "tensor shape");
        if (d > (std::size_t(1) << 28)) throw FormatError("implausible tensor dimension");
        n *= d;
    }
    std::vector<double> data(n);
    for (double& v : data) v = detail::get_f64(is, "tensor data");
    if (rank == 0) return Tensor();
    return Tensor(shape, std::move(data));
}

}  // namespace

void save_pattern(const std::filesystem::path& path, const BackdoorPattern& p) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    os.write("BSPT", 4);
    detail::put_le<std::uint32_t>(os, kPatternFormatVersion);
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(p.mechanism));
    put_tensor(os, p.values);
    put_tensor(os, p.mask);
    if (!os) throw FormatError("write failed for " + path.string());
}

BackdoorPattern load_pattern(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open pattern file " + path.string());
    detail::expect_magic(is, "BSPT", "pattern");
    const auto version = detail::get_le<std::uint32_t>(is, "version");
    if (version != kPatternFormatVersion)
        throw VersionError("pattern format version " + std::to_string(version) + " is not supported");
    const auto mech = detail::get_le<std::uint32_t>(is, "mechanism");
    if (mech > static_cast<std::uint32_t>(Mechanism::patch)) throw FormatError("unknown mechanism tag");
    BackdoorPattern p;
    p.mechanism = static_cast<Mechanism>(mech);
    p.values = get_tensor(is);
    p.mask = get_tensor(is);
    return p;
}

}  // namespace bdscan
