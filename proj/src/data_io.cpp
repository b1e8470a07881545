#include "bdscan/data_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>

#include "bdscan/errors.hpp"
#include "bdscan/kernels.hpp"
#include "json.hpp"

namespace bdscan {

namespace fs = std::filesystem;

Dataset read_records(const fs::path& file, Shape3 shape, std::size_t num_classes) {
    std::ifstream is(file, std::ios::binary);
    if (!is) throw FormatError("cannot open record file " + file.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    const std::size_t rec = 1 + shape.size();
    if (bytes.size() % rec != 0)
        throw FormatError(file.string() + ": length " + std::to_string(bytes.size()) +
                          " is not a multiple of the record size " + std::to_string(rec));
    const std::size_t plane = shape.h * shape.w;
    Dataset out(shape, num_classes);
    for (std::size_t off = 0; off < bytes.size(); off += rec) {
        const std::size_t label = bytes[off];
        if (label >= num_classes)
            throw FormatError(file.string() + ": label byte " + std::to_string(label) + " exceeds " +
                              std::to_string(num_classes - 1));
        Tensor img(shape);
        for (std::size_t c = 0; c < shape.c; ++c)
            for (std::size_t p = 0; p < plane; ++p)
                img[p * shape.c + c] = double(bytes[off + 1 + c * plane + p]) / 255.0;
        out.add({std::move(img), label});
    }
    return out;
}

void append_records(const fs::path& file, const Dataset& data, std::size_t first_item) {
    if (data.num_classes() > 256) throw ConfigError("record format stores labels in one byte");
    std::ofstream os(file, std::ios::binary | std::ios::app);
    if (!os) throw FormatError("cannot open " + file.string() + " for writing");
    const Shape3 s = data.shape();
    const std::size_t plane = s.h * s.w;
    std::vector<char> rec(1 + s.size());
    for (std::size_t i = first_item; i < data.size(); ++i) {
        rec[0] = static_cast<char>(data[i].label);
        const auto& img = data[i].image;
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t p = 0; p < plane; ++p) {
                const double v = std::clamp(img[p * s.c + c], 0.0, 1.0);
                rec[1 + c * plane + p] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
            }
        os.write(rec.data(), std::streamsize(rec.size()));
    }
    if (!os) throw FormatError("write failed for " + file.string());
}

void write_records(const fs::path& file, const Dataset& data) {
    fs::remove(file);
    append_records(file, data);
}

Dataset load_cifar10(const fs::path& dir, CifarSplit split) {
    const Shape3 shape{32, 32, 3};
    std::vector<fs::path> files;
    if (split == CifarSplit::train) {
        for (int i = 1; i <= 5; ++i) files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    } else {
        files.push_back(dir / "test_batch.bin");
    }
    Dataset out(shape, 10);
    for (const auto& f : files) {
        if (!fs::exists(f)) throw FormatError("missing CIFAR-10 batch " + f.string());
        Dataset part = read_records(f, shape, 10);
        for (const auto& it : part.items()) out.add(it);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic shapes

namespace {

using Rgb = std::array<double, 3>;

Rgb hsv_to_rgb(double h, double s, double v) {
    h = h - std::floor(h);
    const double hh = h * 6.0;
    const int sector = static_cast<int>(hh) % 6;
    const double f = hh - std::floor(hh);
    const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (sector) {
        case 0: return {v, t, p};
        case 1: return {q, v, p};
        case 2: return {p, v, t};
        case 3: return {p, q, v};
        case 4: return {t, p, v};
        default: return {v, p, q};
    }
}

// Membership test in coordinates normalised by the shape radius.
bool inside(std::size_t shape_id, double dx, double dy) {
    const double ax = std::abs(dx), ay = std::abs(dy);
    const double r2 = dx * dx + dy * dy;
    switch (shape_id % 10) {
        case 0: return r2 <= 1.0;                                            // disk
        case 1: return std::max(ax, ay) <= 0.8;                              // square
        case 2: return dy >= -0.85 && dy <= 0.85 && ax <= 0.55 * (dy + 0.85);  // triangle
        case 3: return (ax <= 0.3 && ay <= 1.0) || (ay <= 0.3 && ax <= 1.0);   // plus
        case 4: return r2 <= 1.0 && r2 >= 0.3;                               // ring
        case 5: return ax + ay <= 1.0;                                       // diamond
        case 6: return std::abs(ax - ay) <= 0.3 && std::max(ax, ay) <= 1.0;  // x
        case 7: return ay <= 0.35 && ax <= 1.0;                              // horizontal bar
        case 8: return ax <= 0.35 && ay <= 1.0;                              // vertical bar
        default: return std::max(ax, ay) <= 0.9 && std::max(ax, ay) >= 0.55;  // hollow square
    }
}

}  // namespace

Dataset generate_synthetic(std::size_t num_classes, std::size_t n_per_class, std::size_t height, std::size_t width,
                           std::uint64_t seed) {
    if (num_classes < 3) throw ConfigError("synthetic dataset needs at least 3 classes");
    if (n_per_class < 50) throw ConfigError("synthetic dataset needs at least 50 items per class (empty or tiny class)");
    if (height < 8 || width < 8) throw ConfigError("synthetic images must be at least 8x8");
    const Shape3 shape{height, width, 3};
    Dataset out(shape, num_classes);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, 0.03);
    const double extent = double(std::min(height, width));

    for (std::size_t i = 0; i < n_per_class; ++i) {
        for (std::size_t c = 0; c < num_classes; ++c) {
            const double hue = double(c) / double(num_classes) + 0.05 * (u01(rng) - 0.5);
            const Rgb fg = hsv_to_rgb(hue, 0.55 + 0.45 * u01(rng), 0.55 + 0.45 * u01(rng));
            const Rgb bg = hsv_to_rgb(u01(rng), 0.3 * u01(rng), 0.08 + 0.4 * u01(rng));
            const double radius = extent * (0.2 + 0.15 * u01(rng));
            const double cx = radius + (double(width) - 2 * radius) * u01(rng);
            const double cy = radius + (double(height) - 2 * radius) * u01(rng);
            Tensor img(shape);
            for (std::size_t y = 0; y < height; ++y)
                for (std::size_t x = 0; x < width; ++x) {
                    const bool in = inside(c, (double(x) + 0.5 - cx) / radius, (double(y) + 0.5 - cy) / radius);
                    const Rgb& col = in ? fg : bg;
                    for (std::size_t ch = 0; ch < 3; ++ch) {
                        const double v = std::clamp(col[ch] + noise(rng), 0.0, 1.0);
                        img[(y * width + x) * 3 + ch] = std::round(v * 255.0) / 255.0;
                    }
                }
            out.add({std::move(img), c});
        }
    }
    return out;
}

void save_dataset_dir(const fs::path& dir, const Dataset& train, const Dataset& test, std::uint64_t seed) {
    fs::create_directories(dir);
    write_records(dir / "train.bin", train);
    write_records(dir / "test.bin", test);
    nlohmann::json meta{{"K", train.num_classes()},
                        {"H", train.shape().h},
                        {"W", train.shape().w},
                        {"C", train.shape().c},
                        {"seed", seed}};
    std::ofstream(dir / "meta.json") << meta.dump(2) << "\n";
}

DatasetSplits load_dataset_dir(const fs::path& dir) {
    std::ifstream is(dir / "meta.json");
    if (!is) throw FormatError("dataset directory " + dir.string() + " has no meta.json");
    nlohmann::json meta;
    try {
        is >> meta;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("meta.json: " + std::string(e.what()));
    }
    DatasetSplits out;
    out.meta.num_classes = meta.at("K").get<std::size_t>();
    out.meta.shape = {meta.at("H").get<std::size_t>(), meta.at("W").get<std::size_t>(),
                      meta.value("C", std::size_t{3})};
    out.meta.seed = meta.value("seed", std::uint64_t{0});
    out.train = read_records(dir / "train.bin", out.meta.shape, out.meta.num_classes);
    out.test = read_records(dir / "test.bin", out.meta.shape, out.meta.num_classes);
    return out;
}

Dataset sample_detection_set(const Dataset& data, std::size_t n_per_class, std::uint64_t seed) {
    if (n_per_class == 0) throw ConfigError("detection set needs at least one item per class");
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> picked;
    for (std::size_t c = 0; c < data.num_classes(); ++c) {
        auto idx = data.class_indices(c);
        if (idx.size() < n_per_class)
            throw ConfigError("class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                              " items, fewer than the requested " + std::to_string(n_per_class));
        std::shuffle(idx.begin(), idx.end(), rng);
        picked.insert(picked.end(), idx.begin(), idx.begin() + std::ptrdiff_t(n_per_class));
    }
    return data.subset(picked);
}

Dataset relabel_by_prediction(const Network& net, const Dataset& data) {
    const Tensor post = forward(net, data.batch());
    Dataset out(data.shape(), data.num_classes());
    for (std::size_t i = 0; i < data.size(); ++i) out.add({data[i].image, argmax(post.sample(i))});
    return out;
}

}  // namespace bdscan
