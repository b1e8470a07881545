#include "bdscan/model_io.hpp"

#include <fstream>

#include "binio.hpp"

namespace bdscan {

using detail::get_f32;
using detail::get_le;
using detail::put_f32;
using detail::put_le;

void save_model(const std::filesystem::path& path, const Network& net) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open " + path.string() + " for writing");
    os.write("BSNN", 4);
    put_le<std::uint32_t>(os, kModelFormatVersion);
    const auto& in = net.input_shape();
    put_le<std::uint32_t>(os, std::uint32_t(in.h));
    put_le<std::uint32_t>(os, std::uint32_t(in.w));
    put_le<std::uint32_t>(os, std::uint32_t(in.c));
    const std::int32_t cut = net.cut_index() ? std::int32_t(*net.cut_index()) : -1;
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(cut));
    put_le<std::uint32_t>(os, std::uint32_t(net.layer_count()));
    for (const auto& l : net.layers()) {
        put_le<std::uint32_t>(os, static_cast<std::uint32_t>(l.kind));
        put_le<std::uint32_t>(os, l.units);
        put_le<std::uint32_t>(os, l.filters);
        put_le<std::uint32_t>(os, l.kernel);
        put_le<std::uint32_t>(os, l.stride);
        put_le<std::uint32_t>(os, l.pad);
    }
    for (const auto& p : net.params()) {
        put_le<std::uint64_t>(os, p.size());
        for (float f : p) put_f32(os, f);
    }
    if (!os) throw FormatError("write failed for " + path.string());
}

Network load_model(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open model file " + path.string());
    detail::expect_magic(is, "BSNN", "model");
    const auto version = get_le<std::uint32_t>(is, "version");
    if (version != kModelFormatVersion)
        throw VersionError("model format version " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(kModelFormatVersion) + ")");
    Shape3 in;
    in.h = get_le<std::uint32_t>(is, "input shape");
    in.w = get_le<std::uint32_t>(is, "input shape");
    in.c = get_le<std::uint32_t>(is, "input shape");
    const auto cut = static_cast<std::int32_t>(get_le<std::uint32_t>(is, "cut index"));
    const auto n_layers = get_le<std::uint32_t>(is, "layer count");
    if (n_layers == 0 || n_layers > 4096) throw FormatError("implausible layer count " + std::to_string(n_layers));
    std::vector<LayerSpec> layers(n_layers);
    for (auto& l : layers) {
        const auto kind = get_le<std::uint32_t>(is, "layer kind");
        if (kind > static_cast<std::uint32_t>(LayerKind::softmax))
            throw FormatError("unknown layer kind " + std::to_string(kind));
        l.kind = static_cast<LayerKind>(kind);
        l.units = get_le<std::uint32_t>(is, "layer spec");
        l.filters = get_le<std::uint32_t>(is, "layer spec");
        l.kernel = get_le<std::uint32_t>(is, "layer spec");
        l.stride = get_le<std::uint32_t>(is, "layer spec");
        l.pad = get_le<std::uint32_t>(is, "layer spec");
    }
    std::optional<std::size_t> cut_index;
    if (cut >= 0) cut_index = std::size_t(cut);
    Network net;
    try {
        net = Network(in, std::move(layers), cut_index);
    } catch (const ConfigError& e) {
        throw FormatError(std::string("invalid layer table: ") + e.what());
    }
    for (auto& p : net.params()) {
        const auto count = get_le<std::uint64_t>(is, "parameter count");
        if (count != p.size())
            throw FormatError("parameter blob has " + std::to_string(count) + " values, layer needs " +
                              std::to_string(p.size()));
        for (auto& f : p) f = get_f32(is, "parameters");
    }
    return net;
}

}  // namespace bdscan
