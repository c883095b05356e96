#pragma once

// MVNN parameter checkpoints: magic, u32 version, u32 tensor count, then per
// tensor u32 name length, name bytes, u32 rank, u32 dims, float32 data. All
// integers and floats are little-endian.

#include <filesystem>
#include <fstream>

#include "mvembed/binary_io.hpp"
#include "mvembed/nn/tape.hpp"

namespace mvembed::nn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
void write_checkpoint(const ParameterSet<T>& params, std::ostream& out) {
    io::write_magic(out, "MVNN");
    io::write_u32(out, kCheckpointVersion);
    io::write_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        io::write_string(out, p.name);
        io::write_u32(out, static_cast<std::uint32_t>(p.value.rank()));
        for (auto d : p.value.shape()) io::write_u32(out, static_cast<std::uint32_t>(d));
        for (auto v : p.value.data()) io::write_f32(out, static_cast<float>(v));
    }
}

template <class T>
ParameterSet<T> read_checkpoint(std::istream& in) {
    io::expect_magic(in, "MVNN");
    const auto version = io::read_u32(in, "MVNN version");
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    const auto count = io::read_u32(in, "MVNN tensor count");
    ParameterSet<T> params;
    params.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        auto name = io::read_string(in, "MVNN tensor name", 4096);
        const auto rank = io::read_u32(in, "MVNN rank");
        if (rank > 8) throw FormatError("implausible tensor rank in checkpoint");
        Shape shape(rank);
        for (auto& d : shape) d = io::read_u32(in, "MVNN dims");
        const auto n = numel(shape);
        if (n > (std::size_t{1} << 31)) throw FormatError("implausible tensor size in checkpoint");
        std::vector<T> data(n);
        for (auto& v : data) v = static_cast<T>(io::read_f32(in, "MVNN data"));
        params.add(std::move(name), Tensor<T>(std::move(shape), std::move(data)));
    }
    return params;
}

template <class T>
void save_checkpoint(const ParameterSet<T>& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    write_checkpoint(params, out);
}

template <class T>
ParameterSet<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read checkpoint " + path.string());
    return read_checkpoint<T>(in);
}

} // namespace mvembed::nn
