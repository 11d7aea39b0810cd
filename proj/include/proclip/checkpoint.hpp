#pragma once

// PCLP parameter checkpoints.
//
// Layout (all integers and floats little-endian):
//   "PCLP" | u32 version | record*
//   record := u32 name_len | name bytes | u32 rank | u64 dims[rank] | f64 values[prod(dims)]
// Records run to end of file; values are row-major.

#include "proclip/io.hpp"
#include "proclip/models.hpp"

#include <algorithm>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace proclip {

inline constexpr char kCheckpointMagic[4] = {'P', 'C', 'L', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Tensor {
    std::string name;
    std::vector<std::uint64_t> shape;
    std::vector<double> values;

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

class Checkpoint {
public:
    [[nodiscard]] const std::vector<Tensor>& tensors() const noexcept { return tensors_; }

    void add(Tensor t) {
        const std::uint64_t n = std::accumulate(t.shape.begin(), t.shape.end(), std::uint64_t{1},
                                                std::multiplies<>());
        require(n == t.values.size(), "Checkpoint: tensor '" + t.name + "' size does not match shape");
        require(find(t.name) == nullptr, "Checkpoint: duplicate tensor '" + t.name + "'");
        tensors_.push_back(std::move(t));
    }

    [[nodiscard]] const Tensor* find(const std::string& name) const {
        auto it = std::find_if(tensors_.begin(), tensors_.end(),
                               [&](const Tensor& t) { return t.name == name; });
        return it == tensors_.end() ? nullptr : &*it;
    }

    [[nodiscard]] bool has_prefix(const std::string& prefix) const {
        return std::any_of(tensors_.begin(), tensors_.end(),
                           [&](const Tensor& t) { return t.name.rfind(prefix + ".", 0) == 0; });
    }

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;

private:
    std::vector<Tensor> tensors_;
};

[[nodiscard]] inline io::Bytes encode_checkpoint(const Checkpoint& ckpt) {
    io::Bytes out;
    io::put_bytes(out, std::string_view(kCheckpointMagic, 4));
    io::put_le<std::uint32_t>(out, kCheckpointVersion);
    for (const auto& t : ckpt.tensors()) {
        io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        io::put_bytes(out, t.name);
        io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) io::put_le<std::uint64_t>(out, d);
        for (double v : t.values) io::put_le<double>(out, v);
    }
    return out;
}

[[nodiscard]] inline Checkpoint decode_checkpoint(const io::Bytes& bytes) {
    io::ByteReader in(bytes);
    if (in.get_string(4, "magic") != std::string_view(kCheckpointMagic, 4))
        throw ParseError("bad checkpoint magic", 0);
    const auto version = in.get<std::uint32_t>("version");
    if (version != kCheckpointVersion)
        throw ParseError("unsupported checkpoint version " + std::to_string(version), 4);
    Checkpoint ckpt;
    while (!in.at_end()) {
        const std::uint64_t record_start = in.offset();
        Tensor t;
        const auto name_len = in.get<std::uint32_t>("tensor name length");
        t.name = in.get_string(name_len, "tensor name");
        const auto rank = in.get<std::uint32_t>("tensor rank");
        in.need(std::uint64_t{rank} * 8, "tensor dims");
        std::uint64_t count = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            const auto d = in.get<std::uint64_t>("tensor dim");
            t.shape.push_back(d);
            count *= d;
        }
        if (count > in.remaining() / 8)
            throw ParseError("truncated input while reading tensor values", in.offset());
        t.values.resize(count);
        for (auto& v : t.values) v = in.get<double>("tensor value");
        if (ckpt.find(t.name)) throw ParseError("duplicate tensor '" + t.name + "'", record_start);
        ckpt.add(std::move(t));
    }
    return ckpt;
}

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    io::write_file(path, encode_checkpoint(ckpt));
}

[[nodiscard]] inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(io::read_file(path));
}

// --- model <-> checkpoint -------------------------------------------------------------

inline void store(Checkpoint& ckpt, ToyEncoder& encoder) {
    for (const auto& p : encoder.parameters())
        ckpt.add({p.name, p.shape, std::vector<double>(p.values.begin(), p.values.end())});
}

inline void store_scalar(Checkpoint& ckpt, const std::string& name, double value) {
    ckpt.add({name, {}, {value}});
}

/// Loads every parameter of `encoder` from tensors with matching names and shapes.
inline void load(const Checkpoint& ckpt, ToyEncoder& encoder) {
    for (auto& p : encoder.parameters()) {
        const Tensor* t = ckpt.find(p.name);
        require(t != nullptr, "checkpoint is missing tensor '" + p.name + "'");
        require(t->shape == p.shape, "checkpoint tensor '" + p.name + "' has the wrong shape");
        std::copy(t->values.begin(), t->values.end(), p.values.begin());
    }
}

/// Rebuilds a four-layer encoder named `name` from the shapes stored in the checkpoint.
[[nodiscard]] inline ToyEncoder load_encoder(const Checkpoint& ckpt, const std::string& name,
                                             bool frozen = false,
                                             Activation act = Activation::Gelu) {
    std::vector<LinearLayer> layers;
    for (std::size_t l = 0; l < kProjectorDepth; ++l) {
        const std::string base = name + "." + std::to_string(l);
        const Tensor* w = ckpt.find(base + ".weight");
        const Tensor* b = ckpt.find(base + ".bias");
        require(w && b && w->shape.size() == 2 && b->shape.size() == 1,
                "checkpoint has no complete layer '" + base + "'");
        const auto rows = static_cast<Eigen::Index>(w->shape[0]);
        const auto cols = static_cast<Eigen::Index>(w->shape[1]);
        LinearLayer layer{Matrix(rows, cols), Vector(static_cast<Eigen::Index>(b->shape[0]))};
        std::copy(w->values.begin(), w->values.end(), layer.weight.data());
        std::copy(b->values.begin(), b->values.end(), layer.bias.data());
        layers.push_back(std::move(layer));
    }
    return ToyEncoder(name, Mlp(std::move(layers), act), frozen);
}

[[nodiscard]] inline double load_scalar(const Checkpoint& ckpt, const std::string& name) {
    const Tensor* t = ckpt.find(name);
    require(t != nullptr && t->values.size() == 1, "checkpoint is missing scalar '" + name + "'");
    return t->values.front();
}

}  // namespace proclip
