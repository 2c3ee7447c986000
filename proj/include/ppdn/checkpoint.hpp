#pragma once

// Binary checkpoint layout, all integers and doubles little-endian:
//
//   char[8]  magic "PPDNCKPT"
//   u32      format version (1)
//   u64      config hash (FNV-1a of the canonical config text)
//   u64      seed
//   u32      layer dim count D, then D x u64 dims (input, hidden..., classes)
//   u32      omega count K, then K x u64 omega layer indices
//   u64      parameter count P, then P x f64 values (W0, b0, W1, b1, ...)

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "ppdn/network.hpp"

namespace ppdn {

inline constexpr std::array<char, 8> checkpoint_magic{'P', 'P', 'D', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t checkpoint_version = 1;

struct Checkpoint {
    NetworkConfig network;
    NetworkParams params;
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

namespace detail {

template <class U>
void put_le(std::ostream& os, U v) {
    unsigned char bytes[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <class U>
U get_le(std::istream& is) {
    unsigned char bytes[sizeof(U)];
    if (!is.read(reinterpret_cast<char*>(bytes), sizeof(U))) throw Error("checkpoint: truncated file");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
    return v;
}

} // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
    using detail::put_le;
    os.write(checkpoint_magic.data(), checkpoint_magic.size());
    put_le<std::uint32_t>(os, checkpoint_version);
    put_le<std::uint64_t>(os, ck.config_hash);
    put_le<std::uint64_t>(os, ck.seed);
    const auto dims = ck.network.dims();
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(dims.size()));
    for (auto d : dims) put_le<std::uint64_t>(os, d);
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(ck.network.omega_layers.size()));
    for (auto o : ck.network.omega_layers) put_le<std::uint64_t>(os, o);
    const auto flat = ck.params.flatten();
    put_le<std::uint64_t>(os, flat.size());
    for (double v : flat) put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
    if (!os) throw Error("checkpoint: write failed");
}

inline Checkpoint read_checkpoint(std::istream& is) {
    using detail::get_le;
    std::array<char, 8> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != checkpoint_magic) throw Error("checkpoint: bad magic");
    const auto version = get_le<std::uint32_t>(is);
    if (version != checkpoint_version) throw Error("checkpoint: unsupported version " + std::to_string(version));
    Checkpoint ck;
    ck.config_hash = get_le<std::uint64_t>(is);
    ck.seed = get_le<std::uint64_t>(is);
    const auto ndims = get_le<std::uint32_t>(is);
    if (ndims < 2 || ndims > 1024) throw Error("checkpoint: implausible layer count");
    std::vector<std::size_t> dims;
    for (std::uint32_t i = 0; i < ndims; ++i) dims.push_back(get_le<std::uint64_t>(is));
    ck.network.input_dim = dims.front();
    ck.network.num_classes = dims.back();
    ck.network.hidden_dims.assign(dims.begin() + 1, dims.end() - 1);
    const auto nomega = get_le<std::uint32_t>(is);
    if (nomega > ndims) throw Error("checkpoint: implausible omega count");
    ck.network.omega_layers.clear();
    for (std::uint32_t i = 0; i < nomega; ++i) ck.network.omega_layers.push_back(get_le<std::uint64_t>(is));
    ck.network.validate(false);
    ck.params = build_network(ck.network, 0).zeros_like();
    const auto count = get_le<std::uint64_t>(is);
    if (count != ck.params.count()) throw Error("checkpoint: parameter count does not match layer dims");
    std::vector<double> flat(count);
    for (auto& v : flat) v = std::bit_cast<double>(get_le<std::uint64_t>(is));
    ck.params.unflatten(flat);
    return ck;
}

} // namespace ppdn
