#pragma once

// Bit-packed storage of integer multiple matrices.
//
// File layout (all integers little-endian):
//   0  4  magic "PQW1"
//   4  2  rows
//   6  2  cols
//   8  1  bits per entry
//   9  1  polarity (0 positive line, 1 negative line)
//  10  6  first six bytes of the scheme digest
//  16  .  payload: entries in row-major order, entry k occupying stream bits
//         [k*bits, (k+1)*bits); stream bit i is bit (i % 8) of byte i / 8.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "quantizer.hpp"
#include "random.hpp"

namespace pcmsr::compress {

inline constexpr std::array<unsigned char, 4> magic{'P', 'Q', 'W', '1'};
inline constexpr std::size_t header_size = 16;

enum class Polarity : std::uint8_t { positive = 0, negative = 1 };

using Digest = std::array<unsigned char, 6>;

/// Digest of a scheme's bin sets: FNV-1a 64 over their canonical text (base as
/// IEEE-754 bit pattern in hex, then the multiples), little-endian, first six bytes.
inline Digest scheme_digest(const quant::QuantizationScheme& s) {
    std::string text;
    auto add_set = [&](const char* tag, const quant::BinSet& b) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(b.base)));
        text += tag;
        text += buf;
        for (int m : b.multiples) text += "," + std::to_string(m);
        text += ";";
    };
    add_set("pos:", s.pos);
    add_set("neg:", s.neg);
    const std::uint64_t h = fnv1a64(text);
    Digest d{};
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<unsigned char>(h >> (8 * i));
    return d;
}

struct PackedHeader {
    std::uint16_t rows = 0;
    std::uint16_t cols = 0;
    std::uint8_t bits = 0;
    Polarity polarity = Polarity::positive;
    Digest digest{};

    friend bool operator==(const PackedHeader&, const PackedHeader&) = default;
};

struct PackedLayer {
    PackedHeader header;
    std::vector<unsigned char> payload;

    friend bool operator==(const PackedLayer&, const PackedLayer&) = default;
};

/// Minimal width able to hold every value in [0, max_value].
inline unsigned bits_for(int max_value) {
    if (max_value < 0) throw InvalidArgument("negative maximum multiple");
    unsigned b = 1;
    while ((std::uint64_t{1} << b) <= static_cast<std::uint64_t>(max_value)) ++b;
    return b;
}

inline std::size_t payload_size(std::size_t entries, unsigned bits) { return (entries * bits + 7) / 8; }

inline PackedLayer pack(const IntMatrix& m, int max_value, Polarity polarity, const Digest& digest) {
    if (m.rows > 0xffff || m.cols > 0xffff) throw InvalidArgument("matrix too large for a 16-bit header");
    const unsigned bits = bits_for(max_value);
    PackedLayer p;
    p.header = {static_cast<std::uint16_t>(m.rows), static_cast<std::uint16_t>(m.cols),
                static_cast<std::uint8_t>(bits), polarity, digest};
    p.payload.assign(payload_size(m.size(), bits), 0);
    std::size_t bit = 0;
    for (std::size_t k = 0; k < m.size(); ++k) {
        const int v = m.data[k];
        if (v < 0 || v > max_value)
            throw InvalidArgument("entry " + std::to_string(v) + " at index " + std::to_string(k) + " outside [0, " +
                                  std::to_string(max_value) + "]");
        for (unsigned b = 0; b < bits; ++b, ++bit)
            if ((v >> b) & 1) p.payload[bit / 8] |= static_cast<unsigned char>(1u << (bit % 8));
    }
    return p;
}

/// Lossless positive/negative packing with bits_per_entry = ceil(log2(M + 1)),
/// M being the scheme's largest multiple.
inline std::pair<PackedLayer, PackedLayer> encode(const quant::DecomposedLayer& dec,
                                                  const quant::QuantizationScheme& scheme) {
    const int m = scheme.max_multiple();
    const Digest d = scheme_digest(scheme);
    return {pack(dec.m_pos, m, Polarity::positive, d), pack(dec.m_neg, m, Polarity::negative, d)};
}

inline IntMatrix decode(const PackedLayer& p) {
    const auto& h = p.header;
    if (h.bits == 0 || h.bits > 31) throw FormatError("header.bits", "unsupported width " + std::to_string(h.bits));
    const std::size_t n = std::size_t{h.rows} * h.cols;
    const std::size_t need = payload_size(n, h.bits);
    if (p.payload.size() < need)
        throw FormatError("payload", "truncated at byte " + std::to_string(p.payload.size()) + ", expected " +
                                         std::to_string(need) + " bytes");
    if (p.payload.size() > need)
        throw FormatError("payload", "length " + std::to_string(p.payload.size()) +
                                         " does not match header (expected " + std::to_string(need) + ")");
    IntMatrix m(h.rows, h.cols);
    std::size_t bit = 0;
    for (std::size_t k = 0; k < n; ++k) {
        int v = 0;
        for (unsigned b = 0; b < h.bits; ++b, ++bit) v |= ((p.payload[bit / 8] >> (bit % 8)) & 1) << b;
        m.data[k] = v;
    }
    return m;
}

/// Decodes and checks the header against the scheme the matrix claims to use.
inline IntMatrix decode(const PackedLayer& p, const quant::QuantizationScheme& scheme) {
    if (p.header.digest != scheme_digest(scheme)) throw FormatError("header.digest", "scheme digest mismatch");
    if (p.header.bits != bits_for(scheme.max_multiple()))
        throw FormatError("header.bits", "width " + std::to_string(p.header.bits) + " does not match scheme");
    IntMatrix m = decode(p);
    const auto& set = p.header.polarity == Polarity::positive ? scheme.pos : scheme.neg;
    for (std::size_t k = 0; k < m.size(); ++k)
        if (m.data[k] != 0 && !set.contains(m.data[k]))
            throw FormatError("payload", "entry " + std::to_string(k) + " is not a level of the scheme");
    return m;
}

// ---------------------------------------------------------------------------
// Byte serialization

inline std::vector<unsigned char> to_bytes(const PackedLayer& p) {
    std::vector<unsigned char> out(magic.begin(), magic.end());
    auto u16 = [&](std::uint16_t v) {
        out.push_back(static_cast<unsigned char>(v & 0xff));
        out.push_back(static_cast<unsigned char>(v >> 8));
    };
    u16(p.header.rows);
    u16(p.header.cols);
    out.push_back(p.header.bits);
    out.push_back(static_cast<unsigned char>(p.header.polarity));
    out.insert(out.end(), p.header.digest.begin(), p.header.digest.end());
    out.insert(out.end(), p.payload.begin(), p.payload.end());
    return out;
}

inline PackedLayer from_bytes(const std::vector<unsigned char>& b) {
    if (b.size() < header_size)
        throw FormatError("header", "truncated at byte " + std::to_string(b.size()) + " of " +
                                        std::to_string(header_size));
    if (!std::equal(magic.begin(), magic.end(), b.begin())) throw FormatError("header.magic", "not a PQW1 file");
    PackedLayer p;
    p.header.rows = static_cast<std::uint16_t>(b[4] | (b[5] << 8));
    p.header.cols = static_cast<std::uint16_t>(b[6] | (b[7] << 8));
    p.header.bits = b[8];
    if (b[9] > 1) throw FormatError("header.polarity", "invalid polarity tag " + std::to_string(b[9]));
    p.header.polarity = static_cast<Polarity>(b[9]);
    std::copy(b.begin() + 10, b.begin() + 16, p.header.digest.begin());
    p.payload.assign(b.begin() + header_size, b.end());
    if (p.header.bits == 0 || p.header.bits > 31)
        throw FormatError("header.bits", "unsupported width " + std::to_string(p.header.bits));
    const std::size_t need = payload_size(std::size_t{p.header.rows} * p.header.cols, p.header.bits);
    if (p.payload.size() < need)
        throw FormatError("payload", "truncated at byte " + std::to_string(b.size()) + ", expected " +
                                         std::to_string(header_size + need));
    if (p.payload.size() != need)
        throw FormatError("payload", "file length " + std::to_string(b.size()) + " does not match header (expected " +
                                         std::to_string(header_size + need) + ")");
    return p;
}

// ---------------------------------------------------------------------------
// Size report

struct MatrixReport {
    std::size_t entries = 0;
    unsigned bits = 0;
    std::size_t packed_bytes = 0;   // payload only
    std::size_t baseline_bytes = 0; // same entries as 32-bit floats
    double ratio = 0.0;
    std::map<int, std::size_t> histogram;
    double entropy_bits = 0.0; // zeroth-order entropy per entry
};

inline double entropy(const std::map<int, std::size_t>& histogram) {
    std::size_t n = 0;
    for (const auto& [v, c] : histogram) n += c;
    double h = 0.0;
    for (const auto& [v, c] : histogram) {
        if (c == 0 || c == n) continue;
        const double p = static_cast<double>(c) / static_cast<double>(n);
        h -= p * std::log2(p);
    }
    return h;
}

inline MatrixReport matrix_report(const IntMatrix& m, int max_value) {
    MatrixReport r;
    r.entries = m.size();
    r.bits = bits_for(max_value);
    r.packed_bytes = payload_size(r.entries, r.bits);
    r.baseline_bytes = 4 * r.entries;
    r.ratio = r.packed_bytes ? static_cast<double>(r.baseline_bytes) / static_cast<double>(r.packed_bytes) : 0.0;
    for (int v : m.data) ++r.histogram[v];
    r.entropy_bits = entropy(r.histogram);
    return r;
}

struct CompressionReport {
    MatrixReport pos;
    MatrixReport neg;
    std::size_t packed_bytes = 0;   // both payloads
    std::size_t baseline_bytes = 0; // both matrices as 32-bit floats
    double ratio = 0.0;
    std::size_t file_bytes = 0;         // both payloads plus both headers
    std::size_t float_weight_bytes = 0; // the float32 weight matrix the layer replaces
};

inline CompressionReport compression_report(const quant::DecomposedLayer& dec,
                                            const quant::QuantizationScheme& scheme) {
    CompressionReport r;
    const int m = scheme.max_multiple();
    r.pos = matrix_report(dec.m_pos, m);
    r.neg = matrix_report(dec.m_neg, m);
    r.packed_bytes = r.pos.packed_bytes + r.neg.packed_bytes;
    r.baseline_bytes = r.pos.baseline_bytes + r.neg.baseline_bytes;
    r.ratio = r.packed_bytes ? static_cast<double>(r.baseline_bytes) / static_cast<double>(r.packed_bytes) : 0.0;
    r.file_bytes = r.packed_bytes + 2 * header_size;
    r.float_weight_bytes = 4 * dec.m_pos.size();
    return r;
}

} // namespace pcmsr::compress
