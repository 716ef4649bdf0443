#pragma once

// Portable files.
//
// Tensor-heavy objects (networks, decomposed layers, tile dumps) use a tagged
// binary container; schemes, configs and timeline logs use JSON. Both carry a
// format version and reject missing or mistyped fields by name.
//
// Binary container, little-endian throughout:
//   magic "PSRB" | u32 version | str kind | u32 field count | fields...
//   field: str name | u8 type | u64 count | count elements
//   type 1 = f64 (IEEE-754 bit pattern), 2 = i64, 3 = bytes
//   str: u32 length | bytes

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "compress.hpp"
#include "crossbar.hpp"
#include "error.hpp"
#include "nn.hpp"
#include "quantizer.hpp"
#include "repair.hpp"

namespace pcmsr::io {

using Json = nlohmann::json;

inline constexpr std::uint32_t format_version = 1;

// ---------------------------------------------------------------------------
// File helpers

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw FormatError(p.string(), "cannot open file");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes through a temporary sibling and renames it into place.
inline void write_atomic(const std::filesystem::path& p, const void* data, std::size_t size) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    const std::filesystem::path tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
        if (!out) throw Error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, p);
}

inline void write_atomic(const std::filesystem::path& p, const std::string& text) {
    write_atomic(p, text.data(), text.size());
}

inline void write_atomic(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
    write_atomic(p, bytes.data(), bytes.size());
}

inline std::string read_text(const std::filesystem::path& p) {
    const auto b = read_bytes(p);
    return {b.begin(), b.end()};
}

// ---------------------------------------------------------------------------
// Binary container

enum class FieldType : std::uint8_t { f64 = 1, i64 = 2, bytes = 3 };

struct Field {
    FieldType type = FieldType::f64;
    std::vector<double> f;
    std::vector<std::int64_t> i;
    std::string s;
};

class Record {
public:
    Record() = default;
    explicit Record(std::string kind) : kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }
    const std::map<std::string, Field>& fields() const noexcept { return fields_; }

    void put(const std::string& name, std::vector<double> v) {
        Field f;
        f.type = FieldType::f64;
        f.f = std::move(v);
        add(name, std::move(f));
    }
    void put(const std::string& name, std::vector<std::int64_t> v) {
        Field f;
        f.type = FieldType::i64;
        f.i = std::move(v);
        add(name, std::move(f));
    }
    void put(const std::string& name, std::string v) {
        Field f;
        f.type = FieldType::bytes;
        f.s = std::move(v);
        add(name, std::move(f));
    }
    void put_int(const std::string& name, std::int64_t v) { put(name, std::vector<std::int64_t>{v}); }
    void put_ints(const std::string& name, const std::vector<int>& v) { put(name, std::vector<std::int64_t>(v.begin(), v.end())); }

    bool has(const std::string& name) const { return fields_.count(name) != 0; }

    const std::vector<double>& f64(const std::string& name) const { return get(name, FieldType::f64).f; }
    const std::vector<std::int64_t>& i64(const std::string& name) const { return get(name, FieldType::i64).i; }
    const std::string& bytes(const std::string& name) const { return get(name, FieldType::bytes).s; }

    std::int64_t integer(const std::string& name) const {
        const auto& v = i64(name);
        if (v.size() != 1) throw FormatError(name, "expected a single integer");
        return v[0];
    }
    std::vector<int> ints(const std::string& name) const {
        const auto& v = i64(name);
        return {v.begin(), v.end()};
    }

    std::vector<unsigned char> encode() const;
    static Record decode(const std::vector<unsigned char>& b);

private:
    void add(const std::string& name, Field f) {
        if (!fields_.emplace(name, std::move(f)).second) throw InvalidArgument("duplicate field " + name);
    }
    const Field& get(const std::string& name, FieldType t) const {
        auto it = fields_.find(name);
        if (it == fields_.end()) throw FormatError(name, "missing field");
        if (it->second.type != t) throw FormatError(name, "wrong field type");
        return it->second;
    }

    std::string kind_;
    std::map<std::string, Field> fields_;
};

namespace detail {

inline void put_u(std::vector<unsigned char>& out, std::uint64_t v, int bytes) {
    for (int k = 0; k < bytes; ++k) out.push_back(static_cast<unsigned char>(v >> (8 * k)));
}

inline void put_str(std::vector<unsigned char>& out, const std::string& s) {
    put_u(out, s.size(), 4);
    out.insert(out.end(), s.begin(), s.end());
}

class Cursor {
public:
    explicit Cursor(const std::vector<unsigned char>& b) : b_(b) {}

    std::uint64_t u(int bytes, const std::string& what) {
        need(static_cast<std::size_t>(bytes), what);
        std::uint64_t v = 0;
        for (int k = 0; k < bytes; ++k) v |= std::uint64_t{b_[pos_ + k]} << (8 * k);
        pos_ += static_cast<std::size_t>(bytes);
        return v;
    }
    std::string str(const std::string& what) {
        const std::size_t n = u(4, what);
        need(n, what);
        std::string s(b_.begin() + static_cast<std::ptrdiff_t>(pos_), b_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return s;
    }
    void need(std::size_t n, const std::string& what) const {
        if (b_.size() - pos_ < n)
            throw FormatError(what, "truncated at byte " + std::to_string(b_.size()) + ", need " +
                                        std::to_string(pos_ + n));
    }
    bool done() const noexcept { return pos_ == b_.size(); }
    std::size_t pos() const noexcept { return pos_; }

private:
    const std::vector<unsigned char>& b_;
    std::size_t pos_ = 0;
};

} // namespace detail

inline std::vector<unsigned char> Record::encode() const {
    std::vector<unsigned char> out{'P', 'S', 'R', 'B'};
    detail::put_u(out, format_version, 4);
    detail::put_str(out, kind_);
    detail::put_u(out, fields_.size(), 4);
    for (const auto& [name, f] : fields_) {
        detail::put_str(out, name);
        out.push_back(static_cast<unsigned char>(f.type));
        switch (f.type) {
        case FieldType::f64:
            detail::put_u(out, f.f.size(), 8);
            for (double v : f.f) detail::put_u(out, std::bit_cast<std::uint64_t>(v), 8);
            break;
        case FieldType::i64:
            detail::put_u(out, f.i.size(), 8);
            for (std::int64_t v : f.i) detail::put_u(out, static_cast<std::uint64_t>(v), 8);
            break;
        case FieldType::bytes:
            detail::put_u(out, f.s.size(), 8);
            out.insert(out.end(), f.s.begin(), f.s.end());
            break;
        }
    }
    return out;
}

inline Record Record::decode(const std::vector<unsigned char>& b) {
    detail::Cursor c(b);
    c.need(4, "magic");
    if (!(b[0] == 'P' && b[1] == 'S' && b[2] == 'R' && b[3] == 'B')) throw FormatError("magic", "not a PSRB file");
    c.u(4, "magic");
    const auto version = c.u(4, "version");
    if (version != format_version)
        throw FormatError("version", "format version " + std::to_string(version) + " is not supported (expected " +
                                         std::to_string(format_version) + ")");
    Record r(c.str("kind"));
    const auto n = c.u(4, "field_count");
    for (std::uint64_t k = 0; k < n; ++k) {
        const std::string name = c.str("field " + std::to_string(k));
        const auto type = c.u(1, name);
        const auto count = c.u(8, name);
        Field f;
        f.type = static_cast<FieldType>(type);
        switch (f.type) {
        case FieldType::f64:
            c.need(count * 8, name);
            f.f.reserve(count);
            for (std::uint64_t i = 0; i < count; ++i) f.f.push_back(std::bit_cast<double>(c.u(8, name)));
            break;
        case FieldType::i64:
            c.need(count * 8, name);
            f.i.reserve(count);
            for (std::uint64_t i = 0; i < count; ++i) f.i.push_back(static_cast<std::int64_t>(c.u(8, name)));
            break;
        case FieldType::bytes:
            c.need(count, name);
            for (std::uint64_t i = 0; i < count; ++i) f.s.push_back(static_cast<char>(c.u(1, name)));
            break;
        default: throw FormatError(name, "unknown field type " + std::to_string(type));
        }
        if (!r.fields_.emplace(name, std::move(f)).second) throw FormatError(name, "duplicate field");
    }
    if (!c.done()) throw FormatError("trailer", "unexpected bytes after field " + std::to_string(n));
    return r;
}

inline Record expect_kind(Record r, const std::string& kind) {
    if (r.kind() != kind) throw FormatError("kind", "expected '" + kind + "', found '" + r.kind() + "'");
    return r;
}

// ---------------------------------------------------------------------------
// Network

inline void put_network(Record& r, const nn::Network& net, const std::string& prefix = "") {
    r.put_int(prefix + "rng_seed", static_cast<std::int64_t>(net.rng_seed));
    r.put_int(prefix + "layer_count", static_cast<std::int64_t>(net.layers.size()));
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto& l = net.layers[i];
        const std::string p = prefix + "layer." + std::to_string(i) + ".";
        r.put_int(p + "kind", static_cast<std::int64_t>(l.kind));
        r.put_int(p + "activation", static_cast<std::int64_t>(l.activation));
        r.put(p + "shape", std::vector<std::int64_t>{static_cast<std::int64_t>(l.rows()),
                                                     static_cast<std::int64_t>(l.cols())});
        r.put(p + "geometry", std::vector<std::int64_t>{static_cast<std::int64_t>(l.in_channels),
                                                        static_cast<std::int64_t>(l.in_height),
                                                        static_cast<std::int64_t>(l.in_width),
                                                        static_cast<std::int64_t>(l.kernel)});
        r.put(p + "weight", l.weight.values());
        r.put(p + "bias", l.bias);
    }
}

inline std::pair<std::size_t, std::size_t> shape2(const Record& r, const std::string& name) {
    const auto& s = r.i64(name);
    if (s.size() != 2 || s[0] < 0 || s[1] < 0) throw FormatError(name, "expected two non-negative dimensions");
    return {static_cast<std::size_t>(s[0]), static_cast<std::size_t>(s[1])};
}

inline nn::Network get_network(const Record& r, const std::string& prefix = "") {
    nn::Network net;
    net.rng_seed = static_cast<std::uint64_t>(r.integer(prefix + "rng_seed"));
    const auto n = r.integer(prefix + "layer_count");
    if (n < 0) throw FormatError(prefix + "layer_count", "negative");
    for (std::int64_t i = 0; i < n; ++i) {
        const std::string p = prefix + "layer." + std::to_string(i) + ".";
        nn::Layer l;
        const auto kind = r.integer(p + "kind");
        if (kind != 0 && kind != 1) throw FormatError(p + "kind", "unknown layer kind");
        l.kind = static_cast<nn::LayerKind>(kind);
        const auto act = r.integer(p + "activation");
        if (act != 0 && act != 1) throw FormatError(p + "activation", "unknown activation");
        l.activation = static_cast<nn::Activation>(act);
        const auto [rows, cols] = shape2(r, p + "shape");
        const auto& w = r.f64(p + "weight");
        if (w.size() != rows * cols) throw FormatError(p + "weight", "length does not match shape");
        l.weight = Tensor({rows, cols}, w);
        l.bias = r.f64(p + "bias");
        const auto& g = r.i64(p + "geometry");
        if (g.size() != 4) throw FormatError(p + "geometry", "expected four entries");
        l.in_channels = static_cast<std::size_t>(g[0]);
        l.in_height = static_cast<std::size_t>(g[1]);
        l.in_width = static_cast<std::size_t>(g[2]);
        l.kernel = static_cast<std::size_t>(g[3]);
        net.layers.push_back(std::move(l));
    }
    try {
        net.validate();
    } catch (const Error& e) {
        throw FormatError(prefix + "layers", e.what());
    }
    return net;
}

inline std::vector<unsigned char> encode_network(const nn::Network& net) {
    Record r("network");
    put_network(r, net);
    return r.encode();
}

inline nn::Network decode_network(const std::vector<unsigned char>& b) {
    return get_network(expect_kind(Record::decode(b), "network"));
}

inline void save_network(const std::filesystem::path& p, const nn::Network& net) { write_atomic(p, encode_network(net)); }
inline nn::Network load_network(const std::filesystem::path& p) { return decode_network(read_bytes(p)); }

// ---------------------------------------------------------------------------
// Decomposed layers

inline void put_int_matrix(Record& r, const std::string& name, const IntMatrix& m) {
    r.put(name + ".shape", std::vector<std::int64_t>{static_cast<std::int64_t>(m.rows), static_cast<std::int64_t>(m.cols)});
    r.put_ints(name, m.data);
}

inline IntMatrix get_int_matrix(const Record& r, const std::string& name) {
    const auto [rows, cols] = shape2(r, name + ".shape");
    IntMatrix m(rows, cols);
    m.data = r.ints(name);
    if (m.data.size() != rows * cols) throw FormatError(name, "length does not match shape");
    return m;
}

inline std::vector<unsigned char> encode_decomposition(const std::vector<quant::DecomposedLayer>& layers,
                                                       const std::string& scheme_digest_hex) {
    Record r("decomposition");
    r.put("scheme_digest", scheme_digest_hex);
    r.put_int("layer_count", static_cast<std::int64_t>(layers.size()));
    for (std::size_t i = 0; i < layers.size(); ++i) {
        put_int_matrix(r, "layer." + std::to_string(i) + ".m_pos", layers[i].m_pos);
        put_int_matrix(r, "layer." + std::to_string(i) + ".m_neg", layers[i].m_neg);
    }
    return r.encode();
}

struct DecompositionFile {
    std::string scheme_digest;
    std::vector<quant::DecomposedLayer> layers;
};

inline DecompositionFile decode_decomposition(const std::vector<unsigned char>& b) {
    const Record r = expect_kind(Record::decode(b), "decomposition");
    DecompositionFile d;
    d.scheme_digest = r.bytes("scheme_digest");
    const auto n = r.integer("layer_count");
    for (std::int64_t i = 0; i < n; ++i) {
        quant::DecomposedLayer l;
        l.m_pos = get_int_matrix(r, "layer." + std::to_string(i) + ".m_pos");
        l.m_neg = get_int_matrix(r, "layer." + std::to_string(i) + ".m_neg");
        if (l.m_pos.rows != l.m_neg.rows || l.m_pos.cols != l.m_neg.cols)
            throw FormatError("layer." + std::to_string(i), "positive and negative shapes differ");
        d.layers.push_back(std::move(l));
    }
    return d;
}

// ---------------------------------------------------------------------------
// Scheme (JSON)

inline std::string hex(const compress::Digest& d) {
    static const char* digits = "0123456789abcdef";
    std::string s;
    for (unsigned char c : d) {
        s += digits[c >> 4];
        s += digits[c & 15];
    }
    return s;
}

/// Typed access to a JSON object member; errors name the full key path.
template <class T>
T required(const Json& j, const std::string& key, const std::string& path) {
    const std::string where = path.empty() ? key : path + "." + key;
    if (!j.is_object()) throw FormatError(path.empty() ? "<root>" : path, "expected an object");
    auto it = j.find(key);
    if (it == j.end()) throw FormatError(where, "missing field");
    try {
        return it->get<T>();
    } catch (const nlohmann::json::exception&) {
        throw FormatError(where, "wrong type");
    }
}

inline void check_header(const Json& j, const std::string& format) {
    const auto f = required<std::string>(j, "format", "");
    if (f != format) throw FormatError("format", "expected '" + format + "', found '" + f + "'");
    const auto v = required<std::uint32_t>(j, "version", "");
    if (v != format_version)
        throw FormatError("version", "format version " + std::to_string(v) + " is not supported (expected " +
                                         std::to_string(format_version) + ")");
}

inline Json bin_set_json(const quant::BinSet& b) { return {{"base", b.base}, {"multiples", b.multiples}}; }

inline quant::BinSet bin_set_from(const Json& j, const std::string& path) {
    return {required<double>(j, "base", path), required<std::vector<int>>(j, "multiples", path)};
}

inline Json scheme_json(const quant::QuantizationScheme& s) {
    Json sq = Json::array();
    for (const auto& e : s.sq) sq.push_back({e.value, e.m_pos, e.m_neg});
    return {{"format", "pcmsr.scheme"},
            {"version", format_version},
            {"digest", hex(compress::scheme_digest(s))},
            {"pos", bin_set_json(s.pos)},
            {"neg", bin_set_json(s.neg)},
            {"delta_write", s.delta_write},
            {"epsilon_read", s.epsilon_read},
            {"error", s.error},
            {"sq", sq}};
}

inline quant::QuantizationScheme scheme_from(const Json& j) {
    check_header(j, "pcmsr.scheme");
    auto s = quant::QuantizationScheme::make(bin_set_from(required<Json>(j, "pos", ""), "pos"),
                                             bin_set_from(required<Json>(j, "neg", ""), "neg"),
                                             required<double>(j, "delta_write", ""),
                                             required<double>(j, "epsilon_read", ""));
    s.error = required<double>(j, "error", "");
    const auto sq = required<Json>(j, "sq", "");
    if (!sq.is_array() || sq.size() != s.sq.size()) throw FormatError("sq", "does not match the bin sets");
    for (std::size_t k = 0; k < sq.size(); ++k) {
        const auto& e = sq[k];
        if (!e.is_array() || e.size() != 3 || e[0].get<double>() != s.sq[k].value || e[1].get<int>() != s.sq[k].m_pos ||
            e[2].get<int>() != s.sq[k].m_neg)
            throw FormatError("sq[" + std::to_string(k) + "]", "does not match the bin sets");
    }
    if (required<std::string>(j, "digest", "") != hex(compress::scheme_digest(s)))
        throw FormatError("digest", "does not match the bin sets");
    return s;
}

inline void save_scheme(const std::filesystem::path& p, const quant::QuantizationScheme& s) {
    write_atomic(p, scheme_json(s).dump(2) + "\n");
}

inline Json parse_json(const std::string& text, const std::string& what) {
    try {
        return Json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError(what, e.what());
    }
}

inline quant::QuantizationScheme load_scheme(const std::filesystem::path& p) {
    return scheme_from(parse_json(read_text(p), p.string()));
}

// ---------------------------------------------------------------------------
// Analog network dump

inline std::vector<unsigned char> encode_analog(const xbar::AnalogNetwork& a) {
    Record r("analog_network");
    put_network(r, a.net, "net.");
    r.put("t_prog", std::vector<double>{a.t_prog});
    r.put("output_scales", a.output_scales);
    r.put("scheme", a.scheme ? scheme_json(*a.scheme).dump() : std::string());
    r.put_int("tile_count", static_cast<std::int64_t>(a.tiles.size()));
    for (std::size_t t = 0; t < a.tiles.size(); ++t) {
        const auto& tile = a.tiles[t];
        const std::string p = "tile." + std::to_string(t) + ".";
        r.put(p + "shape", std::vector<std::int64_t>{static_cast<std::int64_t>(tile.rows),
                                                     static_cast<std::int64_t>(tile.cols)});
        r.put(p + "calibration", std::vector<double>{tile.calibration.scale, tile.calibration.w_range});
        std::vector<double> gp, gn, np, nneg, tp;
        std::vector<std::int64_t> mp, mn;
        for (const auto& c : tile.pairs) {
            gp.push_back(c.g_pos);
            gn.push_back(c.g_neg);
            np.push_back(c.nu_pos);
            nneg.push_back(c.nu_neg);
            tp.push_back(c.t_prog);
            mp.push_back(c.target_m_pos);
            mn.push_back(c.target_m_neg);
        }
        r.put(p + "g_pos", std::move(gp));
        r.put(p + "g_neg", std::move(gn));
        r.put(p + "nu_pos", std::move(np));
        r.put(p + "nu_neg", std::move(nneg));
        r.put(p + "t_prog", std::move(tp));
        r.put(p + "target_m_pos", std::move(mp));
        r.put(p + "target_m_neg", std::move(mn));
        r.put(p + "baseline_probe", tile.baseline_probe.values());
    }
    return r.encode();
}

inline xbar::AnalogNetwork decode_analog(const std::vector<unsigned char>& b) {
    const Record r = expect_kind(Record::decode(b), "analog_network");
    xbar::AnalogNetwork a;
    a.net = get_network(r, "net.");
    const auto& tp = r.f64("t_prog");
    if (tp.size() != 1) throw FormatError("t_prog", "expected a single value");
    a.t_prog = tp[0];
    a.output_scales = r.f64("output_scales");
    if (const auto& s = r.bytes("scheme"); !s.empty()) a.scheme = scheme_from(parse_json(s, "scheme"));
    const auto n = r.integer("tile_count");
    for (std::int64_t t = 0; t < n; ++t) {
        const std::string p = "tile." + std::to_string(t) + ".";
        xbar::AnalogTile tile;
        std::tie(tile.rows, tile.cols) = shape2(r, p + "shape");
        const std::size_t cells = tile.rows * tile.cols;
        const auto& cal = r.f64(p + "calibration");
        if (cal.size() != 2) throw FormatError(p + "calibration", "expected scale and w_range");
        tile.calibration = {cal[0], cal[1]};
        auto column = [&](const std::string& name) -> const auto& {
            const auto& v = r.f64(p + name);
            if (v.size() != cells) throw FormatError(p + name, "length does not match shape");
            return v;
        };
        auto icolumn = [&](const std::string& name) -> const auto& {
            const auto& v = r.i64(p + name);
            if (v.size() != cells) throw FormatError(p + name, "length does not match shape");
            return v;
        };
        const auto &gp = column("g_pos"), &gn = column("g_neg"), &np = column("nu_pos"), &nneg = column("nu_neg"),
                   &tps = column("t_prog");
        const auto &mp = icolumn("target_m_pos"), &mn = icolumn("target_m_neg");
        tile.pairs.resize(cells);
        for (std::size_t k = 0; k < cells; ++k)
            tile.pairs[k] = {gp[k], gn[k], np[k], nneg[k], tps[k], static_cast<int>(mp[k]), static_cast<int>(mn[k])};
        tile.baseline_probe = Tensor({tile.rows, tile.cols}, column("baseline_probe"));
        a.tiles.push_back(std::move(tile));
    }
    if (a.tiles.size() != a.net.layers.size()) throw FormatError("tile_count", "does not match network depth");
    return a;
}

// ---------------------------------------------------------------------------
// Timeline log (JSON)

inline Json event_json(const repair::RepairEvent& e) {
    return {{"seed", e.seed},
            {"step", e.step},
            {"t", e.t},
            {"layers_repaired", e.layers_repaired},
            {"weights_touched", e.weights_touched},
            {"pulses", e.pulses},
            {"irreversible_count", e.irreversible_count},
            {"pre_probe_error", e.pre_probe_error},
            {"post_probe_error", e.post_probe_error},
            {"accuracy_pre", e.accuracy_pre},
            {"accuracy_post", e.accuracy_post}};
}

inline repair::RepairEvent event_from(const Json& j, const std::string& path) {
    repair::RepairEvent e;
    e.seed = required<int>(j, "seed", path);
    e.step = required<int>(j, "step", path);
    e.t = required<double>(j, "t", path);
    e.layers_repaired = required<std::vector<std::size_t>>(j, "layers_repaired", path);
    e.weights_touched = required<std::size_t>(j, "weights_touched", path);
    e.pulses = required<std::size_t>(j, "pulses", path);
    e.irreversible_count = required<std::size_t>(j, "irreversible_count", path);
    e.pre_probe_error = required<double>(j, "pre_probe_error", path);
    e.post_probe_error = required<double>(j, "post_probe_error", path);
    e.accuracy_pre = required<double>(j, "accuracy_pre", path);
    e.accuracy_post = required<double>(j, "accuracy_post", path);
    return e;
}

inline Json row_json(const repair::TimelineRow& r) {
    return {{"seed", r.seed},       {"step", r.step},         {"t", r.t},
            {"variant", r.variant}, {"accuracy", r.accuracy}, {"f1", r.f1},
            {"probe_error", r.probe_error}, {"repaired", r.repaired}, {"pulses", r.pulses},
            {"irreversible", r.irreversible}};
}

inline repair::TimelineRow row_from(const Json& j, const std::string& path) {
    repair::TimelineRow r;
    r.seed = required<int>(j, "seed", path);
    r.step = required<int>(j, "step", path);
    r.t = required<double>(j, "t", path);
    r.variant = required<std::string>(j, "variant", path);
    r.accuracy = required<double>(j, "accuracy", path);
    r.f1 = required<double>(j, "f1", path);
    r.probe_error = required<double>(j, "probe_error", path);
    r.repaired = required<bool>(j, "repaired", path);
    r.pulses = required<std::size_t>(j, "pulses", path);
    r.irreversible = required<std::size_t>(j, "irreversible", path);
    return r;
}

inline Json timeline_json(const repair::TimelineLog& log) {
    Json rows = Json::array(), events = Json::array();
    for (const auto& r : log.rows) rows.push_back(row_json(r));
    for (const auto& e : log.events) events.push_back(event_json(e));
    return {{"format", "pcmsr.timeline"},
            {"version", format_version},
            {"config",
             {{"steps", log.config.steps},
              {"step_seconds", log.config.step_seconds},
              {"seeds", log.config.seeds},
              {"rng_seed", log.config.rng_seed}}},
            {"series", log.series},
            {"step_variance", log.step_variance},
            {"rows", rows},
            {"events", events}};
}

inline repair::TimelineLog timeline_from(const Json& j) {
    check_header(j, "pcmsr.timeline");
    repair::TimelineLog log;
    const Json cfg = required<Json>(j, "config", "");
    log.config.steps = required<int>(cfg, "steps", "config");
    log.config.step_seconds = required<double>(cfg, "step_seconds", "config");
    log.config.seeds = required<int>(cfg, "seeds", "config");
    log.config.rng_seed = required<std::uint64_t>(cfg, "rng_seed", "config");
    log.series = required<std::vector<std::string>>(j, "series", "");
    log.step_variance = required<std::map<std::string, double>>(j, "step_variance", "");
    const Json rows = required<Json>(j, "rows", "");
    for (std::size_t k = 0; k < rows.size(); ++k) log.rows.push_back(row_from(rows[k], "rows[" + std::to_string(k) + "]"));
    const Json events = required<Json>(j, "events", "");
    for (std::size_t k = 0; k < events.size(); ++k)
        log.events.push_back(event_from(events[k], "events[" + std::to_string(k) + "]"));
    return log;
}

/// One line per row, columns seed,step,t,variant,accuracy,f1,probe_error,repaired,pulses,irreversible.
/// Floats use %.17g so the text round-trips exactly.
inline std::string timeline_csv(const repair::TimelineLog& log) {
    std::string out = "seed,step,t,variant,accuracy,f1,probe_error,repaired,pulses,irreversible\n";
    char buf[512];
    for (const auto& r : log.rows) {
        std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%s,%.17g,%.17g,%.17g,%d,%zu,%zu\n", r.seed, r.step, r.t,
                      r.variant.c_str(), r.accuracy, r.f1, r.probe_error, r.repaired ? 1 : 0, r.pulses, r.irreversible);
        out += buf;
    }
    return out;
}

} // namespace pcmsr::io
