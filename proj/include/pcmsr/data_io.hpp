#pragma once

// Dataset ingestion: IDX (MNIST container) files and a seeded synthetic
// 8x8 digit generator that needs no downloads.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "dataset.hpp"
#include "error.hpp"
#include "random.hpp"

namespace pcmsr::io {

inline constexpr std::uint32_t idx_images_magic = 0x00000803;
inline constexpr std::uint32_t idx_labels_magic = 0x00000801;

/// Distinct failure reasons of the IDX reader.
class IdxError : public FormatError {
public:
    enum class Reason { missing_file, wrong_magic, truncated, count_mismatch, bad_label };
    IdxError(Reason r, const std::string& path, const std::string& what) : FormatError(path, what), reason_(r) {}
    Reason reason() const noexcept { return reason_; }

private:
    Reason reason_;
};

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw IdxError(IdxError::Reason::missing_file, p.string(), "cannot open file");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off, const std::string& path) {
    if (b.size() < off + 4)
        throw IdxError(IdxError::Reason::truncated, path, "truncated header at byte " + std::to_string(off));
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

inline void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

} // namespace detail

/// Parses an IDX image file (magic 0x803, u8 pixels) and its label file
/// (magic 0x801). Pixels are scaled by 1/255.
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                        int classes = 10) {
    const std::string ip = images_path.string(), lp = labels_path.string();
    const auto img = detail::read_file(images_path);
    const auto lab = detail::read_file(labels_path);

    if (detail::be32(img, 0, ip) != idx_images_magic)
        throw IdxError(IdxError::Reason::wrong_magic, ip, "not an IDX image file (magic mismatch)");
    if (detail::be32(lab, 0, lp) != idx_labels_magic)
        throw IdxError(IdxError::Reason::wrong_magic, lp, "not an IDX label file (magic mismatch)");

    const std::size_t n = detail::be32(img, 4, ip);
    const std::size_t h = detail::be32(img, 8, ip);
    const std::size_t w = detail::be32(img, 12, ip);
    const std::size_t nl = detail::be32(lab, 4, lp);
    if (n != nl)
        throw IdxError(IdxError::Reason::count_mismatch, ip,
                       std::to_string(n) + " images but " + std::to_string(nl) + " labels");
    if (img.size() < 16 + n * h * w)
        throw IdxError(IdxError::Reason::truncated, ip,
                       "expected " + std::to_string(16 + n * h * w) + " bytes, found " + std::to_string(img.size()));
    if (lab.size() < 8 + n)
        throw IdxError(IdxError::Reason::truncated, lp,
                       "expected " + std::to_string(8 + n) + " bytes, found " + std::to_string(lab.size()));

    Dataset d;
    d.classes = classes;
    d.images = Tensor({n, h, w});
    for (std::size_t k = 0; k < n * h * w; ++k) d.images[k] = img[16 + k] / 255.0;
    d.labels.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        d.labels[k] = lab[8 + k];
        if (d.labels[k] >= classes)
            throw IdxError(IdxError::Reason::bad_label, lp,
                           "label " + std::to_string(d.labels[k]) + " at index " + std::to_string(k));
    }
    return d;
}

/// Encodes raw u8 images (n*h*w bytes) and labels as an IDX pair.
inline std::pair<std::vector<unsigned char>, std::vector<unsigned char>>
encode_idx(std::uint32_t n, std::uint32_t h, std::uint32_t w, const std::vector<unsigned char>& pixels,
           const std::vector<unsigned char>& labels) {
    std::vector<unsigned char> img, lab;
    detail::put_be32(img, idx_images_magic);
    detail::put_be32(img, n);
    detail::put_be32(img, h);
    detail::put_be32(img, w);
    img.insert(img.end(), pixels.begin(), pixels.end());
    detail::put_be32(lab, idx_labels_magic);
    detail::put_be32(lab, n);
    lab.insert(lab.end(), labels.begin(), labels.end());
    return {img, lab};
}

// ---------------------------------------------------------------------------
// Synthetic digits

namespace detail {

// 5x7 glyphs, '#' = stroke.
inline const std::array<std::array<const char*, 7>, 10>& digit_glyphs() {
    static const std::array<std::array<const char*, 7>, 10> g{{
        {".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."},
        {"..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."},
        {".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"},
        {"#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."},
        {"...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."},
        {"#####", "#....", "####.", "....#", "....#", "#...#", ".###."},
        {"..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."},
        {"#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."},
        {".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."},
        {".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."},
    }};
    return g;
}

} // namespace detail

/// `n` seeded 8x8 ten-class digit images. Sample i has label i % 10; each glyph
/// is shifted by up to one pixel, rescaled in intensity, blurred slightly and
/// overlaid with pixel noise and random stray pixels.
inline Dataset synthetic_digits(std::uint64_t seed, std::size_t n) {
    if (n == 0) throw InvalidArgument("synthetic dataset size must be positive");
    constexpr std::size_t side = 8;
    Rng rng = substream(seed, "synthetic-digits");
    std::uniform_int_distribution<int> shift_x(0, 3), shift_y(0, 1);
    std::uniform_real_distribution<double> ink(0.55, 1.0);

    Dataset d;
    d.classes = 10;
    d.images = Tensor({n, side, side});
    d.labels.resize(n);
    const auto& glyphs = detail::digit_glyphs();
    std::array<double, side * side> canvas{};
    for (std::size_t s = 0; s < n; ++s) {
        const int label = static_cast<int>(s % 10);
        d.labels[s] = label;
        canvas.fill(0.0);
        const int ox = shift_x(rng), oy = shift_y(rng);
        const double level = ink(rng);
        for (int r = 0; r < 7; ++r)
            for (int c = 0; c < 5; ++c)
                if (glyphs[label][r][c] == '#') {
                    // stroke dropout
                    if (uniform01(rng) < 0.08) continue;
                    canvas[(r + oy) * side + (c + ox)] = level;
                }
        auto px = d.images.row(s);
        for (std::size_t y = 0; y < side; ++y)
            for (std::size_t x = 0; x < side; ++x) {
                double v = canvas[y * side + x];
                // cross-shaped bleed from neighbouring strokes
                double nb = 0.0;
                if (y > 0) nb = std::max(nb, canvas[(y - 1) * side + x]);
                if (y + 1 < side) nb = std::max(nb, canvas[(y + 1) * side + x]);
                if (x > 0) nb = std::max(nb, canvas[y * side + x - 1]);
                if (x + 1 < side) nb = std::max(nb, canvas[y * side + x + 1]);
                v = std::max(v, 0.25 * nb);
                v += 0.12 * standard_normal(rng);
                if (uniform01(rng) < 0.03) v += 0.6;
                px[y * side + x] = std::clamp(v, 0.0, 1.0);
            }
    }
    return d;
}

} // namespace pcmsr::io
