#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

#include "tensor.hpp"

namespace pcmsr {

/// Labeled grayscale images: `images` has shape (n, h, w) with pixels in [0, 1].
struct Dataset {
    Tensor images;
    std::vector<int> labels;
    int classes = 10;

    std::size_t size() const noexcept { return labels.size(); }
    bool empty() const noexcept { return labels.empty(); }
    std::size_t height() const { return images.dim(1); }
    std::size_t width() const { return images.dim(2); }
    std::size_t pixels() const { return height() * width(); }

    /// Flattened (k, h*w) batch of the selected samples.
    Tensor batch(std::span<const std::size_t> indices) const {
        const std::size_t px = pixels();
        Tensor out({indices.size(), px});
        for (std::size_t k = 0; k < indices.size(); ++k) {
            auto src = images.row(indices[k]);
            std::copy(src.begin(), src.end(), out.row(k).begin());
        }
        return out;
    }

    /// All samples as a (n, h*w) batch.
    Tensor flat() const { return Tensor({size(), pixels()}, images.values()); }

    /// First `n` samples.
    Dataset head(std::size_t n) const {
        n = std::min(n, size());
        Dataset d;
        d.classes = classes;
        d.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
        std::vector<double> px(images.values().begin(),
                               images.values().begin() + static_cast<std::ptrdiff_t>(n * pixels()));
        d.images = Tensor({n, height(), width()}, std::move(px));
        return d;
    }
};

} // namespace pcmsr
