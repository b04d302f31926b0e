#pragma once

#include "sketch3d/image.hpp"

namespace sketch3d {

/// Union of the two sketch branches as a product of transparencies.
inline ImageBuffer composite(const ImageBuffer &ind, const ImageBuffer &dep) {
    require_same_shape(ind, dep, "composite");
    ImageBuffer out(ind.width(), ind.height());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ind[i] * dep[i];
    return out;
}

struct CompositeGradient {
    ImageBuffer ind;
    ImageBuffer dep;
};

inline CompositeGradient composite_backward(const ImageBuffer &ind, const ImageBuffer &dep,
                                            const ImageBuffer &grad_out) {
    require_same_shape(ind, dep, "composite_backward");
    require_same_shape(ind, grad_out, "composite_backward");
    CompositeGradient g{ImageBuffer(ind.width(), ind.height()), ImageBuffer(ind.width(), ind.height())};
    for (std::size_t i = 0; i < grad_out.size(); ++i) {
        g.ind[i] = grad_out[i] * dep[i];
        g.dep[i] = grad_out[i] * ind[i];
    }
    return g;
}

} // namespace sketch3d
