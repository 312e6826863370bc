#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "macow/masked_conv.hpp"
#include "macow/tensor.hpp"

// Reference computations used to check the fast paths. Nothing here calls the
// analytic log-determinants, the slab inverse or the shared LU code.

namespace macow::oracle {

using VectorMap = std::function<std::vector<double>(const std::vector<double>&)>;

/// Row-major d x d Jacobian, column j from central differences along e_j.
std::vector<double> dense_jacobian(const VectorMap& f, const std::vector<double>& x, double eps = 1e-5);

/// log|det J_f(x)| from a finite-difference Jacobian. d must be <= 64.
/// Raises kInvertibility when |det| < 1e-300.
double brute_force_logdet(const VectorMap& f, const std::vector<double>& x, double eps = 1e-5);

/// Wraps a layer's forward pass (no gradients) as a flat map on one item.
VectorMap layer_map(FlowLayer<double>& layer, const Shape& shape, const Tensor<double>* context = nullptr);

/// visible[t * hw + u]: whether output position t may read input position u
/// (positions row-major over an h x w grid), restricted to the image.
std::vector<bool> declared_receptive_field(const MaskSpec& spec, std::size_t h, std::size_t w);

/// Dependency order of positions (row-major indices) for an orientation.
std::vector<std::size_t> autoregressive_order(Orientation o, std::size_t h, std::size_t w);

/// Pixel-at-a-time inversion of a masked flow. Each position costs one
/// evaluation of the scale/shift nets; the count is written to *applications.
Tensor<double> sequential_inversion(const Tensor<double>& y, const MaskedConvFlow<double>& layer,
                                    std::size_t* applications = nullptr);

}  // namespace macow::oracle
