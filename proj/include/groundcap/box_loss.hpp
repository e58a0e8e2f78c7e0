#pragma once

#include "groundcap/ops.hpp"
#include "groundcap/tensor.hpp"

namespace groundcap {

// Differentiable twins of the plain geometry in geometry.hpp, built from
// tape primitives so gradients flow into predicted boxes. Inputs are 1x4
// tensors in center format (cx, cy, w, h); corners stay unclamped here (the
// training path never needs clamping for boxes inside the unit square, and
// clamping would flatten gradients at the borders).

Tensor iou_t(const Tensor& a, const Tensor& b);
Tensor giou_t(const Tensor& a, const Tensor& b);

/// Mean over the four coordinates of the smooth-L1 kernel of (pred - gt).
Tensor smooth_l1_t(const Tensor& pred, const Tensor& gt);

/// w_giou * (1 - giou) + w_l1 * smooth_l1. Throws on negative weights.
Tensor grounding_loss_t(const Tensor& pred, const Tensor& gt, double w_giou, double w_l1);

}  // namespace groundcap
