#pragma once

namespace groundcap {

/// Axis-aligned box in center format, normalized to the unit image square.
struct Box {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;
};

/// All four fields in [0,1] and strictly positive extent.
bool box_valid(const Box& b);

struct Corners {
    double x0, y0, x1, y1;
    double area() const { return (x1 - x0) * (y1 - y0); }
};

/// Corner form with each corner clamped into the unit square (the metric
/// convention; the differentiable loss path works on unclamped corners).
Corners corners_clamped(const Box& b);

/// Intersection-over-union on clamped corners, in [0,1]; 0 when disjoint.
/// Throws when both boxes clamp to zero area (degenerate union).
double iou(const Box& a, const Box& b);

/// Generalized IoU: iou - (enclosing - union) / enclosing, in (-1, 1].
double giou(const Box& a, const Box& b);

/// Mean over the four coordinates of the smooth-L1 kernel of (pred - gt).
double smooth_l1(const Box& pred, const Box& gt);

/// w_giou * (1 - giou) + w_l1 * smooth_l1, as a plain number (evaluation
/// convenience; training uses the tensor-valued twin in box_loss.hpp).
double grounding_loss_value(const Box& pred, const Box& gt, double w_giou, double w_l1);

}  // namespace groundcap
