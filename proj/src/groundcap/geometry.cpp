#include "groundcap/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace groundcap {

namespace {

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

double smooth_l1_scalar(double d) {
    double a = std::abs(d);
    return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

// Intersection and union of two clamped corner boxes; throws on a
// degenerate union.
struct Overlap {
    double inter;
    double uni;
};

Overlap overlap(const Corners& a, const Corners& b) {
    double iw = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
    double ih = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
    double inter = iw * ih;
    double uni = a.area() + b.area() - inter;
    if (uni <= 0.0) throw std::invalid_argument("iou: degenerate union (both boxes empty)");
    return {inter, uni};
}

}  // namespace

bool box_valid(const Box& b) {
    auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
    return in01(b.cx) && in01(b.cy) && in01(b.w) && in01(b.h) && b.w > 0.0 && b.h > 0.0;
}

Corners corners_clamped(const Box& b) {
    return {clamp01(b.cx - b.w / 2.0), clamp01(b.cy - b.h / 2.0),
            clamp01(b.cx + b.w / 2.0), clamp01(b.cy + b.h / 2.0)};
}

double iou(const Box& a, const Box& b) {
    Corners ca = corners_clamped(a), cb = corners_clamped(b);
    Overlap o = overlap(ca, cb);
    return o.inter / o.uni;
}

double giou(const Box& a, const Box& b) {
    Corners ca = corners_clamped(a), cb = corners_clamped(b);
    Overlap o = overlap(ca, cb);
    double ex0 = std::min(ca.x0, cb.x0), ey0 = std::min(ca.y0, cb.y0);
    double ex1 = std::max(ca.x1, cb.x1), ey1 = std::max(ca.y1, cb.y1);
    double enclosing = (ex1 - ex0) * (ey1 - ey0);
    return o.inter / o.uni - (enclosing - o.uni) / enclosing;
}

double smooth_l1(const Box& pred, const Box& gt) {
    return (smooth_l1_scalar(pred.cx - gt.cx) + smooth_l1_scalar(pred.cy - gt.cy) +
            smooth_l1_scalar(pred.w - gt.w) + smooth_l1_scalar(pred.h - gt.h)) /
           4.0;
}

double grounding_loss_value(const Box& pred, const Box& gt, double w_giou, double w_l1) {
    if (w_giou < 0.0 || w_l1 < 0.0)
        throw std::invalid_argument("grounding_loss: negative weights");
    return w_giou * (1.0 - giou(pred, gt)) + w_l1 * smooth_l1(pred, gt);
}

}  // namespace groundcap
