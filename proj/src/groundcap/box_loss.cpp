#include "groundcap/box_loss.hpp"

#include <stdexcept>

namespace groundcap {

namespace {

struct CornerT {
    Tensor x0, y0, x1, y1;  // 1x1 each
};

void check_box_shape(const Tensor& t, const char* who) {
    if (t.rows() != 1 || t.cols() != 4)
        throw std::invalid_argument(std::string(who) + ": box tensor must be 1x4");
}

CornerT corners(const Tensor& b) {
    Tensor cx = block(b, 0, 0, 1, 1);
    Tensor cy = block(b, 0, 1, 1, 1);
    Tensor hw = scale(block(b, 0, 2, 1, 1), 0.5);
    Tensor hh = scale(block(b, 0, 3, 1, 1), 0.5);
    return {sub(cx, hw), sub(cy, hh), add(cx, hw), add(cy, hh)};
}

Tensor area(const CornerT& c) { return mul(sub(c.x1, c.x0), sub(c.y1, c.y0)); }

struct OverlapT {
    Tensor inter, uni;
};

OverlapT overlap(const CornerT& a, const CornerT& b) {
    Tensor zero = Tensor::scalar(0.0);
    Tensor iw = maximum(sub(minimum(a.x1, b.x1), maximum(a.x0, b.x0)), zero);
    Tensor ih = maximum(sub(minimum(a.y1, b.y1), maximum(a.y0, b.y0)), zero);
    Tensor inter = mul(iw, ih);
    Tensor uni = sub(add(area(a), area(b)), inter);
    return {inter, uni};
}

}  // namespace

Tensor iou_t(const Tensor& a, const Tensor& b) {
    check_box_shape(a, "iou_t");
    check_box_shape(b, "iou_t");
    CornerT ca = corners(a), cb = corners(b);
    OverlapT o = overlap(ca, cb);
    return div(o.inter, o.uni);
}

Tensor giou_t(const Tensor& a, const Tensor& b) {
    check_box_shape(a, "giou_t");
    check_box_shape(b, "giou_t");
    CornerT ca = corners(a), cb = corners(b);
    OverlapT o = overlap(ca, cb);
    Tensor ew = sub(maximum(ca.x1, cb.x1), minimum(ca.x0, cb.x0));
    Tensor eh = sub(maximum(ca.y1, cb.y1), minimum(ca.y0, cb.y0));
    Tensor enclosing = mul(ew, eh);
    return sub(div(o.inter, o.uni), div(sub(enclosing, o.uni), enclosing));
}

Tensor smooth_l1_t(const Tensor& pred, const Tensor& gt) {
    check_box_shape(pred, "smooth_l1_t");
    check_box_shape(gt, "smooth_l1_t");
    return mean(smooth_l1_kernel(sub(pred, gt)));
}

Tensor grounding_loss_t(const Tensor& pred, const Tensor& gt, double w_giou, double w_l1) {
    if (w_giou < 0.0 || w_l1 < 0.0)
        throw std::invalid_argument("grounding_loss_t: negative weights");
    Tensor giou_term = sub(Tensor::scalar(1.0), giou_t(pred, gt));
    return add(scale(giou_term, w_giou), scale(smooth_l1_t(pred, gt), w_l1));
}

}  // namespace groundcap
