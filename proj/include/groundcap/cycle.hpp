#pragma once

#include <cstdint>

#include "groundcap/model.hpp"

namespace groundcap {

/// Book-keeping for the caption->box cycle's degenerate-caption guard.
struct CycleStats {
    uint64_t ic_vg_evaluated = 0;
    uint64_t ic_vg_skipped = 0;
};

/// Text-to-box-to-text: the grounder's predicted box conditions the
/// captioner, which is scored against the original expression. No box
/// annotation is consumed. With grad_through_box (default) the grounder
/// learns through the continuous box coordinates; off detaches the box.
Tensor cycle_vg_ic_loss(const Models& m, const Tensor& v, const std::vector<int>& x_init,
                        bool grad_through_box = true);

/// Box-to-text-to-box: a greedily decoded caption (off-tape pseudo-label)
/// is grounded back and compared to the original box. Degenerate captions
/// (empty or all-PAD) contribute a constant zero and bump the skip counter.
Tensor cycle_ic_vg_loss(const Models& m, const Tensor& v, const Box& b_init, double w_giou,
                        double w_l1, CycleStats& stats);

}  // namespace groundcap
