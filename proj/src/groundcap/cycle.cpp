#include "groundcap/cycle.hpp"

#include <algorithm>

#include "groundcap/box_loss.hpp"

namespace groundcap {

Tensor cycle_vg_ic_loss(const Models& m, const Tensor& v, const std::vector<int>& x_init,
                        bool grad_through_box) {
    Tensor b_pred = m.ground(v, x_init);
    if (!grad_through_box) b_pred = b_pred.detach();
    return m.caption_nll(m.region_condition(v, b_pred), x_init);
}

Tensor cycle_ic_vg_loss(const Models& m, const Tensor& v, const Box& b_init, double w_giou,
                        double w_l1, CycleStats& stats) {
    GenResult gen = m.generate(v, b_init, /*beam_width=*/1);
    bool degenerate = gen.tokens.empty() ||
                      std::all_of(gen.tokens.begin(), gen.tokens.end(),
                                  [](int t) { return t == Vocab::kPad; });
    if (degenerate) {
        ++stats.ic_vg_skipped;
        return Tensor::scalar(0.0);
    }
    ++stats.ic_vg_evaluated;
    return grounding_loss_t(m.ground(v, gen.tokens), box_to_tensor(b_init), w_giou, w_l1);
}

}  // namespace groundcap
