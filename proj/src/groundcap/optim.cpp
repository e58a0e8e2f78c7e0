#include "groundcap/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace groundcap {

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig cfg) : cfg_(cfg) {
    slots_.reserve(params.size());
    for (Tensor& p : params) {
        Slot s;
        s.m = Mat::Zero(p.rows(), p.cols());
        s.v = Mat::Zero(p.rows(), p.cols());
        s.decay = p.rows() > 1 && p.cols() > 1;
        s.param = std::move(p);
        slots_.push_back(std::move(s));
    }
}

void AdamW::step(double lr) {
    if (lr < 0.0) throw std::invalid_argument("AdamW::step: negative learning rate");
    ++t_;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (Slot& s : slots_) {
        if (!s.param.has_grad()) continue;
        const Mat& g = s.param.grad();
        if (!g.allFinite()) throw std::runtime_error("AdamW::step: non-finite gradient");
        s.m = cfg_.beta1 * s.m + (1.0 - cfg_.beta1) * g;
        s.v = (cfg_.beta2 * s.v.array() + (1.0 - cfg_.beta2) * g.array().square()).matrix();
        Mat update = ((s.m.array() / bc1) / ((s.v.array() / bc2).sqrt() + cfg_.eps)).matrix();
        Mat& p = s.param.value_mut();
        if (s.decay) p -= lr * cfg_.weight_decay * p;
        p -= lr * update;
    }
}

void AdamW::zero_grad() {
    for (Slot& s : slots_) s.param.zero_grad();
}

double lr_at(int64_t step, const LrSchedule& s) {
    if (step < 0) throw std::invalid_argument("lr_at: negative step");
    if (step > s.total_steps) throw std::invalid_argument("lr_at: step beyond total_steps");
    if (step <= s.warmup_steps)
        return s.peak * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
    return s.peak * static_cast<double>(s.total_steps - step) /
           static_cast<double>(s.total_steps - s.warmup_steps);
}

}  // namespace groundcap
