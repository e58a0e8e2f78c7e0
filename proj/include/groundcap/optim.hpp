#pragma once

#include <cstdint>
#include <vector>

#include "groundcap/tensor.hpp"

namespace groundcap {

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

/// AdamW with decoupled weight decay. Matrix-shaped parameters decay;
/// row/column-vector parameters (biases, layer-norm gains/biases, the class
/// token) are exempt, the usual transformer convention.
class AdamW {
public:
    AdamW(std::vector<Tensor> params, AdamWConfig cfg = {});

    /// Applies one update using the gradients currently on the parameters.
    /// Parameters without a gradient are skipped. Throws on non-finite
    /// gradients or lr < 0.
    void step(double lr);

    void zero_grad();

    uint64_t step_count() const { return t_; }
    const AdamWConfig& config() const { return cfg_; }

private:
    struct Slot {
        Tensor param;
        Mat m;
        Mat v;
        bool decay;
    };
    std::vector<Slot> slots_;
    AdamWConfig cfg_;
    uint64_t t_ = 0;
};

struct LrSchedule {
    double peak = 1e-3;
    int64_t warmup_steps = 200;
    int64_t total_steps = 0;
};

/// Linear warmup to `peak` at warmup_steps, then linear decay to zero at
/// total_steps. Step counts from 0 (before any update) to total_steps.
double lr_at(int64_t step, const LrSchedule& s);

}  // namespace groundcap
