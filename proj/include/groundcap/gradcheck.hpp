#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace groundcap {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    int elements = 0;  // number of parameter elements compared
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;

    double worst() const;
    const GradCheckEntry* worst_entry() const;
    bool passed(double tol) const;
};

/// Central-difference verification of the reverse-mode gradients: every
/// differentiable primitive on small random inputs, then the four training
/// losses (grounding, caption NLL, both cycle compositions) end-to-end over
/// every parameter of a d=8 miniature model.
///
/// Relative error is |ad - fd| / max(|ad|, |fd|, 1e-6); the absolute floor
/// keeps near-zero gradients from inflating the ratio. Terms the losses treat
/// as constants (the detached box when gradients are cut at the box, the
/// discretely decoded caption) are frozen at their base values before
/// differencing, so the check compares against the gradient's own semantics.
GradCheckReport run_gradcheck(uint64_t seed = 12345);

}  // namespace groundcap
