#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include "groundcap/rng.hpp"

namespace groundcap {

using Mat = Eigen::MatrixXd;

class Tape;

namespace detail {

struct TensorNode {
    Mat value;
    Mat grad;               // allocated lazily, valid only while grad_set
    bool requires_grad = false;
    bool grad_set = false;
    uint64_t tape_id = 0;   // generation of the tape that produced this node, 0 for leaves

    void accumulate(const Mat& g) {
        if (!grad_set) {
            grad = g;
            grad_set = true;
        } else {
            grad += g;
        }
    }
};

}  // namespace detail

/// Value-semantics handle to a matrix with an optional gradient buffer.
/// Rank is at most 2: every quantity in the models is a matrix, a row vector
/// or a 1x1 scalar. Copies share storage (the handle is cheap); `detach`
/// makes an independent constant.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Mat value, bool requires_grad = false);
    Tensor(std::initializer_list<std::initializer_list<double>> rows);

    static Tensor zeros(Eigen::Index rows, Eigen::Index cols, bool requires_grad = false);
    static Tensor full(Eigen::Index rows, Eigen::Index cols, double v);
    static Tensor scalar(double v);
    /// Truncated-normal initialized parameter (requires_grad on).
    static Tensor randn_param(Eigen::Index rows, Eigen::Index cols, double stddev, RngStream& rng);

    Eigen::Index rows() const { return node_->value.rows(); }
    Eigen::Index cols() const { return node_->value.cols(); }
    Eigen::Index size() const { return node_->value.size(); }

    const Mat& value() const { return node_->value; }
    Mat& value_mut() { return node_->value; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool b) { node_->requires_grad = b; }

    bool has_grad() const { return node_->grad_set; }
    const Mat& grad() const;
    void zero_grad() { node_->grad_set = false; }

    /// Scalar extraction; throws unless the tensor is 1x1.
    double item() const;

    bool is_finite() const { return node_->value.allFinite(); }

    /// A fresh constant tensor with the same values and no history.
    Tensor detach() const;

    bool same_storage(const Tensor& other) const { return node_ == other.node_; }

    detail::TensorNode* node() const { return node_.get(); }
    const std::shared_ptr<detail::TensorNode>& handle() const { return node_; }

private:
    std::shared_ptr<detail::TensorNode> node_ = std::make_shared<detail::TensorNode>();
    friend class Tape;
};

/// Reverse-mode tape. Primitives executed while a tape is active append a
/// backward closure; `backward` replays them once, newest first. A tape
/// belongs to one training step and one thread.
class Tape {
public:
    Tape();

    void record(std::function<void()> backward_fn);

    /// Seeds d(loss)/d(loss) = 1 and runs the chain rule in reverse order.
    /// Errors: loss is not 1x1; loss was not produced under this tape's
    /// current generation (e.g. the tape was reset since); backward already
    /// ran without a reset in between.
    void backward(const Tensor& loss);

    /// Drops all recorded closures and starts a new generation; tensors made
    /// under the old generation can no longer be differentiated through.
    void reset();

    size_t size() const { return entries_.size(); }
    uint64_t generation() const { return generation_; }
    bool backward_done() const { return backward_done_; }

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

private:
    std::vector<std::function<void()>> entries_;
    uint64_t generation_;
    bool backward_done_ = false;
};

/// The tape primitives record onto, if any. Managed by TapeScope/NoGradScope.
Tape* active_tape();

/// RAII activation of a tape for the current thread.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

/// Suspends recording (used for pseudo-label generation inside a step).
class NoGradScope {
public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape* previous_;
};

}  // namespace groundcap
