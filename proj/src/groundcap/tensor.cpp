#include "groundcap/tensor.hpp"

#include <atomic>
#include <stdexcept>

namespace groundcap {

Tensor::Tensor(Mat value, bool requires_grad) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Tensor::Tensor(std::initializer_list<std::initializer_list<double>> rows) {
    Eigen::Index r = static_cast<Eigen::Index>(rows.size());
    Eigen::Index c = r > 0 ? static_cast<Eigen::Index>(rows.begin()->size()) : 0;
    Mat m(r, c);
    Eigen::Index i = 0;
    for (const auto& row : rows) {
        if (static_cast<Eigen::Index>(row.size()) != c)
            throw std::invalid_argument("Tensor: ragged initializer");
        Eigen::Index j = 0;
        for (double v : row) m(i, j++) = v;
        ++i;
    }
    node_->value = std::move(m);
}

Tensor Tensor::zeros(Eigen::Index rows, Eigen::Index cols, bool requires_grad) {
    return Tensor(Mat::Zero(rows, cols), requires_grad);
}

Tensor Tensor::full(Eigen::Index rows, Eigen::Index cols, double v) {
    return Tensor(Mat::Constant(rows, cols, v));
}

Tensor Tensor::scalar(double v) {
    return Tensor(Mat::Constant(1, 1, v));
}

Tensor Tensor::randn_param(Eigen::Index rows, Eigen::Index cols, double stddev, RngStream& rng) {
    Mat m(rows, cols);
    // Row-major fill order so the draw sequence is layout-independent.
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.truncated_normal(stddev);
    return Tensor(std::move(m), /*requires_grad=*/true);
}

const Mat& Tensor::grad() const {
    if (!node_->grad_set) throw std::logic_error("Tensor::grad: no gradient present");
    return node_->grad;
}

double Tensor::item() const {
    if (rows() != 1 || cols() != 1) throw std::invalid_argument("Tensor::item: not a scalar");
    return node_->value(0, 0);
}

Tensor Tensor::detach() const {
    return Tensor(node_->value);
}

namespace {
std::atomic<uint64_t> g_tape_generation{1};
thread_local Tape* t_active_tape = nullptr;
}  // namespace

Tape::Tape() : generation_(g_tape_generation.fetch_add(1)) {}

void Tape::record(std::function<void()> backward_fn) {
    entries_.push_back(std::move(backward_fn));
}

void Tape::backward(const Tensor& loss) {
    if (loss.rows() != 1 || loss.cols() != 1)
        throw std::invalid_argument("Tape::backward: loss must be a scalar");
    if (backward_done_)
        throw std::logic_error("Tape::backward: backward already ran on this tape; reset first");
    if (!loss.requires_grad() && loss.node()->tape_id == 0) {
        // A pure constant (e.g. a guarded-out loss term): nothing to do.
        backward_done_ = true;
        return;
    }
    if (loss.node()->tape_id != generation_)
        throw std::logic_error("Tape::backward: loss was not recorded on this tape (tape reset?)");
    backward_done_ = true;
    loss.node()->accumulate(Mat::Constant(1, 1, 1.0));
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

void Tape::reset() {
    entries_.clear();
    backward_done_ = false;
    generation_ = g_tape_generation.fetch_add(1);
}

Tape* active_tape() { return t_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(t_active_tape) { t_active_tape = &tape; }
TapeScope::~TapeScope() { t_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(t_active_tape) { t_active_tape = nullptr; }
NoGradScope::~NoGradScope() { t_active_tape = previous_; }

}  // namespace groundcap
