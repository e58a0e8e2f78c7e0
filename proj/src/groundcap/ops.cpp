#include "groundcap/ops.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace groundcap {

namespace {

using detail::TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;
using RowArray = Eigen::Array<double, 1, Eigen::Dynamic>;

Mat& grad_buffer(TensorNode& n) {
    if (!n.grad_set) {
        n.grad = Mat::Zero(n.value.rows(), n.value.cols());
        n.grad_set = true;
    }
    return n.grad;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw std::invalid_argument(std::string(op) + ": shape mismatch (" +
                                    std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                    " vs " + std::to_string(b.rows()) + "x" +
                                    std::to_string(b.cols()) + ")");
}

void check_finite(const Tensor& t, const char* op) {
    if (!t.is_finite())
        throw std::runtime_error(std::string(op) + ": non-finite output");
}

// Shared recording preamble: decides whether this application goes on the
// active tape and stamps outputs accordingly.
struct Recorder {
    Tape* tape = nullptr;
    bool rec = false;

    explicit Recorder(std::initializer_list<const Tensor*> inputs) {
        tape = active_tape();
        if (!tape) return;
        for (const Tensor* t : inputs)
            if (t->requires_grad()) { rec = true; return; }
    }

    Tensor make(Mat value) const {
        Tensor out(std::move(value));
        if (rec) {
            out.set_requires_grad(true);
            out.node()->tape_id = tape->generation();
        }
        return out;
    }

    void record(std::function<void()> fn) const {
        if (rec) tape->record(std::move(fn));
    }
};

template <typename Fwd, typename Bwd>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
    check_same_shape(a, b, name);
    Recorder r({&a, &b});
    Tensor out = r.make(fwd(a.value(), b.value()));
    check_finite(out, name);
    r.record([an = a.handle(), bn = b.handle(), on = out.handle(), bwd] {
        if (!on->grad_set) return;
        bwd(*an, *bn, *on);
    });
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, "add", [](const Mat& x, const Mat& y) { return Mat(x + y); },
        [](TensorNode& an, TensorNode& bn, TensorNode& on) {
            if (an.requires_grad) an.accumulate(on.grad);
            if (bn.requires_grad) bn.accumulate(on.grad);
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, "sub", [](const Mat& x, const Mat& y) { return Mat(x - y); },
        [](TensorNode& an, TensorNode& bn, TensorNode& on) {
            if (an.requires_grad) an.accumulate(on.grad);
            if (bn.requires_grad) bn.accumulate(Mat(-on.grad));
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, "mul", [](const Mat& x, const Mat& y) { return Mat(x.cwiseProduct(y)); },
        [](TensorNode& an, TensorNode& bn, TensorNode& on) {
            if (an.requires_grad) an.accumulate(on.grad.cwiseProduct(bn.value));
            if (bn.requires_grad) bn.accumulate(on.grad.cwiseProduct(an.value));
        });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, "div", [](const Mat& x, const Mat& y) { return Mat(x.cwiseQuotient(y)); },
        [](TensorNode& an, TensorNode& bn, TensorNode& on) {
            if (an.requires_grad) an.accumulate(on.grad.cwiseQuotient(bn.value));
            if (bn.requires_grad)
                bn.accumulate(
                    (-on.grad.array() * an.value.array() / bn.value.array().square()).matrix());
        });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, "minimum", [](const Mat& x, const Mat& y) { return Mat(x.cwiseMin(y)); },
        [](TensorNode& an, TensorNode& bn, TensorNode& on) {
            Mat zero = Mat::Zero(on.grad.rows(), on.grad.cols());
            auto a_wins = (an.value.array() <= bn.value.array());
            if (an.requires_grad) an.accumulate(a_wins.select(on.grad, zero));
            if (bn.requires_grad) bn.accumulate(a_wins.select(zero, on.grad));
        });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        a, b, "maximum", [](const Mat& x, const Mat& y) { return Mat(x.cwiseMax(y)); },
        [](TensorNode& an, TensorNode& bn, TensorNode& on) {
            Mat zero = Mat::Zero(on.grad.rows(), on.grad.cols());
            auto a_wins = (an.value.array() >= bn.value.array());
            if (an.requires_grad) an.accumulate(a_wins.select(on.grad, zero));
            if (bn.requires_grad) bn.accumulate(a_wins.select(zero, on.grad));
        });
}

Tensor relu(const Tensor& x) {
    Recorder r({&x});
    Tensor out = r.make(x.value().cwiseMax(0.0));
    r.record([xn = x.handle(), on = out.handle()] {
        if (!on->grad_set || !xn->requires_grad) return;
        Mat zero = Mat::Zero(on->grad.rows(), on->grad.cols());
        xn->accumulate((xn->value.array() > 0.0).select(on->grad, zero));
    });
    return out;
}

Tensor sigmoid(const Tensor& x) {
    Recorder r({&x});
    // 1/(1+exp(-x)) is stable for x >= 0; use exp(x)/(1+exp(x)) for x < 0.
    Mat y = x.value().unaryExpr([](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        double e = std::exp(v);
        return e / (1.0 + e);
    });
    Tensor out = r.make(std::move(y));
    r.record([xn = x.handle(), on = out.handle()] {
        if (!on->grad_set || !xn->requires_grad) return;
        xn->accumulate(
            (on->grad.array() * on->value.array() * (1.0 - on->value.array())).matrix());
    });
    return out;
}

Tensor exp(const Tensor& x) {
    Recorder r({&x});
    Tensor out = r.make(x.value().array().exp().matrix());
    check_finite(out, "exp");
    r.record([xn = x.handle(), on = out.handle()] {
        if (!on->grad_set || !xn->requires_grad) return;
        xn->accumulate((on->grad.array() * on->value.array()).matrix());
    });
    return out;
}

Tensor log(const Tensor& x) {
    if (!(x.value().array() > 0.0).all())
        throw std::domain_error("log: input must be strictly positive");
    Recorder r({&x});
    Tensor out = r.make(x.value().array().log().matrix());
    check_finite(out, "log");
    r.record([xn = x.handle(), on = out.handle()] {
        if (!on->grad_set || !xn->requires_grad) return;
        xn->accumulate((on->grad.array() / xn->value.array()).matrix());
    });
    return out;
}

Tensor smooth_l1_kernel(const Tensor& d) {
    Recorder r({&d});
    Mat y = d.value().unaryExpr([](double v) {
        double a = std::abs(v);
        return a < 1.0 ? 0.5 * v * v : a - 0.5;
    });
    Tensor out = r.make(std::move(y));
    r.record([dn = d.handle(), on = out.handle()] {
        if (!on->grad_set || !dn->requires_grad) return;
        Mat slope = dn->value.unaryExpr([](double v) {
            return std::abs(v) < 1.0 ? v : (v > 0.0 ? 1.0 : -1.0);
        });
        dn->accumulate(on->grad.cwiseProduct(slope));
    });
    return out;
}

Tensor scale(const Tensor& x, double c) {
    Recorder r({&x});
    Tensor out = r.make(Mat(x.value() * c));
    r.record([xn = x.handle(), on = out.handle(), c] {
        if (!on->grad_set || !xn->requires_grad) return;
        xn->accumulate(Mat(on->grad * c));
    });
    return out;
}

Tensor add_const(const Tensor& x, double c) {
    Recorder r({&x});
    Tensor out = r.make((x.value().array() + c).matrix());
    r.record([xn = x.handle(), on = out.handle()] {
        if (!on->grad_set || !xn->requires_grad) return;
        xn->accumulate(on->grad);
    });
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows())
        throw std::invalid_argument("matmul: inner dimensions disagree (" +
                                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                                    ")");
    Recorder r({&a, &b});
    Tensor out = r.make(Mat(a.value() * b.value()));
    r.record([an = a.handle(), bn = b.handle(), on = out.handle()] {
        if (!on->grad_set) return;
        if (an->requires_grad) an->accumulate(Mat(on->grad * bn->value.transpose()));
        if (bn->requires_grad) bn->accumulate(Mat(an->value.transpose() * on->grad));
    });
    return out;
}

Tensor transpose(const Tensor& x) {
    Recorder r({&x});
    Tensor out = r.make(Mat(x.value().transpose()));
    r.record([xn = x.handle(), on = out.handle()] {
        if (!on->grad_set || !xn->requires_grad) return;
        xn->accumulate(Mat(on->grad.transpose()));
    });
    return out;
}

Tensor block(const Tensor& x, Eigen::Index row, Eigen::Index col,
             Eigen::Index rows, Eigen::Index cols) {
    if (row < 0 || col < 0 || rows < 1 || cols < 1 || row + rows > x.rows() ||
        col + cols > x.cols())
        throw std::invalid_argument("block: out of range");
    Recorder r({&x});
    Tensor out = r.make(Mat(x.value().block(row, col, rows, cols)));
    r.record([xn = x.handle(), on = out.handle(), row, col, rows, cols] {
        if (!on->grad_set || !xn->requires_grad) return;
        grad_buffer(*xn).block(row, col, rows, cols) += on->grad;
    });
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    Eigen::Index rows = parts.front().rows();
    Eigen::Index total = 0;
    for (const Tensor& p : parts) {
        if (p.rows() != rows) throw std::invalid_argument("concat_cols: row counts differ");
        total += p.cols();
    }
    Recorder r({});
    if (r.tape)
        for (const Tensor& p : parts)
            if (p.requires_grad()) { r.rec = true; break; }

    Mat value(rows, total);
    Eigen::Index at = 0;
    for (const Tensor& p : parts) {
        value.middleCols(at, p.cols()) = p.value();
        at += p.cols();
    }
    Tensor out = r.make(std::move(value));
    std::vector<NodePtr> handles;
    handles.reserve(parts.size());
    for (const Tensor& p : parts) handles.push_back(p.handle());
    r.record([handles, on = out.handle()] {
        if (!on->grad_set) return;
        Eigen::Index at = 0;
        for (const NodePtr& h : handles) {
            if (h->requires_grad) h->accumulate(Mat(on->grad.middleCols(at, h->value.cols())));
            at += h->value.cols();
        }
    });
    return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& row) {
    if (row.rows() != 1 || row.cols() != x.cols())
        throw std::invalid_argument("add_rowvec: row vector shape mismatch");
    Recorder r({&x, &row});
    Tensor out = r.make(Mat(x.value().rowwise() + row.value().row(0)));
    r.record([xn = x.handle(), rn = row.handle(), on = out.handle()] {
        if (!on->grad_set) return;
        if (xn->requires_grad) xn->accumulate(on->grad);
        if (rn->requires_grad) rn->accumulate(Mat(on->grad.colwise().sum()));
    });
    return out;
}

namespace {

Mat softmax_rows_value(const Mat& x) {
    Mat out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double m = x.row(i).maxCoeff();
        RowArray e = (x.row(i).array() - m).exp();
        out.row(i) = (e / e.sum()).matrix();
    }
    return out;
}

// d/dx of row softmax given dy and y: y .* (dy - rowsum(dy .* y)).
Mat softmax_rows_backward(const Mat& y, const Mat& dy) {
    Eigen::VectorXd rowsum = dy.cwiseProduct(y).rowwise().sum();
    return (y.array() * (dy.array().colwise() - rowsum.array())).matrix();
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
    if (axis != 0 && axis != 1) throw std::invalid_argument("softmax: axis must be 0 or 1");
    Recorder r({&x});
    Mat y = axis == 1 ? softmax_rows_value(x.value())
                      : Mat(softmax_rows_value(x.value().transpose()).transpose());
    Tensor out = r.make(std::move(y));
    r.record([xn = x.handle(), on = out.handle(), axis] {
        if (!on->grad_set || !xn->requires_grad) return;
        if (axis == 1) {
            xn->accumulate(softmax_rows_backward(on->value, on->grad));
        } else {
            xn->accumulate(Mat(
                softmax_rows_backward(on->value.transpose(), on->grad.transpose()).transpose()));
        }
    });
    return out;
}

Tensor masked_softmax_rows(const Tensor& scores, const BoolMat& allowed) {
    if (allowed.rows() != scores.rows() || allowed.cols() != scores.cols())
        throw std::invalid_argument("masked_softmax_rows: mask shape mismatch");
    const Mat& x = scores.value();
    Mat y = Mat::Zero(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double m = -std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j < x.cols(); ++j)
            if (allowed(i, j)) m = std::max(m, x(i, j));
        if (!std::isfinite(m))
            throw std::invalid_argument("masked_softmax_rows: fully masked query row " +
                                        std::to_string(i));
        double denom = 0.0;
        for (Eigen::Index j = 0; j < x.cols(); ++j) {
            if (allowed(i, j)) {
                y(i, j) = std::exp(x(i, j) - m);
                denom += y(i, j);
            }
        }
        y.row(i) /= denom;
    }
    Recorder r({&scores});
    Tensor out = r.make(std::move(y));
    r.record([xn = scores.handle(), on = out.handle()] {
        if (!on->grad_set || !xn->requires_grad) return;
        // Masked entries have y == 0, so the shared softmax rule yields zero there.
        xn->accumulate(softmax_rows_backward(on->value, on->grad));
    });
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("layer_norm: eps must be positive");
    if (gain.rows() != 1 || bias.rows() != 1 || gain.cols() != x.cols() ||
        bias.cols() != x.cols())
        throw std::invalid_argument("layer_norm: gain/bias must be 1 x d with d matching x");
    const Mat& v = x.value();
    Eigen::VectorXd mu = v.rowwise().mean();
    Mat centered = v.colwise() - mu;
    Eigen::VectorXd inv_std =
        (centered.array().square().rowwise().mean() + eps).sqrt().inverse().matrix();
    Mat xhat = (centered.array().colwise() * inv_std.array()).matrix();
    Mat y = ((xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
             bias.value().row(0).array())
                .matrix();

    Recorder r({&x, &gain, &bias});
    Tensor out = r.make(std::move(y));
    r.record([xn = x.handle(), gn = gain.handle(), bn = bias.handle(), on = out.handle(),
              xhat = std::move(xhat), inv_std = std::move(inv_std)] {
        if (!on->grad_set) return;
        const Mat& dy = on->grad;
        if (gn->requires_grad) gn->accumulate(Mat(dy.cwiseProduct(xhat).colwise().sum()));
        if (bn->requires_grad) bn->accumulate(Mat(dy.colwise().sum()));
        if (xn->requires_grad) {
            Mat dxhat = (dy.array().rowwise() * gn->value.row(0).array()).matrix();
            Eigen::VectorXd m1 = dxhat.rowwise().mean();
            Eigen::VectorXd m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
            Mat dx = (((dxhat.array().colwise() - m1.array()) -
                       (xhat.array().colwise() * m2.array()))
                          .colwise() *
                      inv_std.array())
                         .matrix();
            xn->accumulate(dx);
        }
    });
    return out;
}

Tensor sum(const Tensor& x) {
    Recorder r({&x});
    Tensor out = r.make(Mat::Constant(1, 1, x.value().sum()));
    r.record([xn = x.handle(), on = out.handle()] {
        if (!on->grad_set || !xn->requires_grad) return;
        xn->accumulate(Mat::Constant(xn->value.rows(), xn->value.cols(), on->grad(0, 0)));
    });
    return out;
}

Tensor mean(const Tensor& x) {
    Recorder r({&x});
    Tensor out = r.make(Mat::Constant(1, 1, x.value().mean()));
    r.record([xn = x.handle(), on = out.handle()] {
        if (!on->grad_set || !xn->requires_grad) return;
        double g = on->grad(0, 0) / static_cast<double>(xn->value.size());
        xn->accumulate(Mat::Constant(xn->value.rows(), xn->value.cols(), g));
    });
    return out;
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
    if (ids.empty()) throw std::invalid_argument("gather_rows: empty id list");
    for (int id : ids)
        if (id < 0 || id >= table.rows())
            throw std::out_of_range("gather_rows: id " + std::to_string(id) + " out of range");
    Recorder r({&table});
    Mat value(static_cast<Eigen::Index>(ids.size()), table.cols());
    for (size_t i = 0; i < ids.size(); ++i)
        value.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
    Tensor out = r.make(std::move(value));
    r.record([tn = table.handle(), on = out.handle(), ids] {
        if (!on->grad_set || !tn->requires_grad) return;
        Mat& g = grad_buffer(*tn);
        for (size_t i = 0; i < ids.size(); ++i)
            g.row(ids[i]) += on->grad.row(static_cast<Eigen::Index>(i));
    });
    return out;
}

Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets) {
    if (targets.empty()) throw std::invalid_argument("cross_entropy_rows: empty targets");
    if (static_cast<Eigen::Index>(targets.size()) != logits.rows())
        throw std::invalid_argument("cross_entropy_rows: one target per logit row required");
    for (int t : targets)
        if (t < 0 || t >= logits.cols())
            throw std::out_of_range("cross_entropy_rows: target out of vocabulary");

    const Mat& x = logits.value();
    Eigen::Index n = x.rows();
    Mat probs(n, x.cols());
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        double m = x.row(i).maxCoeff();
        RowArray e = (x.row(i).array() - m).exp();
        double lse = m + std::log(e.sum());
        probs.row(i) = (e / e.sum()).matrix();
        total += lse - x(i, targets[static_cast<size_t>(i)]);
    }
    Recorder r({&logits});
    Tensor out = r.make(Mat::Constant(1, 1, total / static_cast<double>(n)));
    check_finite(out, "cross_entropy_rows");
    r.record([ln = logits.handle(), on = out.handle(), probs = std::move(probs), targets] {
        if (!on->grad_set || !ln->requires_grad) return;
        Mat d = probs;
        for (Eigen::Index i = 0; i < d.rows(); ++i) d(i, targets[static_cast<size_t>(i)]) -= 1.0;
        d *= on->grad(0, 0) / static_cast<double>(d.rows());
        ln->accumulate(d);
    });
    return out;
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add_rowvec(matmul(x, w), b);
}

}  // namespace groundcap
