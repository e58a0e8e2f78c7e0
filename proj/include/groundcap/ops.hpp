#pragma once

#include <vector>

#include "groundcap/tensor.hpp"

namespace groundcap {

using BoolMat = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Differentiable primitives. Each one computes eagerly and, when a tape is
// active and some input requires grad, records a backward closure. Gradients
// accumulate additively, so a tensor used twice gets the sum of both paths.

// Binary, elementwise, equal shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
/// Elementwise min; ties route the gradient to the first argument.
Tensor minimum(const Tensor& a, const Tensor& b);
/// Elementwise max; ties route the gradient to the first argument.
Tensor maximum(const Tensor& a, const Tensor& b);

// Unary elementwise.
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
/// Natural log; input must be strictly positive.
Tensor log(const Tensor& x);
/// Smooth-L1 kernel applied elementwise: 0.5*d^2 for |d| < 1, |d| - 0.5 otherwise.
Tensor smooth_l1_kernel(const Tensor& d);

// Affine-with-constant helpers.
Tensor scale(const Tensor& x, double c);
Tensor add_const(const Tensor& x, double c);

/// Standard matrix product [m x k] * [k x n] -> [m x n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

/// Contiguous sub-matrix starting at (row, col) of size rows x cols.
Tensor block(const Tensor& x, Eigen::Index row, Eigen::Index col,
             Eigen::Index rows, Eigen::Index cols);
/// Horizontal concatenation; all parts need equal row counts.
Tensor concat_cols(const std::vector<Tensor>& parts);

/// Broadcast-add a 1 x d row vector onto every row of an n x d matrix.
Tensor add_rowvec(const Tensor& x, const Tensor& row);

/// Numerically stable softmax along `axis` (1 = each row sums to one,
/// 0 = each column sums to one), with max subtraction.
Tensor softmax(const Tensor& x, int axis);
/// Row softmax where disallowed positions get exactly zero weight. Errors on
/// a row with no allowed position.
Tensor masked_softmax_rows(const Tensor& scores, const BoolMat& allowed);

/// Row-wise layer normalization: zero mean, unit population variance per row,
/// then an affine transform by gain/bias (both 1 x d).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Row gather: out[i, :] = table[ids[i], :]. Backward scatter-adds.
Tensor gather_rows(const Tensor& table, const std::vector<int>& ids);

/// Mean negative log-likelihood of `targets` under row-wise softmax of
/// `logits` [n x V]; computed through log-sum-exp.
Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets);

/// x * w + b convenience composition ([n x d] * [d x m] + [1 x m]).
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

}  // namespace groundcap
