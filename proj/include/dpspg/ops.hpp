#pragma once

#include "dpspg/common.hpp"

#include <vector>

namespace dpspg::ops {

// Numerically safe softmax of a logit vector at temperature tau.
// Uses max-subtraction so no exponential can overflow.
Vector softmax(const Vector& logits, double tau);

// Analytic Jacobian of softmax at a probability vector: J(i,j) = (1/tau) * f_i * (delta_ij - f_j).
// probs must already be normalized (checked to 1e-8).
Matrix softmax_jacobian(const Vector& probs, double tau);

double log_sum_exp(const Vector& v);

// Row-wise softmax over contiguous blocks of `block` rows' column segments is
// not needed; attention uses full-row softmax (block_softmax handles batching).
Matrix softmax_rows(const Matrix& x, double tau);

// Softmax applied independently to each row, restricted to the column block
// the row belongs to (rows and columns share block indexing). Entries outside
// the row's block are exactly zero. Used to batch independent sequences
// through one attention matrix.
Matrix block_softmax_rows(const Matrix& x, Eigen::Index block, double tau);

Matrix gelu(const Matrix& x);
Matrix gelu_derivative(const Matrix& x);

Matrix sigmoid(const Matrix& x);

// Per-row layer normalization with learnable scale/shift (both 1 x d).
Matrix layer_norm_rows(const Matrix& x, const Matrix& gamma, const Matrix& beta, double eps = 1e-5);

// Each row scaled to unit Euclidean norm.
Matrix l2_normalize_rows(const Matrix& x);

// Mean over each consecutive group of `block` rows; x.rows() must be a multiple.
Matrix block_mean_rows(const Matrix& x, Eigen::Index block);

// Sample-major batching helpers. With M parts each holding one sequence
// position for every sample, the interleaved layout places row s*M + m at
// (sample s, position m).
Matrix interleave_rows(const std::vector<const Matrix*>& parts);
Matrix gather_stride_rows(const Matrix& x, Eigen::Index stride, Eigen::Index offset);
Matrix add_tiled_rows(const Matrix& x, const Matrix& tile);

}  // namespace dpspg::ops
