#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <vector>

#include "sid/rng.hpp"

namespace sid::ad {

using Mat = Eigen::MatrixXd;

struct Node;
using Var = std::shared_ptr<Node>;

// One value in a dynamically built computation graph: the forward value, the
// gradient accumulator, and a closure that routes the incoming gradient to
// the parents. Graphs are kept alive by the root Var and freed with it.
struct Node {
    Mat value;
    Mat grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void()> backward_fn;

    void accumulate(const Mat& g) {
        if (grad.size() == 0) grad = Mat::Zero(value.rows(), value.cols());
        grad += g;
    }
    void zero_grad() {
        if (grad.size() != 0) grad.setZero();
    }
    long long size() const { return value.size(); }
};

// Leaf without gradient tracking.
Var constant(Mat v);
// Trainable leaf.
Var parameter(Mat v);

// Reverse-mode accumulation from a scalar (1x1) root. Gradients add into
// Node::grad; callers zero parameter grads between optimizer steps.
void backward(const Var& root);

// ─── arithmetic / elementwise ────────────────────────────────────────────────
Var add(Var a, Var b);                    // same shape
Var sub(Var a, Var b);
Var scale(Var a, double c);
Var hadamard(Var a, Var b);               // elementwise product
Var add_row_broadcast(Var x, Var row);    // x: NxC, row: 1xC
Var add_col_broadcast(Var x, Var col);    // x: NxC, col: Nx1
Var mul_col_broadcast(Var x, Var col);    // y(t,c) = x(t,c) * col(t)
Var relu(Var x);
Var sigmoid(Var x);
Var swish(Var x);                         // x * sigmoid(x)
Var glu_cols(Var x);                      // Nx2C -> NxC: a * sigmoid(b)
Var clamp(Var x, double lo, double hi);   // zero gradient outside (lo, hi)
Var softmax_rows(Var x);

// Inverted dropout; identity when p == 0.
Var dropout(Var x, double p, Rng& rng);

// ─── linear algebra / shape ──────────────────────────────────────────────────
Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape_rowmajor(Var x, long rows, long cols);  // row-major reinterpretation
Var slice_cols(Var x, int c0, int n);
Var slice_rows(Var x, int r0, int n);
Var concat_cols(const std::vector<Var>& xs);
Var row(Var x, int r);                    // 1xC gather of one row
Var sum_rows(Var x);                      // NxC -> 1xC
Var colwise_mean(Var x);                  // NxC -> 1xC
Var colwise_std(Var x, double eps = 1e-12);  // population std per column
Var colwise_max(Var x);                   // gradient to first argmax row
Var sum_all(Var x);                       // -> 1x1

// ─── normalization ───────────────────────────────────────────────────────────
// Per-row layer norm over columns with learned affine (gamma, beta: 1xC).
Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);

// Batch norm over the time axis (rows) per column. Training mode uses batch
// statistics (population variance) and updates the running buffers in place;
// eval mode uses the running buffers.
Var batch_norm_time(Var x, Var gamma, Var beta, Mat* running_mean,
                    Mat* running_var, bool training, double momentum = 0.1,
                    double eps = 1e-5);

// ─── convolution ─────────────────────────────────────────────────────────────
// 2-D convolution, kernel 3x3, stride 2, pad 1, with bias. x is channels-
// by-pixels (C_in, H*W); w is (C_out, C_in*9); b is (C_out, 1). Output is
// (C_out, H2*W2) with H2 = ceil(H/2), W2 = ceil(W/2).
Var conv2d_k3s2(Var x, Var w, Var b, int H, int W);

// (C, H*W) -> (H, C*W): time-major flatten feeding the projection after
// subsampling.
Var chw_to_time_major(Var x, int H, int W);

// Depthwise 1-D convolution over time with 'same' zero padding. x: NxC,
// w: KxC (kernel tap k for channel c at w(k, c)), b: 1xC.
Var depthwise_conv1d(Var x, Var w, Var b);

// ─── attention helpers ───────────────────────────────────────────────────────
// s_pos: (N, 2N-1) scores against relative offsets, column i holding offset
// N-1-i. Returns (N, N) with out(t, s) = s_pos(t, N-1-t+s).
Var rel_shift(Var s_pos);

// ─── losses / geometry ───────────────────────────────────────────────────────
// Rows of x scaled to unit L2 norm. Throws on a row with norm <= eps.
Var l2_normalize_rows(Var x, double eps = 1e-12);

// Mean cross-entropy over the listed rows of `logits` against `labels`.
// If accuracy_out is given it receives the fraction of listed rows whose
// argmax (first maximum) equals the label.
Var cross_entropy_rows(Var logits, const std::vector<int>& labels,
                       const std::vector<int>& positions,
                       double* accuracy_out = nullptr);

}  // namespace sid::ad
