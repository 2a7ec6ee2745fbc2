// Normalization, convolution, and attention-support ops for the autodiff
// graph.

#include <cmath>
#include <stdexcept>

#include "sid/autodiff.hpp"

namespace sid::ad {
namespace {

Mat& grad_ref(Node* n) {
    if (n->grad.size() == 0) n->grad = Mat::Zero(n->value.rows(), n->value.cols());
    return n->grad;
}

Var make_node(Mat value, std::vector<Var> parents) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents) {
        if (p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    }
    return n;
}

void check(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
}

}  // namespace

Var layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
    const long cols = x->value.cols();
    check(gamma->value.rows() == 1 && gamma->value.cols() == cols,
          "layer_norm_rows: gamma must be 1xC");
    check(beta->value.rows() == 1 && beta->value.cols() == cols,
          "layer_norm_rows: beta must be 1xC");

    const long rows = x->value.rows();
    Mat xhat(rows, cols);
    Eigen::VectorXd inv_sd(rows);
    for (int r = 0; r < rows; ++r) {
        double mean = x->value.row(r).mean();
        double var = (x->value.row(r).array() - mean).square().sum() / cols;
        double is = 1.0 / std::sqrt(var + eps);
        inv_sd[r] = is;
        xhat.row(r) = (x->value.row(r).array() - mean) * is;
    }
    Mat y = xhat;
    y.array().rowwise() *= gamma->value.row(0).array();
    y.rowwise() += beta->value.row(0);

    auto n = make_node(std::move(y), {x, gamma, beta});
    if (n->requires_grad) {
        Node *self = n.get(), *px = x.get(), *pg = gamma.get(), *pb = beta.get();
        n->backward_fn = [self, px, pg, pb, xhat = std::move(xhat),
                          inv_sd = std::move(inv_sd)] {
            const long rows = xhat.rows(), cols = xhat.cols();
            if (pg->requires_grad)
                pg->accumulate(
                    (self->grad.array() * xhat.array()).colwise().sum().matrix());
            if (pb->requires_grad) pb->accumulate(self->grad.colwise().sum());
            if (px->requires_grad) {
                Mat dx(rows, cols);
                for (int r = 0; r < rows; ++r) {
                    Eigen::RowVectorXd h =
                        (self->grad.row(r).array() * pg->value.row(0).array())
                            .matrix();
                    double mean_h = h.mean();
                    double mean_hx = h.dot(xhat.row(r)) / cols;
                    dx.row(r) = ((h.array() - mean_h - xhat.row(r).array() * mean_hx) *
                                 inv_sd[r])
                                    .matrix();
                }
                px->accumulate(dx);
            }
        };
    }
    return n;
}

Var batch_norm_time(Var x, Var gamma, Var beta, Mat* running_mean,
                    Mat* running_var, bool training, double momentum, double eps) {
    const long rows = x->value.rows();
    const long cols = x->value.cols();
    check(gamma->value.rows() == 1 && gamma->value.cols() == cols,
          "batch_norm_time: gamma must be 1xC");
    check(beta->value.rows() == 1 && beta->value.cols() == cols,
          "batch_norm_time: beta must be 1xC");
    check(running_mean->cols() == cols && running_var->cols() == cols,
          "batch_norm_time: running buffer shape mismatch");

    if (training) {
        check(rows >= 2, "batch_norm_time: training mode needs >= 2 rows");
        Eigen::RowVectorXd mean = x->value.colwise().mean();
        Eigen::RowVectorXd var =
            ((x->value.rowwise() - mean).array().square().colwise().sum() / rows)
                .matrix();
        Eigen::RowVectorXd inv_sd = (var.array() + eps).rsqrt();

        running_mean->row(0) = (1.0 - momentum) * running_mean->row(0) + momentum * mean;
        running_var->row(0) = (1.0 - momentum) * running_var->row(0) + momentum * var;

        Mat xhat = (x->value.rowwise() - mean).array().rowwise() * inv_sd.array();
        Mat y = xhat;
        y.array().rowwise() *= gamma->value.row(0).array();
        y.rowwise() += beta->value.row(0);

        auto n = make_node(std::move(y), {x, gamma, beta});
        if (n->requires_grad) {
            Node *self = n.get(), *px = x.get(), *pg = gamma.get(), *pb = beta.get();
            n->backward_fn = [self, px, pg, pb, xhat = std::move(xhat),
                              inv_sd = std::move(inv_sd)] {
                const long rows = xhat.rows(), cols = xhat.cols();
                if (pg->requires_grad)
                    pg->accumulate(
                        (self->grad.array() * xhat.array()).colwise().sum().matrix());
                if (pb->requires_grad) pb->accumulate(self->grad.colwise().sum());
                if (px->requires_grad) {
                    Mat dx(rows, cols);
                    for (int c = 0; c < cols; ++c) {
                        Eigen::VectorXd h = self->grad.col(c) * pg->value(0, c);
                        double mean_h = h.mean();
                        double mean_hx = h.dot(xhat.col(c)) / rows;
                        dx.col(c) = ((h.array() - mean_h - xhat.col(c).array() * mean_hx) *
                                     inv_sd[c])
                                        .matrix();
                    }
                    px->accumulate(dx);
                }
            };
        }
        return n;
    }

    // Eval mode: affine transform against frozen running statistics.
    Eigen::RowVectorXd inv_sd = (running_var->row(0).array() + eps).rsqrt();
    Mat xhat = (x->value.rowwise() - running_mean->row(0)).array().rowwise() *
               inv_sd.array();
    Mat y = xhat;
    y.array().rowwise() *= gamma->value.row(0).array();
    y.rowwise() += beta->value.row(0);

    auto n = make_node(std::move(y), {x, gamma, beta});
    if (n->requires_grad) {
        Node *self = n.get(), *px = x.get(), *pg = gamma.get(), *pb = beta.get();
        n->backward_fn = [self, px, pg, pb, xhat = std::move(xhat),
                          inv_sd = std::move(inv_sd)] {
            if (pg->requires_grad)
                pg->accumulate(
                    (self->grad.array() * xhat.array()).colwise().sum().matrix());
            if (pb->requires_grad) pb->accumulate(self->grad.colwise().sum());
            if (px->requires_grad)
                px->accumulate((self->grad.array().rowwise() *
                                (inv_sd.array() * pg->value.row(0).array()))
                                   .matrix());
        };
    }
    return n;
}

// ─── convolution ─────────────────────────────────────────────────────────────

namespace {

struct Conv2dGeom {
    int H, W, H2, W2, c_in;
};

// im2col for kernel 3, stride 2, pad 1: output (C_in*9, H2*W2).
Mat im2col_k3s2(const Mat& x, const Conv2dGeom& g) {
    Mat col = Mat::Zero(g.c_in * 9, static_cast<long>(g.H2) * g.W2);
    for (int oy = 0; oy < g.H2; ++oy) {
        for (int ox = 0; ox < g.W2; ++ox) {
            const long out_idx = static_cast<long>(oy) * g.W2 + ox;
            for (int ky = 0; ky < 3; ++ky) {
                const int iy = oy * 2 + ky - 1;
                if (iy < 0 || iy >= g.H) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int ix = ox * 2 + kx - 1;
                    if (ix < 0 || ix >= g.W) continue;
                    const long in_idx = static_cast<long>(iy) * g.W + ix;
                    for (int ci = 0; ci < g.c_in; ++ci)
                        col(ci * 9 + ky * 3 + kx, out_idx) = x(ci, in_idx);
                }
            }
        }
    }
    return col;
}

void col2im_k3s2_add(const Mat& dcol, const Conv2dGeom& g, Mat& dx) {
    for (int oy = 0; oy < g.H2; ++oy) {
        for (int ox = 0; ox < g.W2; ++ox) {
            const long out_idx = static_cast<long>(oy) * g.W2 + ox;
            for (int ky = 0; ky < 3; ++ky) {
                const int iy = oy * 2 + ky - 1;
                if (iy < 0 || iy >= g.H) continue;
                for (int kx = 0; kx < 3; ++kx) {
                    const int ix = ox * 2 + kx - 1;
                    if (ix < 0 || ix >= g.W) continue;
                    const long in_idx = static_cast<long>(iy) * g.W + ix;
                    for (int ci = 0; ci < g.c_in; ++ci)
                        dx(ci, in_idx) += dcol(ci * 9 + ky * 3 + kx, out_idx);
                }
            }
        }
    }
}

}  // namespace

Var conv2d_k3s2(Var x, Var w, Var b, int H, int W) {
    const int c_in = static_cast<int>(x->value.rows());
    check(x->value.cols() == static_cast<long>(H) * W, "conv2d: pixel count mismatch");
    check(w->value.cols() == static_cast<long>(c_in) * 9, "conv2d: weight shape");
    check(b->value.cols() == 1 && b->value.rows() == w->value.rows(),
          "conv2d: bias shape");
    Conv2dGeom g{H, W, (H + 1) / 2, (W + 1) / 2, c_in};

    Mat col = im2col_k3s2(x->value, g);
    Mat y = w->value * col;
    y.colwise() += b->value.col(0);

    auto n = make_node(std::move(y), {x, w, b});
    if (n->requires_grad) {
        Node *self = n.get(), *px = x.get(), *pw = w.get(), *pb = b.get();
        n->backward_fn = [self, px, pw, pb, g, col = std::move(col)] {
            if (pw->requires_grad)
                pw->accumulate(self->grad * col.transpose());
            if (pb->requires_grad) pb->accumulate(self->grad.rowwise().sum());
            if (px->requires_grad) {
                Mat dcol = pw->value.transpose() * self->grad;
                col2im_k3s2_add(dcol, g, grad_ref(px));
            }
        };
    }
    return n;
}

Var chw_to_time_major(Var x, int H, int W) {
    const int C = static_cast<int>(x->value.rows());
    check(x->value.cols() == static_cast<long>(H) * W,
          "chw_to_time_major: pixel count mismatch");
    Mat y(H, static_cast<long>(C) * W);
    for (int c = 0; c < C; ++c)
        for (int h = 0; h < H; ++h)
            for (int w0 = 0; w0 < W; ++w0)
                y(h, static_cast<long>(c) * W + w0) = x->value(c, static_cast<long>(h) * W + w0);
    auto n = make_node(std::move(y), {x});
    if (n->requires_grad) {
        Node *self = n.get(), *px = x.get();
        n->backward_fn = [self, px, C, H, W] {
            Mat& g = grad_ref(px);
            for (int c = 0; c < C; ++c)
                for (int h = 0; h < H; ++h)
                    for (int w0 = 0; w0 < W; ++w0)
                        g(c, static_cast<long>(h) * W + w0) +=
                            self->grad(h, static_cast<long>(c) * W + w0);
        };
    }
    return n;
}

Var depthwise_conv1d(Var x, Var w, Var b) {
    const long N = x->value.rows();
    const long C = x->value.cols();
    const int K = static_cast<int>(w->value.rows());
    check(w->value.cols() == C, "depthwise_conv1d: weight channels mismatch");
    check(b->value.rows() == 1 && b->value.cols() == C, "depthwise_conv1d: bias shape");
    check(K % 2 == 1, "depthwise_conv1d: kernel must be odd");
    const int P = (K - 1) / 2;

    Mat y = Mat::Zero(N, C);
    for (int k = 0; k < K; ++k) {
        const long shift = k - P;
        const long t0 = std::max<long>(0, -shift);
        const long t1 = std::min<long>(N, N - shift);
        if (t0 >= t1) continue;
        y.middleRows(t0, t1 - t0).array() +=
            x->value.middleRows(t0 + shift, t1 - t0).array().rowwise() *
            w->value.row(k).array();
    }
    y.rowwise() += b->value.row(0);

    auto n = make_node(std::move(y), {x, w, b});
    if (n->requires_grad) {
        Node *self = n.get(), *px = x.get(), *pw = w.get(), *pb = b.get();
        n->backward_fn = [self, px, pw, pb, K, P] {
            const long N = px->value.rows();
            if (pb->requires_grad) pb->accumulate(self->grad.colwise().sum());
            for (int k = 0; k < K; ++k) {
                const long shift = k - P;
                const long t0 = std::max<long>(0, -shift);
                const long t1 = std::min<long>(N, N - shift);
                if (t0 >= t1) continue;
                if (pw->requires_grad)
                    grad_ref(pw).row(k) +=
                        (self->grad.middleRows(t0, t1 - t0).array() *
                         px->value.middleRows(t0 + shift, t1 - t0).array())
                            .colwise()
                            .sum()
                            .matrix();
                if (px->requires_grad)
                    grad_ref(px).middleRows(t0 + shift, t1 - t0).array() +=
                        self->grad.middleRows(t0, t1 - t0).array().rowwise() *
                        pw->value.row(k).array();
            }
        };
    }
    return n;
}

Var rel_shift(Var s_pos) {
    const long N = s_pos->value.rows();
    check(s_pos->value.cols() == 2 * N - 1, "rel_shift: expected N x (2N-1)");
    Mat y(N, N);
    for (long t = 0; t < N; ++t)
        for (long s = 0; s < N; ++s) y(t, s) = s_pos->value(t, N - 1 - t + s);
    auto n = make_node(std::move(y), {s_pos});
    if (n->requires_grad) {
        Node *self = n.get(), *pp = s_pos.get();
        n->backward_fn = [self, pp, N] {
            Mat& g = grad_ref(pp);
            for (long t = 0; t < N; ++t)
                for (long s = 0; s < N; ++s)
                    g(t, N - 1 - t + s) += self->grad(t, s);
        };
    }
    return n;
}

}  // namespace sid::ad
