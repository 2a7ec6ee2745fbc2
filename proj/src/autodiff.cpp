#include "sid/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

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

Var constant(Mat v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    return n;
}

Var parameter(Mat v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    return n;
}

void backward(const Var& root) {
    check(root->value.rows() == 1 && root->value.cols() == 1,
          "backward: root must be scalar");

    // Iterative post-order DFS over parents.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    struct Frame {
        Node* n;
        size_t next = 0;
    };
    std::vector<Frame> stack{{root.get()}};
    visited.insert(root.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            Node* p = f.n->parents[f.next++].get();
            if (visited.insert(p).second) stack.push_back({p});
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    root->accumulate(Mat::Ones(1, 1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->requires_grad && n->backward_fn && n->grad.size() != 0)
            n->backward_fn();
    }
}

// ─── arithmetic / elementwise ────────────────────────────────────────────────

Var add(Var a, Var b) {
    check(a->value.rows() == b->value.rows() && a->value.cols() == b->value.cols(),
          "add: shape mismatch");
    auto n = make_node(a->value + b->value, {a, b});
    if (n->requires_grad) {
        Node *self = n.get(), *pa = a.get(), *pb = b.get();
        n->backward_fn = [self, pa, pb] {
            if (pa->requires_grad) pa->accumulate(self->grad);
            if (pb->requires_grad) pb->accumulate(self->grad);
        };
    }
    return n;
}

Var sub(Var a, Var b) {
    check(a->value.rows() == b->value.rows() && a->value.cols() == b->value.cols(),
          "sub: shape mismatch");
    auto n = make_node(a->value - b->value, {a, b});
    if (n->requires_grad) {
        Node *self = n.get(), *pa = a.get(), *pb = b.get();
        n->backward_fn = [self, pa, pb] {
            if (pa->requires_grad) pa->accumulate(self->grad);
            if (pb->requires_grad) pb->accumulate(-self->grad);
        };
    }
    return n;
}

Var scale(Var a, double c) {
    auto n = make_node(a->value * c, {a});
    if (n->requires_grad) {
        Node *self = n.get(), *pa = a.get();
        n->backward_fn = [self, pa, c] { pa->accumulate(self->grad * c); };
    }
    return n;
}

Var hadamard(Var a, Var b) {
    check(a->value.rows() == b->value.rows() && a->value.cols() == b->value.cols(),
          "hadamard: shape mismatch");
    auto n = make_node((a->value.array() * b->value.array()).matrix(), {a, b});
    if (n->requires_grad) {
        Node *self = n.get(), *pa = a.get(), *pb = b.get();
        n->backward_fn = [self, pa, pb] {
            if (pa->requires_grad)
                pa->accumulate((self->grad.array() * pb->value.array()).matrix());
            if (pb->requires_grad)
                pb->accumulate((self->grad.array() * pa->value.array()).matrix());
        };
    }
    return n;
}

Var add_row_broadcast(Var x, Var r) {
    check(r->value.rows() == 1 && r->value.cols() == x->value.cols(),
          "add_row_broadcast: row must be 1xC");
    Mat y = x->value;
    y.rowwise() += r->value.row(0);
    auto n = make_node(std::move(y), {x, r});
    if (n->requires_grad) {
        Node *self = n.get(), *px = x.get(), *pr = r.get();
        n->backward_fn = [self, px, pr] {
            if (px->requires_grad) px->accumulate(self->grad);
            if (pr->requires_grad) pr->accumulate(self->grad.colwise().sum());
        };
    }
    return n;
}

Var add_col_broadcast(Var x, Var c) {
    check(c->value.cols() == 1 && c->value.rows() == x->value.rows(),
          "add_col_broadcast: col must be Nx1");
    Mat y = x->value;
    y.colwise() += c->value.col(0);
    auto n = make_node(std::move(y), {x, c});
    if (n->requires_grad) {
        Node *self = n.get(), *px = x.get(), *pc = c.get();
        n->backward_fn = [self, px, pc] {
            if (px->requires_grad) px->accumulate(self->grad);
            if (pc->requires_grad) pc->accumulate(self->grad.rowwise().sum());
        };
    }
    return n;
}

Var mul_col_broadcast(Var x, Var c) {
    check(c->value.cols() == 1 && c->value.rows() == x->value.rows(),
          "mul_col_broadcast: col must be Nx1");
    Mat y = (x->value.array().colwise() * c->value.col(0).array()).matrix();
    auto n = make_node(std::move(y), {x, c});
    if (n->requires_grad) {
        Node *self = n.get(), *px = x.get(), *pc = c.get();
        n->backward_fn = [self, px, pc] {
            if (px->requires_grad)
                px->accumulate(
                    (self->grad.array().colwise() * pc->value.col(0).array()).matrix());
            if (pc->requires_grad)
                pc->accumulate(
                    (self->grad.array() * px->value.array()).rowwise().sum().matrix());
        };
    }
    return n;
}

Var relu(Var x) {
    auto n = make_node(x->value.cwiseMax(0.0), {x});
    if (n->requires_grad) {
        Node *self = n.get(), *px = x.get();
        n->backward_fn = [self, px] {
            px->accumulate(
                (self->grad.array() * (px->value.array() > 0.0).cast<double>()).matrix());
        };
    }
    return n;
}

Var sigmoid(Var x) {
    Mat s = (1.0 / (1.0 + (-x->value.array()).exp())).matrix();
    auto n = make_node(std::move(s), {x});
    if (n->requires_grad) {
        Node *self = n.get(), *px = x.get();
        n->backward_fn = [self, px] {
            const auto& sv = self->value.array();
            px->accumulate((self->grad.array() * sv * (1.0 - sv)).matrix());
        };
    }
    return n;
}

Var swish(Var x) {
    Eigen::ArrayXXd s = 1.0 / (1.0 + (-x->value.array()).exp());
    auto n = make_node((x->value.array() * s).matrix(), {x});
    if (n->requires_grad) {
        Node *self = n.get(), *px = x.get();
        Eigen::ArrayXXd sig = std::move(s);
        n->backward_fn = [self, px, sig] {
            px->accumulate(
                (self->grad.array() * sig * (1.0 + px->value.array() * (1.0 - sig)))
                    .matrix());
        };
    }
    return n;
}

Var glu_cols(Var x) {
    const int c2 = static_cast<int>(x->value.cols());
    check(c2 % 2 == 0, "glu_cols: column count must be even");
    const int c = c2 / 2;
    Eigen::ArrayXXd a = x->value.leftCols(c).array();
    Eigen::ArrayXXd s = 1.0 / (1.0 + (-x->value.rightCols(c).array()).exp());
    auto n = make_node((a * s).matrix(), {x});
    if (n->requires_grad) {
        Node *self = n.get(), *px = x.get();
        Eigen::ArrayXXd sig = std::move(s);
        n->backward_fn = [self, px, sig, c] {
            Mat& g = grad_ref(px);
            g.leftCols(c) += (self->grad.array() * sig).matrix();
            g.rightCols(c) += (self->grad.array() * px->value.leftCols(c).array() *
                               sig * (1.0 - sig))
                                  .matrix();
        };
    }
    return n;
}

Var clamp(Var x, double lo, double hi) {
    auto n = make_node(x->value.cwiseMax(lo).cwiseMin(hi), {x});
    if (n->requires_grad) {
        Node *self = n.get(), *px = x.get();
        n->backward_fn = [self, px, lo, hi] {
            Eigen::ArrayXXd inside = ((px->value.array() > lo) &&
                                      (px->value.array() < hi))
                                         .cast<double>();
            px->accumulate((self->grad.array() * inside).matrix());
        };
    }
    return n;
}

Var softmax_rows(Var x) {
    Mat p = x->value;
    for (int r = 0; r < p.rows(); ++r) {
        double mx = p.row(r).maxCoeff();
        p.row(r) = (p.row(r).array() - mx).exp();
        p.row(r) /= p.row(r).sum();
    }
    auto n = make_node(std::move(p), {x});
    if (n->requires_grad) {
        Node *self = n.get(), *px = x.get();
        n->backward_fn = [self, px] {
            Mat dx(self->value.rows(), self->value.cols());
            for (int r = 0; r < dx.rows(); ++r) {
                double dot = self->grad.row(r).dot(self->value.row(r));
                dx.row(r) = (self->value.row(r).array() *
                             (self->grad.row(r).array() - dot))
                                .matrix();
            }
            px->accumulate(dx);
        };
    }
    return n;
}

Var dropout(Var x, double p, Rng& rng) {
    check(p >= 0.0 && p < 1.0, "dropout: p must be in [0,1)");
    if (p == 0.0) return x;
    Mat mask(x->value.rows(), x->value.cols());
    const double keep = 1.0 - p;
    for (int j = 0; j < mask.cols(); ++j)
        for (int i = 0; i < mask.rows(); ++i)
            mask(i, j) = rng.uniform() < keep ? 1.0 / keep : 0.0;
    auto n = make_node((x->value.array() * mask.array()).matrix(), {x});
    if (n->requires_grad) {
        Node *self = n.get(), *px = x.get();
        n->backward_fn = [self, px, mask = std::move(mask)] {
            px->accumulate((self->grad.array() * mask.array()).matrix());
        };
    }
    return n;
}

// ─── linear algebra / shape ──────────────────────────────────────────────────

Var matmul(Var a, Var b) {
    check(a->value.cols() == b->value.rows(), "matmul: inner dims mismatch");
    auto n = make_node(a->value * b->value, {a, b});
    if (n->requires_grad) {
        Node *self = n.get(), *pa = a.get(), *pb = b.get();
        n->backward_fn = [self, pa, pb] {
            if (pa->requires_grad) pa->accumulate(self->grad * pb->value.transpose());
            if (pb->requires_grad) pb->accumulate(pa->value.transpose() * self->grad);
        };
    }
    return n;
}

Var transpose(Var a) {
    auto n = make_node(a->value.transpose(), {a});
    if (n->requires_grad) {
        Node *self = n.get(), *pa = a.get();
        n->backward_fn = [self, pa] { pa->accumulate(self->grad.transpose()); };
    }
    return n;
}

Var reshape_rowmajor(Var x, long rows, long cols) {
    check(rows * cols == x->value.size(), "reshape_rowmajor: size mismatch");
    using RowMajor =
        Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    RowMajor rm = x->value;  // copies with row-major layout
    Mat y = Eigen::Map<RowMajor>(rm.data(), rows, cols);
    auto n = make_node(std::move(y), {x});
    if (n->requires_grad) {
        Node *self = n.get(), *px = x.get();
        n->backward_fn = [self, px] {
            RowMajor gm = self->grad;
            px->accumulate(
                Eigen::Map<RowMajor>(gm.data(), px->value.rows(), px->value.cols()));
        };
    }
    return n;
}

Var slice_cols(Var x, int c0, int nc) {
    check(c0 >= 0 && nc > 0 && c0 + nc <= x->value.cols(), "slice_cols: out of range");
    auto n = make_node(x->value.middleCols(c0, nc), {x});
    if (n->requires_grad) {
        Node *self = n.get(), *px = x.get();
        n->backward_fn = [self, px, c0, nc] {
            grad_ref(px).middleCols(c0, nc) += self->grad;
        };
    }
    return n;
}

Var slice_rows(Var x, int r0, int nr) {
    check(r0 >= 0 && nr > 0 && r0 + nr <= x->value.rows(), "slice_rows: out of range");
    auto n = make_node(x->value.middleRows(r0, nr), {x});
    if (n->requires_grad) {
        Node *self = n.get(), *px = x.get();
        n->backward_fn = [self, px, r0, nr] {
            grad_ref(px).middleRows(r0, nr) += self->grad;
        };
    }
    return n;
}

Var concat_cols(const std::vector<Var>& xs) {
    check(!xs.empty(), "concat_cols: empty input");
    long rows = xs[0]->value.rows();
    long cols = 0;
    for (const auto& v : xs) {
        check(v->value.rows() == rows, "concat_cols: row mismatch");
        cols += v->value.cols();
    }
    Mat y(rows, cols);
    long off = 0;
    for (const auto& v : xs) {
        y.middleCols(off, v->value.cols()) = v->value;
        off += v->value.cols();
    }
    auto n = make_node(std::move(y), {xs.begin(), xs.end()});
    if (n->requires_grad) {
        Node* self = n.get();
        n->backward_fn = [self] {
            long off = 0;
            for (const auto& p : self->parents) {
                long w = p->value.cols();
                if (p->requires_grad)
                    grad_ref(p.get()).noalias() += self->grad.middleCols(off, w);
                off += w;
            }
        };
    }
    return n;
}

Var row(Var x, int r) {
    check(r >= 0 && r < x->value.rows(), "row: out of range");
    auto n = make_node(x->value.row(r), {x});
    if (n->requires_grad) {
        Node *self = n.get(), *px = x.get();
        n->backward_fn = [self, px, r] { grad_ref(px).row(r) += self->grad.row(0); };
    }
    return n;
}

Var sum_rows(Var x) {
    auto n = make_node(x->value.colwise().sum(), {x});
    if (n->requires_grad) {
        Node *self = n.get(), *px = x.get();
        n->backward_fn = [self, px] {
            px->accumulate(self->grad.row(0).replicate(px->value.rows(), 1));
        };
    }
    return n;
}

Var colwise_mean(Var x) {
    const double inv_n = 1.0 / static_cast<double>(x->value.rows());
    auto n = make_node(x->value.colwise().mean(), {x});
    if (n->requires_grad) {
        Node *self = n.get(), *px = x.get();
        n->backward_fn = [self, px, inv_n] {
            px->accumulate((self->grad.row(0) * inv_n).replicate(px->value.rows(), 1));
        };
    }
    return n;
}

Var colwise_std(Var x, double eps) {
    const long rows = x->value.rows();
    check(rows >= 2, "colwise_std: need at least 2 rows");
    Eigen::RowVectorXd mean = x->value.colwise().mean();
    Mat centered = x->value.rowwise() - mean;
    Eigen::RowVectorXd var = centered.array().square().colwise().sum() / rows;
    Eigen::RowVectorXd sd = (var.array() + eps).sqrt();
    auto n = make_node(sd, {x});
    if (n->requires_grad) {
        Node *self = n.get(), *px = x.get();
        n->backward_fn = [self, px, centered = std::move(centered)] {
            const long rows = centered.rows();
            Mat dx = centered;
            for (int c = 0; c < dx.cols(); ++c)
                dx.col(c) *= self->grad(0, c) / (rows * self->value(0, c));
            px->accumulate(dx);
        };
    }
    return n;
}

Var colwise_max(Var x) {
    const long cols = x->value.cols();
    Eigen::RowVectorXd mx(cols);
    std::vector<int> arg(cols);
    for (int c = 0; c < cols; ++c) {
        int best = 0;
        for (int r = 1; r < x->value.rows(); ++r)
            if (x->value(r, c) > x->value(best, c)) best = r;
        arg[c] = best;
        mx[c] = x->value(best, c);
    }
    auto n = make_node(mx, {x});
    if (n->requires_grad) {
        Node *self = n.get(), *px = x.get();
        n->backward_fn = [self, px, arg = std::move(arg)] {
            Mat& g = grad_ref(px);
            for (size_t c = 0; c < arg.size(); ++c)
                g(arg[c], static_cast<int>(c)) += self->grad(0, static_cast<int>(c));
        };
    }
    return n;
}

Var sum_all(Var x) {
    Mat y(1, 1);
    y(0, 0) = x->value.sum();
    auto n = make_node(std::move(y), {x});
    if (n->requires_grad) {
        Node *self = n.get(), *px = x.get();
        n->backward_fn = [self, px] {
            px->accumulate(Mat::Constant(px->value.rows(), px->value.cols(),
                                         self->grad(0, 0)));
        };
    }
    return n;
}

// ─── losses / geometry ───────────────────────────────────────────────────────

Var l2_normalize_rows(Var x, double eps) {
    Mat y = x->value;
    Eigen::VectorXd norms(y.rows());
    for (int r = 0; r < y.rows(); ++r) {
        double nrm = y.row(r).norm();
        if (nrm <= eps)
            throw std::invalid_argument("l2_normalize_rows: zero-norm row");
        norms[r] = nrm;
        y.row(r) /= nrm;
    }
    auto n = make_node(std::move(y), {x});
    if (n->requires_grad) {
        Node *self = n.get(), *px = x.get();
        n->backward_fn = [self, px, norms = std::move(norms)] {
            Mat dx(self->value.rows(), self->value.cols());
            for (int r = 0; r < dx.rows(); ++r) {
                double dot = self->grad.row(r).dot(self->value.row(r));
                dx.row(r) =
                    (self->grad.row(r) - self->value.row(r) * dot) / norms[r];
            }
            px->accumulate(dx);
        };
    }
    return n;
}

Var cross_entropy_rows(Var logits, const std::vector<int>& labels,
                       const std::vector<int>& positions, double* accuracy_out) {
    const long rows = logits->value.rows();
    const long cols = logits->value.cols();
    check(static_cast<long>(labels.size()) == rows,
          "cross_entropy_rows: labels size mismatch");
    check(!positions.empty(), "cross_entropy_rows: no contributing positions");
    for (int i : positions) {
        check(i >= 0 && i < rows, "cross_entropy_rows: position out of range");
        check(labels[i] >= 0 && labels[i] < cols,
              "cross_entropy_rows: label out of range");
    }

    // Stable log-softmax on contributing rows only.
    Mat probs(positions.size(), cols);
    double loss = 0.0;
    int correct = 0;
    for (size_t k = 0; k < positions.size(); ++k) {
        const int i = positions[k];
        Eigen::RowVectorXd z = logits->value.row(i);
        int arg = 0;
        double mx = z[0];
        for (int c = 1; c < cols; ++c)
            if (z[c] > mx) {
                mx = z[c];
                arg = c;
            }
        Eigen::RowVectorXd e = (z.array() - mx).exp();
        double sum = e.sum();
        loss += std::log(sum) + mx - z[labels[i]];
        probs.row(static_cast<long>(k)) = e / sum;
        if (arg == labels[i]) ++correct;
    }
    loss /= static_cast<double>(positions.size());
    if (accuracy_out)
        *accuracy_out = static_cast<double>(correct) / positions.size();

    Mat y(1, 1);
    y(0, 0) = loss;
    auto n = make_node(std::move(y), {logits});
    if (n->requires_grad) {
        Node *self = n.get(), *pl = logits.get();
        n->backward_fn = [self, pl, probs = std::move(probs), labels, positions] {
            const double w = self->grad(0, 0) / positions.size();
            Mat& g = grad_ref(pl);
            for (size_t k = 0; k < positions.size(); ++k) {
                const int i = positions[k];
                g.row(i) += probs.row(static_cast<long>(k)) * w;
                g(i, labels[i]) -= w;
            }
        };
    }
    return n;
}

}  // namespace sid::ad
