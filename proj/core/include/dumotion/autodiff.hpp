#pragma once

#include <cmath>
#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dumotion/common.hpp"

namespace dumotion {

// Reverse-mode tape over dense row-major matrices. One tape per forward pass;
// nodes are appended in evaluation order and backward() replays the recorded
// closures in reverse, which is valid because every op only reads nodes that
// already exist when it is created. Leaves bound with leaf() reference the
// caller's storage (no copy); their gradients stay on the tape and are read
// back with grad().
//
// Templated on the scalar so the same model code runs in float for training
// and in double for finite-difference checks.
template <typename S>
struct Var {
    int i = -1;
    bool valid() const { return i >= 0; }
};

template <typename S>
class Tape {
  public:
    explicit Tape(bool track_grad = true) : track_(track_grad) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    using V = Var<S>;

    V constant(Mat<S> value) { return push(std::move(value), nullptr); }

    // Binding the same tensor twice returns the original node, so its
    // gradient accumulates in one place regardless of how many subgraphs
    // touch it.
    V leaf(const Mat<S>* p) {
        require(p != nullptr, "leaf: null param");
        if (auto it = leaves_.find(p); it != leaves_.end()) return V{it->second};
        nodes_.push_back(Node{});
        Node& n = nodes_.back();
        n.ext = p;
        if (track_) n.grad = Mat<S>::Zero(p->rows(), p->cols());
        const int id = static_cast<int>(nodes_.size()) - 1;
        leaves_.emplace(p, id);
        return V{id};
    }

    // invalid Var if the param was never bound on this tape
    V find_leaf(const Mat<S>* p) const {
        auto it = leaves_.find(p);
        return it == leaves_.end() ? V{} : V{it->second};
    }

    const Mat<S>& val(V v) const {
        const Node& n = nodes_[check(v)];
        return n.ext ? *n.ext : n.owned;
    }

    const Mat<S>& grad(V v) const {
        require(track_, "grad: tape built with track_grad=false");
        return nodes_[check(v)].grad;
    }

    // ---- ops ----

    V matmul(V a, V b) {
        const Mat<S>&A = val(a), &B = val(b);
        require(A.cols() == B.rows(), "matmul: inner dims");
        return push(A * B, [this, a, b](const Mat<S>& go, int) {
            g(a) += go * val(b).transpose();
            g(b) += val(a).transpose() * go;
        });
    }

    V add(V a, V b) {
        require_shape(val(a), val(b).rows(), val(b).cols(), "add");
        return push(val(a) + val(b), [this, a, b](const Mat<S>& go, int) {
            g(a) += go;
            g(b) += go;
        });
    }

    V sub(V a, V b) {
        require_shape(val(a), val(b).rows(), val(b).cols(), "sub");
        return push(val(a) - val(b), [this, a, b](const Mat<S>& go, int) {
            g(a) += go;
            g(b) -= go;
        });
    }

    // r broadcasts over rows (bias add); r is 1 x cols
    V add_rowvec(V a, V r) {
        const Mat<S>&A = val(a), &R = val(r);
        require(R.rows() == 1 && R.cols() == A.cols(), "add_rowvec: want 1 x cols");
        Mat<S> out = A;
        out.rowwise() += R.row(0);
        return push(std::move(out), [this, a, r](const Mat<S>& go, int) {
            g(a) += go;
            g(r).row(0) += go.colwise().sum();
        });
    }

    V hadamard(V a, V b) {
        require_shape(val(a), val(b).rows(), val(b).cols(), "hadamard");
        return push(val(a).cwiseProduct(val(b)), [this, a, b](const Mat<S>& go, int) {
            g(a) += go.cwiseProduct(val(b));
            g(b) += go.cwiseProduct(val(a));
        });
    }

    // scales row i of a by c(i,0); c is rows x 1
    V rowwise_scale(V a, V c) {
        const Mat<S>&A = val(a), &C = val(c);
        require(C.cols() == 1 && C.rows() == A.rows(), "rowwise_scale: want rows x 1");
        Mat<S> out = (A.array().colwise() * C.col(0).array()).matrix();
        return push(std::move(out), [this, a, c](const Mat<S>& go, int) {
            g(a) += (go.array().colwise() * val(c).col(0).array()).matrix();
            g(c).col(0) += go.cwiseProduct(val(a)).rowwise().sum();
        });
    }

    V scale(V a, S alpha) {
        return push(val(a) * alpha, [this, a, alpha](const Mat<S>& go, int) {
            g(a) += go * alpha;
        });
    }

    // multiply by a differentiable 1x1 scalar
    V scale_by(V a, V s) {
        const Mat<S>& sv = val(s);
        require(sv.rows() == 1 && sv.cols() == 1, "scale_by: scalar must be 1x1");
        return push(val(a) * sv(0, 0), [this, a, s](const Mat<S>& go, int) {
            g(a) += go * val(s)(0, 0);
            g(s)(0, 0) += go.cwiseProduct(val(a)).sum();
        });
    }

    V softmax_rows(V a) {
        const Mat<S>& A = val(a);
        Mat<S> out(A.rows(), A.cols());
        for (Index i = 0; i < A.rows(); ++i) {
            const S mx = A.row(i).maxCoeff();
            out.row(i) = (A.row(i).array() - mx).exp().matrix();
            out.row(i) /= out.row(i).sum();
        }
        return push(std::move(out), [this, a](const Mat<S>& go, int self) {
            const Mat<S>& y = nodes_[self].owned;
            Mat<S> gy = go.cwiseProduct(y);
            const Mat<S> rs = gy.rowwise().sum();
            g(a) += gy - (y.array().colwise() * rs.col(0).array()).matrix();
        });
    }

    // per-row normalization over columns with affine; gamma/beta are 1 x cols
    V layer_norm(V a, V gamma, V beta, S eps = S(1e-5)) {
        const Mat<S>& A = val(a);
        require(val(gamma).rows() == 1 && val(gamma).cols() == A.cols(), "layer_norm: gamma");
        require(val(beta).rows() == 1 && val(beta).cols() == A.cols(), "layer_norm: beta");
        const S D = static_cast<S>(A.cols());
        Mat<S> xhat(A.rows(), A.cols());
        Mat<S> inv_s(A.rows(), 1);
        for (Index i = 0; i < A.rows(); ++i) {
            const S mu = A.row(i).mean();
            const S var = (A.row(i).array() - mu).square().sum() / D;
            const S is = S(1) / std::sqrt(var + eps);
            inv_s(i, 0) = is;
            xhat.row(i) = ((A.row(i).array() - mu) * is).matrix();
        }
        Mat<S> out = xhat;
        out.array().rowwise() *= val(gamma).row(0).array();
        out.rowwise() += val(beta).row(0);
        return push(std::move(out),
                    [this, a, gamma, beta, xhat, inv_s](const Mat<S>& go, int) {
            g(beta).row(0) += go.colwise().sum();
            g(gamma).row(0) += go.cwiseProduct(xhat).colwise().sum();
            Mat<S> gx = go;
            gx.array().rowwise() *= val(gamma).row(0).array();
            for (Index i = 0; i < gx.rows(); ++i) {
                const S m1 = gx.row(i).mean();
                const S m2 = gx.row(i).cwiseProduct(xhat.row(i)).mean();
                g(a).row(i) +=
                    inv_s(i, 0) * (gx.row(i).array() - m1 - xhat.row(i).array() * m2).matrix();
            }
        });
    }

    V relu(V a) {
        return push(val(a).cwiseMax(S(0)), [this, a](const Mat<S>& go, int) {
            g(a) += (val(a).array() > S(0)).template cast<S>().matrix().cwiseProduct(go);
        });
    }

    V silu(V a) {
        const Mat<S>& A = val(a);
        Mat<S> sig = (S(1) / (S(1) + (-A.array()).exp())).matrix();
        Mat<S> out = A.cwiseProduct(sig);
        return push(std::move(out), [this, a, sig](const Mat<S>& go, int) {
            // d/dx x*sig(x) = sig(x) * (1 + x*(1-sig(x)))
            const auto x = val(a).array();
            const auto s = sig.array();
            g(a) += (go.array() * (s * (S(1) + x * (S(1) - s)))).matrix();
        });
    }

    V gelu(V a) {
        const Mat<S>& A = val(a);
        const S inv_sqrt2 = S(1) / std::sqrt(S(2));
        Mat<S> out = A.unaryExpr([inv_sqrt2](S x) {
            return S(0.5) * x * (S(1) + std::erf(x * inv_sqrt2));
        });
        return push(std::move(out), [this, a, inv_sqrt2](const Mat<S>& go, int) {
            const S inv_sqrt2pi = S(0.3989422804014326779);
            Mat<S> d = val(a).unaryExpr([inv_sqrt2, inv_sqrt2pi](S x) {
                const S phi = inv_sqrt2pi * std::exp(S(-0.5) * x * x);
                return S(0.5) * (S(1) + std::erf(x * inv_sqrt2)) + x * phi;
            });
            g(a) += go.cwiseProduct(d);
        });
    }

    V tanh_(V a) {
        Mat<S> out = val(a).array().tanh().matrix();
        return push(std::move(out), [this, a](const Mat<S>& go, int self) {
            const Mat<S>& y = nodes_[self].owned;
            g(a) += (go.array() * (S(1) - y.array().square())).matrix();
        });
    }

    V transpose(V a) {
        return push(val(a).transpose(), [this, a](const Mat<S>& go, int) {
            g(a) += go.transpose();
        });
    }

    V slice_rows(V a, Index i0, Index n) {
        const Mat<S>& A = val(a);
        require(i0 >= 0 && n >= 0 && i0 + n <= A.rows(), "slice_rows: out of range");
        return push(A.middleRows(i0, n), [this, a, i0, n](const Mat<S>& go, int) {
            g(a).middleRows(i0, n) += go;
        });
    }

    V slice_cols(V a, Index j0, Index n) {
        const Mat<S>& A = val(a);
        require(j0 >= 0 && n >= 0 && j0 + n <= A.cols(), "slice_cols: out of range");
        return push(A.middleCols(j0, n), [this, a, j0, n](const Mat<S>& go, int) {
            g(a).middleCols(j0, n) += go;
        });
    }

    V hconcat(V a, V b) {
        const Mat<S>&A = val(a), &B = val(b);
        require(A.rows() == B.rows(), "hconcat: row mismatch");
        Mat<S> out(A.rows(), A.cols() + B.cols());
        out << A, B;
        const Index ca = A.cols();
        return push(std::move(out), [this, a, b, ca](const Mat<S>& go, int) {
            g(a) += go.leftCols(ca);
            g(b) += go.rightCols(go.cols() - ca);
        });
    }

    V vconcat(V a, V b) {
        const Mat<S>&A = val(a), &B = val(b);
        require(A.cols() == B.cols(), "vconcat: col mismatch");
        Mat<S> out(A.rows() + B.rows(), A.cols());
        out << A, B;
        const Index ra = A.rows();
        return push(std::move(out), [this, a, b, ra](const Mat<S>& go, int) {
            g(a) += go.topRows(ra);
            g(b) += go.bottomRows(go.rows() - ra);
        });
    }

    V sum_all(V a) {
        Mat<S> out(1, 1);
        out(0, 0) = val(a).sum();
        return push(std::move(out), [this, a](const Mat<S>& go, int) {
            g(a).array() += go(0, 0);
        });
    }

    V mean_all(V a) {
        const Mat<S>& A = val(a);
        Mat<S> out(1, 1);
        out(0, 0) = A.mean();
        const S inv = S(1) / static_cast<S>(A.size());
        return push(std::move(out), [this, a, inv](const Mat<S>& go, int) {
            g(a).array() += go(0, 0) * inv;
        });
    }

    V mean_rows(V a) {  // column means: out is 1 x cols
        const Mat<S>& A = val(a);
        Mat<S> out = A.colwise().mean();
        const S inv = S(1) / static_cast<S>(A.rows());
        return push(std::move(out), [this, a, inv](const Mat<S>& go, int) {
            g(a).array().rowwise() += go.row(0).array() * inv;
        });
    }

    V square(V a) {
        return push(val(a).array().square().matrix(), [this, a](const Mat<S>& go, int) {
            g(a) += S(2) * go.cwiseProduct(val(a));
        });
    }

    // y_i = x_i / sqrt(|x_i|^2 + eps), per row
    V l2_normalize_rows(V a, S eps = S(1e-12)) {
        const Mat<S>& A = val(a);
        Mat<S> inv_n(A.rows(), 1);
        Mat<S> out(A.rows(), A.cols());
        for (Index i = 0; i < A.rows(); ++i) {
            inv_n(i, 0) = S(1) / std::sqrt(A.row(i).squaredNorm() + eps);
            out.row(i) = A.row(i) * inv_n(i, 0);
        }
        return push(std::move(out), [this, a, inv_n](const Mat<S>& go, int self) {
            const Mat<S>& y = nodes_[self].owned;
            for (Index i = 0; i < y.rows(); ++i) {
                const S dot = go.row(i).dot(y.row(i));
                g(a).row(i) += inv_n(i, 0) * (go.row(i) - dot * y.row(i));
            }
        });
    }

    // ---- backward ----

    void backward(V root) {
        require(track_, "backward: tape built with track_grad=false");
        const Mat<S>& r = val(root);
        require(r.rows() == 1 && r.cols() == 1, "backward: root must be 1x1");
        nodes_[check(root)].grad(0, 0) = S(1);
        for (int i = root.i; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.back && n.grad.size() > 0) n.back(n.grad, i);
        }
    }

    size_t size() const { return nodes_.size(); }

  private:
    // backward closure receives (grad of this node, own index)
    using BackFn = std::function<void(const Mat<S>&, int)>;

    struct Node {
        Mat<S> owned;
        const Mat<S>* ext = nullptr;
        Mat<S> grad;
        BackFn back;
    };

    V push(Mat<S> value, BackFn back) {
        nodes_.push_back(Node{});
        Node& n = nodes_.back();
        n.owned = std::move(value);
        if (track_) {
            n.grad = Mat<S>::Zero(n.owned.rows(), n.owned.cols());
            n.back = std::move(back);
        }
        return V{static_cast<int>(nodes_.size()) - 1};
    }

    int check(V v) const {
        require(v.i >= 0 && v.i < static_cast<int>(nodes_.size()), "bad Var handle");
        return v.i;
    }

    Mat<S>& g(V v) { return nodes_[check(v)].grad; }

    std::vector<Node> nodes_;
    std::unordered_map<const Mat<S>*, int> leaves_;
    bool track_;
};

}  // namespace dumotion
