#include "pssl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace pssl {

std::int64_t shape_size(const Shape& s) {
    std::int64_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream ss;
    ss << "{";
    for (std::size_t i = 0; i < s.size(); ++i) ss << (i ? "," : "") << s[i];
    ss << "}";
    return ss.str();
}

namespace {

void check_finite(const TensorNode& n, const char* op) {
    for (double v : n.value) {
        if (!std::isfinite(v)) {
            throw InternalError(std::string("non-finite value produced by ") + op);
        }
    }
}

std::shared_ptr<TensorNode> make_node(Shape shape, std::vector<double> value,
                                      std::vector<std::shared_ptr<TensorNode>> parents,
                                      std::function<void(TensorNode&)> backward_fn,
                                      const char* op) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    if (static_cast<std::int64_t>(n->value.size()) != shape_size(n->shape)) {
        throw InternalError(std::string(op) + ": value length does not match shape");
    }
    check_finite(*n, op);
    n->parents = std::move(parents);
    for (const auto& p : n->parents) {
        if (p->needs_grad) {
            n->needs_grad = true;
            break;
        }
    }
    if (n->needs_grad) n->backward_fn = std::move(backward_fn);
    return n;
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw InternalError(msg);
}

std::int64_t dim_rows(const TensorNode& n) {
    require(n.shape.size() == 2, "expected a matrix, got shape " + shape_str(n.shape));
    return n.shape[0];
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto n = std::make_shared<TensorNode>();
    const std::int64_t sz = shape_size(shape);
    n->shape = std::move(shape);
    n->value.assign(static_cast<std::size_t>(sz), 0.0);
    n->requires_grad = requires_grad;
    n->needs_grad = requires_grad;
    return Tensor(n);
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
    auto n = std::make_shared<TensorNode>();
    if (static_cast<std::int64_t>(values.size()) != shape_size(shape)) {
        throw InternalError("from_values: length does not match shape");
    }
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    n->needs_grad = requires_grad;
    check_finite(*n, "from_values");
    return Tensor(n);
}

Tensor Tensor::scalar(double v) { return from_values({}, {v}); }

std::int64_t Tensor::rows() const { return node_->shape.size() == 2 ? node_->shape[0] : 1; }
std::int64_t Tensor::cols() const {
    return node_->shape.empty() ? 1 : node_->shape.back();
}

const std::vector<double>& Tensor::grad() const {
    const_cast<TensorNode*>(node_.get())->ensure_grad();
    return node_->grad;
}

double Tensor::item() const {
    require(node_->size() == 1, "item() on non-scalar tensor " + shape_str(node_->shape));
    return node_->value[0];
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto& A = *a.node();
    const auto& B = *b.node();
    require(A.shape.size() == 2 && B.shape.size() == 2,
            "matmul: need matrices, got " + shape_str(A.shape) + " x " + shape_str(B.shape));
    require(A.shape[1] == B.shape[0],
            "matmul: inner dims differ, " + shape_str(A.shape) + " x " + shape_str(B.shape));
    const std::int64_t m = A.shape[0], k = A.shape[1], n = B.shape[1];
    std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
    const double* av = A.value.data();
    const double* bv = B.value.data();
    for (std::int64_t i = 0; i < m; ++i) {
        double* crow = out.data() + i * n;
        for (std::int64_t kk = 0; kk < k; ++kk) {
            const double aik = av[i * k + kk];
            const double* brow = bv + kk * n;
            for (std::int64_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
        }
    }
    auto an = a.node(), bn = b.node();
    return Tensor(make_node(
        {m, n}, std::move(out), {an, bn},
        [an, bn, m, k, n](TensorNode& node) {
            const double* g = node.grad.data();
            if (an->needs_grad) {
                an->ensure_grad();
                double* da = an->grad.data();
                const double* bvv = bn->value.data();
                for (std::int64_t i = 0; i < m; ++i) {
                    for (std::int64_t kk = 0; kk < k; ++kk) {
                        const double* brow = bvv + kk * n;
                        const double* grow = g + i * n;
                        double acc = 0.0;
                        for (std::int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        da[i * k + kk] += acc;
                    }
                }
            }
            if (bn->needs_grad) {
                bn->ensure_grad();
                double* db = bn->grad.data();
                const double* avv = an->value.data();
                for (std::int64_t i = 0; i < m; ++i) {
                    const double* grow = g + i * n;
                    for (std::int64_t kk = 0; kk < k; ++kk) {
                        const double aik = avv[i * k + kk];
                        double* drow = db + kk * n;
                        for (std::int64_t j = 0; j < n; ++j) drow[j] += aik * grow[j];
                    }
                }
            }
        },
        "matmul"));
}

Tensor transpose(const Tensor& a) {
    const auto& A = *a.node();
    require(A.shape.size() == 2, "transpose: need a matrix");
    const std::int64_t r = A.shape[0], c = A.shape[1];
    std::vector<double> out(static_cast<std::size_t>(r * c));
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) out[j * r + i] = A.value[i * c + j];
    auto an = a.node();
    return Tensor(make_node(
        {c, r}, std::move(out), {an},
        [an, r, c](TensorNode& node) {
            if (!an->needs_grad) return;
            an->ensure_grad();
            for (std::int64_t i = 0; i < r; ++i)
                for (std::int64_t j = 0; j < c; ++j) an->grad[i * c + j] += node.grad[j * r + i];
        },
        "transpose"));
}

namespace {

Tensor binary_same_shape(const Tensor& a, const Tensor& b, const char* op,
                         double (*fwd)(double, double),
                         void (*bwd)(double g, double av, double bv, double& da, double& db)) {
    const auto& A = *a.node();
    const auto& B = *b.node();
    require(A.shape == B.shape, std::string(op) + ": shape mismatch " + shape_str(A.shape) +
                                    " vs " + shape_str(B.shape));
    std::vector<double> out(A.value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(A.value[i], B.value[i]);
    auto an = a.node(), bn = b.node();
    return Tensor(make_node(
        A.shape, std::move(out), {an, bn},
        [an, bn, bwd](TensorNode& node) {
            const bool ga = an->needs_grad, gb = bn->needs_grad;
            if (ga) an->ensure_grad();
            if (gb) bn->ensure_grad();
            double dummy = 0.0;
            for (std::size_t i = 0; i < node.value.size(); ++i) {
                bwd(node.grad[i], an->value[i], bn->value[i], ga ? an->grad[i] : dummy,
                    gb ? bn->grad[i] : dummy);
            }
        },
        op));
}

Tensor unary(const Tensor& a, const char* op, double (*fwd)(double),
             double (*dfdx_from_xy)(double x, double y)) {
    const auto& A = *a.node();
    std::vector<double> out(A.value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(A.value[i]);
    auto an = a.node();
    return Tensor(make_node(
        A.shape, std::move(out), {an},
        [an, dfdx_from_xy](TensorNode& node) {
            if (!an->needs_grad) return;
            an->ensure_grad();
            for (std::size_t i = 0; i < node.value.size(); ++i) {
                an->grad[i] += node.grad[i] * dfdx_from_xy(an->value[i], node.value[i]);
            }
        },
        op));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_same_shape(
        a, b, "add", [](double x, double y) { return x + y; },
        [](double g, double, double, double& da, double& db) {
            da += g;
            db += g;
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_same_shape(
        a, b, "sub", [](double x, double y) { return x - y; },
        [](double g, double, double, double& da, double& db) {
            da += g;
            db -= g;
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_same_shape(
        a, b, "mul", [](double x, double y) { return x * y; },
        [](double g, double av, double bv, double& da, double& db) {
            da += g * bv;
            db += g * av;
        });
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
    const auto& M = *m.node();
    const auto& V = *v.node();
    require(M.shape.size() == 2 && V.shape.size() == 1 && M.shape[1] == V.shape[0],
            "add_rowvec: shapes " + shape_str(M.shape) + " + " + shape_str(V.shape));
    const std::int64_t r = M.shape[0], c = M.shape[1];
    std::vector<double> out(M.value.size());
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) out[i * c + j] = M.value[i * c + j] + V.value[j];
    auto mn = m.node(), vn = v.node();
    return Tensor(make_node(
        M.shape, std::move(out), {mn, vn},
        [mn, vn, r, c](TensorNode& node) {
            if (mn->needs_grad) {
                mn->ensure_grad();
                for (std::size_t i = 0; i < node.value.size(); ++i) mn->grad[i] += node.grad[i];
            }
            if (vn->needs_grad) {
                vn->ensure_grad();
                for (std::int64_t i = 0; i < r; ++i)
                    for (std::int64_t j = 0; j < c; ++j) vn->grad[j] += node.grad[i * c + j];
            }
        },
        "add_rowvec"));
}

Tensor mul_rowvec(const Tensor& m, const Tensor& v) {
    const auto& M = *m.node();
    const auto& V = *v.node();
    require(M.shape.size() == 2 && V.shape.size() == 1 && M.shape[1] == V.shape[0],
            "mul_rowvec: shapes " + shape_str(M.shape) + " * " + shape_str(V.shape));
    const std::int64_t r = M.shape[0], c = M.shape[1];
    std::vector<double> out(M.value.size());
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) out[i * c + j] = M.value[i * c + j] * V.value[j];
    auto mn = m.node(), vn = v.node();
    return Tensor(make_node(
        M.shape, std::move(out), {mn, vn},
        [mn, vn, r, c](TensorNode& node) {
            if (mn->needs_grad) {
                mn->ensure_grad();
                for (std::int64_t i = 0; i < r; ++i)
                    for (std::int64_t j = 0; j < c; ++j)
                        mn->grad[i * c + j] += node.grad[i * c + j] * vn->value[j];
            }
            if (vn->needs_grad) {
                vn->ensure_grad();
                for (std::int64_t i = 0; i < r; ++i)
                    for (std::int64_t j = 0; j < c; ++j)
                        vn->grad[j] += node.grad[i * c + j] * mn->value[i * c + j];
            }
        },
        "mul_rowvec"));
}

Tensor scale(const Tensor& a, double c) {
    const auto& A = *a.node();
    std::vector<double> out(A.value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A.value[i] * c;
    auto an = a.node();
    return Tensor(make_node(
        A.shape, std::move(out), {an},
        [an, c](TensorNode& node) {
            if (!an->needs_grad) return;
            an->ensure_grad();
            for (std::size_t i = 0; i < node.value.size(); ++i) an->grad[i] += node.grad[i] * c;
        },
        "scale"));
}

Tensor add_scalar(const Tensor& a, double c) {
    const auto& A = *a.node();
    std::vector<double> out(A.value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A.value[i] + c;
    auto an = a.node();
    return Tensor(make_node(
        A.shape, std::move(out), {an},
        [an](TensorNode& node) {
            if (!an->needs_grad) return;
            an->ensure_grad();
            for (std::size_t i = 0; i < node.value.size(); ++i) an->grad[i] += node.grad[i];
        },
        "add_scalar"));
}

Tensor tanh(const Tensor& a) {
    return unary(
        a, "tanh", [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
    return unary(
        a, "sigmoid",
        [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor softplus(const Tensor& a) {
    return unary(
        a, "softplus",
        [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
        [](double x, double) {
            return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        });
}

Tensor log(const Tensor& a) {
    return unary(
        a, "log", [](double x) { return std::log(x); },
        [](double x, double) { return 1.0 / x; });
}

Tensor exp(const Tensor& a) {
    return unary(
        a, "exp", [](double x) { return std::exp(x); },
        [](double, double y) { return y; });
}

Tensor softmax_rows(const Tensor& a) {
    const auto& A = *a.node();
    const std::int64_t r = dim_rows(A), c = A.shape[1];
    std::vector<double> out(A.value.size());
    for (std::int64_t i = 0; i < r; ++i) {
        const double* x = A.value.data() + i * c;
        double* y = out.data() + i * c;
        double mx = x[0];
        for (std::int64_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
        double s = 0.0;
        for (std::int64_t j = 0; j < c; ++j) {
            y[j] = std::exp(x[j] - mx);
            s += y[j];
        }
        for (std::int64_t j = 0; j < c; ++j) y[j] /= s;
    }
    auto an = a.node();
    return Tensor(make_node(
        {r, c}, std::move(out), {an},
        [an, r, c](TensorNode& node) {
            if (!an->needs_grad) return;
            an->ensure_grad();
            for (std::int64_t i = 0; i < r; ++i) {
                const double* y = node.value.data() + i * c;
                const double* g = node.grad.data() + i * c;
                double dot = 0.0;
                for (std::int64_t j = 0; j < c; ++j) dot += g[j] * y[j];
                double* da = an->grad.data() + i * c;
                for (std::int64_t j = 0; j < c; ++j) da[j] += y[j] * (g[j] - dot);
            }
        },
        "softmax_rows"));
}

Tensor layer_norm_rows(const Tensor& a, double eps) {
    const auto& A = *a.node();
    const std::int64_t r = dim_rows(A), c = A.shape[1];
    std::vector<double> out(A.value.size());
    std::vector<double> inv_std(static_cast<std::size_t>(r));
    for (std::int64_t i = 0; i < r; ++i) {
        const double* x = A.value.data() + i * c;
        double mean = 0.0;
        for (std::int64_t j = 0; j < c; ++j) mean += x[j];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::int64_t j = 0; j < c; ++j) var += (x[j] - mean) * (x[j] - mean);
        var /= static_cast<double>(c);
        const double istd = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(i)] = istd;
        for (std::int64_t j = 0; j < c; ++j) out[i * c + j] = (x[j] - mean) * istd;
    }
    auto an = a.node();
    return Tensor(make_node(
        {r, c}, std::move(out), {an},
        [an, r, c, inv_std = std::move(inv_std)](TensorNode& node) {
            if (!an->needs_grad) return;
            an->ensure_grad();
            for (std::int64_t i = 0; i < r; ++i) {
                const double* y = node.value.data() + i * c;
                const double* g = node.grad.data() + i * c;
                double gmean = 0.0, gydot = 0.0;
                for (std::int64_t j = 0; j < c; ++j) {
                    gmean += g[j];
                    gydot += g[j] * y[j];
                }
                gmean /= static_cast<double>(c);
                gydot /= static_cast<double>(c);
                const double istd = inv_std[static_cast<std::size_t>(i)];
                double* da = an->grad.data() + i * c;
                for (std::int64_t j = 0; j < c; ++j) {
                    da[j] += istd * (g[j] - gmean - y[j] * gydot);
                }
            }
        },
        "layer_norm_rows"));
}

Tensor embedding_lookup(const Tensor& table, const std::vector<std::int32_t>& ids) {
    const auto& T = *table.node();
    require(T.shape.size() == 2, "embedding_lookup: table must be a matrix");
    const std::int64_t vocab = T.shape[0], d = T.shape[1];
    const std::int64_t n = static_cast<std::int64_t>(ids.size());
    std::vector<double> out(static_cast<std::size_t>(n * d));
    for (std::int64_t i = 0; i < n; ++i) {
        const std::int32_t id = ids[static_cast<std::size_t>(i)];
        if (id < 0 || id >= vocab) {
            throw DataError("embedding_lookup: token id " + std::to_string(id) +
                            " out of range [0," + std::to_string(vocab) + ")");
        }
        std::copy_n(T.value.data() + static_cast<std::int64_t>(id) * d, d, out.data() + i * d);
    }
    auto tn = table.node();
    return Tensor(make_node(
        {n, d}, std::move(out), {tn},
        [tn, ids, d](TensorNode& node) {
            if (!tn->needs_grad) return;
            tn->ensure_grad();
            for (std::size_t i = 0; i < ids.size(); ++i) {
                const std::int32_t id = ids[i];
                if (id == kPadRow) continue;  // PAD row stays fixed at zero
                double* dst = tn->grad.data() + static_cast<std::int64_t>(id) * d;
                const double* src = node.grad.data() + static_cast<std::int64_t>(i) * d;
                for (std::int64_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        },
        "embedding_lookup"));
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat_rows: empty input");
    const std::int64_t c = parts[0].node()->shape.size() == 2 ? parts[0].node()->shape[1]
                                                              : parts[0].node()->shape[0];
    std::int64_t total = 0;
    std::vector<std::shared_ptr<TensorNode>> nodes;
    for (const auto& p : parts) {
        const auto& P = *p.node();
        require(P.shape.size() == 2 && P.shape[1] == c,
                "concat_rows: all parts must be matrices of equal width");
        total += P.shape[0];
        nodes.push_back(p.node());
    }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(total * c));
    for (const auto& nptr : nodes) out.insert(out.end(), nptr->value.begin(), nptr->value.end());
    return Tensor(make_node(
        {total, c}, std::move(out), nodes,
        [nodes](TensorNode& node) {
            std::size_t off = 0;
            for (const auto& p : nodes) {
                if (p->needs_grad) {
                    p->ensure_grad();
                    for (std::size_t i = 0; i < p->value.size(); ++i) p->grad[i] += node.grad[off + i];
                }
                off += p->value.size();
            }
        },
        "concat_rows"));
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    require(!parts.empty(), "concat_cols: empty input");
    const std::int64_t r = parts[0].node()->shape[0];
    std::int64_t total = 0;
    std::vector<std::shared_ptr<TensorNode>> nodes;
    std::vector<std::int64_t> widths;
    for (const auto& p : parts) {
        const auto& P = *p.node();
        require(P.shape.size() == 2 && P.shape[0] == r,
                "concat_cols: all parts must be matrices of equal height");
        widths.push_back(P.shape[1]);
        total += P.shape[1];
        nodes.push_back(p.node());
    }
    std::vector<double> out(static_cast<std::size_t>(r * total));
    std::int64_t off = 0;
    for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
        const auto& P = *nodes[pi];
        for (std::int64_t i = 0; i < r; ++i)
            std::copy_n(P.value.data() + i * widths[pi], widths[pi], out.data() + i * total + off);
        off += widths[pi];
    }
    return Tensor(make_node(
        {r, total}, std::move(out), nodes,
        [nodes, widths, r, total](TensorNode& node) {
            std::int64_t off2 = 0;
            for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
                auto& p = *nodes[pi];
                if (p.needs_grad) {
                    p.ensure_grad();
                    for (std::int64_t i = 0; i < r; ++i)
                        for (std::int64_t j = 0; j < widths[pi]; ++j)
                            p.grad[i * widths[pi] + j] += node.grad[i * total + off2 + j];
                }
                off2 += widths[pi];
            }
        },
        "concat_cols"));
}

Tensor slice_rows(const Tensor& a, std::int64_t row0, std::int64_t nrows) {
    const auto& A = *a.node();
    require(A.shape.size() == 2, "slice_rows: need a matrix");
    const std::int64_t r = A.shape[0], c = A.shape[1];
    require(row0 >= 0 && nrows >= 1 && row0 + nrows <= r, "slice_rows: range out of bounds");
    std::vector<double> out(A.value.begin() + row0 * c, A.value.begin() + (row0 + nrows) * c);
    auto an = a.node();
    return Tensor(make_node(
        {nrows, c}, std::move(out), {an},
        [an, row0, c](TensorNode& node) {
            if (!an->needs_grad) return;
            an->ensure_grad();
            for (std::size_t i = 0; i < node.value.size(); ++i)
                an->grad[static_cast<std::size_t>(row0 * c) + i] += node.grad[i];
        },
        "slice_rows"));
}

Tensor slice_cols(const Tensor& a, std::int64_t col0, std::int64_t ncols) {
    const auto& A = *a.node();
    require(A.shape.size() == 2, "slice_cols: need a matrix");
    const std::int64_t r = A.shape[0], c = A.shape[1];
    require(col0 >= 0 && ncols >= 1 && col0 + ncols <= c, "slice_cols: range out of bounds");
    std::vector<double> out(static_cast<std::size_t>(r * ncols));
    for (std::int64_t i = 0; i < r; ++i)
        std::copy_n(A.value.data() + i * c + col0, ncols, out.data() + i * ncols);
    auto an = a.node();
    return Tensor(make_node(
        {r, ncols}, std::move(out), {an},
        [an, col0, c, r, ncols](TensorNode& node) {
            if (!an->needs_grad) return;
            an->ensure_grad();
            for (std::int64_t i = 0; i < r; ++i)
                for (std::int64_t j = 0; j < ncols; ++j)
                    an->grad[i * c + col0 + j] += node.grad[i * ncols + j];
        },
        "slice_cols"));
}

Tensor sum_axis0(const Tensor& a) {
    const auto& A = *a.node();
    const std::int64_t r = dim_rows(A), c = A.shape[1];
    std::vector<double> out(static_cast<std::size_t>(c), 0.0);
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j) out[j] += A.value[i * c + j];
    auto an = a.node();
    return Tensor(make_node(
        {c}, std::move(out), {an},
        [an, r, c](TensorNode& node) {
            if (!an->needs_grad) return;
            an->ensure_grad();
            for (std::int64_t i = 0; i < r; ++i)
                for (std::int64_t j = 0; j < c; ++j) an->grad[i * c + j] += node.grad[j];
        },
        "sum_axis0"));
}

Tensor mean_axis0(const Tensor& a) {
    const std::int64_t r = dim_rows(*a.node());
    return scale(sum_axis0(a), 1.0 / static_cast<double>(r));
}

Tensor sum_all(const Tensor& a) {
    const auto& A = *a.node();
    double s = 0.0;
    for (double v : A.value) s += v;
    auto an = a.node();
    return Tensor(make_node(
        {}, {s}, {an},
        [an](TensorNode& node) {
            if (!an->needs_grad) return;
            an->ensure_grad();
            const double g = node.grad[0];
            for (double& d : an->grad) d += g;
        },
        "sum_all"));
}

Tensor mean_all(const Tensor& a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(a.size()));
}

Tensor reshape(const Tensor& a, Shape shape) {
    const auto& A = *a.node();
    require(shape_size(shape) == A.size(),
            "reshape: element count mismatch " + shape_str(A.shape) + " -> " + shape_str(shape));
    auto an = a.node();
    std::vector<double> out = A.value;
    return Tensor(make_node(
        std::move(shape), std::move(out), {an},
        [an](TensorNode& node) {
            if (!an->needs_grad) return;
            an->ensure_grad();
            for (std::size_t i = 0; i < node.value.size(); ++i) an->grad[i] += node.grad[i];
        },
        "reshape"));
}

Tensor stack_scalars(const std::vector<Tensor>& scalars) {
    require(!scalars.empty(), "stack_scalars: empty input");
    std::vector<double> out;
    out.reserve(scalars.size());
    std::vector<std::shared_ptr<TensorNode>> nodes;
    for (const auto& s : scalars) {
        require(s.size() == 1, "stack_scalars: inputs must be scalars");
        out.push_back(s.values()[0]);
        nodes.push_back(s.node());
    }
    return Tensor(make_node(
        {static_cast<std::int64_t>(scalars.size())}, std::move(out), nodes,
        [nodes](TensorNode& node) {
            for (std::size_t i = 0; i < nodes.size(); ++i) {
                if (!nodes[i]->needs_grad) continue;
                nodes[i]->ensure_grad();
                nodes[i]->grad[0] += node.grad[i];
            }
        },
        "stack_scalars"));
}

Tensor cosine_similarity(const Tensor& a, const Tensor& b, double eps) {
    const auto& A = *a.node();
    const auto& B = *b.node();
    require(A.size() == B.size(), "cosine_similarity: length mismatch");
    const std::size_t n = A.value.size();
    double dot = 0.0, na2 = 0.0, nb2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        dot += A.value[i] * B.value[i];
        na2 += A.value[i] * A.value[i];
        nb2 += B.value[i] * B.value[i];
    }
    const double na = std::sqrt(na2), nb = std::sqrt(nb2);
    const double denom = na * nb + eps;
    const double c = dot / denom;
    auto an = a.node(), bn = b.node();
    return Tensor(make_node(
        {}, {c}, {an, bn},
        [an, bn, dot, na, nb, denom, c, n](TensorNode& node) {
            // Degenerate inputs contribute no gradient; the epsilon guard only
            // keeps the forward value finite.
            if (na * nb < 1e-24) return;
            const double g = node.grad[0];
            if (an->needs_grad) {
                an->ensure_grad();
                const double ka = 1.0 / denom;
                const double kb = c / (na * na);
                for (std::size_t i = 0; i < n; ++i)
                    an->grad[i] += g * (bn->value[i] * ka - an->value[i] * kb);
            }
            if (bn->needs_grad) {
                bn->ensure_grad();
                const double ka = 1.0 / denom;
                const double kb = c / (nb * nb);
                for (std::size_t i = 0; i < n; ++i)
                    bn->grad[i] += g * (an->value[i] * ka - bn->value[i] * kb);
            }
            (void)dot;
        },
        "cosine_similarity"));
}

void backward(const Tensor& loss) {
    TensorNode* root = loss.raw();
    if (root == nullptr) throw InternalError("backward: undefined tensor");
    if (root->size() != 1) {
        throw InternalError("backward: loss must be scalar, got shape " + shape_str(root->shape));
    }
    // Iterative topological order over the needs_grad subgraph.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNode* p = node->parents[idx].get();
            ++idx;
            if (p->needs_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backward_fn) {
            n->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

}  // namespace pssl
