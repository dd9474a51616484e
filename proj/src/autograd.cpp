#include "masklrf/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <stdexcept>

#include "masklrf/kernels.hpp"

namespace masklrf::ag {

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

namespace {

void require(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
}

}  // namespace

Var Graph::push(Matrix value, bool requires_grad, std::function<void(Graph&, const Matrix&)> bw) {
    Node n;
    n.owned = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Graph::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Graph::variable(Matrix value) { return push(std::move(value), true, nullptr); }

Var Graph::parameter(const Matrix& value, bool requires_grad) {
    Node n;
    n.external = &value;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

const Matrix& Graph::value(Var v) const { return nodes_.at(v.id).value(); }

const Matrix* Graph::grad(Var v) const {
    const auto& n = nodes_.at(v.id);
    return n.has_grad ? &n.grad : nullptr;
}

Matrix& Graph::grad_acc(Var v) {
    auto& n = nodes_[v.id];
    if (!n.has_grad) {
        const auto& val = n.value();
        n.grad = Matrix(val.rows, val.cols);
        n.has_grad = true;
    }
    return n.grad;
}

void Graph::backward(Var root) {
    const auto& rv = value(root);
    if (rv.rows != 1 || rv.cols != 1) throw std::invalid_argument("backward: root must be a scalar");
    if (!nodes_[root.id].requires_grad) return;
    grad_acc(root)(0, 0) += 1.0;
    for (std::size_t id = root.id + 1; id-- > 0;) {
        auto& n = nodes_[id];
        if (!n.has_grad || !n.backward) continue;
        n.backward(*this, n.grad);
    }
}

Var Graph::matmul(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    require(A.cols == B.rows, "matmul: inner dimensions differ");
    Matrix out(A.rows, B.cols);
    kernels::matmul(A, B, out);
    return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, const Matrix& dy) {
        if (g.needs(a)) kernels::matmul_nt_acc(dy, g.value(b), g.grad_acc(a));
        if (g.needs(b)) kernels::matmul_tn_acc(g.value(a), dy, g.grad_acc(b));
    });
}

Var Graph::add(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    require(A.same_shape(B), "add: shape mismatch");
    Matrix out = A;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += B.data[i];
    return push(std::move(out), needs(a) || needs(b), [a, b](Graph& g, const Matrix& dy) {
        for (Var v : {a, b}) {
            if (!g.needs(v)) continue;
            auto& d = g.grad_acc(v);
            for (std::size_t i = 0; i < d.size(); ++i) d.data[i] += dy.data[i];
        }
    });
}

Var Graph::add_row(Var a, Var row) {
    const auto& A = value(a);
    const auto& R = value(row);
    require(R.rows == 1 && R.cols == A.cols, "add_row: bias shape mismatch");
    Matrix out = A;
    for (std::size_t i = 0; i < out.rows; ++i)
        for (std::size_t c = 0; c < out.cols; ++c) out(i, c) += R(0, c);
    return push(std::move(out), needs(a) || needs(row), [a, row](Graph& g, const Matrix& dy) {
        if (g.needs(a)) {
            auto& d = g.grad_acc(a);
            for (std::size_t i = 0; i < d.size(); ++i) d.data[i] += dy.data[i];
        }
        if (g.needs(row)) {
            auto& d = g.grad_acc(row);
            for (std::size_t i = 0; i < dy.rows; ++i)
                for (std::size_t c = 0; c < dy.cols; ++c) d(0, c) += dy(i, c);
        }
    });
}

Var Graph::scale(Var a, double s) {
    Matrix out = value(a);
    for (auto& x : out.data) x *= s;
    return push(std::move(out), needs(a), [a, s](Graph& g, const Matrix& dy) {
        auto& d = g.grad_acc(a);
        for (std::size_t i = 0; i < d.size(); ++i) d.data[i] += s * dy.data[i];
    });
}

Var Graph::gelu(Var a) {
    Matrix out = value(a);
    for (auto& x : out.data) x = ag::gelu(x);
    return push(std::move(out), needs(a), [a](Graph& g, const Matrix& dy) {
        const auto& x = g.value(a);
        auto& d = g.grad_acc(a);
        for (std::size_t i = 0; i < d.size(); ++i) d.data[i] += dy.data[i] * gelu_grad(x.data[i]);
    });
}

Var Graph::layer_norm(Var a, Var gain, Var bias, double eps) {
    const auto& X = value(a);
    const auto& G = value(gain);
    const auto& B = value(bias);
    require(G.rows == 1 && G.cols == X.cols && B.same_shape(G), "layer_norm: parameter shape mismatch");
    const std::size_t m = X.rows, n = X.cols;
    auto xhat = std::make_shared<Matrix>(m, n);
    auto inv = std::make_shared<std::vector<double>>(m);
    Matrix out(m, n);
    for (std::size_t i = 0; i < m; ++i) {
        double mean = 0.0;
        for (std::size_t c = 0; c < n; ++c) mean += X(i, c);
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t c = 0; c < n; ++c) var += (X(i, c) - mean) * (X(i, c) - mean);
        var /= static_cast<double>(n);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv)[i] = is;
        for (std::size_t c = 0; c < n; ++c) {
            const double h = (X(i, c) - mean) * is;
            (*xhat)(i, c) = h;
            out(i, c) = h * G(0, c) + B(0, c);
        }
    }
    return push(std::move(out), needs(a) || needs(gain) || needs(bias),
                [a, gain, bias, xhat, inv](Graph& g, const Matrix& dy) {
                    const auto& G = g.value(gain);
                    const std::size_t m = dy.rows, n = dy.cols;
                    if (g.needs(gain)) {
                        auto& dg = g.grad_acc(gain);
                        for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t c = 0; c < n; ++c) dg(0, c) += dy(i, c) * (*xhat)(i, c);
                    }
                    if (g.needs(bias)) {
                        auto& db = g.grad_acc(bias);
                        for (std::size_t i = 0; i < m; ++i)
                            for (std::size_t c = 0; c < n; ++c) db(0, c) += dy(i, c);
                    }
                    if (g.needs(a)) {
                        auto& dx = g.grad_acc(a);
                        std::vector<double> dh(n);
                        for (std::size_t i = 0; i < m; ++i) {
                            double mean_dh = 0.0, mean_dh_h = 0.0;
                            for (std::size_t c = 0; c < n; ++c) {
                                dh[c] = dy(i, c) * G(0, c);
                                mean_dh += dh[c];
                                mean_dh_h += dh[c] * (*xhat)(i, c);
                            }
                            mean_dh /= static_cast<double>(n);
                            mean_dh_h /= static_cast<double>(n);
                            for (std::size_t c = 0; c < n; ++c)
                                dx(i, c) += (*inv)[i] * (dh[c] - mean_dh - (*xhat)(i, c) * mean_dh_h);
                        }
                    }
                });
}

Var Graph::segment_max(Var a, std::size_t group) {
    const auto& X = value(a);
    require(group > 0 && X.rows % group == 0, "segment_max: rows not divisible by group");
    const std::size_t segs = X.rows / group;
    Matrix out(segs, X.cols);
    auto arg = std::make_shared<std::vector<std::size_t>>(segs * X.cols);
    for (std::size_t s = 0; s < segs; ++s)
        for (std::size_t c = 0; c < X.cols; ++c) {
            std::size_t best = s * group;
            for (std::size_t r = s * group + 1; r < (s + 1) * group; ++r)
                if (X(r, c) > X(best, c)) best = r;
            out(s, c) = X(best, c);
            (*arg)[s * X.cols + c] = best;
        }
    return push(std::move(out), needs(a), [a, arg](Graph& g, const Matrix& dy) {
        auto& d = g.grad_acc(a);
        for (std::size_t s = 0; s < dy.rows; ++s)
            for (std::size_t c = 0; c < dy.cols; ++c) d((*arg)[s * dy.cols + c], c) += dy(s, c);
    });
}

Var Graph::segment_broadcast(Var a, std::size_t group) {
    const auto& X = value(a);
    require(group > 0, "segment_broadcast: group must be positive");
    Matrix out(X.rows * group, X.cols);
    for (std::size_t s = 0; s < X.rows; ++s)
        for (std::size_t r = 0; r < group; ++r)
            std::copy(X.row(s).begin(), X.row(s).end(), out.row(s * group + r).begin());
    return push(std::move(out), needs(a), [a, group](Graph& g, const Matrix& dy) {
        auto& d = g.grad_acc(a);
        for (std::size_t s = 0; s < d.rows; ++s)
            for (std::size_t r = 0; r < group; ++r)
                for (std::size_t c = 0; c < d.cols; ++c) d(s, c) += dy(s * group + r, c);
    });
}

Var Graph::concat_cols(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    require(A.rows == B.rows, "concat_cols: row counts differ");
    Matrix out(A.rows, A.cols + B.cols);
    for (std::size_t i = 0; i < A.rows; ++i) {
        std::copy(A.row(i).begin(), A.row(i).end(), out.row(i).begin());
        std::copy(B.row(i).begin(), B.row(i).end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(A.cols));
    }
    const std::size_t split = A.cols;
    return push(std::move(out), needs(a) || needs(b), [a, b, split](Graph& g, const Matrix& dy) {
        if (g.needs(a)) {
            auto& d = g.grad_acc(a);
            for (std::size_t i = 0; i < d.rows; ++i)
                for (std::size_t c = 0; c < d.cols; ++c) d(i, c) += dy(i, c);
        }
        if (g.needs(b)) {
            auto& d = g.grad_acc(b);
            for (std::size_t i = 0; i < d.rows; ++i)
                for (std::size_t c = 0; c < d.cols; ++c) d(i, c) += dy(i, split + c);
        }
    });
}

Var Graph::concat_rows(Var a, Var b) {
    const auto& A = value(a);
    const auto& B = value(b);
    require(A.cols == B.cols, "concat_rows: column counts differ");
    Matrix out(A.rows + B.rows, A.cols);
    std::copy(A.data.begin(), A.data.end(), out.data.begin());
    std::copy(B.data.begin(), B.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(A.size()));
    const std::size_t split = A.size();
    return push(std::move(out), needs(a) || needs(b), [a, b, split](Graph& g, const Matrix& dy) {
        if (g.needs(a)) {
            auto& d = g.grad_acc(a);
            for (std::size_t i = 0; i < d.size(); ++i) d.data[i] += dy.data[i];
        }
        if (g.needs(b)) {
            auto& d = g.grad_acc(b);
            for (std::size_t i = 0; i < d.size(); ++i) d.data[i] += dy.data[split + i];
        }
    });
}

Var Graph::gather_rows(Var a, std::vector<std::size_t> rows) {
    const auto& X = value(a);
    Matrix out(rows.size(), X.cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(rows[i] < X.rows, "gather_rows: index out of range");
        std::copy(X.row(rows[i]).begin(), X.row(rows[i]).end(), out.row(i).begin());
    }
    return push(std::move(out), needs(a), [a, rows = std::move(rows)](Graph& g, const Matrix& dy) {
        auto& d = g.grad_acc(a);
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t c = 0; c < d.cols; ++c) d(rows[i], c) += dy(i, c);
    });
}

Var Graph::mean_rows(Var a) {
    const auto& X = value(a);
    require(X.rows > 0, "mean_rows: empty input");
    Matrix out(1, X.cols);
    for (std::size_t i = 0; i < X.rows; ++i)
        for (std::size_t c = 0; c < X.cols; ++c) out(0, c) += X(i, c);
    const double inv = 1.0 / static_cast<double>(X.rows);
    for (auto& x : out.data) x *= inv;
    return push(std::move(out), needs(a), [a, inv](Graph& g, const Matrix& dy) {
        auto& d = g.grad_acc(a);
        for (std::size_t i = 0; i < d.rows; ++i)
            for (std::size_t c = 0; c < d.cols; ++c) d(i, c) += inv * dy(0, c);
    });
}

Var Graph::sum(Var a) {
    double s = 0.0;
    for (double x : value(a).data) s += x;
    return push(Matrix(1, 1, s), needs(a), [a](Graph& g, const Matrix& dy) {
        auto& d = g.grad_acc(a);
        for (auto& x : d.data) x += dy(0, 0);
    });
}

Var Graph::sum_sq_diff(Var a, const Matrix& target) {
    const auto& X = value(a);
    require(X.same_shape(target), "sum_sq_diff: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < X.size(); ++i) {
        const double r = X.data[i] - target.data[i];
        s += r * r;
    }
    auto tgt = std::make_shared<Matrix>(target);
    return push(Matrix(1, 1, s), needs(a), [a, tgt](Graph& g, const Matrix& dy) {
        const auto& X = g.value(a);
        auto& d = g.grad_acc(a);
        for (std::size_t i = 0; i < d.size(); ++i) d.data[i] += 2.0 * (X.data[i] - tgt->data[i]) * dy(0, 0);
    });
}

Var Graph::sparse_attention(Var q, Var k, Var v, Var r, const AttentionPattern& pattern, std::size_t heads,
                            std::vector<Matrix>* weights_out) {
    const auto& Q = value(q);
    const auto& K = value(k);
    const auto& V = value(v);
    const Matrix* R = r.valid() ? &value(r) : nullptr;
    const std::size_t m = Q.rows, d = Q.cols;
    require(K.cols == d && V.cols == d && K.rows == V.rows, "sparse_attention: q/k/v shapes differ");
    require(heads > 0 && d % heads == 0, "sparse_attention: width not divisible by heads");
    require(pattern.targets.size() == m, "sparse_attention: one target list per query required");
    if (R) {
        require(R->cols == d, "sparse_attention: relative pose width mismatch");
        require(pattern.pair_rows.size() == m, "sparse_attention: missing relative pose rows");
    }
    const std::size_t dh = d / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

    // alpha is stored per query as [head][target].
    auto offsets = std::make_shared<std::vector<std::size_t>>(m + 1, 0);
    for (std::size_t i = 0; i < m; ++i) {
        const auto& t = pattern.targets[i];
        require(!t.empty(), "sparse_attention: empty target list");
        for (auto j : t) require(j < K.rows, "sparse_attention: target index out of range");
        if (R) {
            require(pattern.pair_rows[i].size() == t.size(), "sparse_attention: missing relative pose entry");
            for (auto row : pattern.pair_rows[i]) require(row < R->rows, "sparse_attention: relative pose row out of range");
        }
        (*offsets)[i + 1] = (*offsets)[i] + heads * t.size();
    }
    auto alpha = std::make_shared<std::vector<double>>((*offsets)[m]);
    auto pat = std::make_shared<AttentionPattern>(pattern);
    Matrix out(m, d);

    const bool par = kernels::max_threads() > 1 && m * d * 8 >= 4096;
#pragma omp parallel for schedule(static) if (par)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(m); ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        const auto& tg = pat->targets[i];
        const std::size_t nt = tg.size();
        std::vector<double> e(nt);
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t c0 = h * dh;
            double emax = -std::numeric_limits<double>::infinity();
            for (std::size_t t = 0; t < nt; ++t) {
                const std::size_t j = tg[t];
                double s = 0.0;
                for (std::size_t c = c0; c < c0 + dh; ++c) {
                    double key = K(j, c);
                    if (R) key += (*R)(pat->pair_rows[i][t], c);
                    s += Q(i, c) * key;
                }
                e[t] = s * sc;
                emax = std::max(emax, e[t]);
            }
            double z = 0.0;
            for (std::size_t t = 0; t < nt; ++t) {
                e[t] = std::exp(e[t] - emax);
                z += e[t];
            }
            double* a = alpha->data() + (*offsets)[i] + h * nt;
            for (std::size_t t = 0; t < nt; ++t) a[t] = e[t] / z;
            for (std::size_t t = 0; t < nt; ++t) {
                const std::size_t j = tg[t];
                for (std::size_t c = c0; c < c0 + dh; ++c) {
                    double val = V(j, c);
                    if (R) val += (*R)(pat->pair_rows[i][t], c);
                    out(i, c) += a[t] * val;
                }
            }
        }
    }

    if (weights_out) {
        weights_out->assign(heads, Matrix(m, K.rows));
        for (std::size_t i = 0; i < m; ++i) {
            const auto& tg = pat->targets[i];
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t t = 0; t < tg.size(); ++t)
                    (*weights_out)[h](i, tg[t]) += (*alpha)[(*offsets)[i] + h * tg.size() + t];
        }
    }

    const bool any = needs(q) || needs(k) || needs(v) || needs(r);
    return push(std::move(out), any, [q, k, v, r, pat, alpha, offsets, heads, dh, sc](Graph& g, const Matrix& dy) {
        const auto& Q = g.value(q);
        const auto& K = g.value(k);
        const auto& V = g.value(v);
        const Matrix* R = r.valid() ? &g.value(r) : nullptr;
        Matrix* dq = g.needs(q) ? &g.grad_acc(q) : nullptr;
        Matrix* dk = g.needs(k) ? &g.grad_acc(k) : nullptr;
        Matrix* dv = g.needs(v) ? &g.grad_acc(v) : nullptr;
        Matrix* dr = g.needs(r) ? &g.grad_acc(r) : nullptr;
        std::vector<double> da, de;
        for (std::size_t i = 0; i < Q.rows; ++i) {
            const auto& tg = pat->targets[i];
            const std::size_t nt = tg.size();
            da.assign(nt, 0.0);
            de.assign(nt, 0.0);
            for (std::size_t h = 0; h < heads; ++h) {
                const std::size_t c0 = h * dh;
                const double* a = alpha->data() + (*offsets)[i] + h * nt;
                double s = 0.0;
                for (std::size_t t = 0; t < nt; ++t) {
                    const std::size_t j = tg[t];
                    double acc = 0.0;
                    for (std::size_t c = c0; c < c0 + dh; ++c) {
                        double val = V(j, c);
                        if (R) val += (*R)(pat->pair_rows[i][t], c);
                        acc += dy(i, c) * val;
                    }
                    da[t] = acc;
                    s += a[t] * acc;
                }
                for (std::size_t t = 0; t < nt; ++t) de[t] = a[t] * (da[t] - s);
                for (std::size_t t = 0; t < nt; ++t) {
                    const std::size_t j = tg[t];
                    const std::size_t row = R ? pat->pair_rows[i][t] : 0;
                    for (std::size_t c = c0; c < c0 + dh; ++c) {
                        if (dq) {
                            double key = K(j, c);
                            if (R) key += (*R)(row, c);
                            (*dq)(i, c) += sc * de[t] * key;
                        }
                        if (dk) (*dk)(j, c) += sc * de[t] * Q(i, c);
                        if (dv) (*dv)(j, c) += a[t] * dy(i, c);
                        if (dr) (*dr)(row, c) += sc * de[t] * Q(i, c) + a[t] * dy(i, c);
                    }
                }
            }
        }
    });
}

}  // namespace masklrf::ag
