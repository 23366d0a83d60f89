#include "microforge/autodiff/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace mf::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

void require_same_shape(const char* kind, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(kind) + ": shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

void require_rank2(const char* kind, const Tensor& a) {
    if (a.rank() != 2) throw ShapeError(std::string(kind) + ": expected rank 2, got " + shape_str(a.shape()));
}

Tensor finish(NodePtr n, std::function<void(Node&)> fn) {
    if (n->requires_grad) n->backward_fn = std::move(fn);
    return Tensor(std::move(n));
}

// Accumulates into input i's gradient only if it participates.
template <class F>
void with_grad(Node& self, std::size_t i, F&& f) {
    Node& in = *self.inputs[i];
    if (in.requires_grad) f(in.grad_buffer());
}

}  // namespace

namespace kernel {

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    Map(c, m, n).noalias() += MapC(a, m, k) * MapC(b, k, n);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    Map(c, m, n).noalias() += MapC(a, k, m).transpose() * MapC(b, k, n);
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    Map(c, m, n).noalias() += MapC(a, m, k) * MapC(b, n, k).transpose();
}

}  // namespace kernel

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<double> out(a.size());
    const auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
    auto n = detail::make_result("add", a.shape(), std::move(out), {a.node(), b.node()});
    return finish(std::move(n), [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            with_grad(self, k, [&](std::span<double> g) {
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
            });
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("subtract", a, b);
    std::vector<double> out(a.size());
    const auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
    auto n = detail::make_result("subtract", a.shape(), std::move(out), {a.node(), b.node()});
    return finish(std::move(n), [](Node& self) {
        with_grad(self, 0, [&](std::span<double> g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        });
        with_grad(self, 1, [&](std::span<double> g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        });
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("multiply", a, b);
    std::vector<double> out(a.size());
    const auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
    auto n = detail::make_result("multiply", a.shape(), std::move(out), {a.node(), b.node()});
    return finish(std::move(n), [](Node& self) {
        const auto& av = self.inputs[0]->value;
        const auto& bv = self.inputs[1]->value;
        with_grad(self, 0, [&](std::span<double> g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
        });
        with_grad(self, 1, [&](std::span<double> g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
        });
    });
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (double& v : out) v *= s;
    auto n = detail::make_result("scale", a.shape(), std::move(out), {a.node()});
    return finish(std::move(n), [s](Node& self) {
        with_grad(self, 0, [&](std::span<double> g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
        });
    });
}

Tensor square(const Tensor& a) {
    std::vector<double> out(a.size());
    const auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * av[i];
    auto n = detail::make_result("square", a.shape(), std::move(out), {a.node()});
    return finish(std::move(n), [](Node& self) {
        const auto& av = self.inputs[0]->value;
        with_grad(self, 0, [&](std::span<double> g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * av[i] * self.grad[i];
        });
    });
}

Tensor gelu(const Tensor& a) {
    constexpr double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
    std::vector<double> out(a.size());
    const auto av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * av[i] * (1.0 + std::erf(av[i] * inv_sqrt2));
    auto n = detail::make_result("gelu", a.shape(), std::move(out), {a.node()});
    return finish(std::move(n), [](Node& self) {
        constexpr double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        const auto& av = self.inputs[0]->value;
        with_grad(self, 0, [&](std::span<double> g) {
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double x = av[i];
                const double d = 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * std::exp(-0.5 * x * x) * inv_sqrt_2pi;
                g[i] += d * self.grad[i];
            }
        });
    });
}

Tensor add_row(const Tensor& x, const Tensor& row) {
    require_rank2("add_row", x);
    require_rank2("add_row", row);
    if (row.rows() != 1 || row.cols() != x.cols()) {
        throw ShapeError("add_row: row " + shape_str(row.shape()) + " does not broadcast over " + shape_str(x.shape()));
    }
    const std::size_t r = x.rows(), c = x.cols();
    std::vector<double> out(x.values().begin(), x.values().end());
    const auto rv = row.values();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] += rv[j];
    auto n = detail::make_result("add_row", x.shape(), std::move(out), {x.node(), row.node()});
    return finish(std::move(n), [r, c](Node& self) {
        with_grad(self, 0, [&](std::span<double> g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        });
        with_grad(self, 1, [&](std::span<double> g) {
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
        });
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2("matmul", a);
    require_rank2("matmul", b);
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " . " + shape_str(b.shape()));
    }
    const std::size_t m = a.rows(), k = a.cols(), nn = b.cols();
    std::vector<double> out(m * nn, 0.0);
    kernel::gemm_nn(m, nn, k, a.values().data(), b.values().data(), out.data());
    auto n = detail::make_result("matmul", {m, nn}, std::move(out), {a.node(), b.node()});
    return finish(std::move(n), [m, k, nn](Node& self) {
        const double* dc = self.grad.data();
        with_grad(self, 0, [&](std::span<double> g) {
            kernel::gemm_nt(m, k, nn, dc, self.inputs[1]->value.data(), g.data());
        });
        with_grad(self, 1, [&](std::span<double> g) {
            kernel::gemm_tn(k, nn, m, self.inputs[0]->value.data(), dc, g.data());
        });
    });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    require_rank2("linear", x);
    require_rank2("linear", w);
    require_rank2("linear", bias);
    if (x.cols() != w.rows()) {
        throw ShapeError("linear: inner extents differ, " + shape_str(x.shape()) + " . " + shape_str(w.shape()));
    }
    if (bias.rows() != 1 || bias.cols() != w.cols()) {
        throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match weight " + shape_str(w.shape()));
    }
    const std::size_t m = x.rows(), k = x.cols(), nn = w.cols();
    std::vector<double> out(m * nn);
    const auto bv = bias.values();
    for (std::size_t i = 0; i < m; ++i) std::copy(bv.begin(), bv.end(), out.begin() + static_cast<std::ptrdiff_t>(i * nn));
    kernel::gemm_nn(m, nn, k, x.values().data(), w.values().data(), out.data());
    auto n = detail::make_result("linear", {m, nn}, std::move(out), {x.node(), w.node(), bias.node()});
    return finish(std::move(n), [m, k, nn](Node& self) {
        const double* dy = self.grad.data();
        with_grad(self, 0, [&](std::span<double> g) {
            kernel::gemm_nt(m, k, nn, dy, self.inputs[1]->value.data(), g.data());
        });
        with_grad(self, 1, [&](std::span<double> g) {
            kernel::gemm_tn(k, nn, m, self.inputs[0]->value.data(), dy, g.data());
        });
        with_grad(self, 2, [&](std::span<double> g) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < nn; ++j) g[j] += dy[i * nn + j];
        });
    });
}

Tensor transpose(const Tensor& a) {
    require_rank2("transpose", a);
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(r * c);
    const auto av = a.values();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = av[i * c + j];
    auto n = detail::make_result("transpose", {c, r}, std::move(out), {a.node()});
    return finish(std::move(n), [r, c](Node& self) {
        with_grad(self, 0, [&](std::span<double> g) {
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
        });
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_size(shape) != a.size()) {
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    std::vector<double> out(a.values().begin(), a.values().end());
    auto n = detail::make_result("reshape", std::move(shape), std::move(out), {a.node()});
    return finish(std::move(n), [](Node& self) {
        with_grad(self, 0, [&](std::span<double> g) {
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        });
    });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index) {
    require_rank2("gather_rows", a);
    const std::size_t r = a.rows(), c = a.cols();
    std::vector<double> out(index.size() * c);
    const auto av = a.values();
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= r) {
            throw ShapeError("gather_rows: index " + std::to_string(index[i]) + " out of range for " + shape_str(a.shape()));
        }
        std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(index[i] * c), c, out.begin() + static_cast<std::ptrdiff_t>(i * c));
    }
    auto n = detail::make_result("gather_rows", {index.size(), c}, std::move(out), {a.node()});
    std::vector<std::size_t> idx(index.begin(), index.end());
    return finish(std::move(n), [idx = std::move(idx), c](Node& self) {
        with_grad(self, 0, [&](std::span<double> g) {
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += self.grad[i * c + j];
        });
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const std::size_t c = parts.front().cols();
    std::size_t total = 0;
    std::vector<NodePtr> nodes;
    for (const auto& p : parts) {
        require_rank2("concat", p);
        if (p.cols() != c) {
            throw ShapeError("concat: column extents differ, " + shape_str(parts.front().shape()) + " vs " + shape_str(p.shape()));
        }
        total += p.rows();
        nodes.push_back(p.node());
    }
    std::vector<double> out;
    out.reserve(total * c);
    for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
    auto n = detail::make_result("concat", {total, c}, std::move(out), std::move(nodes));
    return finish(std::move(n), [](Node& self) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
            const std::size_t len = self.inputs[k]->value.size();
            with_grad(self, k, [&](std::span<double> g) {
                for (std::size_t i = 0; i < len; ++i) g[i] += self.grad[offset + i];
            });
            offset += len;
        }
    });
}

Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    auto n = detail::make_result("sum", {1}, {s}, {a.node()});
    return finish(std::move(n), [](Node& self) {
        with_grad(self, 0, [&](std::span<double> g) {
            for (double& v : g) v += self.grad[0];
        });
    });
}

Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw ShapeError("mean: empty tensor");
    double s = 0.0;
    for (double v : a.values()) s += v;
    const double inv = 1.0 / static_cast<double>(a.size());
    auto n = detail::make_result("mean", {1}, {s * inv}, {a.node()});
    return finish(std::move(n), [inv](Node& self) {
        with_grad(self, 0, [&](std::span<double> g) {
            for (double& v : g) v += self.grad[0] * inv;
        });
    });
}

Tensor softmax(const Tensor& a) {
    require_rank2("softmax", a);
    const std::size_t r = a.rows(), c = a.cols();
    if (c == 0) throw ShapeError("softmax: last axis is empty");
    std::vector<double> out(r * c);
    const auto av = a.values();
    for (std::size_t i = 0; i < r; ++i) {
        const double* x = av.data() + i * c;
        double* y = out.data() + i * c;
        const double mx = *std::max_element(x, x + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += (y[j] = std::exp(x[j] - mx));
        const double inv = 1.0 / z;
        for (std::size_t j = 0; j < c; ++j) y[j] *= inv;
    }
    auto n = detail::make_result("softmax", a.shape(), std::move(out), {a.node()});
    return finish(std::move(n), [r, c](Node& self) {
        with_grad(self, 0, [&](std::span<double> g) {
            for (std::size_t i = 0; i < r; ++i) {
                const double* y = self.value.data() + i * c;
                const double* dy = self.grad.data() + i * c;
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j) dot += dy[j] * y[j];
                for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[j] * (dy[j] - dot);
            }
        });
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_rank2("layer_norm", x);
    const std::size_t r = x.rows(), c = x.cols();
    if (c == 0) throw ShapeError("layer_norm: last axis is empty");
    const Shape row_shape{1, c};
    if (gamma.shape() != row_shape || beta.shape() != row_shape) {
        throw ShapeError("layer_norm: scale/shift must be " + shape_str(row_shape) + ", got " +
                         shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
    }
    std::vector<double> xhat(r * c), rstd(r), out(r * c);
    const auto xv = x.values(), gv = gamma.values(), bv = beta.values();
    const double inv_c = 1.0 / static_cast<double>(c);
    for (std::size_t i = 0; i < r; ++i) {
        const double* row = xv.data() + i * c;
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += row[j];
        mu *= inv_c;
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
        var *= inv_c;
        rstd[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) {
            const double h = (row[j] - mu) * rstd[i];
            xhat[i * c + j] = h;
            out[i * c + j] = h * gv[j] + bv[j];
        }
    }
    auto n = detail::make_result("layer_norm", x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()});
    return finish(std::move(n), [r, c, inv_c, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
        const double* dy = self.grad.data();
        const auto& gv = self.inputs[1]->value;
        with_grad(self, 0, [&](std::span<double> g) {
            std::vector<double> dxhat(c);
            for (std::size_t i = 0; i < r; ++i) {
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    dxhat[j] = dy[i * c + j] * gv[j];
                    m1 += dxhat[j];
                    m2 += dxhat[j] * xhat[i * c + j];
                }
                m1 *= inv_c;
                m2 *= inv_c;
                for (std::size_t j = 0; j < c; ++j) g[i * c + j] += rstd[i] * (dxhat[j] - m1 - xhat[i * c + j] * m2);
            }
        });
        with_grad(self, 1, [&](std::span<double> g) {
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[j] += dy[i * c + j] * xhat[i * c + j];
        });
        with_grad(self, 2, [&](std::span<double> g) {
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) g[j] += dy[i * c + j];
        });
    });
}

Tensor self_attention(const Tensor& qkv, std::size_t seq_len, std::size_t heads) {
    require_rank2("attention", qkv);
    const std::size_t rows = qkv.rows(), width = qkv.cols();
    if (seq_len == 0 || heads == 0 || rows % seq_len != 0 || width % (3 * heads) != 0) {
        throw ShapeError("attention: qkv " + shape_str(qkv.shape()) + " incompatible with seq_len " +
                         std::to_string(seq_len) + " and " + std::to_string(heads) + " heads");
    }
    const std::size_t batch = rows / seq_len, dim = width / 3, hd = dim / heads, T = seq_len;
    const double sc = 1.0 / std::sqrt(static_cast<double>(hd));
    const double* src = qkv.values().data();
    std::vector<double> probs(batch * heads * T * T);
    std::vector<double> out(rows * dim, 0.0);

    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            double* p = probs.data() + (b * heads + h) * T * T;
            for (std::size_t i = 0; i < T; ++i) {
                const double* q = src + (b * T + i) * width + h * hd;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < T; ++j) {
                    const double* k = src + (b * T + j) * width + dim + h * hd;
                    double s = 0.0;
                    for (std::size_t d = 0; d < hd; ++d) s += q[d] * k[d];
                    p[i * T + j] = s * sc;
                    mx = std::max(mx, p[i * T + j]);
                }
                double z = 0.0;
                for (std::size_t j = 0; j < T; ++j) z += (p[i * T + j] = std::exp(p[i * T + j] - mx));
                const double inv = 1.0 / z;
                double* o = out.data() + (b * T + i) * dim + h * hd;
                for (std::size_t j = 0; j < T; ++j) {
                    p[i * T + j] *= inv;
                    const double* v = src + (b * T + j) * width + 2 * dim + h * hd;
                    for (std::size_t d = 0; d < hd; ++d) o[d] += p[i * T + j] * v[d];
                }
            }
        }
    }
    auto n = detail::make_result("attention", {rows, dim}, std::move(out), {qkv.node()});
    return finish(std::move(n), [=, probs = std::move(probs)](Node& self) {
        with_grad(self, 0, [&](std::span<double> g) {
            const double* src = self.inputs[0]->value.data();
            const double* dout = self.grad.data();
            std::vector<double> dp(T);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t h = 0; h < heads; ++h) {
                    const double* p = probs.data() + (b * heads + h) * T * T;
                    for (std::size_t i = 0; i < T; ++i) {
                        const double* dO = dout + (b * T + i) * dim + h * hd;
                        // dP_ij = dO_i . V_j and dV_j += P_ij dO_i
                        double dot = 0.0;
                        for (std::size_t j = 0; j < T; ++j) {
                            const double* v = src + (b * T + j) * width + 2 * dim + h * hd;
                            double* dv = g.data() + (b * T + j) * width + 2 * dim + h * hd;
                            const double pij = p[i * T + j];
                            double s = 0.0;
                            for (std::size_t d = 0; d < hd; ++d) {
                                s += dO[d] * v[d];
                                dv[d] += pij * dO[d];
                            }
                            dp[j] = s;
                            dot += s * pij;
                        }
                        // dS_ij = P_ij (dP_ij - sum_j P_ij dP_ij) * scale
                        const double* q = src + (b * T + i) * width + h * hd;
                        double* dq = g.data() + (b * T + i) * width + h * hd;
                        for (std::size_t j = 0; j < T; ++j) {
                            const double ds = p[i * T + j] * (dp[j] - dot) * sc;
                            const double* k = src + (b * T + j) * width + dim + h * hd;
                            double* dk = g.data() + (b * T + j) * width + dim + h * hd;
                            for (std::size_t d = 0; d < hd; ++d) {
                                dq[d] += ds * k[d];
                                dk[d] += ds * q[d];
                            }
                        }
                    }
                }
            }
        });
    });
}

Tensor mse(const Tensor& a, const Tensor& b) { return mean(square(sub(a, b))); }

}  // namespace mf::ad
