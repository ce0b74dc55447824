#include "latlab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <unordered_set>

namespace latlab::ad {

namespace {

using NodePtr = std::shared_ptr<Node>;

std::string shape_str(const std::vector<std::size_t>& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

Tensor make_op(std::vector<std::size_t> shape, std::vector<NodePtr> parents) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->parents = std::move(parents);
    for (const auto& p : n->parents) n->requires_grad = n->requires_grad || p->requires_grad;
    n->value.resize(n->numel());
    return {n};
}

// C += A * B, row-major
void k_ab(const double* __restrict a, const double* __restrict b, double* __restrict c,
          std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C += A * B^T, with A (m,p) and B (n,p). B is transposed first so the inner
// accumulation vectorizes (a plain dot product will not without reassociation).
void k_abt(const double* __restrict a, const double* __restrict b, double* __restrict c,
           std::size_t m, std::size_t p, std::size_t n) {
    std::vector<double> bt(p * n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t q = 0; q < p; ++q) bt[q * n + j] = b[j * p + q];
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * p;
        double* crow = c + i * n;
        for (std::size_t q = 0; q < p; ++q) {
            const double av = arow[q];
            const double* btrow = bt.data() + q * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * btrow[j];
        }
    }
}

// C += A^T * B, with A (m,k) and B (m,n), C (k,n)
void k_atb(const double* __restrict a, const double* __restrict b, double* __restrict c,
           std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            double* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

bool is_suffix(const std::vector<std::size_t>& small, const std::vector<std::size_t>& big) {
    if (small.size() > big.size()) return false;
    for (std::size_t i = 0; i < small.size(); ++i)
        if (small[small.size() - 1 - i] != big[big.size() - 1 - i]) return false;
    return true;
}

} // namespace

Tensor Tensor::detach() const { return constant(node->shape, node->value); }

Tensor constant(std::vector<std::size_t> shape, std::vector<double> data) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    if (n->value.size() != n->numel())
        throw std::invalid_argument("constant: data size does not match shape");
    return {n};
}

Tensor param(std::vector<std::size_t> shape, std::vector<double> data) {
    Tensor t = constant(std::move(shape), std::move(data));
    t.node->requires_grad = true;
    t.node->ensure_grad();
    return t;
}

Tensor zeros(std::vector<std::size_t> shape, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value.assign(n->numel(), 0.0);
    n->requires_grad = requires_grad;
    if (requires_grad) n->ensure_grad();
    return {n};
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (!is_suffix(b.shape(), a.shape())) shape_error("add", a, b);
    Tensor out = make_op(a.shape(), {a.node, b.node});
    const std::size_t bn = b.numel();
    const std::size_t reps = out.numel() / bn;
    for (std::size_t r = 0; r < reps; ++r) {
        const double* av = a.value().data() + r * bn;
        const double* bv = b.value().data();
        double* ov = out.node->value.data() + r * bn;
        for (std::size_t i = 0; i < bn; ++i) ov[i] = av[i] + bv[i];
    }
    out.node->backward_fn = [bn, reps](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t r = 0; r < reps; ++r) {
                const double* g = self.grad.data() + r * bn;
                for (std::size_t i = 0; i < bn; ++i) pb.grad[i] += g[i];
            }
        }
    };
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (!is_suffix(b.shape(), a.shape())) shape_error("mul", a, b);
    Tensor out = make_op(a.shape(), {a.node, b.node});
    const std::size_t bn = b.numel();
    const std::size_t reps = out.numel() / bn;
    for (std::size_t r = 0; r < reps; ++r) {
        const double* av = a.value().data() + r * bn;
        const double* bv = b.value().data();
        double* ov = out.node->value.data() + r * bn;
        for (std::size_t i = 0; i < bn; ++i) ov[i] = av[i] * bv[i];
    }
    out.node->backward_fn = [bn, reps](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t r = 0; r < reps; ++r) {
                const double* g = self.grad.data() + r * bn;
                const double* bv = pb.value.data();
                double* ga = pa.grad.data() + r * bn;
                for (std::size_t i = 0; i < bn; ++i) ga[i] += g[i] * bv[i];
            }
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t r = 0; r < reps; ++r) {
                const double* g = self.grad.data() + r * bn;
                const double* av = pa.value.data() + r * bn;
                for (std::size_t i = 0; i < bn; ++i) pb.grad[i] += g[i] * av[i];
            }
        }
    };
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = make_op(a.shape(), {a.node});
    for (std::size_t i = 0; i < out.numel(); ++i) out.node->value[i] = c * a.value()[i];
    out.node->backward_fn = [c](Node& self) {
        Node& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += c * self.grad[i];
    };
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (b.shape().size() != 2 || a.shape().empty() || a.shape().back() != b.shape()[0])
        shape_error("matmul", a, b);
    const std::size_t k = b.shape()[0], n = b.shape()[1];
    const std::size_t rows = a.numel() / k;
    std::vector<std::size_t> out_shape = a.shape();
    out_shape.back() = n;
    Tensor out = make_op(std::move(out_shape), {a.node, b.node});
    k_ab(a.value().data(), b.value().data(), out.node->value.data(), rows, k, n);
    out.node->backward_fn = [rows, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            k_abt(self.grad.data(), pb.value.data(), pa.grad.data(), rows, n, k);
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            k_atb(pa.value.data(), self.grad.data(), pb.grad.data(), rows, k, n);
        }
    };
    return out;
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[1])
        shape_error("bmm", a, b);
    const std::size_t g = sa[0], m = sa[1], k = sa[2], n = sb[2];
    Tensor out = make_op({g, m, n}, {a.node, b.node});
    for (std::size_t s = 0; s < g; ++s)
        k_ab(a.value().data() + s * m * k, b.value().data() + s * k * n,
             out.node->value.data() + s * m * n, m, k, n);
    out.node->backward_fn = [g, m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t s = 0; s < g; ++s)
                k_abt(self.grad.data() + s * m * n, pb.value.data() + s * k * n,
                      pa.grad.data() + s * m * k, m, n, k);
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            for (std::size_t s = 0; s < g; ++s)
                k_atb(pa.value.data() + s * m * k, self.grad.data() + s * m * n,
                      pb.grad.data() + s * k * n, m, k, n);
        }
    };
    return out;
}

Tensor transpose_last2(const Tensor& a) {
    const auto& s = a.shape();
    if (s.size() != 3) throw std::invalid_argument("transpose_last2: needs a 3-d tensor");
    const std::size_t g = s[0], m = s[1], n = s[2];
    Tensor out = make_op({g, n, m}, {a.node});
    for (std::size_t sl = 0; sl < g; ++sl)
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j)
                out.node->value[sl * m * n + j * m + i] = a.value()[sl * m * n + i * n + j];
    out.node->backward_fn = [g, m, n](Node& self) {
        Node& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        for (std::size_t sl = 0; sl < g; ++sl)
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    pa.grad[sl * m * n + i * n + j] += self.grad[sl * m * n + j * m + i];
    };
    return out;
}

Tensor split_heads(const Tensor& a, std::size_t heads) {
    const auto& s = a.shape();
    if (s.size() != 3 || s[2] % heads != 0)
        throw std::invalid_argument("split_heads: bad shape " + shape_str(s));
    const std::size_t b = s[0], t = s[1], hd = s[2] / heads;
    Tensor out = make_op({b * heads, t, hd}, {a.node});
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t ti = 0; ti < t; ++ti)
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t e = 0; e < hd; ++e)
                    out.node->value[((bi * heads + h) * t + ti) * hd + e] =
                        a.value()[(bi * t + ti) * heads * hd + h * hd + e];
    out.node->backward_fn = [b, t, heads, hd](Node& self) {
        Node& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        for (std::size_t bi = 0; bi < b; ++bi)
            for (std::size_t ti = 0; ti < t; ++ti)
                for (std::size_t h = 0; h < heads; ++h)
                    for (std::size_t e = 0; e < hd; ++e)
                        pa.grad[(bi * t + ti) * heads * hd + h * hd + e] +=
                            self.grad[((bi * heads + h) * t + ti) * hd + e];
    };
    return out;
}

Tensor merge_heads(const Tensor& a, std::size_t heads) {
    const auto& s = a.shape();
    if (s.size() != 3 || s[0] % heads != 0)
        throw std::invalid_argument("merge_heads: bad shape " + shape_str(s));
    const std::size_t b = s[0] / heads, t = s[1], hd = s[2];
    Tensor out = make_op({b, t, heads * hd}, {a.node});
    for (std::size_t bi = 0; bi < b; ++bi)
        for (std::size_t ti = 0; ti < t; ++ti)
            for (std::size_t h = 0; h < heads; ++h)
                for (std::size_t e = 0; e < hd; ++e)
                    out.node->value[(bi * t + ti) * heads * hd + h * hd + e] =
                        a.value()[((bi * heads + h) * t + ti) * hd + e];
    out.node->backward_fn = [b, t, heads, hd](Node& self) {
        Node& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        for (std::size_t bi = 0; bi < b; ++bi)
            for (std::size_t ti = 0; ti < t; ++ti)
                for (std::size_t h = 0; h < heads; ++h)
                    for (std::size_t e = 0; e < hd; ++e)
                        pa.grad[((bi * heads + h) * t + ti) * hd + e] +=
                            self.grad[(bi * t + ti) * heads * hd + h * hd + e];
    };
    return out;
}

Tensor gelu(const Tensor& a) {
    Tensor out = make_op(a.shape(), {a.node});
    // The derivative is cached at forward time; the backward pass is then
    // transcendental-free.
    auto deriv = std::make_shared<std::vector<double>>(a.numel());
    const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double x = a.value()[i];
        const double phi = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
        const double pdf = std::exp(-0.5 * x * x) * inv_sqrt2pi;
        out.node->value[i] = x * phi;
        (*deriv)[i] = phi + x * pdf;
    }
    out.node->backward_fn = [deriv](Node& self) {
        Node& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        const double* d = deriv->data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i] * d[i];
    };
    return out;
}

Tensor layernorm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps) {
    const std::size_t d = a.shape().back();
    if (gamma.numel() != d || beta.numel() != d) shape_error("layernorm", a, gamma);
    const std::size_t rows = a.numel() / d;
    Tensor out = make_op(a.shape(), {a.node, gamma.node, beta.node});
    auto xhat = std::make_shared<std::vector<double>>(a.numel());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.value().data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += x[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double z = x[j] - mu;
            var += z * z;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        double* xh = xhat->data() + r * d;
        double* y = out.node->value.data() + r * d;
        for (std::size_t j = 0; j < d; ++j) {
            xh[j] = (x[j] - mu) * is;
            y[j] = gamma.value()[j] * xh[j] + beta.value()[j];
        }
    }
    out.node->backward_fn = [rows, d, xhat, inv_std](Node& self) {
        Node& pa = *self.parents[0];
        Node& pg = *self.parents[1];
        Node& pb = *self.parents[2];
        if (pg.requires_grad) pg.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        if (pa.requires_grad) pa.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* gy = self.grad.data() + r * d;
            const double* xh = xhat->data() + r * d;
            if (pg.requires_grad || pb.requires_grad) {
                for (std::size_t j = 0; j < d; ++j) {
                    if (pg.requires_grad) pg.grad[j] += gy[j] * xh[j];
                    if (pb.requires_grad) pb.grad[j] += gy[j];
                }
            }
            if (pa.requires_grad) {
                double m1 = 0.0, m2 = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double gj = pg.value[j] * gy[j];
                    m1 += gj;
                    m2 += gj * xh[j];
                }
                m1 /= static_cast<double>(d);
                m2 /= static_cast<double>(d);
                const double is = (*inv_std)[r];
                double* ga = pa.grad.data() + r * d;
                for (std::size_t j = 0; j < d; ++j)
                    ga[j] += is * (pg.value[j] * gy[j] - m1 - xh[j] * m2);
            }
        }
    };
    return out;
}

Tensor softmax_lastdim(const Tensor& a) {
    const std::size_t d = a.shape().back();
    const std::size_t rows = a.numel() / d;
    Tensor out = make_op(a.shape(), {a.node});
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = a.value().data() + r * d;
        double* y = out.node->value.data() + r * d;
        double m = x[0];
        for (std::size_t j = 1; j < d; ++j) m = std::max(m, x[j]);
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            y[j] = std::exp(x[j] - m);
            s += y[j];
        }
        for (std::size_t j = 0; j < d; ++j) y[j] /= s;
    }
    out.node->backward_fn = [rows, d](Node& self) {
        Node& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * d;
            const double* gy = self.grad.data() + r * d;
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += y[j] * gy[j];
            double* ga = pa.grad.data() + r * d;
            for (std::size_t j = 0; j < d; ++j) ga[j] += y[j] * (gy[j] - s);
        }
    };
    return out;
}

Tensor concat_tokens(const Tensor& a, const Tensor& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[2])
        shape_error("concat_tokens", a, b);
    const std::size_t bsz = sa[0], ta = sa[1], tb = sb[1], d = sa[2];
    Tensor out = make_op({bsz, ta + tb, d}, {a.node, b.node});
    for (std::size_t bi = 0; bi < bsz; ++bi) {
        std::copy(a.value().begin() + bi * ta * d, a.value().begin() + (bi + 1) * ta * d,
                  out.node->value.begin() + bi * (ta + tb) * d);
        std::copy(b.value().begin() + bi * tb * d, b.value().begin() + (bi + 1) * tb * d,
                  out.node->value.begin() + bi * (ta + tb) * d + ta * d);
    }
    out.node->backward_fn = [bsz, ta, tb, d](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        for (std::size_t bi = 0; bi < bsz; ++bi) {
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (std::size_t i = 0; i < ta * d; ++i)
                    pa.grad[bi * ta * d + i] += self.grad[bi * (ta + tb) * d + i];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (std::size_t i = 0; i < tb * d; ++i)
                    pb.grad[bi * tb * d + i] += self.grad[bi * (ta + tb) * d + ta * d + i];
            }
        }
    };
    return out;
}

Tensor slice_tokens(const Tensor& a, std::size_t start, std::size_t len) {
    const auto& s = a.shape();
    if (s.size() != 3 || start + len > s[1])
        throw std::invalid_argument("slice_tokens: bad range for shape " + shape_str(s));
    const std::size_t bsz = s[0], t = s[1], d = s[2];
    Tensor out = make_op({bsz, len, d}, {a.node});
    for (std::size_t bi = 0; bi < bsz; ++bi)
        std::copy(a.value().begin() + (bi * t + start) * d,
                  a.value().begin() + (bi * t + start + len) * d,
                  out.node->value.begin() + bi * len * d);
    out.node->backward_fn = [bsz, t, d, start, len](Node& self) {
        Node& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        for (std::size_t bi = 0; bi < bsz; ++bi)
            for (std::size_t i = 0; i < len * d; ++i)
                pa.grad[(bi * t + start) * d + i] += self.grad[bi * len * d + i];
    };
    return out;
}

Tensor select_tokens(const Tensor& a, const std::vector<std::size_t>& indices) {
    const auto& s = a.shape();
    if (s.size() != 3) throw std::invalid_argument("select_tokens: needs a 3-d tensor");
    const std::size_t bsz = s[0], t = s[1], d = s[2];
    for (std::size_t idx : indices)
        if (idx >= t) throw std::invalid_argument("select_tokens: index out of range");
    Tensor out = make_op({bsz, indices.size(), d}, {a.node});
    for (std::size_t bi = 0; bi < bsz; ++bi)
        for (std::size_t q = 0; q < indices.size(); ++q)
            std::copy(a.value().begin() + (bi * t + indices[q]) * d,
                      a.value().begin() + (bi * t + indices[q] + 1) * d,
                      out.node->value.begin() + (bi * indices.size() + q) * d);
    out.node->backward_fn = [bsz, t, d, indices](Node& self) {
        Node& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        for (std::size_t bi = 0; bi < bsz; ++bi)
            for (std::size_t q = 0; q < indices.size(); ++q)
                for (std::size_t j = 0; j < d; ++j)
                    pa.grad[(bi * t + indices[q]) * d + j] +=
                        self.grad[(bi * indices.size() + q) * d + j];
    };
    return out;
}

Tensor replace_tokens(const Tensor& a, const Tensor& replacement,
                      const std::vector<std::size_t>& indices) {
    const auto& s = a.shape();
    if (s.size() != 3 || replacement.numel() != s[2]) shape_error("replace_tokens", a, replacement);
    const std::size_t bsz = s[0], t = s[1], d = s[2];
    std::vector<bool> replaced(t, false);
    for (std::size_t idx : indices) {
        if (idx >= t) throw std::invalid_argument("replace_tokens: index out of range");
        replaced[idx] = true;
    }
    Tensor out = make_op(s, {a.node, replacement.node});
    out.node->value = a.value();
    for (std::size_t bi = 0; bi < bsz; ++bi)
        for (std::size_t idx : indices)
            std::copy(replacement.value().begin(), replacement.value().end(),
                      out.node->value.begin() + (bi * t + idx) * d);
    out.node->backward_fn = [bsz, t, d, indices, replaced](Node& self) {
        Node& pa = *self.parents[0];
        Node& pr = *self.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t bi = 0; bi < bsz; ++bi)
                for (std::size_t ti = 0; ti < t; ++ti) {
                    if (replaced[ti]) continue;
                    for (std::size_t j = 0; j < d; ++j)
                        pa.grad[(bi * t + ti) * d + j] += self.grad[(bi * t + ti) * d + j];
                }
        }
        if (pr.requires_grad) {
            pr.ensure_grad();
            for (std::size_t bi = 0; bi < bsz; ++bi)
                for (std::size_t idx : indices)
                    for (std::size_t j = 0; j < d; ++j)
                        pr.grad[j] += self.grad[(bi * t + idx) * d + j];
        }
    };
    return out;
}

Tensor tile_batch(const Tensor& a, std::size_t batch) {
    const auto& s = a.shape();
    if (s.size() != 2) throw std::invalid_argument("tile_batch: needs a 2-d tensor");
    Tensor out = make_op({batch, s[0], s[1]}, {a.node});
    for (std::size_t bi = 0; bi < batch; ++bi)
        std::copy(a.value().begin(), a.value().end(),
                  out.node->value.begin() + bi * a.numel());
    const std::size_t n = a.numel();
    out.node->backward_fn = [batch, n](Node& self) {
        Node& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        for (std::size_t bi = 0; bi < batch; ++bi)
            for (std::size_t i = 0; i < n; ++i) pa.grad[i] += self.grad[bi * n + i];
    };
    return out;
}

namespace {

// Per-position rotation angles; one (cos, sin) pair per pair of channels.
std::vector<double> rope_angles(const RopePos& p, std::size_t hd) {
    const std::size_t pairs = hd / 2, half = hd / 4;
    std::vector<double> angles(pairs, 0.0);
    if (!p.active) return angles;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
        angles[i] = p.row * freq;
        angles[half + i] = p.col * freq;
    }
    return angles;
}

} // namespace

Tensor rope2d(const Tensor& a, const std::vector<RopePos>& positions) {
    const auto& s = a.shape();
    if (s.size() != 3) throw std::invalid_argument("rope2d: needs a 3-d tensor");
    const std::size_t g = s[0], t = s[1], hd = s[2];
    if (hd % 4 != 0) throw std::invalid_argument("rope2d: head dim must be divisible by 4");
    if (positions.size() != t)
        throw std::invalid_argument("rope2d: positions size does not match token count");

    auto cosv = std::make_shared<std::vector<double>>(t * hd / 2);
    auto sinv = std::make_shared<std::vector<double>>(t * hd / 2);
    for (std::size_t ti = 0; ti < t; ++ti) {
        const auto ang = rope_angles(positions[ti], hd);
        for (std::size_t p = 0; p < hd / 2; ++p) {
            (*cosv)[ti * hd / 2 + p] = std::cos(ang[p]);
            (*sinv)[ti * hd / 2 + p] = std::sin(ang[p]);
        }
    }

    Tensor out = make_op(s, {a.node});
    for (std::size_t sl = 0; sl < g; ++sl)
        for (std::size_t ti = 0; ti < t; ++ti) {
            const double* x = a.value().data() + (sl * t + ti) * hd;
            double* y = out.node->value.data() + (sl * t + ti) * hd;
            for (std::size_t p = 0; p < hd / 2; ++p) {
                const double c = (*cosv)[ti * hd / 2 + p], sn = (*sinv)[ti * hd / 2 + p];
                y[2 * p] = c * x[2 * p] - sn * x[2 * p + 1];
                y[2 * p + 1] = sn * x[2 * p] + c * x[2 * p + 1];
            }
        }
    out.node->backward_fn = [g, t, hd, cosv, sinv](Node& self) {
        Node& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        for (std::size_t sl = 0; sl < g; ++sl)
            for (std::size_t ti = 0; ti < t; ++ti) {
                const double* gy = self.grad.data() + (sl * t + ti) * hd;
                double* gx = pa.grad.data() + (sl * t + ti) * hd;
                for (std::size_t p = 0; p < hd / 2; ++p) {
                    const double c = (*cosv)[ti * hd / 2 + p], sn = (*sinv)[ti * hd / 2 + p];
                    gx[2 * p] += c * gy[2 * p] + sn * gy[2 * p + 1];
                    gx[2 * p + 1] += -sn * gy[2 * p] + c * gy[2 * p + 1];
                }
            }
    };
    return out;
}

Tensor mse(const Tensor& a, const Tensor& target) {
    if (a.shape() != target.shape()) shape_error("mse", a, target);
    Tensor out = make_op({1}, {a.node, target.node});
    const std::size_t n = a.numel();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double z = a.value()[i] - target.value()[i];
        s += z * z;
    }
    out.node->value[0] = s / static_cast<double>(n);
    out.node->backward_fn = [n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pt = *self.parents[1];
        const double g = self.grad[0] * 2.0 / static_cast<double>(n);
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < n; ++i) pa.grad[i] += g * (pa.value[i] - pt.value[i]);
        }
        if (pt.requires_grad) {
            pt.ensure_grad();
            for (std::size_t i = 0; i < n; ++i) pt.grad[i] -= g * (pa.value[i] - pt.value[i]);
        }
    };
    return out;
}

Tensor mean_all(const Tensor& a) {
    Tensor out = make_op({1}, {a.node});
    const std::size_t n = a.numel();
    double s = 0.0;
    for (double v : a.value()) s += v;
    out.node->value[0] = s / static_cast<double>(n);
    out.node->backward_fn = [n](Node& self) {
        Node& pa = *self.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        const double g = self.grad[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) pa.grad[i] += g;
    };
    return out;
}

void backward(const Tensor& loss) {
    if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be a scalar");
    // Post-order DFS for a reverse topological schedule.
    std::vector<Node*> topo;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node.get(), 0}};
    visited.insert(loss.node.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* parent = node->parents[idx++].get();
            if (!visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }
    // Interior grads are fresh per call; leaf grads accumulate.
    for (Node* n : topo)
        if (!n->parents.empty() && n->requires_grad) n->grad.assign(n->numel(), 0.0);
    if (!loss.node->requires_grad) return; // nothing trainable upstream
    loss.node->ensure_grad();
    loss.node->grad[0] = 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node* n = *it;
        if (n->requires_grad && n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

} // namespace latlab::ad
