#include "sta/numerics/graph.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace sta::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(const Tensor& t) { return ConstMap(t.data(), t.rows(), t.cols()); }
MutMap as_matrix(std::vector<double>& v, std::size_t r, std::size_t c) { return MutMap(v.data(), r, c); }

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                                b.shape_string());
}

void im2col_kernel(const double* in, double* out, const ConvGeometry& geo) {
    const std::size_t oh = geo.out_height(), ow = geo.out_width(), c = geo.channels;
    const std::size_t patch = geo.patch_size();
    for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
            double* dst = out + (oy * ow + ox) * patch;
            for (std::size_t ky = 0; ky < geo.kernel_h; ++ky) {
                const long iy = static_cast<long>(oy * geo.stride + ky) - static_cast<long>(geo.pad_h);
                for (std::size_t kx = 0; kx < geo.kernel_w; ++kx) {
                    const long ix = static_cast<long>(ox * geo.stride + kx) - static_cast<long>(geo.pad_w);
                    double* cell = dst + (ky * geo.kernel_w + kx) * c;
                    if (iy < 0 || ix < 0 || iy >= static_cast<long>(geo.height) || ix >= static_cast<long>(geo.width)) {
                        std::fill(cell, cell + c, 0.0);
                    } else {
                        const double* src = in + (static_cast<std::size_t>(iy) * geo.width + static_cast<std::size_t>(ix)) * c;
                        std::copy(src, src + c, cell);
                    }
                }
            }
        }
    }
}

// Adjoint of im2col: scatter-adds patch columns back onto the image.
void col2im_kernel(const double* cols, double* out, const ConvGeometry& geo) {
    const std::size_t oh = geo.out_height(), ow = geo.out_width(), c = geo.channels;
    const std::size_t patch = geo.patch_size();
    for (std::size_t oy = 0; oy < oh; ++oy) {
        for (std::size_t ox = 0; ox < ow; ++ox) {
            const double* src = cols + (oy * ow + ox) * patch;
            for (std::size_t ky = 0; ky < geo.kernel_h; ++ky) {
                const long iy = static_cast<long>(oy * geo.stride + ky) - static_cast<long>(geo.pad_h);
                if (iy < 0 || iy >= static_cast<long>(geo.height)) continue;
                for (std::size_t kx = 0; kx < geo.kernel_w; ++kx) {
                    const long ix = static_cast<long>(ox * geo.stride + kx) - static_cast<long>(geo.pad_w);
                    if (ix < 0 || ix >= static_cast<long>(geo.width)) continue;
                    const double* cell = src + (ky * geo.kernel_w + kx) * c;
                    double* dst = out + (static_cast<std::size_t>(iy) * geo.width + static_cast<std::size_t>(ix)) * c;
                    for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += cell[ch];
                }
            }
        }
    }
}

constexpr double kGeluC = 0.044715;
const double kGeluK = std::sqrt(2.0 / std::numbers::pi);

}  // namespace

void ConvGeometry::validate() const {
    if (height == 0 || width == 0 || channels == 0 || kernel_h == 0 || kernel_w == 0 || stride == 0)
        throw std::invalid_argument("conv geometry has a zero extent");
    if (height + 2 * pad_h < kernel_h || width + 2 * pad_w < kernel_w)
        throw std::invalid_argument("conv kernel larger than padded input");
}

Var Graph::push(Tensor value, bool requires_grad, std::function<void(Graph&)> backward) {
    Node n;
    n.owned = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::input(Tensor t, bool requires_grad) { return push(std::move(t), requires_grad, {}); }

Var Graph::param(const ParameterStore& store, std::size_t index) {
    Node n;
    n.alias = &store[index].value;
    n.store = &store;
    n.param_index = index;
    n.requires_grad = !store[index].frozen;
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tensor& Graph::value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.alias ? *n.alias : n.owned;
}

double Graph::item(Var v) const {
    const Tensor& t = value(v);
    if (t.size() != 1) throw std::invalid_argument("item() on non-scalar " + t.shape_string());
    return t[0];
}

const std::vector<double>& Graph::grad(Var v) const {
    if (!backward_done_) throw std::logic_error("grad() before backward()");
    return nodes_.at(v.id).grad;
}

void Graph::backward(Var loss) {
    if (backward_done_) throw std::logic_error("graph backward() called twice");
    if (value(loss).size() != 1) throw std::invalid_argument("backward() needs a scalar root");
    for (std::uint32_t i = 0; i <= loss.id; ++i) {
        Node& n = nodes_[i];
        if (n.requires_grad) n.grad.assign(value(Var{i}).size(), 0.0);
    }
    backward_done_ = true;
    if (!nodes_[loss.id].requires_grad) return;
    nodes_[loss.id].grad[0] = 1.0;
    for (std::uint32_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (n.requires_grad && n.backward) n.backward(*this);
    }
}

void Graph::accumulate(Gradients& out) const {
    for (const Node& n : nodes_) {
        if (n.store != &out.store() || n.grad.empty()) continue;
        auto& dst = out[n.param_index];
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += n.grad[j];
    }
}

// ---------------------------------------------------------------------------
// Linear algebra

Var Graph::matmul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.cols() != B.rows()) shape_error("matmul", A, B);
    const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
    Tensor C({m, n});
    as_matrix(C.values(), m, n).noalias() = as_matrix(A) * as_matrix(B);
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(C), needs(a) || needs(b), [a, b, o, m, k, n](Graph& gr) {
        auto dC = as_matrix(gr.g(o), m, n);
        if (gr.needs(a)) as_matrix(gr.g(a), m, k).noalias() += dC * as_matrix(gr.value(b)).transpose();
        if (gr.needs(b)) as_matrix(gr.g(b), k, n).noalias() += as_matrix(gr.value(a)).transpose() * dC;
    });
}

Var Graph::matmul_nt(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.cols() != B.cols()) shape_error("matmul_nt", A, B);
    const std::size_t m = A.rows(), k = A.cols(), n = B.rows();
    Tensor C({m, n});
    as_matrix(C.values(), m, n).noalias() = as_matrix(A) * as_matrix(B).transpose();
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(C), needs(a) || needs(b), [a, b, o, m, k, n](Graph& gr) {
        auto dC = as_matrix(gr.g(o), m, n);
        if (gr.needs(a)) as_matrix(gr.g(a), m, k).noalias() += dC * as_matrix(gr.value(b));
        if (gr.needs(b)) as_matrix(gr.g(b), n, k).noalias() += dC.transpose() * as_matrix(gr.value(a));
    });
}

Var Graph::transpose(Var a) {
    const Tensor& A = value(a);
    const std::size_t m = A.rows(), n = A.cols();
    Tensor T({n, m});
    as_matrix(T.values(), n, m) = as_matrix(A).transpose();
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(T), needs(a), [a, o, m, n](Graph& gr) {
        as_matrix(gr.g(a), m, n) += as_matrix(gr.g(o), n, m).transpose();
    });
}

// ---------------------------------------------------------------------------
// Elementwise

Var Graph::add(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.size() != B.size()) shape_error("add", A, B);
    Tensor C = A;
    for (std::size_t i = 0; i < C.size(); ++i) C[i] += B[i];
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(C), needs(a) || needs(b), [a, b, o](Graph& gr) {
        const auto& d = gr.g(o);
        for (Var v : {a, b}) {
            if (!gr.needs(v)) continue;
            auto& dv = gr.g(v);
            for (std::size_t i = 0; i < d.size(); ++i) dv[i] += d[i];
        }
    });
}

Var Graph::sub(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.size() != B.size()) shape_error("sub", A, B);
    Tensor C = A;
    for (std::size_t i = 0; i < C.size(); ++i) C[i] -= B[i];
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(C), needs(a) || needs(b), [a, b, o](Graph& gr) {
        const auto& d = gr.g(o);
        if (gr.needs(a)) {
            auto& da = gr.g(a);
            for (std::size_t i = 0; i < d.size(); ++i) da[i] += d[i];
        }
        if (gr.needs(b)) {
            auto& db = gr.g(b);
            for (std::size_t i = 0; i < d.size(); ++i) db[i] -= d[i];
        }
    });
}

Var Graph::mul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.size() != B.size()) shape_error("mul", A, B);
    Tensor C = A;
    for (std::size_t i = 0; i < C.size(); ++i) C[i] *= B[i];
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(C), needs(a) || needs(b), [a, b, o](Graph& gr) {
        const auto& d = gr.g(o);
        if (gr.needs(a)) {
            auto& da = gr.g(a);
            const Tensor& B = gr.value(b);
            for (std::size_t i = 0; i < d.size(); ++i) da[i] += d[i] * B[i];
        }
        if (gr.needs(b)) {
            auto& db = gr.g(b);
            const Tensor& A = gr.value(a);
            for (std::size_t i = 0; i < d.size(); ++i) db[i] += d[i] * A[i];
        }
    });
}

Var Graph::add_row(Var x, Var row) {
    const Tensor& X = value(x);
    const Tensor& R = value(row);
    const std::size_t m = X.rows(), n = X.cols();
    if (R.size() != n) shape_error("add_row", X, R);
    Tensor Y = X;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) Y[i * n + j] += R[j];
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(Y), needs(x) || needs(row), [x, row, o, m, n](Graph& gr) {
        const auto& d = gr.g(o);
        if (gr.needs(x)) {
            auto& dx = gr.g(x);
            for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i];
        }
        if (gr.needs(row)) {
            auto& dr = gr.g(row);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) dr[j] += d[i * n + j];
        }
    });
}

Var Graph::mul_row(Var x, Var row) {
    const Tensor& X = value(x);
    const Tensor& R = value(row);
    const std::size_t m = X.rows(), n = X.cols();
    if (R.size() != n) shape_error("mul_row", X, R);
    Tensor Y = X;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) Y[i * n + j] *= R[j];
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(Y), needs(x) || needs(row), [x, row, o, m, n](Graph& gr) {
        const auto& d = gr.g(o);
        const Tensor& X = gr.value(x);
        const Tensor& R = gr.value(row);
        if (gr.needs(x)) {
            auto& dx = gr.g(x);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += d[i * n + j] * R[j];
        }
        if (gr.needs(row)) {
            auto& dr = gr.g(row);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) dr[j] += d[i * n + j] * X[i * n + j];
        }
    });
}

Var Graph::scale(Var x, double s) {
    Tensor Y = value(x);
    for (double& v : Y.values()) v *= s;
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(Y), needs(x), [x, o, s](Graph& gr) {
        const auto& d = gr.g(o);
        auto& dx = gr.g(x);
        for (std::size_t i = 0; i < d.size(); ++i) dx[i] += s * d[i];
    });
}

Var Graph::scale_by(Var x, Var s) {
    if (value(s).size() != 1) throw std::invalid_argument("scale_by: factor must be a scalar");
    const double f = value(s)[0];
    Tensor Y = value(x);
    for (double& v : Y.values()) v *= f;
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(Y), needs(x) || needs(s), [x, s, o](Graph& gr) {
        const auto& d = gr.g(o);
        const double f = gr.value(s)[0];
        if (gr.needs(x)) {
            auto& dx = gr.g(x);
            for (std::size_t i = 0; i < d.size(); ++i) dx[i] += f * d[i];
        }
        if (gr.needs(s)) {
            const Tensor& X = gr.value(x);
            double acc = 0.0;
            for (std::size_t i = 0; i < d.size(); ++i) acc += d[i] * X[i];
            gr.g(s)[0] += acc;
        }
    });
}

Var Graph::square(Var x) {
    Tensor Y = value(x);
    for (double& v : Y.values()) v *= v;
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(Y), needs(x), [x, o](Graph& gr) {
        const auto& d = gr.g(o);
        const Tensor& X = gr.value(x);
        auto& dx = gr.g(x);
        for (std::size_t i = 0; i < d.size(); ++i) dx[i] += 2.0 * X[i] * d[i];
    });
}

Var Graph::relu(Var x) {
    Tensor Y = value(x);
    for (double& v : Y.values()) v = v > 0.0 ? v : 0.0;
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(Y), needs(x), [x, o](Graph& gr) {
        const auto& d = gr.g(o);
        const Tensor& X = gr.value(x);
        auto& dx = gr.g(x);
        for (std::size_t i = 0; i < d.size(); ++i)
            if (X[i] > 0.0) dx[i] += d[i];
    });
}

Var Graph::gelu(Var x) {
    Tensor Y = value(x);
    for (double& v : Y.values()) v = 0.5 * v * (1.0 + std::tanh(kGeluK * (v + kGeluC * v * v * v)));
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(Y), needs(x), [x, o](Graph& gr) {
        const auto& d = gr.g(o);
        const Tensor& X = gr.value(x);
        auto& dx = gr.g(x);
        for (std::size_t i = 0; i < d.size(); ++i) {
            const double v = X[i];
            const double t = std::tanh(kGeluK * (v + kGeluC * v * v * v));
            const double dt = (1.0 - t * t) * kGeluK * (1.0 + 3.0 * kGeluC * v * v);
            dx[i] += d[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
        }
    });
}

Var Graph::exp(Var x) {
    Tensor Y = value(x);
    for (double& v : Y.values()) v = std::exp(v);
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(Y), needs(x), [x, o](Graph& gr) {
        const auto& d = gr.g(o);
        const Tensor& Y = gr.value(o);
        auto& dx = gr.g(x);
        for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i] * Y[i];
    });
}

Var Graph::log(Var x, double floor) {
    Tensor Y = value(x);
    for (double& v : Y.values()) v = std::log(std::max(v, floor));
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(Y), needs(x), [x, o, floor](Graph& gr) {
        const auto& d = gr.g(o);
        const Tensor& X = gr.value(x);
        auto& dx = gr.g(x);
        for (std::size_t i = 0; i < d.size(); ++i)
            if (X[i] > floor) dx[i] += d[i] / X[i];
    });
}

Var Graph::clamp_max(Var x, double hi) {
    Tensor Y = value(x);
    for (double& v : Y.values()) v = std::min(v, hi);
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(Y), needs(x), [x, o, hi](Graph& gr) {
        const auto& d = gr.g(o);
        const Tensor& X = gr.value(x);
        auto& dx = gr.g(x);
        for (std::size_t i = 0; i < d.size(); ++i)
            if (X[i] < hi) dx[i] += d[i];
    });
}

// ---------------------------------------------------------------------------
// Normalisation and losses

Var Graph::softmax(Var x, int axis) {
    const Tensor& X = value(x);
    if (axis != 0 && axis != 1) throw std::invalid_argument("softmax: axis must be 0 or 1");
    const std::size_t m = X.rows(), n = X.cols();
    // Walk "lines" along the chosen axis: `count` lines of `len` elements with `step` stride.
    const std::size_t lines = axis == 1 ? m : n, len = axis == 1 ? n : m;
    const std::size_t step = axis == 1 ? 1 : n, line_step = axis == 1 ? n : 1;
    Tensor Y = X;
    for (std::size_t l = 0; l < lines; ++l) {
        double* p = Y.data() + l * line_step;
        double mx = p[0];
        for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, p[j * step]);
        double s = 0.0;
        for (std::size_t j = 0; j < len; ++j) s += (p[j * step] = std::exp(p[j * step] - mx));
        for (std::size_t j = 0; j < len; ++j) p[j * step] /= s;
    }
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(Y), needs(x), [x, o, lines, len, step, line_step](Graph& gr) {
        const auto& d = gr.g(o);
        const Tensor& Y = gr.value(o);
        auto& dx = gr.g(x);
        for (std::size_t l = 0; l < lines; ++l) {
            const std::size_t base = l * line_step;
            double dot = 0.0;
            for (std::size_t j = 0; j < len; ++j) dot += d[base + j * step] * Y[base + j * step];
            for (std::size_t j = 0; j < len; ++j) {
                const std::size_t i = base + j * step;
                dx[i] += Y[i] * (d[i] - dot);
            }
        }
    });
}

Var Graph::log_softmax(Var x) {
    const Tensor& X = value(x);
    const std::size_t m = X.rows(), n = X.cols();
    Tensor Y = X;
    for (std::size_t i = 0; i < m; ++i) {
        auto r = Y.row(i);
        const double mx = *std::max_element(r.begin(), r.end());
        double s = 0.0;
        for (double v : r) s += std::exp(v - mx);
        const double lse = mx + std::log(s);
        for (double& v : r) v -= lse;
    }
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(Y), needs(x), [x, o, m, n](Graph& gr) {
        const auto& d = gr.g(o);
        const Tensor& Y = gr.value(o);
        auto& dx = gr.g(x);
        for (std::size_t i = 0; i < m; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += d[i * n + j];
            for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += d[i * n + j] - std::exp(Y[i * n + j]) * s;
        }
    });
}

Var Graph::layer_norm(Var x, double eps) {
    const Tensor& X = value(x);
    const std::size_t m = X.rows(), n = X.cols();
    if (n == 0) throw std::invalid_argument("layer_norm: empty normalised axis");
    Tensor Y = X;
    std::vector<double> rstd(m);
    for (std::size_t i = 0; i < m; ++i) {
        auto r = Y.row(i);
        double mu = 0.0;
        for (double v : r) mu += v;
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (double v : r) var += (v - mu) * (v - mu);
        var /= static_cast<double>(n);
        rstd[i] = 1.0 / std::sqrt(var + eps);
        for (double& v : r) v = (v - mu) * rstd[i];
    }
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(Y), needs(x), [x, o, m, n, rstd = std::move(rstd)](Graph& gr) {
        const auto& d = gr.g(o);
        const Tensor& Y = gr.value(o);
        auto& dx = gr.g(x);
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < m; ++i) {
            double mean_d = 0.0, mean_dy = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                mean_d += d[i * n + j];
                mean_dy += d[i * n + j] * Y[i * n + j];
            }
            mean_d *= inv_n;
            mean_dy *= inv_n;
            for (std::size_t j = 0; j < n; ++j)
                dx[i * n + j] += rstd[i] * (d[i * n + j] - mean_d - Y[i * n + j] * mean_dy);
        }
    });
}

Var Graph::layer_norm(Var x, Var gain, Var bias, double eps) {
    return add_row(mul_row(layer_norm(x, eps), gain), bias);
}

Var Graph::l2_normalize_rows(Var x) {
    const Tensor& X = value(x);
    const std::size_t m = X.rows(), n = X.cols();
    Tensor Y = X;
    std::vector<double> norms(m);
    for (std::size_t i = 0; i < m; ++i) {
        auto r = Y.row(i);
        double s = 0.0;
        for (double v : r) s += v * v;
        norms[i] = std::sqrt(s);
        if (!(norms[i] > 0.0) || !std::isfinite(norms[i]))
            throw std::domain_error("l2_normalize_rows: row " + std::to_string(i) + " has zero or non-finite norm");
        for (double& v : r) v /= norms[i];
    }
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(Y), needs(x), [x, o, m, n, norms = std::move(norms)](Graph& gr) {
        const auto& d = gr.g(o);
        const Tensor& Y = gr.value(o);
        auto& dx = gr.g(x);
        for (std::size_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += d[i * n + j] * Y[i * n + j];
            for (std::size_t j = 0; j < n; ++j) dx[i * n + j] += (d[i * n + j] - Y[i * n + j] * dot) / norms[i];
        }
    });
}

Var Graph::cross_entropy(Var logits, std::span<const int> targets) {
    const Tensor& L = value(logits);
    const std::size_t m = L.rows(), n = L.cols();
    if (targets.size() != m)
        throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                                    std::to_string(m) + " rows");
    std::vector<double> probs(L.values());
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        const int t = targets[i];
        if (t < 0 || static_cast<std::size_t>(t) >= n)
            throw std::out_of_range("cross_entropy: target " + std::to_string(t) + " outside [0, " +
                                    std::to_string(n) + ")");
        double* p = probs.data() + i * n;
        const double mx = *std::max_element(p, p + n);
        double s = 0.0;
        for (std::size_t j = 0; j < n; ++j) s += (p[j] = std::exp(p[j] - mx));
        loss += std::log(s) + mx - L[i * n + static_cast<std::size_t>(t)];
        for (std::size_t j = 0; j < n; ++j) p[j] /= s;
    }
    loss /= static_cast<double>(m);
    std::vector<int> tg(targets.begin(), targets.end());
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(Tensor::scalar(loss), needs(logits),
                [logits, o, m, n, probs = std::move(probs), tg = std::move(tg)](Graph& gr) {
                    const double d = gr.g(o)[0] / static_cast<double>(m);
                    auto& dl = gr.g(logits);
                    for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t j = 0; j < n; ++j) dl[i * n + j] += d * probs[i * n + j];
                        dl[i * n + static_cast<std::size_t>(tg[i])] -= d;
                    }
                });
}

// ---------------------------------------------------------------------------
// Reductions

Var Graph::sum(Var x) {
    double s = 0.0;
    for (double v : value(x).values()) s += v;
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(Tensor::scalar(s), needs(x), [x, o](Graph& gr) {
        const double d = gr.g(o)[0];
        for (double& v : gr.g(x)) v += d;
    });
}

Var Graph::mean(Var x) {
    const double n = static_cast<double>(value(x).size());
    return scale(sum(x), 1.0 / n);
}

// ---------------------------------------------------------------------------
// Structure

Var Graph::slice_rows(Var x, std::size_t start, std::size_t count) {
    const Tensor& X = value(x);
    const std::size_t n = X.cols();
    if (start + count > X.rows()) throw std::out_of_range("slice_rows beyond " + X.shape_string());
    Tensor Y({count, n});
    std::copy(X.data() + start * n, X.data() + (start + count) * n, Y.data());
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(Y), needs(x), [x, o, start, n](Graph& gr) {
        const auto& d = gr.g(o);
        auto& dx = gr.g(x);
        for (std::size_t i = 0; i < d.size(); ++i) dx[start * n + i] += d[i];
    });
}

Var Graph::slice_cols(Var x, std::size_t start, std::size_t count) {
    const Tensor& X = value(x);
    const std::size_t m = X.rows(), n = X.cols();
    if (start + count > n) throw std::out_of_range("slice_cols beyond " + X.shape_string());
    Tensor Y({m, count});
    for (std::size_t i = 0; i < m; ++i)
        std::copy(X.data() + i * n + start, X.data() + i * n + start + count, Y.data() + i * count);
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(Y), needs(x), [x, o, start, count, m, n](Graph& gr) {
        const auto& d = gr.g(o);
        auto& dx = gr.g(x);
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < count; ++j) dx[i * n + start + j] += d[i * count + j];
    });
}

Var Graph::concat_rows(std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows of nothing");
    const std::size_t n = value(parts[0]).cols();
    std::size_t m = 0;
    bool rg = false;
    for (Var p : parts) {
        if (value(p).cols() != n) shape_error("concat_rows", value(parts[0]), value(p));
        m += value(p).rows();
        rg = rg || needs(p);
    }
    Tensor Y({m, n});
    std::size_t off = 0;
    for (Var p : parts) {
        const Tensor& P = value(p);
        std::copy(P.data(), P.data() + P.size(), Y.data() + off);
        off += P.size();
    }
    std::vector<Var> ps(parts.begin(), parts.end());
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(Y), rg, [ps = std::move(ps), o](Graph& gr) {
        const auto& d = gr.g(o);
        std::size_t off = 0;
        for (Var p : ps) {
            const std::size_t sz = gr.value(p).size();
            if (gr.needs(p)) {
                auto& dp = gr.g(p);
                for (std::size_t i = 0; i < sz; ++i) dp[i] += d[off + i];
            }
            off += sz;
        }
    });
}

Var Graph::concat_cols(std::span<const Var> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols of nothing");
    const std::size_t m = value(parts[0]).rows();
    std::size_t n = 0;
    bool rg = false;
    for (Var p : parts) {
        if (value(p).rows() != m) shape_error("concat_cols", value(parts[0]), value(p));
        n += value(p).cols();
        rg = rg || needs(p);
    }
    Tensor Y({m, n});
    std::size_t off = 0;
    for (Var p : parts) {
        const Tensor& P = value(p);
        const std::size_t c = P.cols();
        for (std::size_t i = 0; i < m; ++i) std::copy(P.data() + i * c, P.data() + (i + 1) * c, Y.data() + i * n + off);
        off += c;
    }
    std::vector<Var> ps(parts.begin(), parts.end());
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(Y), rg, [ps = std::move(ps), o, m, n](Graph& gr) {
        const auto& d = gr.g(o);
        std::size_t off = 0;
        for (Var p : ps) {
            const std::size_t c = gr.value(p).cols();
            if (gr.needs(p)) {
                auto& dp = gr.g(p);
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < c; ++j) dp[i * c + j] += d[i * n + off + j];
            }
            off += c;
        }
    });
}

Var Graph::gather_rows(Var table, std::span<const int> indices) {
    const Tensor& T = value(table);
    const std::size_t rows = T.rows(), n = T.cols();
    Tensor Y({indices.size(), n});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const int r = indices[i];
        if (r < 0 || static_cast<std::size_t>(r) >= rows)
            throw std::out_of_range("gather_rows: index " + std::to_string(r) + " outside table of " +
                                    std::to_string(rows) + " rows");
        std::copy(T.data() + static_cast<std::size_t>(r) * n, T.data() + (static_cast<std::size_t>(r) + 1) * n,
                  Y.data() + i * n);
    }
    std::vector<int> idx(indices.begin(), indices.end());
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(Y), needs(table), [table, o, n, idx = std::move(idx)](Graph& gr) {
        const auto& d = gr.g(o);
        auto& dt = gr.g(table);
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < n; ++j) dt[static_cast<std::size_t>(idx[i]) * n + j] += d[i * n + j];
    });
}

Var Graph::im2col(Var image, const ConvGeometry& geo) {
    geo.validate();
    const Tensor& X = value(image);
    if (X.rows() != geo.height * geo.width || X.cols() != geo.channels)
        throw std::invalid_argument("im2col: image " + X.shape_string() + " does not match geometry");
    Tensor Y({geo.out_height() * geo.out_width(), geo.patch_size()});
    im2col_kernel(X.data(), Y.data(), geo);
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(Y), needs(image), [image, o, geo](Graph& gr) {
        col2im_kernel(gr.g(o).data(), gr.g(image).data(), geo);
    });
}

Var Graph::col2im(Var cols, const ConvGeometry& geo) {
    geo.validate();
    const Tensor& C = value(cols);
    if (C.rows() != geo.out_height() * geo.out_width() || C.cols() != geo.patch_size())
        throw std::invalid_argument("col2im: columns " + C.shape_string() + " do not match geometry");
    Tensor Y({geo.height * geo.width, geo.channels});
    col2im_kernel(C.data(), Y.data(), geo);
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(std::move(Y), needs(cols), [cols, o, geo](Graph& gr) {
        const auto& d = gr.g(o);
        std::vector<double> patches(gr.value(cols).size());
        im2col_kernel(d.data(), patches.data(), geo);
        auto& dc = gr.g(cols);
        for (std::size_t i = 0; i < patches.size(); ++i) dc[i] += patches[i];
    });
}

Var Graph::straight_through(Var x, Var quantized) {
    const Tensor& X = value(x);
    const Tensor& Q = value(quantized);
    if (!X.same_shape(Q)) shape_error("straight_through", X, Q);
    const Var o{static_cast<std::uint32_t>(nodes_.size())};
    return push(Q, needs(x), [x, o](Graph& gr) {
        const auto& d = gr.g(o);
        auto& dx = gr.g(x);
        for (std::size_t i = 0; i < d.size(); ++i) dx[i] += d[i];
    });
}

Var Graph::stop_gradient(Var x) { return push(value(x), false, {}); }

}  // namespace sta::nn
