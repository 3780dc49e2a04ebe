// SPDX-License-Identifier: Apache-2.0

#include "graphormer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace graphormer {

namespace {

thread_local Tape* g_active_tape = nullptr;

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

std::vector<std::size_t> row_major_strides(const Shape& shape) {
    std::vector<std::size_t> strides(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) {
        strides[i - 1] = strides[i] * shape[i];
    }
    return strides;
}

// numpy-style broadcast of two shapes; throws on incompatibility.
Shape broadcast_shapes(const char* op, const Shape& a, const Shape& b) {
    const std::size_t nd = std::max(a.size(), b.size());
    Shape out(nd, 1);
    for (std::size_t i = 0; i < nd; ++i) {
        const std::size_t da = i < nd - a.size() ? 1 : a[i - (nd - a.size())];
        const std::size_t db = i < nd - b.size() ? 1 : b[i - (nd - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) +
                             " with " + shape_str(b));
        }
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `shape` expanded to `out` (0 where broadcast).
std::vector<std::size_t> broadcast_strides(const Shape& shape, const Shape& out) {
    const auto base = row_major_strides(shape);
    std::vector<std::size_t> strides(out.size(), 0);
    const std::size_t pad = out.size() - shape.size();
    for (std::size_t i = 0; i < shape.size(); ++i) {
        strides[pad + i] = shape[i] == 1 ? 0 : base[i];
    }
    return strides;
}

// Odometer iteration over `out_shape`, calling f(out_flat, a_flat, b_flat).
template <typename F>
void for_each_broadcast(const Shape& out_shape, const std::vector<std::size_t>& a_strides,
                        const std::vector<std::size_t>& b_strides, F&& f) {
    const std::size_t total = numel_of(out_shape);
    const std::size_t nd = out_shape.size();
    std::vector<std::size_t> coord(nd, 0);
    std::size_t ai = 0;
    std::size_t bi = 0;
    for (std::size_t o = 0; o < total; ++o) {
        f(o, ai, bi);
        for (std::size_t d = nd; d-- > 0;) {
            coord[d] += 1;
            ai += a_strides[d];
            bi += b_strides[d];
            if (coord[d] < out_shape[d]) break;
            ai -= a_strides[d] * out_shape[d];
            bi -= b_strides[d] * out_shape[d];
            coord[d] = 0;
        }
    }
}

template <typename Fwd, typename BwdA, typename BwdB>
Tensor broadcast_binary(const char* op, const Tensor& a, const Tensor& b, Fwd&& fwd,
                        BwdA&& bwd_a, BwdB&& bwd_b) {
    const Shape out_shape = broadcast_shapes(op, a.shape(), b.shape());
    const auto a_strides = broadcast_strides(a.shape(), out_shape);
    const auto b_strides = broadcast_strides(b.shape(), out_shape);

    std::vector<double> vals(numel_of(out_shape));
    const auto& av = a.values();
    const auto& bv = b.values();
    for_each_broadcast(out_shape, a_strides, b_strides,
                       [&](std::size_t o, std::size_t ai, std::size_t bi) {
                           vals[o] = fwd(av[ai], bv[bi]);
                       });

    Tensor out = detail::make_op_output(op, out_shape, std::move(vals),
                                        a.requires_grad() || b.requires_grad());
    if (out.requires_grad()) {
        Tape::active()->record(op, out,
                               [a, b, out, out_shape, a_strides, b_strides, bwd_a, bwd_b]() {
            const auto& g = out.grad();
            const auto& av2 = a.values();
            const auto& bv2 = b.values();
            Tensor am = a;
            Tensor bm = b;
            double* ga = a.requires_grad() ? am.grad_buffer().data() : nullptr;
            double* gb = b.requires_grad() ? bm.grad_buffer().data() : nullptr;
            for_each_broadcast(out_shape, a_strides, b_strides,
                               [&](std::size_t o, std::size_t ai, std::size_t bi) {
                                   if (ga) ga[ai] += bwd_a(g[o], av2[ai], bv2[bi]);
                                   if (gb) gb[bi] += bwd_b(g[o], av2[ai], bv2[bi]);
                               });
        });
    }
    return out;
}

template <typename Fwd, typename Deriv>
Tensor unary_elementwise(const char* op, const Tensor& x, Fwd&& fwd, Deriv&& deriv) {
    std::vector<double> vals(x.numel());
    const auto& xv = x.values();
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = fwd(xv[i]);
    Tensor out = detail::make_op_output(op, x.shape(), std::move(vals), x.requires_grad());
    if (out.requires_grad()) {
        Tape::active()->record(op, out, [x, out, deriv]() {
            Tensor xm = x;
            auto& gx = xm.grad_buffer();
            const auto& g = out.grad();
            const auto& xv2 = x.values();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * deriv(xv2[i]);
        });
    }
    return out;
}

struct MatmulDims {
    Shape batch;            // broadcast batch shape
    std::size_t m, k, p;
    std::vector<std::size_t> a_batch_strides; // per batch dim, in matrices
    std::vector<std::size_t> b_batch_strides;
};

MatmulDims matmul_dims(const Tensor& a, const Tensor& b) {
    if (a.ndim() < 2 || b.ndim() < 2) {
        throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    }
    MatmulDims d;
    d.m = a.shape()[a.ndim() - 2];
    d.k = a.shape()[a.ndim() - 1];
    const std::size_t bk = b.shape()[b.ndim() - 2];
    d.p = b.shape()[b.ndim() - 1];
    if (d.k != bk) {
        throw ShapeError("matmul: inner dimensions differ for " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    }
    const Shape a_batch(a.shape().begin(), a.shape().end() - 2);
    const Shape b_batch(b.shape().begin(), b.shape().end() - 2);
    d.batch = broadcast_shapes("matmul", a_batch, b_batch);
    // strides counted in whole matrices
    auto mat_strides = [](const Shape& batch, const Shape& out) {
        return broadcast_strides(batch, out);
    };
    d.a_batch_strides = mat_strides(a_batch, d.batch);
    d.b_batch_strides = mat_strides(b_batch, d.batch);
    return d;
}

template <typename F>
void for_each_batch(const Shape& batch, const std::vector<std::size_t>& a_strides,
                    const std::vector<std::size_t>& b_strides, F&& f) {
    const std::size_t total = numel_of(batch);
    std::vector<std::size_t> coord(batch.size(), 0);
    std::size_t ai = 0;
    std::size_t bi = 0;
    for (std::size_t o = 0; o < total; ++o) {
        f(o, ai, bi);
        for (std::size_t d = batch.size(); d-- > 0;) {
            coord[d] += 1;
            ai += a_strides[d];
            bi += b_strides[d];
            if (coord[d] < batch[d]) break;
            ai -= a_strides[d] * batch[d];
            bi -= b_strides[d] * batch[d];
            coord[d] = 0;
        }
    }
}

// C[m,p] += A[m,k] * B[k,p], contiguous row-major blocks.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t p) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * p;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            const double* brow = b + kk * p;
            for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,p] += A[m,k] * B^T where Bt is [p,k] row-major.
void gemm_bt_acc(const double* a, const double* bt, double* c, std::size_t m, std::size_t k,
                 std::size_t p) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * p;
        for (std::size_t j = 0; j < p; ++j) {
            const double* brow = bt + j * k;
            double acc = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
            crow[j] += acc;
        }
    }
}

// C[k,p] += A^T * B where A is [m,k], B is [m,p].
void gemm_at_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                 std::size_t p) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * p;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            if (av == 0.0) continue;
            double* crow = c + kk * p;
            for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
        }
    }
}

std::size_t normalize_axis(const char* op, std::size_t axis, std::size_t ndim) {
    if (axis >= ndim) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(ndim));
    }
    return axis;
}

Tensor reduce_axis(const char* op, const Tensor& x, std::size_t axis, bool mean) {
    normalize_axis(op, axis, x.ndim());
    const Shape& xs = x.shape();
    Shape out_shape;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i != axis) out_shape.push_back(xs[i]);
    }
    const std::size_t n_axis = xs[axis];
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < xs.size(); ++i) inner *= xs[i];
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= xs[i];

    const double factor = mean ? 1.0 / static_cast<double>(n_axis) : 1.0;
    std::vector<double> vals(outer * inner, 0.0);
    const auto& xv = x.values();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t a = 0; a < n_axis; ++a) {
            const double* src = xv.data() + (o * n_axis + a) * inner;
            double* dst = vals.data() + o * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    }
    if (mean) {
        for (auto& v : vals) v *= factor;
    }
    Tensor out = detail::make_op_output(op, out_shape, std::move(vals), x.requires_grad());
    if (out.requires_grad()) {
        Tape::active()->record(op, out, [x, out, outer, n_axis, inner, factor]() {
            Tensor xm = x;
            auto& gx = xm.grad_buffer();
            const auto& g = out.grad();
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t a = 0; a < n_axis; ++a) {
                    double* dst = gx.data() + (o * n_axis + a) * inner;
                    const double* src = g.data() + o * inner;
                    for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i] * factor;
                }
            }
        });
    }
    return out;
}

Tensor reduce_all(const char* op, const Tensor& x, bool mean) {
    const auto& xv = x.values();
    double acc = 0.0;
    for (double v : xv) acc += v;
    const double factor = mean ? 1.0 / static_cast<double>(x.numel()) : 1.0;
    Tensor out = detail::make_op_output(op, Shape{}, {acc * factor}, x.requires_grad());
    if (out.requires_grad()) {
        Tape::active()->record(op, out, [x, out, factor]() {
            Tensor xm = x;
            auto& gx = xm.grad_buffer();
            const double g = out.grad()[0] * factor;
            for (auto& v : gx) v += g;
        });
    }
    return out;
}

} // namespace

std::size_t numel_of(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

// ---- Tensor ----------------------------------------------------------

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (numel_of(shape) != values.size()) {
        throw ShapeError("tensor: shape " + shape_str(shape) + " expects " +
                         std::to_string(numel_of(shape)) + " elements, got " +
                         std::to_string(values.size()));
    }
    detail::check_finite("tensor", values);
    Tensor t;
    t.data_ = std::make_shared<detail::TensorData>();
    t.data_->shape = std::move(shape);
    t.data_->values = std::move(values);
    t.data_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    std::vector<double> vals(numel_of(shape), value);
    return from(std::move(shape), std::move(vals), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from(Shape{}, {value}, requires_grad);
}

double Tensor::item() const {
    if (numel() != 1) {
        throw ContractError("item: tensor has " + std::to_string(numel()) + " elements");
    }
    return data_->values[0];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != ndim()) {
        throw ShapeError("at: index rank " + std::to_string(idx.size()) +
                         " does not match tensor rank " + std::to_string(ndim()));
    }
    const auto strides = row_major_strides(shape());
    std::size_t flat = 0;
    std::size_t d = 0;
    for (std::size_t i : idx) {
        if (i >= shape()[d]) {
            throw IndexError("at: index " + std::to_string(i) + " out of range for dim " +
                             std::to_string(d) + " of " + shape_str(shape()));
        }
        flat += i * strides[d];
        ++d;
    }
    return data_->values[flat];
}

const std::vector<double>& Tensor::grad() const {
    if (data_->grad.empty()) {
        throw ContractError("grad: no gradient recorded for this tensor");
    }
    return data_->grad;
}

std::vector<double>& Tensor::grad_buffer() {
    if (data_->grad.empty()) data_->grad.assign(data_->values.size(), 0.0);
    return data_->grad;
}

void Tensor::zero_grad() {
    std::fill(data_->grad.begin(), data_->grad.end(), 0.0);
}

Tensor Tensor::detached() const {
    return Tensor::from(shape(), values(), false);
}

// ---- Tape ------------------------------------------------------------

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::string op, Tensor output, std::function<void()> backward) {
    output.data_->tape = this;
    records_.push_back(Record{std::move(op), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " +
                            shape_str(loss.shape()));
    }
    if (loss.tape() != this) {
        throw ContractError("backward: loss was not produced on this tape");
    }
    // Op outputs are transient: their grads are reset every backward pass.
    // Leaf tensors accumulate across calls until zero_grad.
    for (auto& r : records_) {
        r.output.grad_buffer();
        r.output.zero_grad();
    }
    Tensor seed = loss;
    seed.grad_buffer()[0] = 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
        it->fn();
    }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(g_active_tape) { g_active_tape = nullptr; }

NoGradScope::~NoGradScope() { g_active_tape = previous_; }

// ---- op plumbing -----------------------------------------------------

namespace detail {

void check_finite(const char* op, const std::vector<double>& values) {
    for (double v : values) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string(op) + ": non-finite value encountered");
        }
    }
}

Tensor make_op_output(const char* op, Shape shape, std::vector<double> values,
                      bool any_input_requires_grad) {
    check_finite(op, values);
    Tensor out = Tensor::from(std::move(shape), std::move(values), false);
    out.set_requires_grad(any_input_requires_grad && Tape::active() != nullptr);
    return out;
}

} // namespace detail

// ---- ops -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    return broadcast_binary(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return broadcast_binary(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return broadcast_binary(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double g, double, double y) { return g * y; },
        [](double g, double x, double) { return g * x; });
}

Tensor scale(const Tensor& a, double factor) {
    return unary_elementwise(
        "scale", a, [factor](double v) { return v * factor; },
        [factor](double) { return factor; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const MatmulDims d = matmul_dims(a, b);
    Shape out_shape = d.batch;
    out_shape.push_back(d.m);
    out_shape.push_back(d.p);

    const std::size_t a_mat = d.m * d.k;
    const std::size_t b_mat = d.k * d.p;
    const std::size_t o_mat = d.m * d.p;
    std::vector<double> vals(numel_of(out_shape), 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    for_each_batch(d.batch, d.a_batch_strides, d.b_batch_strides,
                   [&](std::size_t o, std::size_t ai, std::size_t bi) {
                       gemm_acc(av.data() + ai * a_mat, bv.data() + bi * b_mat,
                                vals.data() + o * o_mat, d.m, d.k, d.p);
                   });

    Tensor out = detail::make_op_output("matmul", std::move(out_shape), std::move(vals),
                                        a.requires_grad() || b.requires_grad());
    if (out.requires_grad()) {
        Tape::active()->record("matmul", out, [a, b, out, d, a_mat, b_mat, o_mat]() {
            const auto& g = out.grad();
            const auto& av2 = a.values();
            const auto& bv2 = b.values();
            Tensor am = a;
            Tensor bm = b;
            double* ga = a.requires_grad() ? am.grad_buffer().data() : nullptr;
            double* gb = b.requires_grad() ? bm.grad_buffer().data() : nullptr;
            for_each_batch(d.batch, d.a_batch_strides, d.b_batch_strides,
                           [&](std::size_t o, std::size_t ai, std::size_t bi) {
                               // dA = dC * B^T ; dB = A^T * dC
                               if (ga) {
                                   gemm_bt_acc(g.data() + o * o_mat, bv2.data() + bi * b_mat,
                                               ga + ai * a_mat, d.m, d.p, d.k);
                               }
                               if (gb) {
                                   gemm_at_acc(av2.data() + ai * a_mat, g.data() + o * o_mat,
                                               gb + bi * b_mat, d.m, d.k, d.p);
                               }
                           });
        });
    }
    return out;
}

Tensor transpose(const Tensor& x, const std::vector<std::size_t>& axes) {
    if (axes.size() != x.ndim()) {
        throw ShapeError("transpose: permutation rank " + std::to_string(axes.size()) +
                         " does not match tensor rank " + std::to_string(x.ndim()));
    }
    std::vector<bool> seen(axes.size(), false);
    for (std::size_t a : axes) {
        if (a >= axes.size() || seen[a]) {
            throw ShapeError("transpose: invalid permutation");
        }
        seen[a] = true;
    }
    Shape out_shape(x.ndim());
    for (std::size_t i = 0; i < axes.size(); ++i) out_shape[i] = x.shape()[axes[i]];

    const auto in_strides = row_major_strides(x.shape());
    std::vector<std::size_t> gather(x.ndim());
    for (std::size_t i = 0; i < axes.size(); ++i) gather[i] = in_strides[axes[i]];

    const std::size_t total = x.numel();
    std::vector<double> vals(total);
    std::vector<std::size_t> coord(x.ndim(), 0);
    const auto& xv = x.values();
    std::vector<std::size_t> src_index(total);
    {
        std::size_t src = 0;
        for (std::size_t o = 0; o < total; ++o) {
            vals[o] = xv[src];
            src_index[o] = src;
            for (std::size_t dd = out_shape.size(); dd-- > 0;) {
                coord[dd] += 1;
                src += gather[dd];
                if (coord[dd] < out_shape[dd]) break;
                src -= gather[dd] * out_shape[dd];
                coord[dd] = 0;
            }
        }
    }
    Tensor out = detail::make_op_output("transpose", std::move(out_shape), std::move(vals),
                                        x.requires_grad());
    if (out.requires_grad()) {
        Tape::active()->record("transpose", out, [x, out, src_index = std::move(src_index)]() {
            Tensor xm = x;
            auto& gx = xm.grad_buffer();
            const auto& g = out.grad();
            for (std::size_t o = 0; o < g.size(); ++o) gx[src_index[o]] += g[o];
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel_of(shape) != x.numel()) {
        throw ShapeError("reshape: cannot reshape " + shape_str(x.shape()) + " into " +
                         shape_str(shape));
    }
    Tensor out = detail::make_op_output("reshape", std::move(shape), x.values(),
                                        x.requires_grad());
    if (out.requires_grad()) {
        Tape::active()->record("reshape", out, [x, out]() {
            Tensor xm = x;
            auto& gx = xm.grad_buffer();
            const auto& g = out.grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
        });
    }
    return out;
}

Tensor softmax_lastdim(const Tensor& x) {
    if (x.ndim() < 1 || x.shape().back() < 1) {
        throw ShapeError("softmax_lastdim: needs a non-empty last dimension, got " +
                         shape_str(x.shape()));
    }
    const std::size_t m = x.shape().back();
    const std::size_t rows = x.numel() / m;
    std::vector<double> vals(x.numel());
    const auto& xv = x.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* src = xv.data() + r * m;
        double* dst = vals.data() + r * m;
        double mx = src[0];
        for (std::size_t i = 1; i < m; ++i) mx = std::max(mx, src[i]);
        double denom = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
            dst[i] = std::exp(src[i] - mx);
            denom += dst[i];
        }
        for (std::size_t i = 0; i < m; ++i) dst[i] /= denom;
    }
    Tensor out = detail::make_op_output("softmax_lastdim", x.shape(), std::move(vals),
                                        x.requires_grad());
    if (out.requires_grad()) {
        Tape::active()->record("softmax_lastdim", out, [x, out, rows, m]() {
            Tensor xm = x;
            auto& gx = xm.grad_buffer();
            const auto& g = out.grad();
            const auto& y = out.values();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* yr = y.data() + r * m;
                const double* gr = g.data() + r * m;
                double dot = 0.0;
                for (std::size_t i = 0; i < m; ++i) dot += gr[i] * yr[i];
                double* dst = gx.data() + r * m;
                for (std::size_t i = 0; i < m; ++i) dst[i] += (gr[i] - dot) * yr[i];
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
    if (x.ndim() < 1) throw ShapeError("layer_norm: input must have rank >= 1");
    const std::size_t d = x.shape().back();
    if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
        throw ShapeError("layer_norm: affine parameters must have shape [" + std::to_string(d) +
                         "], got " + shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
    }
    const std::size_t rows = x.numel() / d;
    std::vector<double> vals(x.numel());
    std::vector<double> x_hat(x.numel());
    std::vector<double> inv_std(rows);
    const auto& xv = x.values();
    const auto& gv = gamma.values();
    const auto& bv = beta.values();
    for (std::size_t r = 0; r < rows; ++r) {
        const double* src = xv.data() + r * d;
        double mean = 0.0;
        for (std::size_t i = 0; i < d; ++i) mean += src[i];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double c = src[i] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[r] = inv;
        double* xh = x_hat.data() + r * d;
        double* dst = vals.data() + r * d;
        for (std::size_t i = 0; i < d; ++i) {
            xh[i] = (src[i] - mean) * inv;
            dst[i] = gv[i] * xh[i] + bv[i];
        }
    }
    Tensor out = detail::make_op_output(
        "layer_norm", x.shape(), std::move(vals),
        x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
    if (out.requires_grad()) {
        Tape::active()->record("layer_norm", out,
                               [x, gamma, beta, out, rows, d, x_hat = std::move(x_hat),
                                inv_std = std::move(inv_std)]() {
            const auto& g = out.grad();
            const auto& gv2 = gamma.values();
            Tensor xm = x;
            Tensor gm = gamma;
            Tensor bm = beta;
            double* gx = x.requires_grad() ? xm.grad_buffer().data() : nullptr;
            double* gg = gamma.requires_grad() ? gm.grad_buffer().data() : nullptr;
            double* gb = beta.requires_grad() ? bm.grad_buffer().data() : nullptr;
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = g.data() + r * d;
                const double* xh = x_hat.data() + r * d;
                if (gg || gb) {
                    for (std::size_t i = 0; i < d; ++i) {
                        if (gg) gg[i] += gr[i] * xh[i];
                        if (gb) gb[i] += gr[i];
                    }
                }
                if (gx) {
                    double mean_gy = 0.0;
                    double mean_gy_xh = 0.0;
                    for (std::size_t i = 0; i < d; ++i) {
                        const double gy = gr[i] * gv2[i];
                        mean_gy += gy;
                        mean_gy_xh += gy * xh[i];
                    }
                    mean_gy /= static_cast<double>(d);
                    mean_gy_xh /= static_cast<double>(d);
                    double* dst = gx + r * d;
                    const double inv = inv_std[r];
                    for (std::size_t i = 0; i < d; ++i) {
                        const double gy = gr[i] * gv2[i];
                        dst[i] += inv * (gy - mean_gy - xh[i] * mean_gy_xh);
                    }
                }
            }
        });
    }
    return out;
}

Tensor gelu(const Tensor& x) {
    // Exact erf form; derivative is Phi(x) + x * phi(x).
    return unary_elementwise(
        "gelu", x,
        [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
        [](double v) {
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            return cdf + v * pdf;
        });
}

Tensor abs(const Tensor& x) {
    return unary_elementwise(
        "abs", x, [](double v) { return std::fabs(v); },
        [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor reduce_sum(const Tensor& x, std::size_t axis) { return reduce_axis("reduce_sum", x, axis, false); }
Tensor reduce_sum(const Tensor& x) { return reduce_all("reduce_sum", x, false); }
Tensor reduce_mean(const Tensor& x, std::size_t axis) { return reduce_axis("reduce_mean", x, axis, true); }
Tensor reduce_mean(const Tensor& x) { return reduce_all("reduce_mean", x, true); }

Tensor embedding_lookup(const Tensor& table, const std::vector<std::int64_t>& ids) {
    if (table.ndim() < 2) {
        throw ShapeError("embedding_lookup: table must have rank >= 2, got " +
                         shape_str(table.shape()));
    }
    const std::size_t vocab = table.shape()[0];
    const std::size_t row = table.numel() / vocab;
    for (std::int64_t id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
            throw IndexError("embedding_lookup: id " + std::to_string(id) +
                             " out of range for table of size " + std::to_string(vocab));
        }
    }
    Shape out_shape{ids.size()};
    out_shape.insert(out_shape.end(), table.shape().begin() + 1, table.shape().end());
    std::vector<double> vals(ids.size() * row);
    const auto& tv = table.values();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const double* src = tv.data() + static_cast<std::size_t>(ids[i]) * row;
        std::copy(src, src + row, vals.data() + i * row);
    }
    Tensor out = detail::make_op_output("embedding_lookup", std::move(out_shape),
                                        std::move(vals), table.requires_grad());
    if (out.requires_grad()) {
        Tape::active()->record("embedding_lookup", out, [table, out, ids, row]() {
            Tensor tm = table;
            auto& gt = tm.grad_buffer();
            const auto& g = out.grad();
            for (std::size_t i = 0; i < ids.size(); ++i) {
                double* dst = gt.data() + static_cast<std::size_t>(ids[i]) * row;
                const double* src = g.data() + i * row;
                for (std::size_t j = 0; j < row; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ContractError("concat: no tensors given");
    const std::size_t nd = parts[0].ndim();
    normalize_axis("concat", axis, nd);
    Shape out_shape = parts[0].shape();
    out_shape[axis] = 0;
    bool any_grad = false;
    for (const auto& p : parts) {
        if (p.ndim() != nd) throw ShapeError("concat: rank mismatch");
        for (std::size_t i = 0; i < nd; ++i) {
            if (i != axis && p.shape()[i] != parts[0].shape()[i]) {
                throw ShapeError("concat: shape mismatch between " +
                                 shape_str(parts[0].shape()) + " and " + shape_str(p.shape()));
            }
        }
        out_shape[axis] += p.shape()[axis];
        any_grad = any_grad || p.requires_grad();
    }
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < nd; ++i) inner *= out_shape[i];
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= out_shape[i];

    std::vector<double> vals(numel_of(out_shape));
    const std::size_t out_block = out_shape[axis] * inner;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t p_block = p.shape()[axis] * inner;
        const auto& pv = p.values();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy(pv.data() + o * p_block, pv.data() + (o + 1) * p_block,
                      vals.data() + o * out_block + offset);
        }
        offset += p_block;
    }
    Tensor out = detail::make_op_output("concat", std::move(out_shape), std::move(vals), any_grad);
    if (out.requires_grad()) {
        Tape::active()->record("concat", out, [parts, out, outer, inner, out_block, axis]() {
            const auto& g = out.grad();
            std::size_t off = 0;
            for (const auto& p : parts) {
                const std::size_t p_block = p.shape()[axis] * inner;
                if (p.requires_grad()) {
                    Tensor pm = p;
                    auto& gp = pm.grad_buffer();
                    for (std::size_t o = 0; o < outer; ++o) {
                        const double* src = g.data() + o * out_block + off;
                        double* dst = gp.data() + o * p_block;
                        for (std::size_t i = 0; i < p_block; ++i) dst[i] += src[i];
                    }
                }
                off += p_block;
            }
        });
    }
    return out;
}

} // namespace graphormer
