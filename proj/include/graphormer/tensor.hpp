// SPDX-License-Identifier: Apache-2.0
//
// Dense 64-bit tensors with reverse-mode automatic differentiation on an
// explicit tape. Single-threaded per tape; forward results are deterministic
// (fixed summation order, no reassociation).

#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "graphormer/error.hpp"

namespace graphormer {

class Tape;

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorData {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;   // empty until first accumulation
    bool requires_grad = false;
    const Tape* tape = nullptr; // tape that recorded this tensor as an op output
};
} // namespace detail

// Shared handle to dense storage. Values are written only at construction
// and by the optimizer / grad_check through mutable_values(); gradient
// buffers are touched only inside Tape::backward and zero_grad.
class Tensor {
public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return data_ != nullptr; }
    const Shape& shape() const& { return data_->shape; }
    Shape shape() && { return data_->shape; } // copy out of temporaries
    std::size_t ndim() const { return data_->shape.size(); }
    std::size_t numel() const { return data_->values.size(); }

    const std::vector<double>& values() const& { return data_->values; }
    std::vector<double> values() && { return data_->values; }
    // In-place access for the optimizer and finite differencing. Never used
    // by ops; tensors flowing through the tape are read-only.
    std::vector<double>& mutable_values() { return data_->values; }

    double item() const;
    double at(std::initializer_list<std::size_t> idx) const;

    bool requires_grad() const { return data_->requires_grad; }
    void set_requires_grad(bool rg) { data_->requires_grad = rg; }

    bool has_grad() const { return !data_->grad.empty(); }
    const std::vector<double>& grad() const;
    std::vector<double>& grad_buffer(); // allocates zeros on first use
    void zero_grad();

    // Value copy detached from any tape.
    Tensor detached() const;

    const Tape* tape() const { return data_->tape; }

    bool same_storage(const Tensor& other) const { return data_ == other.data_; }

private:
    friend class Tape;
    std::shared_ptr<detail::TensorData> data_;
};

// Ordered record of differentiable ops. Records are appended in forward
// order, so the list is topologically ordered by construction; backward
// replays it in reverse. One tape per training step, never shared across
// threads.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* active();

    void record(std::string op, Tensor output, std::function<void()> backward);
    void backward(const Tensor& loss);
    std::size_t size() const { return records_.size(); }

private:
    struct Record {
        std::string op;
        Tensor output;
        std::function<void()> fn;
    };
    std::vector<Record> records_;
};

// RAII activation of a tape for the current thread.
class TapeScope {
public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* previous_;
};

// Suspends recording; ops run value-only until the scope ends.
class NoGradScope {
public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape* previous_;
};

// ---- ops -------------------------------------------------------------
// All ops validate output finiteness and record a backward rule on the
// active tape when any input requires grad. Elementwise binaries follow
// numpy broadcasting.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor reshape(const Tensor& x, Shape shape);
Tensor softmax_lastdim(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor gelu(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor reduce_sum(const Tensor& x, std::size_t axis);
Tensor reduce_sum(const Tensor& x); // all axes -> scalar
Tensor reduce_mean(const Tensor& x, std::size_t axis);
Tensor reduce_mean(const Tensor& x);
Tensor embedding_lookup(const Tensor& table, const std::vector<std::int64_t>& ids);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

namespace detail {
// Shared plumbing for ops defined outside tensor.cpp (edge path bias).
Tensor make_op_output(const char* op, Shape shape, std::vector<double> values,
                      bool any_input_requires_grad);
void check_finite(const char* op, const std::vector<double>& values);
} // namespace detail

} // namespace graphormer
