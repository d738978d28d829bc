#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "dualdiff/common.hpp"

namespace dualdiff {

using Shape = std::vector<int>;

int shape_size(const Shape& s);

class Tape;

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // sized lazily on first accumulation
    bool requires_grad = false;
    // Pulls this node's grad into its parents. Set only while recorded on a
    // live tape; cleared when the tape is destroyed.
    std::function<void(Node&)> backward;
    Tape* tape = nullptr;

    int size() const { return static_cast<int>(value.size()); }
    void accumulate(const std::vector<double>& g);
};
}  // namespace detail

// Dense row-major f64 tensor with reverse-mode gradients. Value-semantic
// handle onto a shared node; copying a Tensor aliases the payload.
class Tensor {
  public:
    Tensor() = default;

    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value);
    static Tensor randn(Shape shape, Rng& rng, bool requires_grad = false);
    static Tensor rand_uniform(Shape shape, double lo, double hi, Rng& rng,
                               bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int size() const;
    int ndim() const;
    double item() const;  // scalar tensors only

    const std::vector<double>& values() const;
    // Direct mutation; rejected while the tensor participates in a live tape.
    std::vector<double>& mutable_values();

    bool requires_grad() const;
    bool has_grad() const;
    const std::vector<double>& grad() const;
    void zero_grad();

    const detail::Node* node() const { return node_.get(); }

  private:
    std::shared_ptr<detail::Node> node_;
    friend class Tape;
    friend struct OpAccess;
};

// Records op outputs in creation order (a topological order of the graph);
// backward walks it in exact reverse. One backward per tape.
class Tape {
  public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void backward(const Tensor& loss);
    std::size_t recorded_ops() const { return order_.size(); }

    static Tape* active();

  private:
    std::vector<std::shared_ptr<detail::Node>> order_;
    std::vector<std::shared_ptr<detail::Node>> touched_;
    bool backward_done_ = false;
    Tape* prev_ = nullptr;
    friend struct OpAccess;
};

// While alive on a thread, ops compute values but record nothing.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// ---- elementwise ops (trailing-dimension broadcasting on binaries) ----

enum class ElemOp { add, sub, mul, div, exp, log, sigmoid, tanh, sqrt, neg };

// Generic dispatcher; unary kinds reject a second operand.
Tensor elementwise(ElemOp op, const Tensor& a, const Tensor* b = nullptr);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor neg(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor scale(const Tensor& a, double k);
Tensor shift(const Tensor& a, double c);
// Zero gradient outside [lo, hi].
Tensor clamp(const Tensor& a, double lo, double hi);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }
inline Tensor operator*(const Tensor& a, double k) { return scale(a, k); }
inline Tensor operator*(double k, const Tensor& a) { return scale(a, k); }
inline Tensor operator+(const Tensor& a, double c) { return shift(a, c); }
inline Tensor operator+(double c, const Tensor& a) { return shift(a, c); }
inline Tensor operator-(const Tensor& a, double c) { return shift(a, -c); }

// ---- structural / contraction ops ----

// [.., n, k] x [.., k, m] -> [.., n, m]; batch dims broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);  // swaps the last two axes
Tensor reshape(const Tensor& a, Shape shape);
Tensor softmax(const Tensor& a);                       // last axis
Tensor layer_norm(const Tensor& a, double eps = 1e-5);  // last axis, no affine
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int start, int length);
Tensor gather(const Tensor& a, int axis, const std::vector<int>& indices);
Tensor sum(const Tensor& a);   // scalar
Tensor mean(const Tensor& a);  // scalar

}  // namespace dualdiff
