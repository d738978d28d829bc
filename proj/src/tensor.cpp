#include "dualdiff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <string>

namespace dualdiff {

namespace {

thread_local Tape* g_active_tape = nullptr;
thread_local int g_no_grad_depth = 0;

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

void check_finite(const std::vector<double>& v, const char* op) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string("non-finite value produced by op '") + op + "'");
        }
    }
}

// Row-major strides.
std::vector<long> strides_of(const Shape& s) {
    std::vector<long> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) {
        st[i] = st[i + 1] * s[i + 1];
    }
    return st;
}

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
    const int nd = std::max(a.size(), b.size());
    Shape out(nd, 1);
    for (int i = 0; i < nd; ++i) {
        const int da = i < nd - static_cast<int>(a.size()) ? 1 : a[i - (nd - a.size())];
        const int db = i < nd - static_cast<int>(b.size()) ? 1 : b[i - (nd - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                             shape_str(b) + " are not broadcast-compatible");
        }
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `in` viewed inside `out` (0 on broadcast axes). `in` is
// right-aligned against `out`.
std::vector<long> strides_in_out(const Shape& in, const Shape& out) {
    const auto real = strides_of(in);
    const int pad = static_cast<int>(out.size() - in.size());
    std::vector<long> st(out.size(), 0);
    for (std::size_t i = 0; i < in.size(); ++i) {
        st[pad + i] = (in[i] == 1 && out[pad + i] != 1) ? 0 : real[i];
    }
    return st;
}

// Iterates a dense shape while tracking two strided offsets.
template <typename Fn>
void for_each_broadcast(const Shape& out, const std::vector<long>& sa,
                        const std::vector<long>& sb, Fn&& fn) {
    const int nd = static_cast<int>(out.size());
    const long total = shape_size(out);
    if (nd == 0) {
        fn(0, 0, 0);
        return;
    }
    std::vector<int> idx(nd, 0);
    long oa = 0, ob = 0;
    for (long flat = 0; flat < total; ++flat) {
        fn(flat, oa, ob);
        for (int d = nd - 1; d >= 0; --d) {
            ++idx[d];
            oa += sa[d];
            ob += sb[d];
            if (idx[d] < out[d]) break;
            oa -= static_cast<long>(idx[d]) * sa[d];
            ob -= static_cast<long>(idx[d]) * sb[d];
            idx[d] = 0;
        }
    }
}

}  // namespace

int shape_size(const Shape& s) {
    long n = 1;
    for (int e : s) {
        if (e <= 0) throw ShapeError("shape extents must be positive, got " + shape_str(s));
        n *= e;
    }
    return static_cast<int>(n);
}

namespace detail {

void Node::accumulate(const std::vector<double>& g) {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += g[i];
}

}  // namespace detail

// Internal op plumbing: node creation, recording, grad accumulation.
struct OpAccess {
    using Node = detail::Node;
    using NodePtr = std::shared_ptr<Node>;

    static NodePtr node_of(const Tensor& t) {
        if (!t.defined()) throw ContractError("operation on an undefined tensor");
        return t.node_;
    }

    static Tensor wrap(NodePtr n) {
        Tensor t;
        t.node_ = std::move(n);
        return t;
    }

    static bool recording() { return g_active_tape != nullptr && g_no_grad_depth == 0; }

    static NodePtr make_output(Shape shape, std::vector<double> value, const char* op,
                               const std::vector<NodePtr>& parents,
                               std::function<void(Node&)> backward) {
        check_finite(value, op);
        auto out = std::make_shared<Node>();
        out->shape = std::move(shape);
        out->value = std::move(value);
        bool any_grad = false;
        for (const auto& p : parents) any_grad = any_grad || p->requires_grad;
        if (recording() && any_grad) {
            out->requires_grad = true;
            out->backward = std::move(backward);
            out->tape = g_active_tape;
            g_active_tape->order_.push_back(out);
            g_active_tape->touched_.push_back(out);
            for (const auto& p : parents) {
                if (p->tape == nullptr) {
                    p->tape = g_active_tape;
                    g_active_tape->touched_.push_back(p);
                }
            }
        }
        return out;
    }

    static void ensure_grad(Node& n) {
        if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    }
};

using NodePtr = OpAccess::NodePtr;

// ---------------------------------------------------------------- Tensor

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    const int n = shape_size(shape);
    if (n != static_cast<int>(data.size())) {
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
    check_finite(data, "from_data");
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return OpAccess::wrap(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const int n = shape_size(shape);
    return from_data(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const int n = shape_size(shape);
    return from_data(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

Tensor Tensor::randn(Shape shape, Rng& rng, bool requires_grad) {
    const int n = shape_size(shape);
    std::vector<double> v(n);
    rng.fill_gaussian(v);
    return from_data(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::rand_uniform(Shape shape, double lo, double hi, Rng& rng, bool requires_grad) {
    const int n = shape_size(shape);
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(lo, hi);
    return from_data(std::move(shape), std::move(v), requires_grad);
}

const Shape& Tensor::shape() const { return OpAccess::node_of(*this)->shape; }
int Tensor::size() const { return OpAccess::node_of(*this)->size(); }
int Tensor::ndim() const { return static_cast<int>(shape().size()); }

double Tensor::item() const {
    const auto n = OpAccess::node_of(*this);
    if (n->size() != 1) throw ContractError("item() requires a scalar tensor");
    return n->value[0];
}

const std::vector<double>& Tensor::values() const { return OpAccess::node_of(*this)->value; }

std::vector<double>& Tensor::mutable_values() {
    auto n = OpAccess::node_of(*this);
    if (n->tape != nullptr) {
        throw ContractError("in-place mutation of a tensor attached to a live tape");
    }
    return n->value;
}

bool Tensor::requires_grad() const { return OpAccess::node_of(*this)->requires_grad; }

bool Tensor::has_grad() const { return !OpAccess::node_of(*this)->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
    const auto n = OpAccess::node_of(*this);
    if (n->grad.empty()) throw ContractError("tensor has no gradient buffer");
    return n->grad;
}

void Tensor::zero_grad() {
    auto n = OpAccess::node_of(*this);
    std::fill(n->grad.begin(), n->grad.end(), 0.0);
}

// ---------------------------------------------------------------- Tape

Tape::Tape() {
    prev_ = g_active_tape;
    g_active_tape = this;
}

Tape::~Tape() {
    for (auto& n : touched_) {
        if (n->tape == this) {
            n->tape = nullptr;
            n->backward = nullptr;
        }
    }
    g_active_tape = prev_;
}

Tape* Tape::active() { return g_active_tape; }

void Tape::backward(const Tensor& loss) {
    auto node = OpAccess::node_of(loss);
    if (node->size() != 1) throw ContractError("backward requires a scalar loss");
    if (node->tape != this) {
        throw ContractError("loss was not produced under this tape");
    }
    if (backward_done_) {
        throw ContractError("second backward pass on the same tape without a new forward pass");
    }
    backward_done_ = true;
    node->accumulate({1.0});
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        detail::Node& n = **it;
        if (!n.grad.empty() && n.backward) n.backward(n);
    }
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

// ---------------------------------------------------------------- elementwise

namespace {

struct UnarySpec {
    const char* name;
    double (*fwd)(double);
    // derivative given input x and output y
    double (*dydx)(double x, double y);
    void (*domain)(const std::vector<double>&);
};

Tensor unary_op(const Tensor& at, const UnarySpec& spec) {
    auto a = OpAccess::node_of(at);
    if (spec.domain) spec.domain(a->value);
    std::vector<double> out(a->value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = spec.fwd(a->value[i]);
    auto fw = spec.dydx;
    auto node = OpAccess::make_output(
        a->shape, std::move(out), spec.name, {a}, [a, fw](detail::Node& self) {
            if (!a->requires_grad) return;
            OpAccess::ensure_grad(*a);
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                a->grad[i] += self.grad[i] * fw(a->value[i], self.value[i]);
            }
        });
    return OpAccess::wrap(std::move(node));
}

struct BinarySpec {
    const char* name;
    double (*fwd)(double, double);
    double (*dfa)(double a, double b);
    double (*dfb)(double a, double b);
    void (*domain)(const std::vector<double>& b);
};

Tensor binary_op(const Tensor& at, const Tensor& bt, const BinarySpec& spec) {
    auto a = OpAccess::node_of(at);
    auto b = OpAccess::node_of(bt);
    if (spec.domain) spec.domain(b->value);
    const Shape out_shape = broadcast_shape(a->shape, b->shape, spec.name);
    const long total = shape_size(out_shape);
    std::vector<double> out(total);
    const auto sa = strides_in_out(a->shape, out_shape);
    const auto sb = strides_in_out(b->shape, out_shape);
    const bool same = a->shape == out_shape && b->shape == out_shape;
    if (same) {
        for (long i = 0; i < total; ++i) out[i] = spec.fwd(a->value[i], b->value[i]);
    } else {
        for_each_broadcast(out_shape, sa, sb, [&](long o, long oa, long ob) {
            out[o] = spec.fwd(a->value[oa], b->value[ob]);
        });
    }
    auto dfa = spec.dfa;
    auto dfb = spec.dfb;
    auto node = OpAccess::make_output(
        out_shape, std::move(out), spec.name, {a, b},
        [a, b, dfa, dfb, out_shape, sa, sb, same](detail::Node& self) {
            if (a->requires_grad) OpAccess::ensure_grad(*a);
            if (b->requires_grad) OpAccess::ensure_grad(*b);
            if (same) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) {
                    const double g = self.grad[i];
                    if (a->requires_grad) a->grad[i] += g * dfa(a->value[i], b->value[i]);
                    if (b->requires_grad) b->grad[i] += g * dfb(a->value[i], b->value[i]);
                }
            } else {
                for_each_broadcast(out_shape, sa, sb, [&](long o, long oa, long ob) {
                    const double g = self.grad[o];
                    if (a->requires_grad) a->grad[oa] += g * dfa(a->value[oa], b->value[ob]);
                    if (b->requires_grad) b->grad[ob] += g * dfb(a->value[oa], b->value[ob]);
                });
            }
        });
    return OpAccess::wrap(std::move(node));
}

void domain_log(const std::vector<double>& v) {
    for (double x : v)
        if (x <= 0.0) throw DomainError("log of a non-positive value");
}
void domain_sqrt(const std::vector<double>& v) {
    for (double x : v)
        if (x < 0.0) throw DomainError("sqrt of a negative value");
}
void domain_div(const std::vector<double>& v) {
    for (double x : v)
        if (x == 0.0) throw DomainError("division by zero");
}

double sigmoid_scalar(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double softplus_scalar(double x) {
    // log(1 + e^x) without overflow on either tail.
    return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    static const BinarySpec spec{"add", [](double x, double y) { return x + y; },
                                 [](double, double) { return 1.0; },
                                 [](double, double) { return 1.0; }, nullptr};
    return binary_op(a, b, spec);
}

Tensor sub(const Tensor& a, const Tensor& b) {
    static const BinarySpec spec{"sub", [](double x, double y) { return x - y; },
                                 [](double, double) { return 1.0; },
                                 [](double, double) { return -1.0; }, nullptr};
    return binary_op(a, b, spec);
}

Tensor mul(const Tensor& a, const Tensor& b) {
    static const BinarySpec spec{"mul", [](double x, double y) { return x * y; },
                                 [](double, double y) { return y; },
                                 [](double x, double) { return x; }, nullptr};
    return binary_op(a, b, spec);
}

Tensor div(const Tensor& a, const Tensor& b) {
    static const BinarySpec spec{"div", [](double x, double y) { return x / y; },
                                 [](double, double y) { return 1.0 / y; },
                                 [](double x, double y) { return -x / (y * y); }, domain_div};
    return binary_op(a, b, spec);
}

Tensor exp(const Tensor& a) {
    static const UnarySpec spec{"exp", [](double x) { return std::exp(x); },
                                [](double, double y) { return y; }, nullptr};
    return unary_op(a, spec);
}

Tensor log(const Tensor& a) {
    static const UnarySpec spec{"log", [](double x) { return std::log(x); },
                                [](double x, double) { return 1.0 / x; }, domain_log};
    return unary_op(a, spec);
}

Tensor sigmoid(const Tensor& a) {
    static const UnarySpec spec{"sigmoid", sigmoid_scalar,
                                [](double, double y) { return y * (1.0 - y); }, nullptr};
    return unary_op(a, spec);
}

Tensor tanh(const Tensor& a) {
    static const UnarySpec spec{"tanh", [](double x) { return std::tanh(x); },
                                [](double, double y) { return 1.0 - y * y; }, nullptr};
    return unary_op(a, spec);
}

Tensor sqrt(const Tensor& a) {
    static const UnarySpec spec{"sqrt", [](double x) { return std::sqrt(x); },
                                [](double, double y) { return y == 0.0 ? 0.0 : 0.5 / y; },
                                domain_sqrt};
    return unary_op(a, spec);
}

Tensor neg(const Tensor& a) {
    static const UnarySpec spec{"neg", [](double x) { return -x; },
                                [](double, double) { return -1.0; }, nullptr};
    return unary_op(a, spec);
}

Tensor softplus(const Tensor& a) {
    static const UnarySpec spec{"softplus", softplus_scalar,
                                [](double x, double) { return sigmoid_scalar(x); }, nullptr};
    return unary_op(a, spec);
}

Tensor elementwise(ElemOp op, const Tensor& a, const Tensor* b) {
    const bool is_binary =
        op == ElemOp::add || op == ElemOp::sub || op == ElemOp::mul || op == ElemOp::div;
    if (is_binary != (b != nullptr)) {
        throw ContractError(is_binary ? "binary elementwise op requires two operands"
                                      : "unary elementwise op takes one operand");
    }
    switch (op) {
        case ElemOp::add: return add(a, *b);
        case ElemOp::sub: return sub(a, *b);
        case ElemOp::mul: return mul(a, *b);
        case ElemOp::div: return div(a, *b);
        case ElemOp::exp: return exp(a);
        case ElemOp::log: return log(a);
        case ElemOp::sigmoid: return sigmoid(a);
        case ElemOp::tanh: return tanh(a);
        case ElemOp::sqrt: return sqrt(a);
        case ElemOp::neg: return neg(a);
    }
    throw ContractError("unknown elementwise op kind");
}

Tensor scale(const Tensor& at, double k) {
    auto a = OpAccess::node_of(at);
    std::vector<double> out(a->value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * k;
    auto node = OpAccess::make_output(a->shape, std::move(out), "scale", {a},
                                      [a, k](detail::Node& self) {
                                          if (!a->requires_grad) return;
                                          OpAccess::ensure_grad(*a);
                                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                                              a->grad[i] += self.grad[i] * k;
                                      });
    return OpAccess::wrap(std::move(node));
}

Tensor shift(const Tensor& at, double c) {
    auto a = OpAccess::node_of(at);
    std::vector<double> out(a->value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + c;
    auto node = OpAccess::make_output(a->shape, std::move(out), "shift", {a},
                                      [a](detail::Node& self) {
                                          if (!a->requires_grad) return;
                                          OpAccess::ensure_grad(*a);
                                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                                              a->grad[i] += self.grad[i];
                                      });
    return OpAccess::wrap(std::move(node));
}

Tensor clamp(const Tensor& at, double lo, double hi) {
    if (lo > hi) throw ContractError("clamp: lo > hi");
    auto a = OpAccess::node_of(at);
    std::vector<double> out(a->value.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(a->value[i], lo, hi);
    auto node = OpAccess::make_output(
        a->shape, std::move(out), "clamp", {a}, [a, lo, hi](detail::Node& self) {
            if (!a->requires_grad) return;
            OpAccess::ensure_grad(*a);
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                if (a->value[i] >= lo && a->value[i] <= hi) a->grad[i] += self.grad[i];
            }
        });
    return OpAccess::wrap(std::move(node));
}

// ---------------------------------------------------------------- matmul

Tensor matmul(const Tensor& at, const Tensor& bt) {
    auto a = OpAccess::node_of(at);
    auto b = OpAccess::node_of(bt);
    if (a->shape.size() < 2 || b->shape.size() < 2) {
        throw ShapeError("matmul requires tensors with at least 2 dims");
    }
    const int n = a->shape[a->shape.size() - 2];
    const int k = a->shape[a->shape.size() - 1];
    const int k2 = b->shape[b->shape.size() - 2];
    const int m = b->shape[b->shape.size() - 1];
    if (k != k2) {
        throw ShapeError("matmul inner-dimension mismatch: " + shape_str(a->shape) + " x " +
                         shape_str(b->shape));
    }
    const Shape batch_a(a->shape.begin(), a->shape.end() - 2);
    const Shape batch_b(b->shape.begin(), b->shape.end() - 2);
    const Shape batch = broadcast_shape(batch_a, batch_b, "matmul");
    Shape out_shape = batch;
    out_shape.push_back(n);
    out_shape.push_back(m);

    const long nbatch = batch.empty() ? 1 : shape_size(batch);
    const auto sa = strides_in_out(batch_a, batch);
    const auto sb = strides_in_out(batch_b, batch);
    const long stride_a = static_cast<long>(n) * k;
    const long stride_b = static_cast<long>(k) * m;
    const long stride_o = static_cast<long>(n) * m;

    // Per-batch base offsets for a and b (with broadcast dims contributing 0).
    std::vector<long> base_a(nbatch), base_b(nbatch);
    {
        long i = 0;
        std::vector<long> unit_a = sa, unit_b = sb;
        for (auto& s : unit_a) s *= stride_a;
        for (auto& s : unit_b) s *= stride_b;
        for_each_broadcast(batch, unit_a, unit_b, [&](long, long oa, long ob) {
            base_a[i] = oa;
            base_b[i] = ob;
            ++i;
        });
    }

    std::vector<double> out(nbatch * stride_o, 0.0);
    for (long bi = 0; bi < nbatch; ++bi) {
        const double* pa = a->value.data() + base_a[bi];
        const double* pb = b->value.data() + base_b[bi];
        double* po = out.data() + bi * stride_o;
        for (int i = 0; i < n; ++i) {
            const double* arow = pa + static_cast<long>(i) * k;
            double* orow = po + static_cast<long>(i) * m;
            for (int kk = 0; kk < k; ++kk) {
                const double av = arow[kk];
                const double* brow = pb + static_cast<long>(kk) * m;
                for (int j = 0; j < m; ++j) orow[j] += av * brow[j];
            }
        }
    }

    auto node = OpAccess::make_output(
        out_shape, std::move(out), "matmul", {a, b},
        [a, b, base_a, base_b, n, k, m, nbatch, stride_o](detail::Node& self) {
            if (a->requires_grad) OpAccess::ensure_grad(*a);
            if (b->requires_grad) OpAccess::ensure_grad(*b);
            for (long bi = 0; bi < nbatch; ++bi) {
                const double* pg = self.grad.data() + bi * stride_o;
                const double* pa = a->value.data() + base_a[bi];
                const double* pb = b->value.data() + base_b[bi];
                if (a->requires_grad) {
                    double* ga = a->grad.data() + base_a[bi];
                    // ga += g . b^T
                    for (int i = 0; i < n; ++i) {
                        const double* grow = pg + static_cast<long>(i) * m;
                        double* garow = ga + static_cast<long>(i) * k;
                        for (int kk = 0; kk < k; ++kk) {
                            const double* brow = pb + static_cast<long>(kk) * m;
                            double acc = 0.0;
                            for (int j = 0; j < m; ++j) acc += grow[j] * brow[j];
                            garow[kk] += acc;
                        }
                    }
                }
                if (b->requires_grad) {
                    double* gb = b->grad.data() + base_b[bi];
                    // gb += a^T . g
                    for (int kk = 0; kk < k; ++kk) {
                        double* gbrow = gb + static_cast<long>(kk) * m;
                        for (int i = 0; i < n; ++i) {
                            const double av = pa[static_cast<long>(i) * k + kk];
                            const double* grow = pg + static_cast<long>(i) * m;
                            for (int j = 0; j < m; ++j) gbrow[j] += av * grow[j];
                        }
                    }
                }
            }
        });
    return OpAccess::wrap(std::move(node));
}

Tensor transpose(const Tensor& at) {
    auto a = OpAccess::node_of(at);
    if (a->shape.size() < 2) throw ShapeError("transpose requires at least 2 dims");
    Shape out_shape = a->shape;
    std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
    const int r = a->shape[a->shape.size() - 2];
    const int c = a->shape[a->shape.size() - 1];
    const long nbatch = a->size() / (static_cast<long>(r) * c);
    std::vector<double> out(a->value.size());
    for (long bi = 0; bi < nbatch; ++bi) {
        const double* pin = a->value.data() + bi * r * c;
        double* pout = out.data() + bi * r * c;
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) pout[static_cast<long>(j) * r + i] = pin[static_cast<long>(i) * c + j];
    }
    auto node = OpAccess::make_output(
        out_shape, std::move(out), "transpose", {a}, [a, r, c, nbatch](detail::Node& self) {
            if (!a->requires_grad) return;
            OpAccess::ensure_grad(*a);
            for (long bi = 0; bi < nbatch; ++bi) {
                const double* pg = self.grad.data() + bi * r * c;
                double* ga = a->grad.data() + bi * r * c;
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j)
                        ga[static_cast<long>(i) * c + j] += pg[static_cast<long>(j) * r + i];
            }
        });
    return OpAccess::wrap(std::move(node));
}

Tensor reshape(const Tensor& at, Shape shape) {
    auto a = OpAccess::node_of(at);
    if (shape_size(shape) != a->size()) {
        throw ShapeError("reshape to " + shape_str(shape) + " changes element count");
    }
    std::vector<double> out = a->value;
    auto node = OpAccess::make_output(std::move(shape), std::move(out), "reshape", {a},
                                      [a](detail::Node& self) {
                                          if (!a->requires_grad) return;
                                          OpAccess::ensure_grad(*a);
                                          for (std::size_t i = 0; i < self.grad.size(); ++i)
                                              a->grad[i] += self.grad[i];
                                      });
    return OpAccess::wrap(std::move(node));
}

// ---------------------------------------------------------------- reductions & rows

Tensor softmax(const Tensor& at) {
    auto a = OpAccess::node_of(at);
    if (a->shape.empty()) throw ShapeError("softmax requires at least 1 dim");
    const int cols = a->shape.back();
    const long rows = a->size() / cols;
    std::vector<double> out(a->value.size());
    for (long r = 0; r < rows; ++r) {
        const double* x = a->value.data() + r * cols;
        double* y = out.data() + r * cols;
        double mx = x[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, x[j]);
        double denom = 0.0;
        for (int j = 0; j < cols; ++j) {
            y[j] = std::exp(x[j] - mx);
            denom += y[j];
        }
        for (int j = 0; j < cols; ++j) y[j] /= denom;
    }
    auto node = OpAccess::make_output(
        a->shape, std::move(out), "softmax", {a}, [a, cols, rows](detail::Node& self) {
            if (!a->requires_grad) return;
            OpAccess::ensure_grad(*a);
            for (long r = 0; r < rows; ++r) {
                const double* y = self.value.data() + r * cols;
                const double* g = self.grad.data() + r * cols;
                double dot = 0.0;
                for (int j = 0; j < cols; ++j) dot += g[j] * y[j];
                double* ga = a->grad.data() + r * cols;
                for (int j = 0; j < cols; ++j) ga[j] += y[j] * (g[j] - dot);
            }
        });
    return OpAccess::wrap(std::move(node));
}

Tensor layer_norm(const Tensor& at, double eps) {
    auto a = OpAccess::node_of(at);
    if (a->shape.empty()) throw ShapeError("layer_norm requires at least 1 dim");
    const int cols = a->shape.back();
    const long rows = a->size() / cols;
    std::vector<double> out(a->value.size());
    std::vector<double> inv_std(rows);
    for (long r = 0; r < rows; ++r) {
        const double* x = a->value.data() + r * cols;
        double mu = 0.0;
        for (int j = 0; j < cols; ++j) mu += x[j];
        mu /= cols;
        double var = 0.0;
        for (int j = 0; j < cols; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= cols;
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[r] = inv;
        double* y = out.data() + r * cols;
        for (int j = 0; j < cols; ++j) y[j] = (x[j] - mu) * inv;
    }
    auto node = OpAccess::make_output(
        a->shape, std::move(out), "layer_norm", {a},
        [a, cols, rows, inv_std](detail::Node& self) {
            if (!a->requires_grad) return;
            OpAccess::ensure_grad(*a);
            for (long r = 0; r < rows; ++r) {
                const double* y = self.value.data() + r * cols;
                const double* g = self.grad.data() + r * cols;
                double mean_g = 0.0, mean_gy = 0.0;
                for (int j = 0; j < cols; ++j) {
                    mean_g += g[j];
                    mean_gy += g[j] * y[j];
                }
                mean_g /= cols;
                mean_gy /= cols;
                double* ga = a->grad.data() + r * cols;
                for (int j = 0; j < cols; ++j) {
                    ga[j] += inv_std[r] * (g[j] - mean_g - y[j] * mean_gy);
                }
            }
        });
    return OpAccess::wrap(std::move(node));
}

namespace {
int normalize_axis(int axis, int ndim, const char* op) {
    const int ax = axis < 0 ? axis + ndim : axis;
    if (ax < 0 || ax >= ndim) throw ShapeError(std::string(op) + ": axis out of range");
    return ax;
}
}  // namespace

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ContractError("concat of zero tensors");
    std::vector<NodePtr> nodes;
    nodes.reserve(parts.size());
    for (const auto& p : parts) nodes.push_back(OpAccess::node_of(p));
    const int nd = static_cast<int>(nodes[0]->shape.size());
    const int ax = normalize_axis(axis, nd, "concat");
    Shape out_shape = nodes[0]->shape;
    int total_ax = 0;
    for (const auto& n : nodes) {
        if (static_cast<int>(n->shape.size()) != nd) throw ShapeError("concat: rank mismatch");
        for (int d = 0; d < nd; ++d) {
            if (d != ax && n->shape[d] != out_shape[d]) {
                throw ShapeError("concat: extent mismatch off the concat axis");
            }
        }
        total_ax += n->shape[ax];
    }
    out_shape[ax] = total_ax;
    long outer = 1, inner = 1;
    for (int d = 0; d < ax; ++d) outer *= out_shape[d];
    for (int d = ax + 1; d < nd; ++d) inner *= out_shape[d];

    std::vector<double> out(shape_size(out_shape));
    std::vector<long> part_block(nodes.size());
    for (std::size_t p = 0; p < nodes.size(); ++p) {
        part_block[p] = static_cast<long>(nodes[p]->shape[ax]) * inner;
    }
    const long out_block = static_cast<long>(total_ax) * inner;
    for (long o = 0; o < outer; ++o) {
        long off = o * out_block;
        for (std::size_t p = 0; p < nodes.size(); ++p) {
            const double* src = nodes[p]->value.data() + o * part_block[p];
            std::copy(src, src + part_block[p], out.data() + off);
            off += part_block[p];
        }
    }

    auto node = OpAccess::make_output(
        out_shape, std::move(out), "concat", nodes,
        [nodes, outer, out_block, part_block](detail::Node& self) {
            for (long o = 0; o < outer; ++o) {
                long off = o * out_block;
                for (std::size_t p = 0; p < nodes.size(); ++p) {
                    auto& n = *nodes[p];
                    if (n.requires_grad) {
                        OpAccess::ensure_grad(n);
                        double* dst = n.grad.data() + o * part_block[p];
                        const double* src = self.grad.data() + off;
                        for (long i = 0; i < part_block[p]; ++i) dst[i] += src[i];
                    }
                    off += part_block[p];
                }
            }
        });
    return OpAccess::wrap(std::move(node));
}

Tensor slice(const Tensor& at, int axis, int start, int length) {
    auto a = OpAccess::node_of(at);
    const int nd = static_cast<int>(a->shape.size());
    const int ax = normalize_axis(axis, nd, "slice");
    if (start < 0 || length <= 0 || start + length > a->shape[ax]) {
        throw ShapeError("slice out of bounds");
    }
    Shape out_shape = a->shape;
    out_shape[ax] = length;
    long outer = 1, inner = 1;
    for (int d = 0; d < ax; ++d) outer *= a->shape[d];
    for (int d = ax + 1; d < nd; ++d) inner *= a->shape[d];
    const long in_block = static_cast<long>(a->shape[ax]) * inner;
    const long out_block = static_cast<long>(length) * inner;
    const long skip = static_cast<long>(start) * inner;

    std::vector<double> out(shape_size(out_shape));
    for (long o = 0; o < outer; ++o) {
        const double* src = a->value.data() + o * in_block + skip;
        std::copy(src, src + out_block, out.data() + o * out_block);
    }
    auto node = OpAccess::make_output(
        out_shape, std::move(out), "slice", {a},
        [a, outer, in_block, out_block, skip](detail::Node& self) {
            if (!a->requires_grad) return;
            OpAccess::ensure_grad(*a);
            for (long o = 0; o < outer; ++o) {
                double* dst = a->grad.data() + o * in_block + skip;
                const double* src = self.grad.data() + o * out_block;
                for (long i = 0; i < out_block; ++i) dst[i] += src[i];
            }
        });
    return OpAccess::wrap(std::move(node));
}

Tensor gather(const Tensor& at, int axis, const std::vector<int>& indices) {
    auto a = OpAccess::node_of(at);
    const int nd = static_cast<int>(a->shape.size());
    const int ax = normalize_axis(axis, nd, "gather");
    if (indices.empty()) throw ContractError("gather with empty index list");
    for (int idx : indices) {
        if (idx < 0 || idx >= a->shape[ax]) throw ShapeError("gather index out of bounds");
    }
    Shape out_shape = a->shape;
    out_shape[ax] = static_cast<int>(indices.size());
    long outer = 1, inner = 1;
    for (int d = 0; d < ax; ++d) outer *= a->shape[d];
    for (int d = ax + 1; d < nd; ++d) inner *= a->shape[d];
    const long in_block = static_cast<long>(a->shape[ax]) * inner;
    const long out_block = static_cast<long>(indices.size()) * inner;

    std::vector<double> out(shape_size(out_shape));
    for (long o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < indices.size(); ++i) {
            const double* src = a->value.data() + o * in_block + static_cast<long>(indices[i]) * inner;
            std::copy(src, src + inner, out.data() + o * out_block + static_cast<long>(i) * inner);
        }
    }
    auto node = OpAccess::make_output(
        out_shape, std::move(out), "gather", {a},
        [a, indices, outer, in_block, out_block, inner](detail::Node& self) {
            if (!a->requires_grad) return;
            OpAccess::ensure_grad(*a);
            for (long o = 0; o < outer; ++o) {
                for (std::size_t i = 0; i < indices.size(); ++i) {
                    double* dst = a->grad.data() + o * in_block + static_cast<long>(indices[i]) * inner;
                    const double* src = self.grad.data() + o * out_block + static_cast<long>(i) * inner;
                    for (long j = 0; j < inner; ++j) dst[j] += src[j];
                }
            }
        });
    return OpAccess::wrap(std::move(node));
}

Tensor sum(const Tensor& at) {
    auto a = OpAccess::node_of(at);
    double acc = 0.0;
    for (double v : a->value) acc += v;
    auto node = OpAccess::make_output({1}, {acc}, "sum", {a}, [a](detail::Node& self) {
        if (!a->requires_grad) return;
        OpAccess::ensure_grad(*a);
        const double g = self.grad[0];
        for (double& v : a->grad) v += g;
    });
    return OpAccess::wrap(std::move(node));
}

Tensor mean(const Tensor& at) {
    auto a = OpAccess::node_of(at);
    const double inv = 1.0 / a->size();
    double acc = 0.0;
    for (double v : a->value) acc += v;
    acc *= inv;
    auto node = OpAccess::make_output({1}, {acc}, "mean", {a}, [a, inv](detail::Node& self) {
        if (!a->requires_grad) return;
        OpAccess::ensure_grad(*a);
        const double g = self.grad[0] * inv;
        for (double& v : a->grad) v += g;
    });
    return OpAccess::wrap(std::move(node));
}

}  // namespace dualdiff
