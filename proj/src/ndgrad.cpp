#include "mgvq/ndgrad.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace mgvq::nd {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

std::string_view op_name(OpKind kind) {
    switch (kind) {
    case OpKind::add: return "add";
    case OpKind::sub: return "sub";
    case OpKind::mul: return "mul-elementwise";
    case OpKind::matmul: return "matmul";
    case OpKind::leaky_relu: return "leaky-relu";
    case OpKind::reshape: return "reshape";
    case OpKind::concat_channel: return "concat-channel";
    case OpKind::slice_channel: return "slice-channel";
    case OpKind::reduce_mean: return "reduce-mean";
    case OpKind::reduce_sum: return "reduce-sum";
    case OpKind::square: return "square";
    case OpKind::sqrt: return "sqrt";
    case OpKind::scalar_mul: return "scalar-mul";
    case OpKind::add_scalar: return "add-scalar";
    case OpKind::tanh: return "tanh";
    case OpKind::gather: return "gather";
    case OpKind::substitute: return "substitute";
    }
    return "unknown";
}

namespace {
thread_local bool g_no_grad = false;
}  // namespace

NoGradGuard::NoGradGuard() : previous_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = previous_; }
bool NoGradGuard::active() { return g_no_grad; }

namespace {

template <class T>
using StoragePtr = std::shared_ptr<detail::Storage<T>>;

[[noreturn]] void shape_fail(OpKind kind, const Shape& a, const Shape& b, std::string_view what = "shape mismatch") {
    std::ostringstream os;
    os << op_name(kind) << ": " << what << " " << shape_str(a) << " vs " << shape_str(b);
    throw ShapeError(os.str());
}

// Builds the output tensor; records a node only if some parent tracks gradients.
template <class T, class Fn>
BasicTensor<T> make_result(Shape shape, std::vector<T> data, OpKind kind,
                           std::vector<StoragePtr<T>> parents, Fn&& backprop) {
    auto out = std::make_shared<detail::Storage<T>>();
    out->shape = std::move(shape);
    out->data = std::move(data);
    bool any = !g_no_grad && std::any_of(parents.begin(), parents.end(), [](const auto& p) { return p->tracks(); });
    if (any) {
        auto node = std::make_shared<detail::Node<T>>();
        node->kind = kind;
        node->parents = std::move(parents);
        node->backprop = std::forward<Fn>(backprop);
        out->node = std::move(node);
    }
    return BasicTensor<T>::wrap(std::move(out));
}

template <class T>
void require_same(OpKind kind, const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.shape() != b.shape()) shape_fail(kind, a.shape(), b.shape());
}

template <class T, class Fwd, class Deriv>
BasicTensor<T> unary(OpKind kind, const BasicTensor<T>& a, Fwd fwd, Deriv deriv) {
    auto src = a.data();
    std::vector<T> out(src.size());
    for (std::size_t i = 0; i < src.size(); ++i) out[i] = fwd(src[i]);
    auto pa = a.storage();
    return make_result<T>(a.shape(), std::move(out), kind, {pa},
                          [pa, deriv](const detail::Storage<T>& o) {
                              if (!pa->tracks()) return;
                              auto& g = pa->grad_buffer();
                              for (std::size_t i = 0; i < g.size(); ++i)
                                  g[i] += deriv(pa->data[i], o.data[i]) * o.grad[i];
                          });
}

}  // namespace

// ---------------------------------------------------------------- BasicTensor

template <class T>
BasicTensor<T>::BasicTensor() : impl_(std::make_shared<detail::Storage<T>>()) {
    impl_->shape = {1};
    impl_->data = {T(0)};
}

template <class T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data, bool requires_grad)
    : impl_(std::make_shared<detail::Storage<T>>()) {
    if (shape.empty() || std::find(shape.begin(), shape.end(), 0u) != shape.end())
        throw ShapeError("tensor: extents must be positive, got " + shape_str(shape));
    if (nd::numel(shape) != data.size())
        throw ShapeError("tensor: shape " + shape_str(shape) + " needs " + std::to_string(nd::numel(shape)) +
                         " elements, got " + std::to_string(data.size()));
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
}

template <class T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <class T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
    std::vector<T> data(nd::numel(shape), value);
    return BasicTensor(std::move(shape), std::move(data), requires_grad);
}

template <class T>
T BasicTensor<T>::item() const {
    if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
    return impl_->data[0];
}

template <class T>
BasicTensor<T> BasicTensor<T>::detach() const {
    return BasicTensor(shape(), impl_->data, false);
}

template <class T>
BasicTensor<T> BasicTensor<T>::clone() const {
    return BasicTensor(shape(), impl_->data, impl_->requires_grad);
}

// ---------------------------------------------------------------- primitives

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_same(OpKind::add, a, b);
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    auto pa = a.storage(), pb = b.storage();
    return make_result<T>(a.shape(), std::move(out), OpKind::add, {pa, pb},
                          [pa, pb](const detail::Storage<T>& o) {
                              for (auto* p : {pa.get(), pb.get()}) {
                                  if (!p->tracks()) continue;
                                  auto& g = p->grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                              }
                          });
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_same(OpKind::sub, a, b);
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    auto pa = a.storage(), pb = b.storage();
    return make_result<T>(a.shape(), std::move(out), OpKind::sub, {pa, pb},
                          [pa, pb](const detail::Storage<T>& o) {
                              if (pa->tracks()) {
                                  auto& g = pa->grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                              }
                              if (pb->tracks()) {
                                  auto& g = pb->grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] -= o.grad[i];
                              }
                          });
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_same(OpKind::mul, a, b);
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    auto pa = a.storage(), pb = b.storage();
    return make_result<T>(a.shape(), std::move(out), OpKind::mul, {pa, pb},
                          [pa, pb](const detail::Storage<T>& o) {
                              if (pa->tracks()) {
                                  auto& g = pa->grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += pb->data[i] * o.grad[i];
                              }
                              if (pb->tracks()) {
                                  auto& g = pb->grad_buffer();
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] += pa->data[i] * o.grad[i];
                              }
                          });
}

namespace {

// c (m x n) = a (m x k) * b (k x n), double accumulation per output row.
template <class T>
void gemm_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m, std::size_t k,
             std::size_t n, bool accumulate) {
    std::vector<double> acc(n);
    for (std::size_t i = 0; i < m; ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        const T* arow = a.data() + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const T* brow = b.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) acc[j] += av * static_cast<double>(brow[j]);
        }
        T* crow = c.data() + i * n;
        for (std::size_t j = 0; j < n; ++j)
            crow[j] = accumulate ? static_cast<T>(crow[j] + acc[j]) : static_cast<T>(acc[j]);
    }
}

}  // namespace

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_fail(OpKind::matmul, a.shape(), b.shape());
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(m * n);
    gemm_nn<T>(a.data(), b.data(), out, m, k, n, false);
    auto pa = a.storage(), pb = b.storage();
    return make_result<T>({m, n}, std::move(out), OpKind::matmul, {pa, pb},
                          [pa, pb, m, k, n](const detail::Storage<T>& o) {
                              if (pa->tracks()) {
                                  // dA = dC * B^T
                                  std::vector<T> bt(n * k);
                                  for (std::size_t p = 0; p < k; ++p)
                                      for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = pb->data[p * n + j];
                                  gemm_nn<T>(o.grad, bt, pa->grad_buffer(), m, n, k, true);
                              }
                              if (pb->tracks()) {
                                  // dB = A^T * dC
                                  auto& g = pb->grad_buffer();
                                  std::vector<double> acc(k * n, 0.0);
                                  for (std::size_t i = 0; i < m; ++i) {
                                      const T* arow = pa->data.data() + i * k;
                                      const T* grow = o.grad.data() + i * n;
                                      for (std::size_t p = 0; p < k; ++p) {
                                          const double av = arow[p];
                                          if (av == 0.0) continue;
                                          double* dst = acc.data() + p * n;
                                          for (std::size_t j = 0; j < n; ++j) dst[j] += av * static_cast<double>(grow[j]);
                                      }
                                  }
                                  for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<T>(g[i] + acc[i]);
                              }
                          });
}

template <class T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& a, double slope) {
    const T s = static_cast<T>(slope);
    return unary<T>(
        OpKind::leaky_relu, a, [s](T v) { return v > T(0) ? v : s * v; },
        [s](T in, T) { return in > T(0) ? T(1) : s; });
}

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
    if (numel(shape) != a.numel()) shape_fail(OpKind::reshape, a.shape(), shape, "element count mismatch");
    std::vector<T> out(a.data().begin(), a.data().end());
    auto pa = a.storage();
    return make_result<T>(std::move(shape), std::move(out), OpKind::reshape, {pa},
                          [pa](const detail::Storage<T>& o) {
                              if (!pa->tracks()) return;
                              auto& g = pa->grad_buffer();
                              for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                          });
}

template <class T>
BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>& parts) {
    if (parts.empty()) throw ShapeError("concat-channel: no inputs");
    const Shape& first = parts.front().shape();
    const Shape lead(first.begin(), first.end() - 1);
    std::size_t total = 0;
    std::vector<std::size_t> widths;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != first.size() || !std::equal(lead.begin(), lead.end(), s.begin()))
            shape_fail(OpKind::concat_channel, first, s, "leading extents differ");
        widths.push_back(s.back());
        total += s.back();
    }
    const std::size_t rows = numel(lead);
    std::vector<T> out(rows * total);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        auto src = parts[k].data();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(src.data() + r * widths[k], widths[k], out.data() + r * total + offset);
        offset += widths[k];
    }
    Shape shape = lead;
    shape.push_back(total);
    std::vector<StoragePtr<T>> parents;
    for (const auto& p : parts) parents.push_back(p.storage());
    return make_result<T>(std::move(shape), std::move(out), OpKind::concat_channel, parents,
                          [parents, widths, rows, total](const detail::Storage<T>& o) {
                              std::size_t off = 0;
                              for (std::size_t k = 0; k < parents.size(); ++k) {
                                  if (parents[k]->tracks()) {
                                      auto& g = parents[k]->grad_buffer();
                                      for (std::size_t r = 0; r < rows; ++r)
                                          for (std::size_t c = 0; c < widths[k]; ++c)
                                              g[r * widths[k] + c] += o.grad[r * total + off + c];
                                  }
                                  off += widths[k];
                              }
                          });
}

template <class T>
BasicTensor<T> slice_channels(const BasicTensor<T>& a, std::size_t begin, std::size_t end) {
    const std::size_t width = a.shape().back();
    if (begin >= end || end > width) {
        throw ShapeError("slice-channel: bounds [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for shape " + shape_str(a.shape()));
    }
    const std::size_t rows = a.numel() / width, w = end - begin;
    std::vector<T> out(rows * w);
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(a.data().data() + r * width + begin, w, out.data() + r * w);
    Shape shape = a.shape();
    shape.back() = w;
    auto pa = a.storage();
    return make_result<T>(std::move(shape), std::move(out), OpKind::slice_channel, {pa},
                          [pa, rows, width, begin, w](const detail::Storage<T>& o) {
                              if (!pa->tracks()) return;
                              auto& g = pa->grad_buffer();
                              for (std::size_t r = 0; r < rows; ++r)
                                  for (std::size_t c = 0; c < w; ++c) g[r * width + begin + c] += o.grad[r * w + c];
                          });
}

namespace {

template <class T>
BasicTensor<T> reduce(const BasicTensor<T>& a, OpKind kind) {
    double s = 0.0;
    for (T v : a.data()) s += static_cast<double>(v);
    const double n = static_cast<double>(a.numel());
    const bool is_mean = kind == OpKind::reduce_mean;
    std::vector<T> out{static_cast<T>(is_mean ? s / n : s)};
    auto pa = a.storage();
    return make_result<T>({1}, std::move(out), kind, {pa}, [pa, is_mean, n](const detail::Storage<T>& o) {
        if (!pa->tracks()) return;
        auto& g = pa->grad_buffer();
        const T d = is_mean ? static_cast<T>(o.grad[0] / n) : o.grad[0];
        for (auto& v : g) v += d;
    });
}

}  // namespace

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
    return reduce(a, OpKind::reduce_mean);
}

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
    return reduce(a, OpKind::reduce_sum);
}

template <class T>
BasicTensor<T> square(const BasicTensor<T>& a) {
    return unary<T>(
        OpKind::square, a, [](T v) { return v * v; }, [](T in, T) { return T(2) * in; });
}

template <class T>
BasicTensor<T> sqrt(const BasicTensor<T>& a) {
    return unary<T>(
        OpKind::sqrt, a, [](T v) { return std::sqrt(v); }, [](T, T out) { return T(0.5) / out; });
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, double s) {
    const T f = static_cast<T>(s);
    return unary<T>(
        OpKind::scalar_mul, a, [f](T v) { return f * v; }, [f](T, T) { return f; });
}

template <class T>
BasicTensor<T> add_scalar(const BasicTensor<T>& a, double s) {
    const T f = static_cast<T>(s);
    return unary<T>(
        OpKind::add_scalar, a, [f](T v) { return v + f; }, [](T, T) { return T(1); });
}

template <class T>
BasicTensor<T> tanh(const BasicTensor<T>& a) {
    return unary<T>(
        OpKind::tanh, a, [](T v) { return std::tanh(v); }, [](T, T out) { return T(1) - out * out; });
}

template <class T>
BasicTensor<T> gather(const BasicTensor<T>& a, std::span<const std::uint32_t> flat_index, Shape out_shape) {
    if (numel(out_shape) != flat_index.size())
        shape_fail(OpKind::gather, Shape{flat_index.size()}, out_shape, "index count does not match output");
    const auto src = a.data();
    std::vector<T> out(flat_index.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (flat_index[i] >= src.size())
            throw ShapeError("gather: index " + std::to_string(flat_index[i]) + " out of range for " +
                             shape_str(a.shape()));
        out[i] = src[flat_index[i]];
    }
    auto pa = a.storage();
    std::vector<std::uint32_t> idx(flat_index.begin(), flat_index.end());
    return make_result<T>(std::move(out_shape), std::move(out), OpKind::gather, {pa},
                          [pa, idx = std::move(idx)](const detail::Storage<T>& o) {
                              if (!pa->tracks()) return;
                              auto& g = pa->grad_buffer();
                              for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += o.grad[i];
                          });
}

template <class T>
BasicTensor<T> substitute(const BasicTensor<T>& value, const BasicTensor<T>& grad_target) {
    require_same(OpKind::substitute, value, grad_target);
    std::vector<T> out(value.data().begin(), value.data().end());
    auto pt = grad_target.storage();
    return make_result<T>(value.shape(), std::move(out), OpKind::substitute, {pt},
                          [pt](const detail::Storage<T>& o) {
                              if (!pt->tracks()) return;
                              auto& g = pt->grad_buffer();
                              for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
                          });
}

template <class T>
BasicTensor<T> forward(const PrimitiveOp& op, const std::vector<BasicTensor<T>>& in) {
    auto need = [&](std::size_t n) {
        if (in.size() != n)
            throw ShapeError(std::string(op_name(op.kind)) + ": expected " + std::to_string(n) + " inputs, got " +
                             std::to_string(in.size()));
    };
    switch (op.kind) {
    case OpKind::add: need(2); return add(in[0], in[1]);
    case OpKind::sub: need(2); return sub(in[0], in[1]);
    case OpKind::mul: need(2); return mul(in[0], in[1]);
    case OpKind::matmul: need(2); return matmul(in[0], in[1]);
    case OpKind::leaky_relu: need(1); return leaky_relu(in[0], op.slope);
    case OpKind::reshape: need(1); return reshape(in[0], op.shape);
    case OpKind::concat_channel: return concat_channels(in);
    case OpKind::slice_channel: need(1); return slice_channels(in[0], op.begin, op.end);
    case OpKind::reduce_mean: need(1); return mean(in[0]);
    case OpKind::reduce_sum: need(1); return sum(in[0]);
    case OpKind::square: need(1); return square(in[0]);
    case OpKind::sqrt: need(1); return sqrt(in[0]);
    case OpKind::scalar_mul: need(1); return scale(in[0], op.scalar);
    case OpKind::add_scalar: need(1); return add_scalar(in[0], op.scalar);
    case OpKind::tanh: need(1); return tanh(in[0]);
    case OpKind::gather: need(1); return gather<T>(in[0], op.indices, op.shape);
    case OpKind::substitute: need(2); return substitute(in[0], in[1]);
    }
    throw ShapeError("forward: unknown op kind");
}

// ---------------------------------------------------------------- backward

template <class T>
void backward(const BasicTensor<T>& loss) {
    if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    using S = detail::Storage<T>;

    // Iterative post-order DFS gives a topological order (parents before children).
    std::vector<S*> order;
    std::unordered_set<const S*> seen;
    std::vector<std::pair<S*, std::size_t>> stack;
    S* root = loss.storage().get();
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
        auto& [cur, next] = stack.back();
        if (cur->node && next < cur->node->parents.size()) {
            S* parent = cur->node->parents[next++].get();
            if (parent->tracks() && seen.insert(parent).second) stack.emplace_back(parent, 0);
            continue;
        }
        order.push_back(cur);
        stack.pop_back();
    }

    // Intermediate gradients are recomputed from scratch on every call.
    for (S* s : order)
        if (s->node) s->grad.clear();
    root->grad_buffer()[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        S* s = *it;
        if (!s->node) continue;
        if (s->grad.empty()) s->grad.assign(s->data.size(), T(0));
        s->node->backprop(*s);
    }
}

template <class T>
double grad_check(const std::function<BasicTensor<T>(const BasicTensor<T>&)>& f, const BasicTensor<T>& x,
                  double step) {
    if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
    BasicTensor<T> probe = x.detach();
    probe.set_requires_grad(true);
    BasicTensor<T> y = f(probe);
    if (y.numel() != 1) throw ShapeError("grad_check: f must return a scalar, got " + shape_str(y.shape()));
    backward(y);
    std::vector<double> analytic(x.numel(), 0.0);
    if (probe.has_grad())
        for (std::size_t i = 0; i < analytic.size(); ++i) analytic[i] = probe.grad()[i];

    double worst = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) {
        BasicTensor<T> xp = x.detach(), xm = x.detach();
        xp.mutable_data()[i] = static_cast<T>(x.data()[i] + step);
        xm.mutable_data()[i] = static_cast<T>(x.data()[i] - step);
        const double fp = f(xp).item(), fm = f(xm).item();
        // Divide by the representable perturbation, not the nominal one.
        const double h2 = static_cast<double>(xp.data()[i]) - static_cast<double>(xm.data()[i]);
        const double numeric = (fp - fm) / h2;
        const double err = std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
        worst = std::max(worst, err);
    }
    return worst;
}

// ---------------------------------------------------------------- instantiation

#define MGVQ_INSTANTIATE(T)                                                                              \
    template class BasicTensor<T>;                                                                       \
    template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                           \
    template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                           \
    template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                           \
    template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                        \
    template BasicTensor<T> leaky_relu(const BasicTensor<T>&, double);                                   \
    template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                       \
    template BasicTensor<T> concat_channels(const std::vector<BasicTensor<T>>&);                         \
    template BasicTensor<T> slice_channels(const BasicTensor<T>&, std::size_t, std::size_t);             \
    template BasicTensor<T> mean(const BasicTensor<T>&);                                                 \
    template BasicTensor<T> sum(const BasicTensor<T>&);                                                  \
    template BasicTensor<T> square(const BasicTensor<T>&);                                               \
    template BasicTensor<T> sqrt(const BasicTensor<T>&);                                                 \
    template BasicTensor<T> scale(const BasicTensor<T>&, double);                                        \
    template BasicTensor<T> add_scalar(const BasicTensor<T>&, double);                                   \
    template BasicTensor<T> tanh(const BasicTensor<T>&);                                                 \
    template BasicTensor<T> gather(const BasicTensor<T>&, std::span<const std::uint32_t>, Shape);        \
    template BasicTensor<T> substitute(const BasicTensor<T>&, const BasicTensor<T>&);                    \
    template BasicTensor<T> forward(const PrimitiveOp&, const std::vector<BasicTensor<T>>&);             \
    template void backward(const BasicTensor<T>&);                                                       \
    template double grad_check(const std::function<BasicTensor<T>(const BasicTensor<T>&)>&, const BasicTensor<T>&, double);

MGVQ_INSTANTIATE(float)
MGVQ_INSTANTIATE(double)

#undef MGVQ_INSTANTIATE

}  // namespace mgvq::nd
