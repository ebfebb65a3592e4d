#include "bapc/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "bapc/kernels.hpp"

namespace bapc {

// ---------------------------------------------------------------------------
// Tape

template <typename T>
Var<T> Tape<T>::push(Tensor<T> value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Tensor<T>(), requires_grad && recording_});
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  return push(std::move(value), false);
}

template <typename T>
Var<T> Tape<T>::parameter(Parameter<T>& param) {
  if (auto it = param_nodes_.find(&param); it != param_nodes_.end()) return Var<T>{this, it->second};
  Var<T> v = push(param.value, param.trainable);
  param_nodes_.emplace(&param, v.id);
  if (recording_ && param.trainable) bound_params_.emplace_back(&param, v.id);
  return v;
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(Var<T> v) {
  Node& node = nodes_.at(v.id);
  if (node.grad.empty()) node.grad = Tensor<T>(node.value.shape());
  return node.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (!recording_) throw std::logic_error("backward on a non-recording tape");
  if (backward_done_) throw std::logic_error("backward already ran on this tape");
  const Tensor<T>& lv = value(loss);
  if (lv.size() != 1) {
    throw std::invalid_argument("backward requires a scalar loss, got shape " + shape_string(lv.shape()));
  }
  backward_done_ = true;
  grad_buffer(loss)[0] = T(1);
  replay_log_.clear();
  replay_log_.reserve(records_.size());
  for (std::size_t i = records_.size(); i-- > 0;) {
    records_[i]();
    replay_log_.push_back(i);
  }
  for (auto& [param, id] : bound_params_) {
    const Tensor<T>& g = nodes_[id].grad;
    if (g.empty()) continue;
    if (param->grad.shape() != param->value.shape()) param->zero_grad();
    kernels::add(g.values(), param->grad.values());
  }
}

template class Tape<float>;
template class Tape<double>;

// ---------------------------------------------------------------------------
// Ops

namespace ops {

namespace {

template <typename T>
Tape<T>& tape_of(Var<T> a) {
  if (!a.valid()) throw std::invalid_argument("op on an unbound variable");
  return *a.tape;
}

template <typename T>
void same_tape(Var<T> a, Var<T> b) {
  if (a.tape != b.tape) throw std::invalid_argument("op mixes variables from different tapes");
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
}

template <typename T>
bool needs_record(Tape<T>& tape, std::initializer_list<Var<T>> inputs) {
  if (!tape.recording()) return false;
  return std::any_of(inputs.begin(), inputs.end(), [&](Var<T> v) { return tape.requires_grad(v); });
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
T sign_of(T x) {
  return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  same_tape(a, b);
  Tape<T>& tape = tape_of(a);
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  if (A.cols() != B.rows()) shape_error("matmul", A.shape(), B.shape());
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor<T> out = Tensor<T>::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    auto yrow = out.row(i);
    for (std::size_t p = 0; p < k; ++p) kernels::axpy(A(i, p), B.row(p), yrow);
  }
  Var<T> y = tape.push(std::move(out), needs_record(tape, {a, b}));
  if (tape.requires_grad(y)) {
    tape.record([&tape, a, b, y, m, k] {
      const Tensor<T>* gy = tape.incoming_grad(y);
      if (gy == nullptr) return;
      const Tensor<T>& A = tape.value(a);
      const Tensor<T>& B = tape.value(b);
      if (tape.requires_grad(a)) {
        Tensor<T>& ga = tape.grad_buffer(a);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) ga(i, p) += kernels::dot(gy->row(i), B.row(p));
        }
      }
      if (tape.requires_grad(b)) {
        Tensor<T>& gb = tape.grad_buffer(b);
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t p = 0; p < k; ++p) kernels::axpy(A(i, p), gy->row(i), gb.row(p));
        }
      }
    });
  }
  return y;
}

template <typename T>
Var<T> transpose(Var<T> a) {
  Tape<T>& tape = tape_of(a);
  const Tensor<T>& A = a.value();
  const std::size_t r = A.rows(), c = A.cols();
  Tensor<T> out = Tensor<T>::matrix(c, r);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out(j, i) = A(i, j);
  }
  Var<T> y = tape.push(std::move(out), needs_record(tape, {a}));
  if (tape.requires_grad(y)) {
    tape.record([&tape, a, y, r, c] {
      const Tensor<T>* gy = tape.incoming_grad(y);
      if (gy == nullptr) return;
      Tensor<T>& ga = tape.grad_buffer(a);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) ga(i, j) += (*gy)(j, i);
      }
    });
  }
  return y;
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  same_tape(a, b);
  Tape<T>& tape = tape_of(a);
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  if (!A.same_shape(B)) shape_error("add", A.shape(), B.shape());
  Tensor<T> out = A;
  kernels::add(B.values(), out.values());
  Var<T> y = tape.push(std::move(out), needs_record(tape, {a, b}));
  if (tape.requires_grad(y)) {
    tape.record([&tape, a, b, y] {
      const Tensor<T>* gy = tape.incoming_grad(y);
      if (gy == nullptr) return;
      if (tape.requires_grad(a)) kernels::add(gy->values(), tape.grad_buffer(a).values());
      if (tape.requires_grad(b)) kernels::add(gy->values(), tape.grad_buffer(b).values());
    });
  }
  return y;
}

template <typename T>
Var<T> add_row(Var<T> x, Var<T> bias) {
  same_tape(x, bias);
  Tape<T>& tape = tape_of(x);
  const Tensor<T>& X = x.value();
  const Tensor<T>& Bv = bias.value();
  if (Bv.size() != X.cols()) shape_error("add_row", X.shape(), Bv.shape());
  Tensor<T> out = X;
  for (std::size_t i = 0; i < out.rows(); ++i) kernels::add(Bv.values(), out.row(i));
  Var<T> y = tape.push(std::move(out), needs_record(tape, {x, bias}));
  if (tape.requires_grad(y)) {
    tape.record([&tape, x, bias, y] {
      const Tensor<T>* gy = tape.incoming_grad(y);
      if (gy == nullptr) return;
      if (tape.requires_grad(x)) kernels::add(gy->values(), tape.grad_buffer(x).values());
      if (tape.requires_grad(bias)) {
        Tensor<T>& gb = tape.grad_buffer(bias);
        for (std::size_t i = 0; i < gy->rows(); ++i) kernels::add(gy->row(i), gb.values());
      }
    });
  }
  return y;
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  same_tape(a, b);
  Tape<T>& tape = tape_of(a);
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  if (!A.same_shape(B)) shape_error("mul", A.shape(), B.shape());
  Tensor<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  Var<T> y = tape.push(std::move(out), needs_record(tape, {a, b}));
  if (tape.requires_grad(y)) {
    tape.record([&tape, a, b, y] {
      const Tensor<T>* gy = tape.incoming_grad(y);
      if (gy == nullptr) return;
      const Tensor<T>& A = tape.value(a);
      const Tensor<T>& B = tape.value(b);
      if (tape.requires_grad(a)) {
        Tensor<T>& ga = tape.grad_buffer(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += (*gy)[i] * B[i];
      }
      if (tape.requires_grad(b)) {
        Tensor<T>& gb = tape.grad_buffer(b);
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += (*gy)[i] * A[i];
      }
    });
  }
  return y;
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  Tape<T>& tape = tape_of(x);
  Tensor<T> out = x.value();
  for (T& v : out.values()) v *= factor;
  Var<T> y = tape.push(std::move(out), needs_record(tape, {x}));
  if (tape.requires_grad(y)) {
    tape.record([&tape, x, y, factor] {
      const Tensor<T>* gy = tape.incoming_grad(y);
      if (gy == nullptr) return;
      kernels::axpy(factor, gy->values(), tape.grad_buffer(x).values());
    });
  }
  return y;
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  Tape<T>& tape = tape_of(x);
  Tensor<T> out = x.value();
  for (T& v : out.values()) v = stable_sigmoid(v);
  Var<T> y = tape.push(std::move(out), needs_record(tape, {x}));
  if (tape.requires_grad(y)) {
    tape.record([&tape, x, y] {
      const Tensor<T>* gy = tape.incoming_grad(y);
      if (gy == nullptr) return;
      const Tensor<T>& s = tape.value(y);
      Tensor<T>& gx = tape.grad_buffer(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += (*gy)[i] * s[i] * (T(1) - s[i]);
    });
  }
  return y;
}

template <typename T>
Var<T> tanh(Var<T> x) {
  Tape<T>& tape = tape_of(x);
  Tensor<T> out = x.value();
  for (T& v : out.values()) v = std::tanh(v);
  Var<T> y = tape.push(std::move(out), needs_record(tape, {x}));
  if (tape.requires_grad(y)) {
    tape.record([&tape, x, y] {
      const Tensor<T>* gy = tape.incoming_grad(y);
      if (gy == nullptr) return;
      const Tensor<T>& t = tape.value(y);
      Tensor<T>& gx = tape.grad_buffer(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += (*gy)[i] * (T(1) - t[i] * t[i]);
    });
  }
  return y;
}

template <typename T>
Var<T> concat_cols(Var<T> a, Var<T> b) {
  same_tape(a, b);
  Tape<T>& tape = tape_of(a);
  const Tensor<T>& A = a.value();
  const Tensor<T>& B = b.value();
  if (A.rows() != B.rows()) shape_error("concat_cols", A.shape(), B.shape());
  const std::size_t ca = A.cols(), cb = B.cols();
  Tensor<T> out = Tensor<T>::matrix(A.rows(), ca + cb);
  for (std::size_t i = 0; i < A.rows(); ++i) {
    std::copy(A.row(i).begin(), A.row(i).end(), out.row(i).begin());
    std::copy(B.row(i).begin(), B.row(i).end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(ca));
  }
  Var<T> y = tape.push(std::move(out), needs_record(tape, {a, b}));
  if (tape.requires_grad(y)) {
    tape.record([&tape, a, b, y, ca, cb] {
      const Tensor<T>* gy = tape.incoming_grad(y);
      if (gy == nullptr) return;
      for (std::size_t i = 0; i < gy->rows(); ++i) {
        auto row = gy->row(i);
        if (tape.requires_grad(a)) kernels::add(row.subspan(0, ca), tape.grad_buffer(a).row(i));
        if (tape.requires_grad(b)) kernels::add(row.subspan(ca, cb), tape.grad_buffer(b).row(i));
      }
    });
  }
  return y;
}

template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t end) {
  Tape<T>& tape = tape_of(x);
  const Tensor<T>& X = x.value();
  if (begin >= end || end > X.cols()) {
    throw std::invalid_argument("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                ") outside " + shape_string(X.shape()));
  }
  const std::size_t w = end - begin;
  Tensor<T> out = Tensor<T>::matrix(X.rows(), w);
  for (std::size_t i = 0; i < X.rows(); ++i) {
    auto src = X.row(i).subspan(begin, w);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  Var<T> y = tape.push(std::move(out), needs_record(tape, {x}));
  if (tape.requires_grad(y)) {
    tape.record([&tape, x, y, begin, w] {
      const Tensor<T>* gy = tape.incoming_grad(y);
      if (gy == nullptr) return;
      Tensor<T>& gx = tape.grad_buffer(x);
      for (std::size_t i = 0; i < gy->rows(); ++i) kernels::add(gy->row(i), gx.row(i).subspan(begin, w));
    });
  }
  return y;
}

template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t end) {
  Tape<T>& tape = tape_of(x);
  const Tensor<T>& X = x.value();
  if (begin >= end || end > X.rows()) {
    throw std::invalid_argument("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                ") outside " + shape_string(X.shape()));
  }
  const std::size_t c = X.cols();
  Tensor<T> out = Tensor<T>::matrix(end - begin, c);
  std::copy(X.values().begin() + static_cast<std::ptrdiff_t>(begin * c),
            X.values().begin() + static_cast<std::ptrdiff_t>(end * c), out.values().begin());
  Var<T> y = tape.push(std::move(out), needs_record(tape, {x}));
  if (tape.requires_grad(y)) {
    tape.record([&tape, x, y, begin, c] {
      const Tensor<T>* gy = tape.incoming_grad(y);
      if (gy == nullptr) return;
      kernels::add(gy->values(), tape.grad_buffer(x).values().subspan(begin * c, gy->size()));
    });
  }
  return y;
}

template <typename T>
Var<T> stack_rows(std::span<const Var<T>> parts) {
  if (parts.empty()) throw std::invalid_argument("stack_rows: no inputs");
  Tape<T>& tape = tape_of(parts.front());
  const std::size_t c = parts.front().value().cols();
  std::size_t total = 0;
  bool any_grad = false;
  for (const Var<T>& p : parts) {
    same_tape(p, parts.front());
    if (p.value().cols() != c) shape_error("stack_rows", parts.front().value().shape(), p.value().shape());
    total += p.value().rows();
    any_grad = any_grad || tape.requires_grad(p);
  }
  Tensor<T> out = Tensor<T>::matrix(total, c);
  std::size_t offset = 0;
  for (const Var<T>& p : parts) {
    const auto vals = p.value().values();
    std::copy(vals.begin(), vals.end(), out.values().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += vals.size();
  }
  Var<T> y = tape.push(std::move(out), tape.recording() && any_grad);
  if (tape.requires_grad(y)) {
    std::vector<Var<T>> inputs(parts.begin(), parts.end());
    tape.record([&tape, inputs = std::move(inputs), y] {
      const Tensor<T>* gy = tape.incoming_grad(y);
      if (gy == nullptr) return;
      std::size_t off = 0;
      for (const Var<T>& p : inputs) {
        const std::size_t n = tape.value(p).size();
        if (tape.requires_grad(p)) kernels::add(gy->values().subspan(off, n), tape.grad_buffer(p).values());
        off += n;
      }
    });
  }
  return y;
}

template <typename T>
Var<T> permute_rows(Var<T> x, std::span<const std::size_t> perm) {
  Tape<T>& tape = tape_of(x);
  const Tensor<T>& X = x.value();
  if (perm.size() != X.rows()) {
    throw std::invalid_argument("permute_rows: permutation of " + std::to_string(perm.size()) + " rows for " +
                                shape_string(X.shape()));
  }
  Tensor<T> out = Tensor<T>::matrix(X.rows(), X.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (perm[i] >= X.rows()) throw std::invalid_argument("permute_rows: index out of range");
    std::copy(X.row(perm[i]).begin(), X.row(perm[i]).end(), out.row(i).begin());
  }
  Var<T> y = tape.push(std::move(out), needs_record(tape, {x}));
  if (tape.requires_grad(y)) {
    std::vector<std::size_t> p(perm.begin(), perm.end());
    tape.record([&tape, x, y, p = std::move(p)] {
      const Tensor<T>* gy = tape.incoming_grad(y);
      if (gy == nullptr) return;
      Tensor<T>& gx = tape.grad_buffer(x);
      for (std::size_t i = 0; i < p.size(); ++i) kernels::add(gy->row(i), gx.row(p[i]));
    });
  }
  return y;
}

template <typename T>
Var<T> softmax_rows(Var<T> x) {
  Tape<T>& tape = tape_of(x);
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.rows(); ++i) {
    auto row = out.row(i);
    const T mx = *std::max_element(row.begin(), row.end());
    T total = 0;
    for (T& v : row) {
      v = std::exp(v - mx);
      total += v;
    }
    for (T& v : row) v /= total;
  }
  Var<T> y = tape.push(std::move(out), needs_record(tape, {x}));
  if (tape.requires_grad(y)) {
    tape.record([&tape, x, y] {
      const Tensor<T>* gy = tape.incoming_grad(y);
      if (gy == nullptr) return;
      const Tensor<T>& s = tape.value(y);
      Tensor<T>& gx = tape.grad_buffer(x);
      for (std::size_t i = 0; i < s.rows(); ++i) {
        const T inner = kernels::dot(gy->row(i), s.row(i));
        auto gxr = gx.row(i);
        auto sr = s.row(i);
        auto gyr = gy->row(i);
        for (std::size_t j = 0; j < sr.size(); ++j) gxr[j] += sr[j] * (gyr[j] - inner);
      }
    });
  }
  return y;
}

template <typename T>
Var<T> sum(Var<T> x) {
  Tape<T>& tape = tape_of(x);
  T total = 0;
  for (T v : x.value().values()) total += v;
  Var<T> y = tape.push(Tensor<T>::scalar(total), needs_record(tape, {x}));
  if (tape.requires_grad(y)) {
    tape.record([&tape, x, y] {
      const Tensor<T>* gy = tape.incoming_grad(y);
      if (gy == nullptr) return;
      const T g = (*gy)[0];
      for (T& v : tape.grad_buffer(x).values()) v += g;
    });
  }
  return y;
}

template <typename T>
LstmCellOutput<T> lstm_cell(Var<T> gates, Var<T> c_prev) {
  same_tape(gates, c_prev);
  Tape<T>& tape = tape_of(gates);
  const Tensor<T>& G = gates.value();
  const Tensor<T>& C0 = c_prev.value();
  const std::size_t batch = G.rows();
  const std::size_t hidden = C0.cols();
  if (G.cols() != 4 * hidden || C0.rows() != batch) shape_error("lstm_cell", G.shape(), C0.shape());

  // act holds the activated gates in the same (i, f, g, o) layout.
  Tensor<T> act = Tensor<T>::matrix(batch, 4 * hidden);
  Tensor<T> h = Tensor<T>::matrix(batch, hidden);
  Tensor<T> c = Tensor<T>::matrix(batch, hidden);
  Tensor<T> tanh_c = Tensor<T>::matrix(batch, hidden);
  for (std::size_t b = 0; b < batch; ++b) {
    auto g = G.row(b);
    auto a = act.row(b);
    for (std::size_t j = 0; j < hidden; ++j) {
      const T ig = stable_sigmoid(g[j]);
      const T fg = stable_sigmoid(g[hidden + j]);
      const T cg = std::tanh(g[2 * hidden + j]);
      const T og = stable_sigmoid(g[3 * hidden + j]);
      a[j] = ig;
      a[hidden + j] = fg;
      a[2 * hidden + j] = cg;
      a[3 * hidden + j] = og;
      const T cv = fg * C0(b, j) + ig * cg;
      const T tc = std::tanh(cv);
      c(b, j) = cv;
      tanh_c(b, j) = tc;
      h(b, j) = og * tc;
    }
  }
  const bool rec = needs_record(tape, {gates, c_prev});
  Var<T> hv = tape.push(std::move(h), rec);
  Var<T> cv = tape.push(std::move(c), rec);
  if (rec) {
    tape.record([&tape, gates, c_prev, hv, cv, act = std::move(act), tanh_c = std::move(tanh_c), batch, hidden] {
      const Tensor<T>* gh = tape.incoming_grad(hv);
      const Tensor<T>* gc = tape.incoming_grad(cv);
      if (gh == nullptr && gc == nullptr) return;
      const Tensor<T>& C0 = tape.value(c_prev);
      Tensor<T>* gg = tape.requires_grad(gates) ? &tape.grad_buffer(gates) : nullptr;
      Tensor<T>* gc0 = tape.requires_grad(c_prev) ? &tape.grad_buffer(c_prev) : nullptr;
      for (std::size_t b = 0; b < batch; ++b) {
        auto a = act.row(b);
        for (std::size_t j = 0; j < hidden; ++j) {
          const T ig = a[j], fg = a[hidden + j], cg = a[2 * hidden + j], og = a[3 * hidden + j];
          const T tc = tanh_c(b, j);
          const T dh = gh != nullptr ? (*gh)(b, j) : T(0);
          T dc = gc != nullptr ? (*gc)(b, j) : T(0);
          dc += dh * og * (T(1) - tc * tc);
          if (gg != nullptr) {
            auto grow = gg->row(b);
            grow[j] += dc * cg * ig * (T(1) - ig);
            grow[hidden + j] += dc * C0(b, j) * fg * (T(1) - fg);
            grow[2 * hidden + j] += dc * ig * (T(1) - cg * cg);
            grow[3 * hidden + j] += dh * tc * og * (T(1) - og);
          }
          if (gc0 != nullptr) (*gc0)(b, j) += dc * fg;
        }
      }
    });
  }
  return {hv, cv};
}

template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, std::span<const std::uint8_t> valid_rows,
                  BatchNormStats<T>& stats, bool train, const BatchNormOptions& options) {
  same_tape(x, gamma);
  same_tape(x, beta);
  Tape<T>& tape = tape_of(x);
  const Tensor<T>& X = x.value();
  const std::size_t n = X.rows(), f = X.cols();
  if (gamma.value().size() != f || beta.value().size() != f) {
    shape_error("batch_norm", X.shape(), gamma.value().shape());
  }
  if (stats.running_mean.size() != f || stats.running_var.size() != f) {
    shape_error("batch_norm (running moments)", X.shape(), stats.running_mean.shape());
  }
  if (valid_rows.size() != n) throw std::invalid_argument("batch_norm: mask length does not match rows");
  std::size_t count = 0;
  for (auto m : valid_rows) count += m != 0 ? 1 : 0;
  if (train && count == 0) throw std::invalid_argument("batch_norm: no valid rows in training batch");

  std::vector<T> mean(f, T(0)), inv_std(f, T(0));
  if (train) {
    std::vector<T> var(f, T(0));
    for (std::size_t i = 0; i < n; ++i) {
      if (valid_rows[i] != 0) kernels::add(X.row(i), std::span<T>(mean));
    }
    for (T& m : mean) m /= static_cast<T>(count);
    for (std::size_t i = 0; i < n; ++i) {
      if (valid_rows[i] == 0) continue;
      auto row = X.row(i);
      for (std::size_t j = 0; j < f; ++j) {
        const T d = row[j] - mean[j];
        var[j] += d * d;
      }
    }
    const T keep = static_cast<T>(options.momentum);
    for (std::size_t j = 0; j < f; ++j) {
      var[j] /= static_cast<T>(count);
      inv_std[j] = T(1) / std::sqrt(var[j] + static_cast<T>(options.variance_floor));
      stats.running_mean[j] = keep * stats.running_mean[j] + (T(1) - keep) * mean[j];
      stats.running_var[j] = keep * stats.running_var[j] + (T(1) - keep) * var[j];
    }
  } else {
    for (std::size_t j = 0; j < f; ++j) {
      mean[j] = stats.running_mean[j];
      inv_std[j] = T(1) / std::sqrt(stats.running_var[j] + static_cast<T>(options.variance_floor));
    }
  }

  const Tensor<T>& G = gamma.value();
  const Tensor<T>& Bt = beta.value();
  Tensor<T> xhat = Tensor<T>::matrix(n, f);
  Tensor<T> out = Tensor<T>::matrix(n, f);
  for (std::size_t i = 0; i < n; ++i) {
    if (valid_rows[i] == 0) continue;
    auto xr = X.row(i);
    auto hr = xhat.row(i);
    auto yr = out.row(i);
    for (std::size_t j = 0; j < f; ++j) {
      hr[j] = (xr[j] - mean[j]) * inv_std[j];
      yr[j] = G[j] * hr[j] + Bt[j];
    }
  }
  Var<T> y = tape.push(std::move(out), needs_record(tape, {x, gamma, beta}));
  if (tape.requires_grad(y)) {
    std::vector<std::uint8_t> mask(valid_rows.begin(), valid_rows.end());
    tape.record([&tape, x, gamma, beta, y, xhat = std::move(xhat), inv_std = std::move(inv_std),
                 mask = std::move(mask), count, train, n, f] {
      const Tensor<T>* gy = tape.incoming_grad(y);
      if (gy == nullptr) return;
      const Tensor<T>& G = tape.value(gamma);
      std::vector<T> sum_dy(f, T(0)), sum_dy_xhat(f, T(0));
      for (std::size_t i = 0; i < n; ++i) {
        if (mask[i] == 0) continue;
        auto gr = gy->row(i);
        auto hr = xhat.row(i);
        for (std::size_t j = 0; j < f; ++j) {
          sum_dy[j] += gr[j];
          sum_dy_xhat[j] += gr[j] * hr[j];
        }
      }
      if (tape.requires_grad(gamma)) {
        Tensor<T>& gg = tape.grad_buffer(gamma);
        for (std::size_t j = 0; j < f; ++j) gg[j] += sum_dy_xhat[j];
      }
      if (tape.requires_grad(beta)) {
        Tensor<T>& gb = tape.grad_buffer(beta);
        for (std::size_t j = 0; j < f; ++j) gb[j] += sum_dy[j];
      }
      if (!tape.requires_grad(x)) return;
      Tensor<T>& gx = tape.grad_buffer(x);
      const T inv_n = T(1) / static_cast<T>(count);
      for (std::size_t i = 0; i < n; ++i) {
        if (mask[i] == 0) continue;
        auto gr = gy->row(i);
        auto hr = xhat.row(i);
        auto gxr = gx.row(i);
        for (std::size_t j = 0; j < f; ++j) {
          const T scale_j = G[j] * inv_std[j];
          if (train) {
            gxr[j] += scale_j * (gr[j] - inv_n * sum_dy[j] - hr[j] * inv_n * sum_dy_xhat[j]);
          } else {
            gxr[j] += scale_j * gr[j];
          }
        }
      }
    });
  }
  return y;
}

template <typename T>
Var<T> dropout(Var<T> x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout rate must be in [0, 1)");
  if (rate == 0.0) return x;
  Tape<T>& tape = tape_of(x);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> mask(x.value().shape());
  for (T& m : mask.values()) m = uniform01(rng) < rate ? T(0) : keep_scale;
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  Var<T> y = tape.push(std::move(out), needs_record(tape, {x}));
  if (tape.requires_grad(y)) {
    tape.record([&tape, x, y, mask = std::move(mask)] {
      const Tensor<T>* gy = tape.incoming_grad(y);
      if (gy == nullptr) return;
      Tensor<T>& gx = tape.grad_buffer(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += (*gy)[i] * mask[i];
    });
  }
  return y;
}

template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const std::int32_t> labels) {
  Tape<T>& tape = tape_of(logits);
  const Tensor<T>& Z = logits.value();
  const std::size_t n = Z.rows(), classes = Z.cols();
  if (labels.size() != n) {
    throw std::invalid_argument("cross entropy: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(n) + " frames");
  }
  Tensor<T> probs = Tensor<T>::matrix(n, classes);
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0) continue;
    if (static_cast<std::size_t>(labels[i]) >= classes) {
      throw std::out_of_range("cross entropy: label " + std::to_string(labels[i]) + " out of range for " +
                              std::to_string(classes) + " classes");
    }
    auto z = Z.row(i);
    auto p = probs.row(i);
    const T mx = *std::max_element(z.begin(), z.end());
    T total = 0;
    for (std::size_t j = 0; j < classes; ++j) {
      p[j] = std::exp(z[j] - mx);
      total += p[j];
    }
    for (T& v : p) v /= total;
    loss += (mx + std::log(total)) - z[static_cast<std::size_t>(labels[i])];
  }
  Var<T> y = tape.push(Tensor<T>::scalar(loss), needs_record(tape, {logits}));
  if (tape.requires_grad(y)) {
    std::vector<std::int32_t> lab(labels.begin(), labels.end());
    tape.record([&tape, logits, y, probs = std::move(probs), lab = std::move(lab)] {
      const Tensor<T>* gy = tape.incoming_grad(y);
      if (gy == nullptr) return;
      const T g = (*gy)[0];
      Tensor<T>& gz = tape.grad_buffer(logits);
      for (std::size_t i = 0; i < lab.size(); ++i) {
        if (lab[i] < 0) continue;
        auto gr = gz.row(i);
        auto p = probs.row(i);
        for (std::size_t j = 0; j < gr.size(); ++j) gr[j] += g * p[j];
        gr[static_cast<std::size_t>(lab[i])] -= g;
      }
    });
  }
  return y;
}

template <typename T>
Var<T> shifted_l1(Var<T> pred, Var<T> target, const SequenceLayout& layout, int shift) {
  same_tape(pred, target);
  Tape<T>& tape = tape_of(pred);
  const Tensor<T>& P = pred.value();
  const Tensor<T>& X = target.value();
  if (!P.same_shape(X)) shape_error("shifted_l1", P.shape(), X.shape());
  if (P.rows() != layout.rows()) {
    throw std::invalid_argument("shifted_l1: layout has " + std::to_string(layout.rows()) + " rows, tensor " +
                                shape_string(P.shape()));
  }
  if (shift == 0) throw std::invalid_argument("shifted_l1: shift must be non-zero");
  const std::size_t n = static_cast<std::size_t>(shift > 0 ? shift : -shift);

  // (prediction row, target row) pairs that carry a target.
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t b = 0; b < layout.batch; ++b) {
    const std::size_t len = layout.lengths[b];
    if (len <= n) throw std::invalid_argument("sequence shorter than shift");
    for (std::size_t t = 0; t + n < len; ++t) {
      if (shift > 0) {
        pairs.emplace_back(layout.row(t, b), layout.row(t + n, b));
      } else {
        pairs.emplace_back(layout.row(t + n, b), layout.row(t, b));
      }
    }
  }
  T loss = 0;
  for (const auto& [pr, tr] : pairs) {
    auto p = P.row(pr);
    auto x = X.row(tr);
    for (std::size_t j = 0; j < p.size(); ++j) loss += std::abs(x[j] - p[j]);
  }
  Var<T> y = tape.push(Tensor<T>::scalar(loss), needs_record(tape, {pred, target}));
  if (tape.requires_grad(y)) {
    tape.record([&tape, pred, target, y, pairs = std::move(pairs)] {
      const Tensor<T>* gy = tape.incoming_grad(y);
      if (gy == nullptr) return;
      const T g = (*gy)[0];
      const Tensor<T>& P = tape.value(pred);
      const Tensor<T>& X = tape.value(target);
      Tensor<T>* gp = tape.requires_grad(pred) ? &tape.grad_buffer(pred) : nullptr;
      Tensor<T>* gt = tape.requires_grad(target) ? &tape.grad_buffer(target) : nullptr;
      for (const auto& [pr, tr] : pairs) {
        auto p = P.row(pr);
        auto x = X.row(tr);
        for (std::size_t j = 0; j < p.size(); ++j) {
          const T s = sign_of(p[j] - x[j]) * g;
          if (gp != nullptr) (*gp)(pr, j) += s;
          if (gt != nullptr) (*gt)(tr, j) -= s;
        }
      }
    });
  }
  return y;
}

template <typename T>
Var<T> masked_l1(Var<T> pred, Var<T> target, std::span<const std::uint8_t> mask) {
  same_tape(pred, target);
  Tape<T>& tape = tape_of(pred);
  const Tensor<T>& P = pred.value();
  const Tensor<T>& X = target.value();
  if (!P.same_shape(X)) shape_error("masked_l1", P.shape(), X.shape());
  if (mask.size() != P.rows()) throw std::invalid_argument("masked_l1: mask length does not match rows");
  T loss = 0;
  for (std::size_t i = 0; i < P.rows(); ++i) {
    if (mask[i] == 0) continue;
    auto p = P.row(i);
    auto x = X.row(i);
    for (std::size_t j = 0; j < p.size(); ++j) loss += std::abs(x[j] - p[j]);
  }
  Var<T> y = tape.push(Tensor<T>::scalar(loss), needs_record(tape, {pred, target}));
  if (tape.requires_grad(y)) {
    std::vector<std::uint8_t> m(mask.begin(), mask.end());
    tape.record([&tape, pred, target, y, m = std::move(m)] {
      const Tensor<T>* gy = tape.incoming_grad(y);
      if (gy == nullptr) return;
      const T g = (*gy)[0];
      const Tensor<T>& P = tape.value(pred);
      const Tensor<T>& X = tape.value(target);
      Tensor<T>* gp = tape.requires_grad(pred) ? &tape.grad_buffer(pred) : nullptr;
      Tensor<T>* gt = tape.requires_grad(target) ? &tape.grad_buffer(target) : nullptr;
      for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i] == 0) continue;
        for (std::size_t j = 0; j < P.cols(); ++j) {
          const T s = sign_of(P(i, j) - X(i, j)) * g;
          if (gp != nullptr) (*gp)(i, j) += s;
          if (gt != nullptr) (*gt)(i, j) -= s;
        }
      }
    });
  }
  return y;
}

#define BAPC_INSTANTIATE_OPS(T)                                                                             \
  template Var<T> matmul(Var<T>, Var<T>);                                                                   \
  template Var<T> transpose(Var<T>);                                                                        \
  template Var<T> add(Var<T>, Var<T>);                                                                      \
  template Var<T> add_row(Var<T>, Var<T>);                                                                  \
  template Var<T> mul(Var<T>, Var<T>);                                                                      \
  template Var<T> scale(Var<T>, T);                                                                         \
  template Var<T> sigmoid(Var<T>);                                                                          \
  template Var<T> tanh(Var<T>);                                                                             \
  template Var<T> concat_cols(Var<T>, Var<T>);                                                              \
  template Var<T> slice_cols(Var<T>, std::size_t, std::size_t);                                             \
  template Var<T> slice_rows(Var<T>, std::size_t, std::size_t);                                             \
  template Var<T> stack_rows(std::span<const Var<T>>);                                                      \
  template Var<T> permute_rows(Var<T>, std::span<const std::size_t>);                                       \
  template Var<T> softmax_rows(Var<T>);                                                                     \
  template Var<T> sum(Var<T>);                                                                              \
  template LstmCellOutput<T> lstm_cell(Var<T>, Var<T>);                                                     \
  template Var<T> batch_norm(Var<T>, Var<T>, Var<T>, std::span<const std::uint8_t>, BatchNormStats<T>&, bool, \
                             const BatchNormOptions&);                                                      \
  template Var<T> dropout(Var<T>, double, Rng&);                                                            \
  template Var<T> softmax_cross_entropy(Var<T>, std::span<const std::int32_t>);                             \
  template Var<T> shifted_l1(Var<T>, Var<T>, const SequenceLayout&, int);                                   \
  template Var<T> masked_l1(Var<T>, Var<T>, std::span<const std::uint8_t>);

BAPC_INSTANTIATE_OPS(float)
BAPC_INSTANTIATE_OPS(double)

#undef BAPC_INSTANTIATE_OPS

}  // namespace ops

}  // namespace bapc
