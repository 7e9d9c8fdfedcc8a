#include "diffpad/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "diffpad/error.hpp"

namespace diffpad::ad {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;
template <typename T>
using ArrT = Eigen::Array<T, Eigen::Dynamic, 1>;

struct ConvGeometry {
  int channels, batch, in_h, in_w, kernel, stride, pad, out_h, out_w;

  std::size_t rows() const { return static_cast<std::size_t>(channels) * kernel * kernel; }
  std::size_t cols() const { return static_cast<std::size_t>(batch) * out_h * out_w; }
  bool is_pointwise() const { return kernel == 1 && stride == 1 && pad == 0; }
};

// Output columns [lo, hi) whose input column ox*stride - pad + kx is in range.
inline void valid_span(int kx, const ConvGeometry& g, int& lo, int& hi) {
  const int off = kx - g.pad;
  lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  hi = g.in_w - off <= 0 ? 0 : (g.in_w - off + g.stride - 1) / g.stride;
  hi = std::min(hi, g.out_w);
  lo = std::min(lo, hi);
}

// Unfolds (C, N, H, W) into a (C*k*k, N*Ho*Wo) patch matrix.
template <typename T>
void im2col(const T* src, const ConvGeometry& g, T* col) {
  const std::size_t ncols = g.cols();
  const std::size_t in_plane = static_cast<std::size_t>(g.in_h) * g.in_w;
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        T* row = col + ((static_cast<std::size_t>(c) * g.kernel + ky) * g.kernel + kx) * ncols;
        int lo, hi;
        valid_span(kx, g, lo, hi);
        const int off = kx - g.pad;
        for (int n = 0; n < g.batch; ++n) {
          const T* plane = src + (static_cast<std::size_t>(c) * g.batch + n) * in_plane;
          T* out = row + static_cast<std::size_t>(n) * g.out_h * g.out_w;
          for (int oy = 0; oy < g.out_h; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            T* out_row = out + static_cast<std::size_t>(oy) * g.out_w;
            if (iy < 0 || iy >= g.in_h) {
              std::fill(out_row, out_row + g.out_w, T(0));
              continue;
            }
            const T* in_row = plane + static_cast<std::size_t>(iy) * g.in_w + off;
            std::fill(out_row, out_row + lo, T(0));
            if (g.stride == 1) {
              std::copy(in_row + lo, in_row + hi, out_row + lo);
            } else {
              for (int ox = lo; ox < hi; ++ox) out_row[ox] = in_row[ox * g.stride];
            }
            std::fill(out_row + hi, out_row + g.out_w, T(0));
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates patches back into (C, N, H, W).
template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* dst) {
  const std::size_t ncols = g.cols();
  const std::size_t in_plane = static_cast<std::size_t>(g.in_h) * g.in_w;
  for (int c = 0; c < g.channels; ++c) {
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const T* row =
            col + ((static_cast<std::size_t>(c) * g.kernel + ky) * g.kernel + kx) * ncols;
        int lo, hi;
        valid_span(kx, g, lo, hi);
        const int off = kx - g.pad;
        for (int n = 0; n < g.batch; ++n) {
          T* plane = dst + (static_cast<std::size_t>(c) * g.batch + n) * in_plane;
          const T* in = row + static_cast<std::size_t>(n) * g.out_h * g.out_w;
          for (int oy = 0; oy < g.out_h; ++oy) {
            const int iy = oy * g.stride - g.pad + ky;
            if (iy < 0 || iy >= g.in_h) continue;
            const T* in_row = in + static_cast<std::size_t>(oy) * g.out_w;
            T* out_row = plane + static_cast<std::size_t>(iy) * g.in_w + off;
            if (g.stride == 1) {
              for (int ox = lo; ox < hi; ++ox) out_row[ox] += in_row[ox];
            } else {
              for (int ox = lo; ox < hi; ++ox) out_row[ox * g.stride] += in_row[ox];
            }
          }
        }
      }
    }
  }
}

[[noreturn]] void shape_error(const std::string& what) {
  throw Error(ErrorCode::kShapeMismatch, what);
}

template <typename T>
std::string dims(const Tensor<T>& t) {
  return "(" + std::to_string(t.c) + "," + std::to_string(t.n) + "," + std::to_string(t.h) +
         "," + std::to_string(t.w) + ")";
}

template <typename T>
bool any_grad(const Tape<T>& tape, std::initializer_list<Var> vars) {
  for (Var v : vars)
    if (tape.needs_grad(v)) return true;
  return false;
}

}  // namespace

template <typename T>
Var Tape<T>::leaf(Tensor<T> value, bool needs_grad) {
  return push(std::move(value), needs_grad && record_, nullptr);
}

template <typename T>
Var Tape<T>::leaf_view(const Tensor<T>& value, bool needs_grad) {
  Node node;
  node.view = &value;
  node.needs_grad = needs_grad && record_;
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Tape<T>::push(Tensor<T> value, bool needs_grad, std::function<void()> backward_fn) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = needs_grad && record_;
  if (node.needs_grad) node.backward = std::move(backward_fn);
  nodes_.push_back(std::move(node));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(Var v) {
  Node& node = nodes_[v.id];
  const Tensor<T>& val = node.view ? *node.view : node.value;
  if (node.grad.size() != val.size() || !node.grad.same_shape(val)) {
    node.grad = Tensor<T>(val.c, val.n, val.h, val.w);
  }
  return node.grad;
}

template <typename T>
void Tape<T>::backward(Var loss) {
  if (value(loss).size() != 1) {
    shape_error("backward needs a single-element loss, got " + dims(value(loss)));
  }
  grad_buffer(loss).data[0] = T(1);
  for (int i = loss.id; i >= 0; --i) {
    Node& node = nodes_[i];
    if (node.backward && node.grad.size() == node.value.size()) node.backward();
  }
}

template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var weight, Var bias, int stride, int pad) {
  const Tensor<T>& X = tape.value(x);
  const Tensor<T>& W = tape.value(weight);
  if (W.n != X.c || W.h != W.w) {
    shape_error("conv2d input " + dims(X) + " weight " + dims(W));
  }
  const int k = W.h;
  const int out_h = (X.h + 2 * pad - k) / stride + 1;
  const int out_w = (X.w + 2 * pad - k) / stride + 1;
  if (out_h <= 0 || out_w <= 0) shape_error("conv2d output empty for input " + dims(X));
  const ConvGeometry g{X.c, X.n, X.h, X.w, k, stride, pad, out_h, out_w};
  const auto rows = static_cast<Eigen::Index>(g.rows());
  const auto cols = static_cast<Eigen::Index>(g.cols());
  const int cout = W.c;

  Tensor<T> out(cout, X.n, out_h, out_w);
  CMapR<T> wmat(W.data.data(), cout, rows);
  MapR<T> omat(out.data.data(), cout, cols);
  if (g.is_pointwise()) {
    omat.noalias() = wmat * CMapR<T>(X.data.data(), rows, cols);
  } else {
    AlignedVector<T> col(g.rows() * g.cols());
    im2col(X.data.data(), g, col.data());
    omat.noalias() = wmat * CMapR<T>(col.data(), rows, cols);
  }
  if (bias.valid()) {
    const Tensor<T>& B = tape.value(bias);
    if (static_cast<int>(B.size()) != cout) shape_error("conv2d bias " + dims(B));
    for (int c = 0; c < cout; ++c) omat.row(c).array() += B.data[c];
  }

  const bool ng = any_grad(tape, {x, weight, bias});
  Tape<T>* tp = &tape;
  const Var self{static_cast<int>(tape.size())};
  return tape.push(std::move(out), ng, [tp, x, weight, bias, g, cout, rows, cols, self]() {
    const Tensor<T>& X = tp->value(x);
    const Tensor<T>& W = tp->value(weight);
    CMapR<T> gmat(tp->grad(self).data.data(), cout, cols);
    AlignedVector<T> col;
    const T* colp = X.data.data();
    if (!g.is_pointwise() && tp->needs_grad(weight)) {
      col.resize(g.rows() * g.cols());
      im2col(X.data.data(), g, col.data());
      colp = col.data();
    }
    if (tp->needs_grad(weight)) {
      MapR<T>(tp->grad_buffer(weight).data.data(), cout, rows).noalias() +=
          gmat * CMapR<T>(colp, rows, cols).transpose();
    }
    if (tp->needs_grad(bias)) {
      Tensor<T>& db = tp->grad_buffer(bias);
      for (int c = 0; c < cout; ++c) db.data[c] += gmat.row(c).sum();
    }
    if (tp->needs_grad(x)) {
      Tensor<T>& dx = tp->grad_buffer(x);
      CMapR<T> wmat(W.data.data(), cout, rows);
      if (g.is_pointwise()) {
        MapR<T>(dx.data.data(), rows, cols).noalias() += wmat.transpose() * gmat;
      } else {
        if (col.size() != g.rows() * g.cols()) col.resize(g.rows() * g.cols());
        MapR<T>(col.data(), rows, cols).noalias() = wmat.transpose() * gmat;
        col2im(col.data(), g, dx.data.data());
      }
    }
  });
}

template <typename T>
Var conv_transpose2d(Tape<T>& tape, Var x, Var weight, Var bias, int stride, int pad) {
  const Tensor<T>& X = tape.value(x);
  const Tensor<T>& W = tape.value(weight);
  if (W.c != X.c || W.h != W.w) {
    shape_error("conv_transpose2d input " + dims(X) + " weight " + dims(W));
  }
  const int k = W.h;
  const int cout = W.n;
  const int out_h = (X.h - 1) * stride - 2 * pad + k;
  const int out_w = (X.w - 1) * stride - 2 * pad + k;
  // Geometry of the conv whose adjoint this is: it maps the output back onto X.
  const ConvGeometry g{cout, X.n, out_h, out_w, k, stride, pad, X.h, X.w};
  if ((out_h + 2 * pad - k) / stride + 1 != X.h) shape_error("conv_transpose2d geometry");
  const auto rows = static_cast<Eigen::Index>(g.rows());
  const auto cols = static_cast<Eigen::Index>(g.cols());
  const int cin = X.c;

  Tensor<T> out(cout, X.n, out_h, out_w);
  {
    AlignedVector<T> col(g.rows() * g.cols());
    MapR<T>(col.data(), rows, cols).noalias() =
        CMapR<T>(W.data.data(), cin, rows).transpose() * CMapR<T>(X.data.data(), cin, cols);
    col2im(col.data(), g, out.data.data());
  }
  if (bias.valid()) {
    const Tensor<T>& B = tape.value(bias);
    if (static_cast<int>(B.size()) != cout) shape_error("conv_transpose2d bias " + dims(B));
    const std::size_t plane = static_cast<std::size_t>(X.n) * out.plane();
    for (int c = 0; c < cout; ++c) {
      T* p = out.data.data() + static_cast<std::size_t>(c) * plane;
      for (std::size_t i = 0; i < plane; ++i) p[i] += B.data[c];
    }
  }

  const bool ng = any_grad(tape, {x, weight, bias});
  Tape<T>* tp = &tape;
  const Var self{static_cast<int>(tape.size())};
  return tape.push(std::move(out), ng, [tp, x, weight, bias, g, cin, cout, rows, cols, self]() {
    const Tensor<T>& X = tp->value(x);
    const Tensor<T>& W = tp->value(weight);
    const Tensor<T>& G = tp->grad(self);
    AlignedVector<T> dcol(g.rows() * g.cols());
    im2col(G.data.data(), g, dcol.data());
    CMapR<T> dcm(dcol.data(), rows, cols);
    if (tp->needs_grad(x)) {
      MapR<T>(tp->grad_buffer(x).data.data(), cin, cols).noalias() +=
          CMapR<T>(W.data.data(), cin, rows) * dcm;
    }
    if (tp->needs_grad(weight)) {
      MapR<T>(tp->grad_buffer(weight).data.data(), cin, rows).noalias() +=
          CMapR<T>(X.data.data(), cin, cols) * dcm.transpose();
    }
    if (tp->needs_grad(bias)) {
      Tensor<T>& db = tp->grad_buffer(bias);
      const std::size_t plane = static_cast<std::size_t>(G.n) * G.plane();
      for (int c = 0; c < cout; ++c) {
        const T* p = G.data.data() + static_cast<std::size_t>(c) * plane;
        T s = 0;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
        db.data[c] += s;
      }
    }
  });
}

template <typename T>
Var group_norm(Tape<T>& tape, Var x, Var gamma, Var beta, int groups, T eps) {
  const Tensor<T>& X = tape.value(x);
  if (groups <= 0 || X.c % groups != 0) {
    shape_error("group_norm: " + std::to_string(X.c) + " channels in " +
                std::to_string(groups) + " groups");
  }
  const int cpg = X.c / groups;
  const int batch = X.n;
  const std::size_t plane = X.plane();
  const double count = static_cast<double>(cpg) * plane;
  auto stats = std::make_shared<AlignedVector<T>>(2 * static_cast<std::size_t>(batch) * groups);
  Tensor<T> out(X.c, X.n, X.h, X.w);
  const Tensor<T>& Gm = tape.value(gamma);
  const Tensor<T>& Bt = tape.value(beta);
  for (int n = 0; n < batch; ++n) {
    for (int gi = 0; gi < groups; ++gi) {
      double sum = 0.0;
      for (int c = gi * cpg; c < (gi + 1) * cpg; ++c) {
        const T* p = X.data.data() + (static_cast<std::size_t>(c) * batch + n) * plane;
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      }
      const double mean = sum / count;
      double var = 0.0;
      for (int c = gi * cpg; c < (gi + 1) * cpg; ++c) {
        const T* p = X.data.data() + (static_cast<std::size_t>(c) * batch + n) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double d = p[i] - mean;
          var += d * d;
        }
      }
      var /= count;
      const T m = static_cast<T>(mean);
      const T rstd = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      (*stats)[2 * (static_cast<std::size_t>(n) * groups + gi)] = m;
      (*stats)[2 * (static_cast<std::size_t>(n) * groups + gi) + 1] = rstd;
      for (int c = gi * cpg; c < (gi + 1) * cpg; ++c) {
        const std::size_t off = (static_cast<std::size_t>(c) * batch + n) * plane;
        const T* p = X.data.data() + off;
        T* o = out.data.data() + off;
        const T a = Gm.data[c] * rstd;
        const T b = Bt.data[c] - m * a;
        for (std::size_t i = 0; i < plane; ++i) o[i] = p[i] * a + b;
      }
    }
  }

  const bool ng = any_grad(tape, {x, gamma, beta});
  Tape<T>* tp = &tape;
  const Var self{static_cast<int>(tape.size())};
  return tape.push(std::move(out), ng, [tp, x, gamma, beta, groups, cpg, batch, plane, count, stats, self]() {
    const Tensor<T>& X = tp->value(x);
    const Tensor<T>& Gm = tp->value(gamma);
    const Tensor<T>& G = tp->grad(self);
    const bool want_x = tp->needs_grad(x);
    const bool want_g = tp->needs_grad(gamma);
    const bool want_b = tp->needs_grad(beta);
    Tensor<T>* dx = want_x ? &tp->grad_buffer(x) : nullptr;
    Tensor<T>* dg = want_g ? &tp->grad_buffer(gamma) : nullptr;
    Tensor<T>* db = want_b ? &tp->grad_buffer(beta) : nullptr;
    for (int n = 0; n < batch; ++n) {
      for (int gi = 0; gi < groups; ++gi) {
        const T m = (*stats)[2 * (static_cast<std::size_t>(n) * groups + gi)];
        const T rstd = (*stats)[2 * (static_cast<std::size_t>(n) * groups + gi) + 1];
        double sum_dxh = 0.0, sum_dxh_xh = 0.0;
        for (int c = gi * cpg; c < (gi + 1) * cpg; ++c) {
          const std::size_t off = (static_cast<std::size_t>(c) * batch + n) * plane;
          const T* p = X.data.data() + off;
          const T* gp = G.data.data() + off;
          double dgc = 0.0, dbc = 0.0;
          for (std::size_t i = 0; i < plane; ++i) {
            const T xh = (p[i] - m) * rstd;
            dgc += static_cast<double>(gp[i]) * xh;
            dbc += gp[i];
          }
          if (dg) dg->data[c] += static_cast<T>(dgc);
          if (db) db->data[c] += static_cast<T>(dbc);
          sum_dxh += dbc * Gm.data[c];
          sum_dxh_xh += dgc * Gm.data[c];
        }
        if (!dx) continue;
        const T mean_dxh = static_cast<T>(sum_dxh / count);
        const T mean_dxh_xh = static_cast<T>(sum_dxh_xh / count);
        for (int c = gi * cpg; c < (gi + 1) * cpg; ++c) {
          const std::size_t off = (static_cast<std::size_t>(c) * batch + n) * plane;
          const T* p = X.data.data() + off;
          const T* gp = G.data.data() + off;
          T* d = dx->data.data() + off;
          const T gc = Gm.data[c];
          for (std::size_t i = 0; i < plane; ++i) {
            const T xh = (p[i] - m) * rstd;
            d[i] += rstd * (gp[i] * gc - mean_dxh - xh * mean_dxh_xh);
          }
        }
      }
    }
  });
}

template <typename T>
Var silu(Tape<T>& tape, Var x) {
  const Tensor<T>& X = tape.value(x);
  const auto n = static_cast<Eigen::Index>(X.size());
  auto sig = std::make_shared<AlignedVector<T>>(X.size());
  Eigen::Map<const ArrT<T>> xv(X.data.data(), n);
  Eigen::Map<ArrT<T>> sv(sig->data(), n);
  sv = (T(1) + (-xv).exp()).inverse();
  Tensor<T> out(X.c, X.n, X.h, X.w);
  Eigen::Map<ArrT<T>>(out.data.data(), n) = xv * sv;
  Tape<T>* tp = &tape;
  const Var self{static_cast<int>(tape.size())};
  return tape.push(std::move(out), tape.needs_grad(x), [tp, x, self, sig, n]() {
    Eigen::Map<const ArrT<T>> xv(tp->value(x).data.data(), n);
    Eigen::Map<const ArrT<T>> gv(tp->grad(self).data.data(), n);
    Eigen::Map<const ArrT<T>> sv(sig->data(), n);
    Eigen::Map<ArrT<T>> dx(tp->grad_buffer(x).data.data(), n);
    dx += gv * sv * (T(1) + xv * (T(1) - sv));
  });
}

template <typename T>
Var relu(Tape<T>& tape, Var x) {
  const Tensor<T>& X = tape.value(x);
  Tensor<T> out(X.c, X.n, X.h, X.w);
  for (std::size_t i = 0; i < X.size(); ++i) out.data[i] = X.data[i] > T(0) ? X.data[i] : T(0);
  Tape<T>* tp = &tape;
  const Var self{static_cast<int>(tape.size())};
  return tape.push(std::move(out), tape.needs_grad(x), [tp, x, self]() {
    const Tensor<T>& X = tp->value(x);
    const Tensor<T>& G = tp->grad(self);
    Tensor<T>& dx = tp->grad_buffer(x);
    for (std::size_t i = 0; i < X.size(); ++i)
      if (X.data[i] > T(0)) dx.data[i] += G.data[i];
  });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& A = tape.value(a);
  const Tensor<T>& B = tape.value(b);
  if (!A.same_shape(B)) shape_error("add " + dims(A) + " + " + dims(B));
  Tensor<T> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += B.data[i];
  Tape<T>* tp = &tape;
  const Var self{static_cast<int>(tape.size())};
  return tape.push(std::move(out), any_grad(tape, {a, b}), [tp, a, b, self]() {
    const Tensor<T>& G = tp->grad(self);
    for (Var v : {a, b}) {
      if (!tp->needs_grad(v)) continue;
      Tensor<T>& d = tp->grad_buffer(v);
      for (std::size_t i = 0; i < G.size(); ++i) d.data[i] += G.data[i];
    }
  });
}

template <typename T>
Var scale(Tape<T>& tape, Var x, T factor) {
  Tensor<T> out = tape.value(x);
  for (auto& v : out.data) v *= factor;
  Tape<T>* tp = &tape;
  const Var self{static_cast<int>(tape.size())};
  return tape.push(std::move(out), tape.needs_grad(x), [tp, x, factor, self]() {
    const Tensor<T>& G = tp->grad(self);
    Tensor<T>& d = tp->grad_buffer(x);
    for (std::size_t i = 0; i < G.size(); ++i) d.data[i] += factor * G.data[i];
  });
}

template <typename T>
Var add_channel(Tape<T>& tape, Var x, Var v) {
  const Tensor<T>& X = tape.value(x);
  const Tensor<T>& V = tape.value(v);
  if (V.c != X.c || V.n != X.n || V.h != 1 || V.w != 1) {
    shape_error("add_channel " + dims(X) + " + " + dims(V));
  }
  Tensor<T> out = X;
  const std::size_t plane = X.plane();
  for (std::size_t cn = 0; cn < V.size(); ++cn) {
    T* p = out.data.data() + cn * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] += V.data[cn];
  }
  Tape<T>* tp = &tape;
  const Var self{static_cast<int>(tape.size())};
  return tape.push(std::move(out), any_grad(tape, {x, v}), [tp, x, v, plane, self]() {
    const Tensor<T>& G = tp->grad(self);
    if (tp->needs_grad(x)) {
      Tensor<T>& d = tp->grad_buffer(x);
      for (std::size_t i = 0; i < G.size(); ++i) d.data[i] += G.data[i];
    }
    if (tp->needs_grad(v)) {
      Tensor<T>& d = tp->grad_buffer(v);
      for (std::size_t cn = 0; cn < d.size(); ++cn) {
        const T* p = G.data.data() + cn * plane;
        T s = 0;
        for (std::size_t i = 0; i < plane; ++i) s += p[i];
        d.data[cn] += s;
      }
    }
  });
}

template <typename T>
Var upsample_nearest2x(Tape<T>& tape, Var x) {
  const Tensor<T>& X = tape.value(x);
  Tensor<T> out(X.c, X.n, 2 * X.h, 2 * X.w);
  const int planes = X.c * X.n;
  for (int p = 0; p < planes; ++p) {
    const T* src = X.data.data() + static_cast<std::size_t>(p) * X.plane();
    T* dst = out.data.data() + static_cast<std::size_t>(p) * out.plane();
    for (int y = 0; y < out.h; ++y)
      for (int xx = 0; xx < out.w; ++xx) dst[y * out.w + xx] = src[(y / 2) * X.w + xx / 2];
  }
  Tape<T>* tp = &tape;
  const Var self{static_cast<int>(tape.size())};
  return tape.push(std::move(out), tape.needs_grad(x), [tp, x, planes, self]() {
    const Tensor<T>& G = tp->grad(self);
    Tensor<T>& d = tp->grad_buffer(x);
    for (int p = 0; p < planes; ++p) {
      const T* src = G.data.data() + static_cast<std::size_t>(p) * G.plane();
      T* dst = d.data.data() + static_cast<std::size_t>(p) * d.plane();
      for (int y = 0; y < G.h; ++y)
        for (int xx = 0; xx < G.w; ++xx) dst[(y / 2) * d.w + xx / 2] += src[y * G.w + xx];
    }
  });
}

template <typename T>
Var concat_channels(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& A = tape.value(a);
  const Tensor<T>& B = tape.value(b);
  if (A.n != B.n || A.h != B.h || A.w != B.w) {
    shape_error("concat_channels " + dims(A) + " | " + dims(B));
  }
  Tensor<T> out(A.c + B.c, A.n, A.h, A.w);
  std::copy(A.data.begin(), A.data.end(), out.data.begin());
  std::copy(B.data.begin(), B.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(A.size()));
  Tape<T>* tp = &tape;
  const std::size_t split = A.size();
  const Var self{static_cast<int>(tape.size())};
  return tape.push(std::move(out), any_grad(tape, {a, b}), [tp, a, b, split, self]() {
    const Tensor<T>& G = tp->grad(self);
    if (tp->needs_grad(a)) {
      Tensor<T>& d = tp->grad_buffer(a);
      for (std::size_t i = 0; i < split; ++i) d.data[i] += G.data[i];
    }
    if (tp->needs_grad(b)) {
      Tensor<T>& d = tp->grad_buffer(b);
      for (std::size_t i = 0; i < d.size(); ++i) d.data[i] += G.data[split + i];
    }
  });
}

template <typename T>
Var flatten(Tape<T>& tape, Var x) {
  const Tensor<T>& X = tape.value(x);
  const int batch = X.n;
  const std::size_t plane = X.plane();
  Tensor<T> out(static_cast<int>(X.c * plane), batch, 1, 1);
  for (int c = 0; c < X.c; ++c)
    for (int n = 0; n < batch; ++n)
      for (std::size_t p = 0; p < plane; ++p)
        out.data[(c * plane + p) * batch + n] = X.data[(static_cast<std::size_t>(c) * batch + n) * plane + p];
  Tape<T>* tp = &tape;
  const Var self{static_cast<int>(tape.size())};
  return tape.push(std::move(out), tape.needs_grad(x), [tp, x, batch, plane, self]() {
    const Tensor<T>& G = tp->grad(self);
    Tensor<T>& d = tp->grad_buffer(x);
    for (int c = 0; c < d.c; ++c)
      for (int n = 0; n < batch; ++n)
        for (std::size_t p = 0; p < plane; ++p)
          d.data[(static_cast<std::size_t>(c) * batch + n) * plane + p] += G.data[(c * plane + p) * batch + n];
  });
}

template <typename T>
Var unflatten(Tape<T>& tape, Var x, int c, int h, int w) {
  const Tensor<T>& X = tape.value(x);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  if (X.h != 1 || X.w != 1 || static_cast<std::size_t>(X.c) != c * plane) {
    shape_error("unflatten " + dims(X));
  }
  const int batch = X.n;
  Tensor<T> out(c, batch, h, w);
  for (int ci = 0; ci < c; ++ci)
    for (int n = 0; n < batch; ++n)
      for (std::size_t p = 0; p < plane; ++p)
        out.data[(static_cast<std::size_t>(ci) * batch + n) * plane + p] = X.data[(ci * plane + p) * batch + n];
  Tape<T>* tp = &tape;
  const Var self{static_cast<int>(tape.size())};
  return tape.push(std::move(out), tape.needs_grad(x), [tp, x, c, batch, plane, self]() {
    const Tensor<T>& G = tp->grad(self);
    Tensor<T>& d = tp->grad_buffer(x);
    for (int ci = 0; ci < c; ++ci)
      for (int n = 0; n < batch; ++n)
        for (std::size_t p = 0; p < plane; ++p)
          d.data[(ci * plane + p) * batch + n] += G.data[(static_cast<std::size_t>(ci) * batch + n) * plane + p];
  });
}

template <typename T>
Var mse(Tape<T>& tape, Var a, Var b) {
  const Tensor<T>& A = tape.value(a);
  const Tensor<T>& B = tape.value(b);
  if (!A.same_shape(B)) shape_error("mse " + dims(A) + " vs " + dims(B));
  double acc = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) {
    const double d = static_cast<double>(A.data[i]) - B.data[i];
    acc += d * d;
  }
  Tensor<T> out(1, 1, 1, 1, static_cast<T>(acc / static_cast<double>(A.size())));
  Tape<T>* tp = &tape;
  const Var self{static_cast<int>(tape.size())};
  return tape.push(std::move(out), any_grad(tape, {a, b}), [tp, a, b, self]() {
    const Tensor<T>& A = tp->value(a);
    const Tensor<T>& B = tp->value(b);
    const T g = tp->grad(self).data[0] * T(2) / static_cast<T>(A.size());
    if (tp->needs_grad(a)) {
      Tensor<T>& d = tp->grad_buffer(a);
      for (std::size_t i = 0; i < A.size(); ++i) d.data[i] += g * (A.data[i] - B.data[i]);
    }
    if (tp->needs_grad(b)) {
      Tensor<T>& d = tp->grad_buffer(b);
      for (std::size_t i = 0; i < A.size(); ++i) d.data[i] -= g * (A.data[i] - B.data[i]);
    }
  });
}

template <typename T>
Var reparameterize(Tape<T>& tape, Var mu, Var logvar, const Tensor<T>& eps) {
  const Tensor<T>& M = tape.value(mu);
  const Tensor<T>& L = tape.value(logvar);
  if (!M.same_shape(L) || !M.same_shape(eps)) shape_error("reparameterize " + dims(M));
  Tensor<T> out = M;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += std::exp(L.data[i] / T(2)) * eps.data[i];
  Tape<T>* tp = &tape;
  const Var self{static_cast<int>(tape.size())};
  return tape.push(std::move(out), any_grad(tape, {mu, logvar}), [tp, mu, logvar, eps, self]() {
    const Tensor<T>& G = tp->grad(self);
    if (tp->needs_grad(mu)) {
      Tensor<T>& d = tp->grad_buffer(mu);
      for (std::size_t i = 0; i < G.size(); ++i) d.data[i] += G.data[i];
    }
    if (tp->needs_grad(logvar)) {
      const Tensor<T>& L = tp->value(logvar);
      Tensor<T>& d = tp->grad_buffer(logvar);
      for (std::size_t i = 0; i < G.size(); ++i)
        d.data[i] += G.data[i] * eps.data[i] * std::exp(L.data[i] / T(2)) / T(2);
    }
  });
}

template <typename T>
Var gaussian_kl(Tape<T>& tape, Var mu, Var logvar) {
  const Tensor<T>& M = tape.value(mu);
  const Tensor<T>& L = tape.value(logvar);
  if (!M.same_shape(L)) shape_error("gaussian_kl " + dims(M) + " vs " + dims(L));
  double acc = 0.0;
  for (std::size_t i = 0; i < M.size(); ++i) {
    const double m = M.data[i], l = L.data[i];
    acc += m * m + std::exp(l) - l - 1.0;
  }
  const int batch = M.n;
  Tensor<T> out(1, 1, 1, 1, static_cast<T>(0.5 * acc / batch));
  Tape<T>* tp = &tape;
  const Var self{static_cast<int>(tape.size())};
  return tape.push(std::move(out), any_grad(tape, {mu, logvar}), [tp, mu, logvar, batch, self]() {
    const T g = tp->grad(self).data[0] / static_cast<T>(batch);
    if (tp->needs_grad(mu)) {
      const Tensor<T>& M = tp->value(mu);
      Tensor<T>& d = tp->grad_buffer(mu);
      for (std::size_t i = 0; i < M.size(); ++i) d.data[i] += g * M.data[i];
    }
    if (tp->needs_grad(logvar)) {
      const Tensor<T>& L = tp->value(logvar);
      Tensor<T>& d = tp->grad_buffer(logvar);
      for (std::size_t i = 0; i < L.size(); ++i) d.data[i] += g * (std::exp(L.data[i]) - T(1)) / T(2);
    }
  });
}

#define DIFFPAD_INSTANTIATE(T)                                                   \
  template class Tape<T>;                                                        \
  template Var conv2d<T>(Tape<T>&, Var, Var, Var, int, int);                     \
  template Var conv_transpose2d<T>(Tape<T>&, Var, Var, Var, int, int);           \
  template Var group_norm<T>(Tape<T>&, Var, Var, Var, int, T);                   \
  template Var silu<T>(Tape<T>&, Var);                                           \
  template Var relu<T>(Tape<T>&, Var);                                           \
  template Var add<T>(Tape<T>&, Var, Var);                                       \
  template Var scale<T>(Tape<T>&, Var, T);                                       \
  template Var add_channel<T>(Tape<T>&, Var, Var);                               \
  template Var upsample_nearest2x<T>(Tape<T>&, Var);                             \
  template Var concat_channels<T>(Tape<T>&, Var, Var);                           \
  template Var flatten<T>(Tape<T>&, Var);                                        \
  template Var unflatten<T>(Tape<T>&, Var, int, int, int);                       \
  template Var mse<T>(Tape<T>&, Var, Var);                                       \
  template Var reparameterize<T>(Tape<T>&, Var, Var, const Tensor<T>&);          \
  template Var gaussian_kl<T>(Tape<T>&, Var, Var);

DIFFPAD_INSTANTIATE(float)
DIFFPAD_INSTANTIATE(double)

#undef DIFFPAD_INSTANTIATE

}  // namespace diffpad::ad
