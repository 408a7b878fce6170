#include "tabrec/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace tabrec::ops {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;
template <typename T>
using StridedR = Eigen::Map<MatR<T>, 0, Eigen::OuterStride<>>;
template <typename T>
using CStridedR = Eigen::Map<const MatR<T>, 0, Eigen::OuterStride<>>;

using Index = Eigen::Index;

template <typename T>
using NodePtr = std::shared_ptr<TensorNode<T>>;

template <typename T>
bool recording(std::initializer_list<const Tensor<T>*> inputs) {
  if (Tape<T>::active() == nullptr) return false;
  for (const Tensor<T>* t : inputs) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
Tensor<T> emit(Shape shape, Buffer<T> data, bool record, typename Tape<T>::BackwardFn fn) {
  Tensor<T> out(std::move(shape), std::move(data), record);
  if (record) Tape<T>::active()->record(out.node_ptr(), std::move(fn));
  return out;
}

// Grad buffer of an input node if it wants one, else nullptr.
template <typename T>
T* grad_of(const NodePtr<T>& n) {
  if (!n || !n->requires_grad) return nullptr;
  n->ensure_grad();
  return n->grad.data();
}

[[noreturn]] void fail(const std::string& op, const std::string& what) {
  throw ShapeError(op + ": " + what);
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    fail("matmul", "incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Buffer<T> out(static_cast<std::size_t>(m * n));
  MapR<T>(out.data(), m, n).noalias() = CMapR<T>(a.data().data(), m, k) * CMapR<T>(b.data().data(), k, n);
  const bool rec = recording<T>({&a, &b});
  typename Tape<T>::BackwardFn fn;
  if (rec) {
    fn = [na = a.node_ptr(), nb = b.node_ptr(), m, k, n](TensorNode<T>& o) {
      CMapR<T> dc(o.grad.data(), m, n);
      if (T* ga = grad_of(na)) MapR<T>(ga, m, k).noalias() += dc * CMapR<T>(nb->data.data(), k, n).transpose();
      if (T* gb = grad_of(nb)) MapR<T>(gb, k, n).noalias() += CMapR<T>(na->data.data(), m, k).transpose() * dc;
    };
  }
  return emit<T>({static_cast<std::size_t>(m), static_cast<std::size_t>(n)}, std::move(out), rec, std::move(fn));
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) fail("add", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Buffer<T> out(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  const bool rec = recording<T>({&a, &b});
  typename Tape<T>::BackwardFn fn;
  if (rec) {
    fn = [na = a.node_ptr(), nb = b.node_ptr()](TensorNode<T>& o) {
      for (const auto& n : {na, nb}) {
        if (T* g = grad_of(n)) {
          for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
        }
      }
    };
  }
  return emit<T>(a.shape(), std::move(out), rec, std::move(fn));
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) fail("mul", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Buffer<T> out(a.numel());
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  const bool rec = recording<T>({&a, &b});
  typename Tape<T>::BackwardFn fn;
  if (rec) {
    fn = [na = a.node_ptr(), nb = b.node_ptr()](TensorNode<T>& o) {
      if (T* ga = grad_of(na)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] * nb->data[i];
      }
      if (T* gb = grad_of(nb)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] += o.grad[i] * na->data[i];
      }
    };
  }
  return emit<T>(a.shape(), std::move(out), rec, std::move(fn));
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  const std::size_t n = x.shape().back();
  if (bias.numel() != n) fail("add_bias", "bias " + shape_str(bias.shape()) + " for input " + shape_str(x.shape()));
  const std::size_t rows = x.numel() / n;
  Buffer<T> out(x.data().begin(), x.data().end());
  auto bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bd[j];
  }
  const bool rec = recording<T>({&x, &bias});
  typename Tape<T>::BackwardFn fn;
  if (rec) {
    fn = [nx = x.node_ptr(), nbias = bias.node_ptr(), rows, n](TensorNode<T>& o) {
      if (T* gx = grad_of(nx)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i];
      }
      if (T* gb = grad_of(nbias)) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < n; ++j) gb[j] += o.grad[r * n + j];
        }
      }
    };
  }
  return emit<T>(x.shape(), std::move(out), rec, std::move(fn));
}

template <typename T>
Tensor<T> add_channel(const Tensor<T>& x, const Tensor<T>& v) {
  const std::size_t c = x.dim(0);
  if (v.numel() != c) fail("add_channel", "vector " + shape_str(v.shape()) + " for input " + shape_str(x.shape()));
  const std::size_t inner = x.numel() / c;
  Buffer<T> out(x.data().begin(), x.data().end());
  auto vd = v.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < inner; ++i) out[ch * inner + i] += vd[ch];
  }
  const bool rec = recording<T>({&x, &v});
  typename Tape<T>::BackwardFn fn;
  if (rec) {
    fn = [nx = x.node_ptr(), nv = v.node_ptr(), c, inner](TensorNode<T>& o) {
      if (T* gx = grad_of(nx)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i];
      }
      if (T* gv = grad_of(nv)) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          T acc = 0;
          for (std::size_t i = 0; i < inner; ++i) acc += o.grad[ch * inner + i];
          gv[ch] += acc;
        }
      }
    };
  }
  return emit<T>(x.shape(), std::move(out), rec, std::move(fn));
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double factor) {
  const T f = static_cast<T>(factor);
  Buffer<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * f;
  const bool rec = recording<T>({&x});
  typename Tape<T>::BackwardFn fn;
  if (rec) {
    fn = [nx = x.node_ptr(), f](TensorNode<T>& o) {
      if (T* gx = grad_of(nx)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i] * f;
      }
    };
  }
  return emit<T>(x.shape(), std::move(out), rec, std::move(fn));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Buffer<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > T(0) ? xd[i] : T(0);
  const bool rec = recording<T>({&x});
  typename Tape<T>::BackwardFn fn;
  if (rec) {
    fn = [nx = x.node_ptr()](TensorNode<T>& o) {
      if (T* gx = grad_of(nx)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
          if (nx->data[i] > T(0)) gx[i] += o.grad[i];
        }
      }
    };
  }
  return emit<T>(x.shape(), std::move(out), rec, std::move(fn));
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Buffer<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T z = xd[i];
    // Evaluated on the side that cannot overflow.
    if (z >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-z));
    } else {
      const T e = std::exp(z);
      out[i] = e / (T(1) + e);
    }
  }
  const bool rec = recording<T>({&x});
  typename Tape<T>::BackwardFn fn;
  if (rec) {
    fn = [nx = x.node_ptr(), y = out](TensorNode<T>& o) {
      if (T* gx = grad_of(nx)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i] * y[i] * (T(1) - y[i]);
      }
    };
  }
  return emit<T>(x.shape(), std::move(out), rec, std::move(fn));
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) fail("softmax", "axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(axis);
  auto xd = x.data();
  Buffer<T> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t base = o * n * inner + j;
      T mx = xd[base];
      for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, xd[base + i * inner]);
      T total = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const T e = std::exp(xd[base + i * inner] - mx);
        out[base + i * inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < n; ++i) out[base + i * inner] /= total;
    }
  }
  const bool rec = recording<T>({&x});
  typename Tape<T>::BackwardFn fn;
  if (rec) {
    fn = [nx = x.node_ptr(), y = out, outer, inner, n](TensorNode<T>& o) {
      T* gx = grad_of(nx);
      if (!gx) return;
      for (std::size_t oo = 0; oo < outer; ++oo) {
        for (std::size_t j = 0; j < inner; ++j) {
          const std::size_t base = oo * n * inner + j;
          T dot = 0;
          for (std::size_t i = 0; i < n; ++i) dot += y[base + i * inner] * o.grad[base + i * inner];
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t idx = base + i * inner;
            gx[idx] += y[idx] * (o.grad[idx] - dot);
          }
        }
      }
    };
  }
  return emit<T>(x.shape(), std::move(out), rec, std::move(fn));
}

namespace {

// Shared kernel of layer_norm / instance_norm: `rows` groups of `n` values,
// each normalized; affine parameter index = per_row ? row : column.
template <typename T>
Tensor<T> row_normalize(const char* name, const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias,
                        std::size_t rows, std::size_t n, bool per_row, double eps) {
  const std::size_t params = per_row ? rows : n;
  if (gain.numel() != params || bias.numel() != params) {
    fail(name, "affine parameters " + shape_str(gain.shape()) + "/" + shape_str(bias.shape()) + " for input " +
                   shape_str(x.shape()));
  }
  auto xd = x.data();
  auto gd = gain.data();
  auto bd = bias.data();
  Buffer<T> out(x.numel());
  Buffer<T> xhat(x.numel());
  Buffer<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xd.data() + r * n;
    T mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<T>(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<T>(n);
    const T rs = T(1) / std::sqrt(var + static_cast<T>(eps));
    rstd[r] = rs;
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t p = per_row ? r : j;
      const T h = (row[j] - mean) * rs;
      xhat[r * n + j] = h;
      out[r * n + j] = gd[p] * h + bd[p];
    }
  }
  const bool rec = recording<T>({&x, &gain, &bias});
  typename Tape<T>::BackwardFn fn;
  if (rec) {
    fn = [nx = x.node_ptr(), ng = gain.node_ptr(), nb = bias.node_ptr(), xhat = std::move(xhat),
          rstd = std::move(rstd), rows, n, per_row](TensorNode<T>& o) {
      T* gx = grad_of(nx);
      T* gg = grad_of(ng);
      T* gb = grad_of(nb);
      const T* g = ng->data.data();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* dy = o.grad.data() + r * n;
        const T* h = xhat.data() + r * n;
        if (gg || gb) {
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t p = per_row ? r : j;
            if (gg) gg[p] += dy[j] * h[j];
            if (gb) gb[p] += dy[j];
          }
        }
        if (gx) {
          T mean_dh = 0, mean_dh_h = 0;
          for (std::size_t j = 0; j < n; ++j) {
            const T dh = dy[j] * g[per_row ? r : j];
            mean_dh += dh;
            mean_dh_h += dh * h[j];
          }
          mean_dh /= static_cast<T>(n);
          mean_dh_h /= static_cast<T>(n);
          for (std::size_t j = 0; j < n; ++j) {
            const T dh = dy[j] * g[per_row ? r : j];
            gx[r * n + j] += rstd[r] * (dh - mean_dh - h[j] * mean_dh_h);
          }
        }
      }
    };
  }
  return emit<T>(x.shape(), std::move(out), rec, std::move(fn));
}

}  // namespace

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, double eps) {
  const std::size_t n = x.shape().back();
  return row_normalize("layer_norm", x, gain, bias, x.numel() / n, n, false, eps);
}

template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, double eps) {
  if (x.rank() < 2) fail("instance_norm", "needs [c, ...] input, got " + shape_str(x.shape()));
  const std::size_t c = x.dim(0);
  return row_normalize("instance_norm", x, gain, bias, c, x.numel() / c, true, eps);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernels, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
  if (x.rank() != 3 || kernels.rank() != 4 || kernels.dim(1) != x.dim(0) || stride == 0) {
    fail("conv2d", "input " + shape_str(x.shape()) + " incompatible with kernels " + shape_str(kernels.shape()) +
                       " stride " + std::to_string(stride));
  }
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  if (h + 2 * padding < kh || w + 2 * padding < kw) {
    fail("conv2d", "kernel " + shape_str(kernels.shape()) + " larger than padded input " + shape_str(x.shape()));
  }
  const std::size_t ho = (h + 2 * padding - kh) / stride + 1;
  const std::size_t wo = (w + 2 * padding - kw) / stride + 1;
  if (bias.defined() && bias.numel() != cout) fail("conv2d", "bias " + shape_str(bias.shape()));
  const std::size_t kdim = cin * kh * kw;
  const std::size_t pix = ho * wo;

  // cols[(ci*kh + ky)*kw + kx][oy*wo + ox]
  Buffer<T> cols(kdim * pix, T(0));
  auto xd = x.data();
  for (std::size_t ci = 0; ci < cin; ++ci) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        T* dst = cols.data() + ((ci * kh + ky) * kw + kx) * pix;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          const T* src = xd.data() + (ci * h + static_cast<std::size_t>(iy)) * w;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[oy * wo + ox] = src[ix];
          }
        }
      }
    }
  }
  Buffer<T> out(cout * pix);
  MapR<T> om(out.data(), static_cast<Index>(cout), static_cast<Index>(pix));
  om.noalias() = CMapR<T>(kernels.data().data(), static_cast<Index>(cout), static_cast<Index>(kdim)) *
                 CMapR<T>(cols.data(), static_cast<Index>(kdim), static_cast<Index>(pix));
  if (bias.defined()) {
    auto bd = bias.data();
    for (std::size_t c = 0; c < cout; ++c) om.row(static_cast<Index>(c)).array() += bd[c];
  }
  const bool rec = recording<T>({&x, &kernels, &bias});
  typename Tape<T>::BackwardFn fn;
  if (rec) {
    fn = [nx = x.node_ptr(), nk = kernels.node_ptr(), nb = bias.defined() ? bias.node_ptr() : NodePtr<T>{},
          cols = std::move(cols), cin, h, w, cout, kh, kw, ho, wo, stride, padding, kdim, pix](TensorNode<T>& o) {
      CMapR<T> dout(o.grad.data(), static_cast<Index>(cout), static_cast<Index>(pix));
      if (T* gk = grad_of(nk)) {
        MapR<T>(gk, static_cast<Index>(cout), static_cast<Index>(kdim)).noalias() +=
            dout * CMapR<T>(cols.data(), static_cast<Index>(kdim), static_cast<Index>(pix)).transpose();
      }
      if (T* gb = grad_of(nb)) {
        for (std::size_t c = 0; c < cout; ++c) gb[c] += dout.row(static_cast<Index>(c)).sum();
      }
      if (T* gx = grad_of(nx)) {
        MatR<T> dcols = CMapR<T>(nk->data.data(), static_cast<Index>(cout), static_cast<Index>(kdim)).transpose() * dout;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const T* src = dcols.data() + ((ci * kh + ky) * kw + kx) * pix;
              for (std::size_t oy = 0; oy < ho; ++oy) {
                const std::ptrdiff_t iy =
                    static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                T* dst = gx + (ci * h + static_cast<std::size_t>(iy)) * w;
                for (std::size_t ox = 0; ox < wo; ++ox) {
                  const std::ptrdiff_t ix =
                      static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
                  if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) dst[ix] += src[oy * wo + ox];
                }
              }
            }
          }
        }
      }
    };
  }
  return emit<T>({cout, ho, wo}, std::move(out), rec, std::move(fn));
}

template <typename T>
Tensor<T> spatial_mean(const Tensor<T>& x) {
  const std::size_t c = x.dim(0);
  const std::size_t inner = x.numel() / c;
  auto xd = x.data();
  Buffer<T> out(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    T acc = 0;
    for (std::size_t i = 0; i < inner; ++i) acc += xd[ch * inner + i];
    out[ch] = acc / static_cast<T>(inner);
  }
  const bool rec = recording<T>({&x});
  typename Tape<T>::BackwardFn fn;
  if (rec) {
    fn = [nx = x.node_ptr(), c, inner](TensorNode<T>& o) {
      if (T* gx = grad_of(nx)) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          const T g = o.grad[ch] / static_cast<T>(inner);
          for (std::size_t i = 0; i < inner; ++i) gx[ch * inner + i] += g;
        }
      }
    };
  }
  return emit<T>({c}, std::move(out), rec, std::move(fn));
}

template <typename T>
Tensor<T> grid_to_sequence(const Tensor<T>& x) {
  if (x.rank() != 3) fail("grid_to_sequence", "needs [k, h, w], got " + shape_str(x.shape()));
  const std::size_t k = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto xd = x.data();
  Buffer<T> out(x.numel());
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t col = 0; col < w; ++col) out[(col * h + r) * k + c] = xd[(c * h + r) * w + col];
    }
  }
  const bool rec = recording<T>({&x});
  typename Tape<T>::BackwardFn fn;
  if (rec) {
    fn = [nx = x.node_ptr(), k, h, w](TensorNode<T>& o) {
      if (T* gx = grad_of(nx)) {
        for (std::size_t c = 0; c < k; ++c) {
          for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t col = 0; col < w; ++col) gx[(c * h + r) * w + col] += o.grad[(col * h + r) * k + c];
          }
        }
      }
    };
  }
  return emit<T>({w * h, k}, std::move(out), rec, std::move(fn));
}

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids) {
  if (table.rank() != 2) fail("embedding", "table must be [v, d], got " + shape_str(table.shape()));
  if (ids.empty()) fail("embedding", "empty id list");
  const std::size_t v = table.dim(0), d = table.dim(1);
  auto td = table.data();
  Buffer<T> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      fail("embedding", "id " + std::to_string(ids[i]) + " outside vocabulary of " + std::to_string(v));
    }
    std::copy_n(td.data() + static_cast<std::size_t>(ids[i]) * d, d, out.data() + i * d);
  }
  const bool rec = recording<T>({&table});
  typename Tape<T>::BackwardFn fn;
  if (rec) {
    fn = [nt = table.node_ptr(), idv = std::vector<int>(ids.begin(), ids.end()), d](TensorNode<T>& o) {
      if (T* gt = grad_of(nt)) {
        for (std::size_t i = 0; i < idv.size(); ++i) {
          T* dst = gt + static_cast<std::size_t>(idv[i]) * d;
          for (std::size_t j = 0; j < d; ++j) dst[j] += o.grad[i * d + j];
        }
      }
    };
  }
  return emit<T>({ids.size(), d}, std::move(out), rec, std::move(fn));
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> index) {
  if (x.rank() != 2) fail("gather_rows", "needs [t, d], got " + shape_str(x.shape()));
  if (index.empty()) fail("gather_rows", "empty index");
  const std::size_t t = x.dim(0), d = x.dim(1);
  auto xd = x.data();
  Buffer<T> out(index.size() * d);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= t) fail("gather_rows", "row " + std::to_string(index[i]) + " of " + std::to_string(t));
    std::copy_n(xd.data() + index[i] * d, d, out.data() + i * d);
  }
  const bool rec = recording<T>({&x});
  typename Tape<T>::BackwardFn fn;
  if (rec) {
    fn = [nx = x.node_ptr(), idx = std::vector<std::size_t>(index.begin(), index.end()), d](TensorNode<T>& o) {
      if (T* gx = grad_of(nx)) {
        for (std::size_t i = 0; i < idx.size(); ++i) {
          for (std::size_t j = 0; j < d; ++j) gx[idx[i] * d + j] += o.grad[i * d + j];
        }
      }
    };
  }
  return emit<T>({index.size(), d}, std::move(out), rec, std::move(fn));
}

template <typename T>
Tensor<T> repeat_rows(const Tensor<T>& x, std::size_t times) {
  if (x.rank() != 2 || times == 0) fail("repeat_rows", "needs [n, d] and times > 0, got " + shape_str(x.shape()));
  const std::size_t n = x.dim(0), d = x.dim(1);
  auto xd = x.data();
  Buffer<T> out(n * times * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < times; ++r) std::copy_n(xd.data() + i * d, d, out.data() + (i * times + r) * d);
  }
  const bool rec = recording<T>({&x});
  typename Tape<T>::BackwardFn fn;
  if (rec) {
    fn = [nx = x.node_ptr(), n, d, times](TensorNode<T>& o) {
      if (T* gx = grad_of(nx)) {
        for (std::size_t i = 0; i < n; ++i) {
          for (std::size_t r = 0; r < times; ++r) {
            for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += o.grad[(i * times + r) * d + j];
          }
        }
      }
    };
  }
  return emit<T>({n * times, d}, std::move(out), rec, std::move(fn));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) fail("reshape", shape_str(x.shape()) + " to " + shape_str(shape));
  Buffer<T> out(x.data().begin(), x.data().end());
  const bool rec = recording<T>({&x});
  typename Tape<T>::BackwardFn fn;
  if (rec) {
    fn = [nx = x.node_ptr()](TensorNode<T>& o) {
      if (T* gx = grad_of(nx)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i];
      }
    };
  }
  return emit<T>(std::move(shape), std::move(out), rec, std::move(fn));
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, std::size_t heads,
                    AttentionMask mask) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || k.shape() != v.shape() || q.dim(1) != k.dim(1)) {
    fail("attention", "shapes q" + shape_str(q.shape()) + " k" + shape_str(k.shape()) + " v" + shape_str(v.shape()));
  }
  const std::size_t d = q.dim(1);
  if (heads == 0 || d % heads != 0) fail("attention", std::to_string(d) + " not divisible into " + std::to_string(heads) + " heads");
  const std::size_t tq = q.dim(0), tk = k.dim(0);
  std::size_t blocks = 1, lq = tq, lk = tk;
  if (mask.block > 0) {
    if (tq != tk || tq % mask.block != 0) {
      fail("attention", "block mask of " + std::to_string(mask.block) + " needs equal lengths divisible by it, got " +
                            std::to_string(tq) + "/" + std::to_string(tk));
    }
    blocks = tq / mask.block;
    lq = lk = mask.block;
  } else if (mask.causal && tq != tk) {
    fail("attention", "causal mask needs equal query/key lengths");
  }
  const std::size_t dh = d / heads;
  const T sc = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  const bool causal = mask.causal;

  auto qd = q.data();
  auto kd = k.data();
  auto vd = v.data();
  Buffer<T> out(tq * d);
  Buffer<T> probs(blocks * heads * lq * lk);
  const Eigen::OuterStride<> stride(static_cast<Index>(d));
  for (std::size_t b = 0; b < blocks; ++b) {
    for (std::size_t hh = 0; hh < heads; ++hh) {
      CStridedR<T> qm(qd.data() + b * lq * d + hh * dh, static_cast<Index>(lq), static_cast<Index>(dh), stride);
      CStridedR<T> km(kd.data() + b * lk * d + hh * dh, static_cast<Index>(lk), static_cast<Index>(dh), stride);
      CStridedR<T> vm(vd.data() + b * lk * d + hh * dh, static_cast<Index>(lk), static_cast<Index>(dh), stride);
      T* pp = probs.data() + (b * heads + hh) * lq * lk;
      MapR<T> pm(pp, static_cast<Index>(lq), static_cast<Index>(lk));
      pm.noalias() = (qm * km.transpose()) * sc;
      for (std::size_t i = 0; i < lq; ++i) {
        T* row = pp + i * lk;
        const std::size_t visible = causal ? i + 1 : lk;
        T mx = row[0];
        for (std::size_t j = 1; j < visible; ++j) mx = std::max(mx, row[j]);
        T total = 0;
        for (std::size_t j = 0; j < visible; ++j) {
          row[j] = std::exp(row[j] - mx);
          total += row[j];
        }
        for (std::size_t j = 0; j < visible; ++j) row[j] /= total;
        for (std::size_t j = visible; j < lk; ++j) row[j] = T(0);
      }
      StridedR<T> om(out.data() + b * lq * d + hh * dh, static_cast<Index>(lq), static_cast<Index>(dh), stride);
      om.noalias() = pm * vm;
    }
  }
  const bool rec = recording<T>({&q, &k, &v});
  typename Tape<T>::BackwardFn fn;
  if (rec) {
    fn = [nq = q.node_ptr(), nk = k.node_ptr(), nv = v.node_ptr(), probs = std::move(probs), blocks, heads, lq, lk,
          d, dh, sc](TensorNode<T>& o) {
      T* gq = grad_of(nq);
      T* gk = grad_of(nk);
      T* gv = grad_of(nv);
      const Eigen::OuterStride<> stride(static_cast<Index>(d));
      MatR<T> dp(static_cast<Index>(lq), static_cast<Index>(lk));
      for (std::size_t b = 0; b < blocks; ++b) {
        for (std::size_t hh = 0; hh < heads; ++hh) {
          const std::size_t qoff = b * lq * d + hh * dh;
          const std::size_t koff = b * lk * d + hh * dh;
          CStridedR<T> dout(o.grad.data() + qoff, static_cast<Index>(lq), static_cast<Index>(dh), stride);
          CMapR<T> pm(probs.data() + (b * heads + hh) * lq * lk, static_cast<Index>(lq), static_cast<Index>(lk));
          CStridedR<T> qm(nq->data.data() + qoff, static_cast<Index>(lq), static_cast<Index>(dh), stride);
          CStridedR<T> km(nk->data.data() + koff, static_cast<Index>(lk), static_cast<Index>(dh), stride);
          CStridedR<T> vm(nv->data.data() + koff, static_cast<Index>(lk), static_cast<Index>(dh), stride);
          if (gv) {
            StridedR<T>(gv + koff, static_cast<Index>(lk), static_cast<Index>(dh), stride).noalias() +=
                pm.transpose() * dout;
          }
          if (!gq && !gk) continue;
          dp.noalias() = dout * vm.transpose();
          for (Index i = 0; i < dp.rows(); ++i) {
            T dot = 0;
            for (Index j = 0; j < dp.cols(); ++j) dot += pm(i, j) * dp(i, j);
            for (Index j = 0; j < dp.cols(); ++j) dp(i, j) = pm(i, j) * (dp(i, j) - dot) * sc;
          }
          if (gq) {
            StridedR<T>(gq + qoff, static_cast<Index>(lq), static_cast<Index>(dh), stride).noalias() += dp * km;
          }
          if (gk) {
            StridedR<T>(gk + koff, static_cast<Index>(lk), static_cast<Index>(dh), stride).noalias() +=
                dp.transpose() * qm;
          }
        }
      }
    };
  }
  return emit<T>({tq, d}, std::move(out), rec, std::move(fn));
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets, int ignore_id) {
  if (logits.rank() != 2 || logits.dim(0) != targets.size()) {
    fail("cross_entropy", "logits " + shape_str(logits.shape()) + " for " + std::to_string(targets.size()) + " targets");
  }
  const std::size_t t = logits.dim(0), v = logits.dim(1);
  auto ld = logits.data();
  Buffer<T> probs(t * v);
  double total = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < t; ++i) {
    const int tgt = targets[i];
    if (tgt == ignore_id) continue;
    if (tgt < 0 || static_cast<std::size_t>(tgt) >= v) {
      fail("cross_entropy", "target " + std::to_string(tgt) + " outside [0, " + std::to_string(v) + ")");
    }
    const T* row = ld.data() + i * v;
    T mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    T z = 0;
    for (std::size_t j = 0; j < v; ++j) {
      probs[i * v + j] = std::exp(row[j] - mx);
      z += probs[i * v + j];
    }
    for (std::size_t j = 0; j < v; ++j) probs[i * v + j] /= z;
    total += static_cast<double>(std::log(z) + mx - row[tgt]);
    ++count;
  }
  const T loss = count ? static_cast<T>(total / static_cast<double>(count)) : T(0);
  const bool rec = recording<T>({&logits});
  typename Tape<T>::BackwardFn fn;
  if (rec) {
    fn = [nl = logits.node_ptr(), probs = std::move(probs), tg = std::vector<int>(targets.begin(), targets.end()),
          ignore_id, count, v](TensorNode<T>& o) {
      T* gl = grad_of(nl);
      if (!gl || count == 0) return;
      const T s = o.grad[0] / static_cast<T>(count);
      for (std::size_t i = 0; i < tg.size(); ++i) {
        if (tg[i] == ignore_id) continue;
        for (std::size_t j = 0; j < v; ++j) gl[i * v + j] += s * probs[i * v + j];
        gl[i * v + static_cast<std::size_t>(tg[i])] -= s;
      }
    };
  }
  return emit<T>({1}, {loss}, rec, std::move(fn));
}

template <typename T>
Tensor<T> l1_loss(const Tensor<T>& pred, const Tensor<T>& target, std::span<const std::uint8_t> mask) {
  if (pred.shape() != target.shape()) fail("l1_loss", shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  if (!mask.empty() && mask.size() != pred.numel()) {
    fail("l1_loss", "mask of " + std::to_string(mask.size()) + " for " + shape_str(pred.shape()));
  }
  auto pd = pred.data();
  auto td = target.data();
  double total = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < pd.size(); ++i) {
    if (!mask.empty() && !mask[i]) continue;
    total += std::abs(static_cast<double>(pd[i]) - static_cast<double>(td[i]));
    ++count;
  }
  const T loss = count ? static_cast<T>(total / static_cast<double>(count)) : T(0);
  const bool rec = recording<T>({&pred, &target});
  typename Tape<T>::BackwardFn fn;
  if (rec) {
    fn = [np = pred.node_ptr(), nt = target.node_ptr(), m = std::vector<std::uint8_t>(mask.begin(), mask.end()),
          count](TensorNode<T>& o) {
      if (count == 0) return;
      T* gp = grad_of(np);
      T* gt = grad_of(nt);
      const T s = o.grad[0] / static_cast<T>(count);
      for (std::size_t i = 0; i < np->data.size(); ++i) {
        if (!m.empty() && !m[i]) continue;
        const T diff = np->data[i] - nt->data[i];
        const T sg = diff > T(0) ? T(1) : (diff < T(0) ? T(-1) : T(0));
        if (gp) gp[i] += s * sg;
        if (gt) gt[i] -= s * sg;
      }
    };
  }
  return emit<T>({1}, {loss}, rec, std::move(fn));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0;
  for (T e : x.data()) acc += static_cast<double>(e);
  const bool rec = recording<T>({&x});
  typename Tape<T>::BackwardFn fn;
  if (rec) {
    fn = [nx = x.node_ptr()](TensorNode<T>& o) {
      if (T* gx = grad_of(nx)) {
        for (std::size_t i = 0; i < nx->data.size(); ++i) gx[i] += o.grad[0];
      }
    };
  }
  return emit<T>({1}, {static_cast<T>(acc)}, rec, std::move(fn));
}

template <typename T>
Tensor<T> weighted_sum(std::span<const Tensor<T>> terms, std::span<const double> weights) {
  if (terms.size() != weights.size() || terms.empty()) {
    fail("weighted_sum", std::to_string(terms.size()) + " terms, " + std::to_string(weights.size()) + " weights");
  }
  double acc = 0;
  bool rec = false;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].numel() != 1) fail("weighted_sum", "term " + std::to_string(i) + " is not scalar");
    acc += weights[i] * static_cast<double>(terms[i].item());
    rec = rec || recording<T>({&terms[i]});
  }
  typename Tape<T>::BackwardFn fn;
  if (rec) {
    std::vector<NodePtr<T>> nodes;
    for (const auto& t : terms) nodes.push_back(t.node_ptr());
    fn = [nodes = std::move(nodes), w = std::vector<double>(weights.begin(), weights.end())](TensorNode<T>& o) {
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        if (T* g = grad_of(nodes[i])) g[0] += static_cast<T>(w[i] * static_cast<double>(o.grad[0]));
      }
    };
  }
  return emit<T>({1}, {static_cast<T>(acc)}, rec, std::move(fn));
}

#define TABREC_INSTANTIATE_OPS(T)                                                                            \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                                           \
  template Tensor<T> add_channel(const Tensor<T>&, const Tensor<T>&);                                        \
  template Tensor<T> scale(const Tensor<T>&, double);                                                        \
  template Tensor<T> relu(const Tensor<T>&);                                                                 \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                              \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                                 \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);               \
  template Tensor<T> instance_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);            \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t); \
  template Tensor<T> spatial_mean(const Tensor<T>&);                                                         \
  template Tensor<T> grid_to_sequence(const Tensor<T>&);                                                     \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const int>);                                      \
  template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>);                            \
  template Tensor<T> repeat_rows(const Tensor<T>&, std::size_t);                                             \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                                       \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,            \
                               AttentionMask);                                                               \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>, int);                             \
  template Tensor<T> l1_loss(const Tensor<T>&, const Tensor<T>&, std::span<const std::uint8_t>);             \
  template Tensor<T> sum(const Tensor<T>&);                                                                  \
  template Tensor<T> weighted_sum(std::span<const Tensor<T>>, std::span<const double>);

TABREC_INSTANTIATE_OPS(float)
TABREC_INSTANTIATE_OPS(double)

}  // namespace tabrec::ops
