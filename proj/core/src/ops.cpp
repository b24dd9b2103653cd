#include "clsr/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "clsr/flop_counter.hpp"

namespace clsr {

template <class T>
void backward(const Var<T>& root) {
  if (!root.defined() || root.value().size() != 1) {
    throw ShapeError("backward needs a scalar root");
  }
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  // Owning handles: clearing a node's parent links below must not free
  // nodes that are still waiting in the order.
  std::vector<std::shared_ptr<Node<T>>> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<std::shared_ptr<Node<T>>, std::size_t>> stack;
  stack.emplace_back(root.node(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      std::shared_ptr<Node<T>> p = node->parents[next++];
      if (p->requires_grad && !seen.count(p.get())) {
        seen.insert(p.get());
        stack.emplace_back(std::move(p), 0);
      }
    } else {
      order.push_back(std::move(node));
      stack.pop_back();
    }
  }

  Node<T>& r = *root.node();
  r.ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = it->get();
    if (n->backward) {
      n->ensure_grad();
      n->backward(*n);
      n->backward = nullptr;
      n->parents.clear();
    }
  }
}

template void backward(const Var<float>&);
template void backward(const Var<double>&);

namespace ops {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <class T>
Tensor<T>* grad_of(Node<T>& n, std::size_t parent) {
  auto& p = *n.parents[parent];
  return p.requires_grad ? &p.ensure_grad() : nullptr;
}

void count(std::uint64_t flops) { FlopScope::record(flops); }

struct ConvGeom {
  int cin, h, w, k, stride, pad, ho, wo;
};

// cols: (cin*k*k, ho*wo)
template <class T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const std::size_t plane = static_cast<std::size_t>(g.ho) * g.wo;
  for (int c = 0; c < g.cin; ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        T* row = cols + (static_cast<std::size_t>(c) * g.k * g.k + ky * g.k + kx) * plane;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          T* dst = row + static_cast<std::size_t>(oy) * g.wo;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = xc + static_cast<std::size_t>(iy) * g.w;
          if (g.stride == 1) {
            const int shift = kx - g.pad;
            const int lo = std::min(g.wo, std::max(0, -shift));
            const int hi = std::min(g.wo, g.w - shift);
            std::fill(dst, dst + lo, T(0));
            if (hi > lo) std::copy(src + lo + shift, src + hi + shift, dst + lo);
            std::fill(dst + std::max(hi, lo), dst + g.wo, T(0));
          } else {
            for (int ox = 0; ox < g.wo; ++ox) {
              const int ix = ox * g.stride - g.pad + kx;
              dst[ox] = (ix >= 0 && ix < g.w) ? src[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates cols into x.
template <class T>
void col2im(const T* cols, const ConvGeom& g, T* x) {
  const std::size_t plane = static_cast<std::size_t>(g.ho) * g.wo;
  for (int c = 0; c < g.cin; ++c) {
    T* xc = x + static_cast<std::size_t>(c) * g.h * g.w;
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const T* row = cols + (static_cast<std::size_t>(c) * g.k * g.k + ky * g.k + kx) * plane;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          const T* src = row + static_cast<std::size_t>(oy) * g.wo;
          T* dst = xc + static_cast<std::size_t>(iy) * g.w;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

void require_rank(const Shape& s, int rank, const char* op) {
  if (static_cast<int>(s.size()) != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(s));
  }
}

}  // namespace

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return make_result<T>(std::move(out), {a, b}, [](Node<T>& n) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* g = grad_of(n, p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += n.grad[i];
      }
    }
  });
}

template <class T>
Var<T> relu(const Var<T>& x) {
  Tensor<T> out = x.value();
  for (auto& v : out.storage()) v = v > T(0) ? v : T(0);
  return make_result<T>(std::move(out), {x}, [](Node<T>& n) {
    auto* g = grad_of(n, 0);
    if (!g) return;
    for (std::size_t i = 0; i < g->size(); ++i) {
      if (n.value[i] > T(0)) (*g)[i] += n.grad[i];
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out = x.value();
  for (auto& v : out.storage()) v *= factor;
  return make_result<T>(std::move(out), {x}, [factor](Node<T>& n) {
    if (auto* g = grad_of(n, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += factor * n.grad[i];
    }
  });
}

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  require_rank(xs, 3, "conv2d input");
  require_rank(ws, 4, "conv2d weight");
  if (ws[1] != xs[0] || ws[2] != ws[3]) {
    throw ShapeError("conv2d weight " + shape_str(ws) + " incompatible with input " + shape_str(xs));
  }
  const int cout = ws[0];
  ConvGeom g{xs[0], xs[1], xs[2], ws[2], stride, pad, 0, 0};
  g.ho = (g.h + 2 * pad - g.k) / stride + 1;
  g.wo = (g.w + 2 * pad - g.k) / stride + 1;
  if (g.ho < 1 || g.wo < 1) throw ShapeError("conv2d output would be empty");
  const int kdim = g.cin * g.k * g.k;
  const int plane = g.ho * g.wo;

  std::vector<T> cols(static_cast<std::size_t>(kdim) * plane);
  im2col(x.value().data(), g, cols.data());
  Tensor<T> out({cout, g.ho, g.wo});
  MatMap<T> om(out.data(), cout, plane);
  om.noalias() = ConstMatMap<T>(weight.value().data(), cout, kdim) *
                 ConstMatMap<T>(cols.data(), kdim, plane);
  const bool has_bias = bias.defined();
  if (has_bias) {
    for (int c = 0; c < cout; ++c) om.row(c).array() += bias.value()[c];
  }
  count(2ull * kdim * cout * plane);

  std::vector<Var<T>> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return make_result<T>(std::move(out), parents, [g, cout, kdim, plane, has_bias](Node<T>& n) {
    ConstMatMap<T> dout(n.grad.data(), cout, plane);
    const auto& xv = n.parents[0]->value;
    const auto& wv = n.parents[1]->value;
    auto* gx = grad_of(n, 0);
    auto* gw = grad_of(n, 1);
    if (gw) {
      std::vector<T> cols(static_cast<std::size_t>(kdim) * plane);
      im2col(xv.data(), g, cols.data());
      MatMap<T>(gw->data(), cout, kdim).noalias() +=
          dout * ConstMatMap<T>(cols.data(), kdim, plane).transpose();
    }
    if (gx) {
      std::vector<T> dcols(static_cast<std::size_t>(kdim) * plane);
      MatMap<T>(dcols.data(), kdim, plane).noalias() =
          ConstMatMap<T>(wv.data(), cout, kdim).transpose() * dout;
      col2im(dcols.data(), g, gx->data());
    }
    if (has_bias) {
      if (auto* gb = grad_of(n, 2)) {
        // Fixed-order sum; Eigen's reduction order depends on the address alignment.
        for (int c = 0; c < cout; ++c) {
          T acc = 0;
          for (Eigen::Index i = 0; i < dout.cols(); ++i) acc += dout(c, i);
          (*gb)[c] += acc;
        }
      }
    }
  });
}

template <class T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride,
                        int pad) {
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  require_rank(xs, 3, "conv_transpose2d input");
  require_rank(ws, 4, "conv_transpose2d weight");
  if (ws[0] != xs[0] || ws[2] != ws[3]) {
    throw ShapeError("conv_transpose2d weight " + shape_str(ws) + " incompatible with input " +
                     shape_str(xs));
  }
  const int cin = xs[0], h = xs[1], w = xs[2], cout = ws[1], k = ws[2];
  const int oh = (h - 1) * stride - 2 * pad + k;
  const int ow = (w - 1) * stride - 2 * pad + k;
  if (oh < 1 || ow < 1) throw ShapeError("conv_transpose2d output would be empty");
  // The im2col geometry of the equivalent forward conv mapping (cout, oh, ow) -> (., h, w).
  const ConvGeom g{cout, oh, ow, k, stride, pad, h, w};
  const int kdim = cout * k * k;
  const int plane = h * w;

  std::vector<T> cols(static_cast<std::size_t>(kdim) * plane);
  MatMap<T>(cols.data(), kdim, plane).noalias() =
      ConstMatMap<T>(weight.value().data(), cin, kdim).transpose() *
      ConstMatMap<T>(x.value().data(), cin, plane);
  Tensor<T> out({cout, oh, ow});
  col2im(cols.data(), g, out.data());
  const bool has_bias = bias.defined();
  if (has_bias) {
    for (int c = 0; c < cout; ++c) {
      T* oc = out.channel(c);
      for (int i = 0; i < oh * ow; ++i) oc[i] += bias.value()[c];
    }
  }
  count(2ull * k * k * cin * cout * plane);

  std::vector<Var<T>> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return make_result<T>(std::move(out), parents,
                        [g, cin, cout, kdim, plane, oh, ow, has_bias](Node<T>& n) {
    std::vector<T> dcols(static_cast<std::size_t>(kdim) * plane);
    im2col(n.grad.data(), g, dcols.data());
    ConstMatMap<T> dc(dcols.data(), kdim, plane);
    if (auto* gx = grad_of(n, 0)) {
      MatMap<T>(gx->data(), cin, plane).noalias() +=
          ConstMatMap<T>(n.parents[1]->value.data(), cin, kdim) * dc;
    }
    if (auto* gw = grad_of(n, 1)) {
      MatMap<T>(gw->data(), cin, kdim).noalias() +=
          ConstMatMap<T>(n.parents[0]->value.data(), cin, plane) * dc.transpose();
    }
    if (has_bias) {
      if (auto* gb = grad_of(n, 2)) {
        for (int c = 0; c < cout; ++c) {
          const T* gc = n.grad.channel(c);
          T acc = 0;
          for (int i = 0; i < oh * ow; ++i) acc += gc[i];
          (*gb)[c] += acc;
        }
      }
    }
  });
}

template <class T>
Var<T> pixel_shuffle(const Var<T>& x, int r) {
  const auto& s = x.shape();
  require_rank(s, 3, "pixel_shuffle");
  if (r < 1 || s[0] % (r * r)) throw ShapeError("pixel_shuffle channel count not divisible by r^2");
  const int c = s[0] / (r * r), h = s[1], w = s[2];
  Tensor<T> out({c, h * r, w * r});
  const auto& in = x.value();
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < r; ++j) {
        const T* src = in.channel(ch * r * r + i * r + j);
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) out.at(ch, y * r + i, xx * r + j) = src[y * w + xx];
      }
  return make_result<T>(std::move(out), {x}, [c, h, w, r](Node<T>& n) {
    auto* g = grad_of(n, 0);
    if (!g) return;
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < r; ++j) {
          T* dst = g->channel(ch * r * r + i * r + j);
          for (int y = 0; y < h; ++y)
            for (int xx = 0; xx < w; ++xx) dst[y * w + xx] += n.grad.at(ch, y * r + i, xx * r + j);
        }
  });
}

template <class T>
Var<T> resize_bilinear(const Var<T>& x, int out_h, int out_w) {
  require_rank(x.shape(), 3, "resize_bilinear");
  const int c = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  Tensor<T> out = clsr::resize_bilinear(x.value(), out_h, out_w);
  count(8ull * c * out_h * out_w);
  return make_result<T>(std::move(out), {x}, [c, h, w, out_h, out_w](Node<T>& n) {
    auto* g = grad_of(n, 0);
    if (!g) return;
    const LinearTaps ty = LinearTaps::make(h, out_h);
    const LinearTaps tx = LinearTaps::make(w, out_w);
    for (int ch = 0; ch < c; ++ch) {
      T* dst = g->channel(ch);
      const T* src = n.grad.channel(ch);
      for (int y = 0; y < out_h; ++y) {
        T* r0 = dst + static_cast<std::size_t>(ty.i0[y]) * w;
        T* r1 = dst + static_cast<std::size_t>(ty.i1[y]) * w;
        const T wy0 = static_cast<T>(ty.w0[y]), wy1 = static_cast<T>(ty.w1[y]);
        for (int xx = 0; xx < out_w; ++xx) {
          const T v = src[static_cast<std::size_t>(y) * out_w + xx];
          const T wx0 = static_cast<T>(tx.w0[xx]), wx1 = static_cast<T>(tx.w1[xx]);
          r0[tx.i0[xx]] += wy0 * wx0 * v;
          r0[tx.i1[xx]] += wy0 * wx1 * v;
          r1[tx.i0[xx]] += wy1 * wx0 * v;
          r1[tx.i1[xx]] += wy1 * wx1 * v;
        }
      }
    }
  });
}

template <class T>
Var<T> reflect_window(const Var<T>& x, const RoiBox& window) {
  require_rank(x.shape(), 3, "reflect_window");
  Tensor<T> out = clsr::reflect_window(x.value(), window);
  const int h = x.shape()[1], w = x.shape()[2];
  return make_result<T>(std::move(out), {x}, [window, h, w](Node<T>& n) {
    auto* g = grad_of(n, 0);
    if (!g) return;
    for (int c = 0; c < n.value.channels(); ++c)
      for (int y = 0; y < window.height; ++y) {
        const int sy = reflect_index(window.top + y, h);
        for (int xx = 0; xx < window.width; ++xx) {
          g->at(c, sy, reflect_index(window.left + xx, w)) += n.grad.at(c, y, xx);
        }
      }
  });
}

template <class T>
Var<T> add_leading_channels(const Var<T>& z, const Var<T>& p) {
  const auto& zs = z.shape();
  const auto& ps = p.shape();
  require_rank(zs, 3, "add_leading_channels z");
  require_rank(ps, 3, "add_leading_channels p");
  if (ps[0] > zs[0] || ps[1] != zs[1] || ps[2] != zs[2]) {
    throw ShapeError("add_leading_channels: " + shape_str(ps) + " does not fit " + shape_str(zs));
  }
  Tensor<T> out = z.value();
  const std::size_t n_lead = p.value().size();
  for (std::size_t i = 0; i < n_lead; ++i) out[i] += p.value()[i];
  return make_result<T>(std::move(out), {z, p}, [n_lead](Node<T>& n) {
    if (auto* gz = grad_of(n, 0)) {
      for (std::size_t i = 0; i < gz->size(); ++i) (*gz)[i] += n.grad[i];
    }
    if (auto* gp = grad_of(n, 1)) {
      for (std::size_t i = 0; i < n_lead; ++i) (*gp)[i] += n.grad[i];
    }
  });
}

template <class T>
Var<T> to_tokens(const Var<T>& x) {
  require_rank(x.shape(), 3, "to_tokens");
  const int c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
  Tensor<T> out({hw, c});
  MatMap<T>(out.data(), hw, c) = ConstMatMap<T>(x.value().data(), c, hw).transpose();
  return make_result<T>(std::move(out), {x}, [c, hw](Node<T>& n) {
    if (auto* g = grad_of(n, 0)) {
      MatMap<T>(g->data(), c, hw) += ConstMatMap<T>(n.grad.data(), hw, c).transpose();
    }
  });
}

template <class T>
Var<T> from_tokens(const Var<T>& t, int h, int w) {
  require_rank(t.shape(), 2, "from_tokens");
  const int hw = t.shape()[0], c = t.shape()[1];
  if (hw != h * w) throw ShapeError("from_tokens: token count does not match h*w");
  Tensor<T> out({c, h, w});
  MatMap<T>(out.data(), c, hw) = ConstMatMap<T>(t.value().data(), hw, c).transpose();
  return make_result<T>(std::move(out), {t}, [c, hw](Node<T>& n) {
    if (auto* g = grad_of(n, 0)) {
      MatMap<T>(g->data(), hw, c) += ConstMatMap<T>(n.grad.data(), c, hw).transpose();
    }
  });
}

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  const int cols = parts.front().shape().at(1);
  int rows = 0;
  for (const auto& p : parts) {
    require_rank(p.shape(), 2, "concat_rows");
    if (p.shape()[1] != cols) throw ShapeError("concat_rows column mismatch");
    rows += p.shape()[0];
  }
  Tensor<T> out({rows, cols});
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + off);
    off += p.value().size();
  }
  return make_result<T>(std::move(out), parts, [](Node<T>& n) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < n.parents.size(); ++i) {
      const std::size_t sz = n.parents[i]->value.size();
      if (auto* g = grad_of(n, i)) {
        for (std::size_t j = 0; j < sz; ++j) (*g)[j] += n.grad[off + j];
      }
      off += sz;
    }
  });
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  const int rows = parts.front().shape().at(0);
  int cols = 0;
  for (const auto& p : parts) {
    require_rank(p.shape(), 2, "concat_cols");
    if (p.shape()[0] != rows) throw ShapeError("concat_cols row mismatch");
    cols += p.shape()[1];
  }
  Tensor<T> out({rows, cols});
  MatMap<T> om(out.data(), rows, cols);
  int off = 0;
  for (const auto& p : parts) {
    const int pc = p.shape()[1];
    om.middleCols(off, pc) = ConstMatMap<T>(p.value().data(), rows, pc);
    off += pc;
  }
  return make_result<T>(std::move(out), parts, [rows, cols](Node<T>& n) {
    ConstMatMap<T> gm(n.grad.data(), rows, cols);
    int off = 0;
    for (std::size_t i = 0; i < n.parents.size(); ++i) {
      const int pc = n.parents[i]->value.shape()[1];
      if (auto* g = grad_of(n, i)) MatMap<T>(g->data(), rows, pc) += gm.middleCols(off, pc);
      off += pc;
    }
  });
}

template <class T>
Var<T> slice_cols(const Var<T>& a, int begin, int end) {
  require_rank(a.shape(), 2, "slice_cols");
  const int rows = a.shape()[0], cols = a.shape()[1];
  if (begin < 0 || end > cols || begin >= end) throw BoundsError("slice_cols range out of bounds");
  const int width = end - begin;
  Tensor<T> out({rows, width});
  MatMap<T>(out.data(), rows, width) = ConstMatMap<T>(a.value().data(), rows, cols).middleCols(begin, width);
  return make_result<T>(std::move(out), {a}, [rows, cols, begin, width](Node<T>& n) {
    if (auto* g = grad_of(n, 0)) {
      MatMap<T>(g->data(), rows, cols).middleCols(begin, width) +=
          ConstMatMap<T>(n.grad.data(), rows, width);
    }
  });
}

template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  require_rank(a.shape(), 2, "matmul a");
  require_rank(b.shape(), 2, "matmul b");
  const int m = a.shape()[0], k = a.shape()[1], nn = b.shape()[1];
  if (b.shape()[0] != k) throw ShapeError("matmul inner dimension mismatch");
  Tensor<T> out({m, nn});
  MatMap<T>(out.data(), m, nn).noalias() =
      ConstMatMap<T>(a.value().data(), m, k) * ConstMatMap<T>(b.value().data(), k, nn);
  count(2ull * m * k * nn);
  return make_result<T>(std::move(out), {a, b}, [m, k, nn](Node<T>& n) {
    ConstMatMap<T> go(n.grad.data(), m, nn);
    if (auto* ga = grad_of(n, 0)) {
      MatMap<T>(ga->data(), m, k).noalias() +=
          go * ConstMatMap<T>(n.parents[1]->value.data(), k, nn).transpose();
    }
    if (auto* gb = grad_of(n, 1)) {
      MatMap<T>(gb->data(), k, nn).noalias() +=
          ConstMatMap<T>(n.parents[0]->value.data(), m, k).transpose() * go;
    }
  });
}

template <class T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  require_rank(a.shape(), 2, "matmul_nt a");
  require_rank(b.shape(), 2, "matmul_nt b");
  const int m = a.shape()[0], k = a.shape()[1], nn = b.shape()[0];
  if (b.shape()[1] != k) throw ShapeError("matmul_nt inner dimension mismatch");
  Tensor<T> out({m, nn});
  MatMap<T>(out.data(), m, nn).noalias() =
      ConstMatMap<T>(a.value().data(), m, k) * ConstMatMap<T>(b.value().data(), nn, k).transpose();
  count(2ull * m * k * nn);
  return make_result<T>(std::move(out), {a, b}, [m, k, nn](Node<T>& n) {
    ConstMatMap<T> go(n.grad.data(), m, nn);
    if (auto* ga = grad_of(n, 0)) {
      MatMap<T>(ga->data(), m, k).noalias() += go * ConstMatMap<T>(n.parents[1]->value.data(), nn, k);
    }
    if (auto* gb = grad_of(n, 1)) {
      MatMap<T>(gb->data(), nn, k).noalias() +=
          go.transpose() * ConstMatMap<T>(n.parents[0]->value.data(), m, k);
    }
  });
}

template <class T>
Var<T> attention_logits(const Var<T>& s, const Var<T>& alpha, const Var<T>& beta,
                        const Var<T>& gamma, int head, const Tensor<T>& dist, T inv_scale) {
  if (s.shape() != dist.shape()) throw ShapeError("attention_logits: distance matrix shape mismatch");
  const T a = alpha.value()[head], b = beta.value()[head], gm = gamma.value()[0];
  Tensor<T> out = s.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a + b * inv_scale * out[i] - gm * dist[i];
  return make_result<T>(std::move(out), {s, alpha, beta, gamma},
                        [dist, head, inv_scale, b](Node<T>& n) {
    const auto& sv = n.parents[0]->value;
    if (auto* gs = grad_of(n, 0)) {
      for (std::size_t i = 0; i < gs->size(); ++i) (*gs)[i] += b * inv_scale * n.grad[i];
    }
    T sum_g = 0, sum_gs = 0, sum_gd = 0;
    for (std::size_t i = 0; i < n.grad.size(); ++i) {
      sum_g += n.grad[i];
      sum_gs += n.grad[i] * sv[i];
      sum_gd += n.grad[i] * dist[i];
    }
    if (auto* ga = grad_of(n, 1)) (*ga)[head] += sum_g;
    if (auto* gb = grad_of(n, 2)) (*gb)[head] += inv_scale * sum_gs;
    if (auto* gg = grad_of(n, 3)) (*gg)[0] -= sum_gd;
  });
}

template <class T>
Var<T> softmax_rows(const Var<T>& x) {
  require_rank(x.shape(), 2, "softmax_rows");
  const int m = x.shape()[0], nn = x.shape()[1];
  Tensor<T> out = x.value();
  for (int i = 0; i < m; ++i) {
    T* row = out.data() + static_cast<std::size_t>(i) * nn;
    const T mx = *std::max_element(row, row + nn);
    T sum = 0;
    for (int j = 0; j < nn; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    const T inv = T(1) / sum;
    for (int j = 0; j < nn; ++j) row[j] *= inv;
  }
  return make_result<T>(std::move(out), {x}, [m, nn](Node<T>& n) {
    auto* g = grad_of(n, 0);
    if (!g) return;
    for (int i = 0; i < m; ++i) {
      const std::size_t o = static_cast<std::size_t>(i) * nn;
      T dot = 0;
      for (int j = 0; j < nn; ++j) dot += n.grad[o + j] * n.value[o + j];
      for (int j = 0; j < nn; ++j) (*g)[o + j] += n.value[o + j] * (n.grad[o + j] - dot);
    }
  });
}

template <class T>
Var<T> l1_loss(const Var<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("l1_loss shape mismatch " + shape_str(pred.shape()) + " vs " +
                     shape_str(target.shape()));
  }
  const auto& p = pred.value();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(static_cast<double>(p[i]) - target[i]);
  const double count_d = static_cast<double>(p.size());
  Tensor<T> out({1}, static_cast<T>(acc / count_d));
  return make_result<T>(std::move(out), {pred}, [target, count_d](Node<T>& n) {
    auto* g = grad_of(n, 0);
    if (!g) return;
    const auto& pv = n.parents[0]->value;
    const T scale = static_cast<T>(n.grad[0] / count_d);
    for (std::size_t i = 0; i < g->size(); ++i) {
      const T d = pv[i] - target[i];
      (*g)[i] += d > T(0) ? scale : (d < T(0) ? -scale : T(0));
    }
  });
}

#define CLSR_INSTANTIATE_OPS(T)                                                               \
  template Var<T> add(const Var<T>&, const Var<T>&);                                          \
  template Var<T> relu(const Var<T>&);                                                        \
  template Var<T> scale(const Var<T>&, T);                                                    \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, int, int);             \
  template Var<T> conv_transpose2d(const Var<T>&, const Var<T>&, const Var<T>&, int, int);   \
  template Var<T> pixel_shuffle(const Var<T>&, int);                                          \
  template Var<T> resize_bilinear(const Var<T>&, int, int);                                   \
  template Var<T> reflect_window(const Var<T>&, const RoiBox&);                               \
  template Var<T> add_leading_channels(const Var<T>&, const Var<T>&);                         \
  template Var<T> to_tokens(const Var<T>&);                                                   \
  template Var<T> from_tokens(const Var<T>&, int, int);                                       \
  template Var<T> concat_rows(const std::vector<Var<T>>&);                                    \
  template Var<T> concat_cols(const std::vector<Var<T>>&);                                    \
  template Var<T> slice_cols(const Var<T>&, int, int);                                        \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                       \
  template Var<T> matmul_nt(const Var<T>&, const Var<T>&);                                    \
  template Var<T> attention_logits(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&, \
                                   int, const Tensor<T>&, T);                                 \
  template Var<T> softmax_rows(const Var<T>&);                                                \
  template Var<T> l1_loss(const Var<T>&, const Tensor<T>&);

CLSR_INSTANTIATE_OPS(float)
CLSR_INSTANTIATE_OPS(double)

#undef CLSR_INSTANTIATE_OPS

}  // namespace ops
}  // namespace clsr
