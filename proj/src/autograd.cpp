#include "agile/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "agile/resample.hpp"

namespace agile::ag {

namespace {

using NodePtr = std::shared_ptr<Node>;

Var make(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  for (const auto& in : inputs) {
    if (in.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    n->parents.reserve(inputs.size());
    for (const auto& in : inputs) n->parents.push_back(in.node());
    n->backward_fn = std::move(fn);
  }
  return Var(std::move(n));
}

// Gradient buffer of parent i, or nullptr if it does not need one.
double* pgrad(Node& n, std::size_t i) {
  auto& p = n.parents[i];
  if (!p->requires_grad) return nullptr;
  return p->grad_buffer().data.data();
}

void check_rank(const Var& a, int r, const char* op) {
  if (a.value().rank() != r) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                     shape_string(a.shape()));
  }
}

}  // namespace

Tensor Var::grad() const {
  if (!node_ || node_->grad.empty()) return Tensor(node_ ? node_->value.shape : std::vector<int>{}, 0.0);
  return node_->grad;
}

Var leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return Var(std::move(n));
}

void backward(const Var& root) {
  if (root.value().size() != 1) throw ShapeError("backward: root must be a scalar");
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  // Iterative post-order DFS; graphs can be deep enough to matter for recursion.
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node* p = node->parents[idx++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->grad_buffer().data[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make(std::move(out), {a, b}, [](Node& n) {
    const auto& g = n.grad.data;
    for (std::size_t k = 0; k < 2; ++k) {
      if (double* pg = pgrad(n, k)) {
        for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
      }
    }
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make(std::move(out), {a, b}, [](Node& n) {
    const auto& g = n.grad.data;
    if (double* pa = pgrad(n, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) pa[i] += g[i];
    }
    if (double* pb = pgrad(n, 1)) {
      for (std::size_t i = 0; i < g.size(); ++i) pb[i] -= g[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make(std::move(out), {a, b}, [](Node& n) {
    const auto& g = n.grad.data;
    const auto& av = n.parents[0]->value.data;
    const auto& bv = n.parents[1]->value.data;
    if (double* pa = pgrad(n, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) pa[i] += g[i] * bv[i];
    }
    if (double* pb = pgrad(n, 1)) {
      for (std::size_t i = 0; i < g.size(); ++i) pb[i] += g[i] * av[i];
    }
  });
}

Var scale_by(const Var& a, const Var& s) {
  if (s.value().size() != 1) throw ShapeError("scale_by: scalar expected, got " + shape_string(s.shape()));
  const double k = s.value()[0];
  Tensor out = a.value();
  for (auto& v : out.data) v *= k;
  return make(std::move(out), {a, s}, [](Node& n) {
    const auto& g = n.grad.data;
    const auto& av = n.parents[0]->value.data;
    const double k = n.parents[1]->value.data[0];
    if (double* pa = pgrad(n, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) pa[i] += k * g[i];
    }
    if (double* ps = pgrad(n, 1)) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
      ps[0] += acc;
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data) v *= s;
  return make(std::move(out), {a}, [s](Node& n) {
    const auto& g = n.grad.data;
    if (double* pa = pgrad(n, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) pa[i] += s * g[i];
    }
  });
}

Var add_n(const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeError("add_n: empty input");
  Tensor out = xs[0].value();
  for (std::size_t k = 1; k < xs.size(); ++k) {
    require_same_shape(out, xs[k].value(), "add_n");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += xs[k].value()[i];
  }
  return make(std::move(out), xs, [](Node& n) {
    const auto& g = n.grad.data;
    for (std::size_t k = 0; k < n.parents.size(); ++k) {
      if (double* pg = pgrad(n, k)) {
        for (std::size_t i = 0; i < g.size(); ++i) pg[i] += g[i];
      }
    }
  });
}

Var reshape(const Var& a, std::vector<int> shape) {
  if (Tensor::count(shape) != a.value().size()) {
    throw ShapeError("reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  }
  Tensor out(std::move(shape), a.value().data);
  return make(std::move(out), {a}, [](Node& n) {
    const auto& g = n.grad.data;
    if (double* pa = pgrad(n, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) pa[i] += g[i];
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  check_rank(a, 2, "matmul");
  check_rank(b, 2, "matmul");
  const int m = a.value().dim(0), k = a.value().dim(1), n = b.value().dim(1);
  if (b.value().dim(0) != k) {
    throw ShapeError("matmul: inner dims " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor out({m, n}, 0.0);
  const double* A = a.value().data.data();
  const double* B = b.value().data.data();
  double* C = out.data.data();
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      const double* brow = B + p * n;
      double* crow = C + i * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return make(std::move(out), {a, b}, [m, k, n](Node& node) {
    const double* G = node.grad.data.data();
    const double* A = node.parents[0]->value.data.data();
    const double* B = node.parents[1]->value.data.data();
    if (double* gA = pgrad(node, 0)) {
      // dA = G B^T
      for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
          double s = 0.0;
          const double* grow = G + i * n;
          const double* brow = B + p * n;
          for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
          gA[i * k + p] += s;
        }
      }
    }
    if (double* gB = pgrad(node, 1)) {
      // dB = A^T G
      for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          const double* grow = G + i * n;
          double* gbrow = gB + p * n;
          for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
    }
  });
}

Var transpose(const Var& a) {
  check_rank(a, 2, "transpose");
  const int m = a.value().dim(0), n = a.value().dim(1);
  Tensor out({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[j * m + i] = a.value()[i * n + j];
  return make(std::move(out), {a}, [m, n](Node& node) {
    if (double* ga = pgrad(node, 0)) {
      const auto& g = node.grad.data;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) ga[i * n + j] += g[j * m + i];
    }
  });
}

Var add_row_bias(const Var& a, const Var& bias) {
  check_rank(a, 2, "add_row_bias");
  const int m = a.value().dim(0), n = a.value().dim(1);
  if (bias.value().size() != static_cast<std::size_t>(n)) throw ShapeError("add_row_bias: bias size");
  Tensor out = a.value();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[i * n + j] += bias.value()[j];
  return make(std::move(out), {a, bias}, [m, n](Node& node) {
    const auto& g = node.grad.data;
    if (double* ga = pgrad(node, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (double* gb = pgrad(node, 1)) {
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gb[j] += g[i * n + j];
    }
  });
}

Var slice_cols(const Var& a, int begin, int end) {
  check_rank(a, 2, "slice_cols");
  const int m = a.value().dim(0), n = a.value().dim(1);
  if (begin < 0 || end > n || begin >= end) throw ShapeError("slice_cols: bad range");
  const int w = end - begin;
  Tensor out({m, w});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < w; ++j) out[i * w + j] = a.value()[i * n + begin + j];
  return make(std::move(out), {a}, [m, n, w, begin](Node& node) {
    if (double* ga = pgrad(node, 0)) {
      const auto& g = node.grad.data;
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j) ga[i * n + begin + j] += g[i * w + j];
    }
  });
}

Var concat_cols(const std::vector<Var>& xs) {
  if (xs.empty()) throw ShapeError("concat_cols: empty input");
  const int m = xs[0].value().dim(0);
  std::vector<int> widths;
  int total = 0;
  for (const auto& x : xs) {
    check_rank(x, 2, "concat_cols");
    if (x.value().dim(0) != m) throw ShapeError("concat_cols: row mismatch");
    widths.push_back(x.value().dim(1));
    total += widths.back();
  }
  Tensor out({m, total});
  int off = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const int w = widths[k];
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j) out[i * total + off + j] = xs[k].value()[i * w + j];
    off += w;
  }
  return make(std::move(out), xs, [m, total, widths](Node& node) {
    const auto& g = node.grad.data;
    int off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      const int w = widths[k];
      if (double* gx = pgrad(node, k)) {
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < w; ++j) gx[i * w + j] += g[i * total + off + j];
      }
      off += w;
    }
  });
}

Var concat_rows(const Var& a, const Var& b) {
  check_rank(a, 2, "concat_rows");
  check_rank(b, 2, "concat_rows");
  if (a.value().dim(1) != b.value().dim(1)) throw ShapeError("concat_rows: column mismatch");
  Tensor out({a.value().dim(0) + b.value().dim(0), a.value().dim(1)});
  std::copy(a.value().data.begin(), a.value().data.end(), out.data.begin());
  std::copy(b.value().data.begin(), b.value().data.end(),
            out.data.begin() + static_cast<std::ptrdiff_t>(a.value().size()));
  const std::size_t na = a.value().size();
  return make(std::move(out), {a, b}, [na](Node& node) {
    const auto& g = node.grad.data;
    if (double* ga = pgrad(node, 0)) {
      for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
    }
    if (double* gb = pgrad(node, 1)) {
      for (std::size_t i = na; i < g.size(); ++i) gb[i - na] += g[i];
    }
  });
}

Var softmax_rows(const Var& a) {
  check_rank(a, 2, "softmax_rows");
  const int m = a.value().dim(0), n = a.value().dim(1);
  Tensor out({m, n});
  for (int i = 0; i < m; ++i) {
    const double* row = a.value().data.data() + i * n;
    double* orow = out.data.data() + i * n;
    const double mx = *std::max_element(row, row + n);
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      s += orow[j];
    }
    for (int j = 0; j < n; ++j) orow[j] /= s;
  }
  return make(std::move(out), {a}, [m, n](Node& node) {
    double* ga = pgrad(node, 0);
    if (!ga) return;
    const double* P = node.value.data.data();
    const double* G = node.grad.data.data();
    for (int i = 0; i < m; ++i) {
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += G[i * n + j] * P[i * n + j];
      for (int j = 0; j < n; ++j) ga[i * n + j] += P[i * n + j] * (G[i * n + j] - dot);
    }
  });
}

Var column(const Var& a, int j) {
  check_rank(a, 2, "column");
  const int m = a.value().dim(0), n = a.value().dim(1);
  if (j < 0 || j >= n) throw ShapeError("column: index out of range");
  Tensor out({m});
  for (int i = 0; i < m; ++i) out[i] = a.value()[i * n + j];
  return make(std::move(out), {a}, [m, n, j](Node& node) {
    if (double* ga = pgrad(node, 0)) {
      const auto& g = node.grad.data;
      for (int i = 0; i < m; ++i) ga[i * n + j] += g[i];
    }
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int pad) {
  check_rank(x, 3, "conv2d");
  check_rank(weight, 4, "conv2d");
  const int ci = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2);
  const int co = weight.value().dim(0), k = weight.value().dim(2);
  if (weight.value().dim(1) != ci || weight.value().dim(3) != k) {
    throw ShapeError("conv2d: weight " + shape_string(weight.shape()) + " for input " +
                     shape_string(x.shape()));
  }
  if (bias.value().size() != static_cast<std::size_t>(co)) throw ShapeError("conv2d: bias size");
  const int oh = h + 2 * pad - k + 1, ow = w + 2 * pad - k + 1;
  Tensor out({co, oh, ow});
  const double* X = x.value().data.data();
  const double* W = weight.value().data.data();
  double* O = out.data.data();
  for (int o = 0; o < co; ++o) {
    double* oplane = O + static_cast<std::size_t>(o) * oh * ow;
    std::fill(oplane, oplane + oh * ow, bias.value()[o]);
    for (int c = 0; c < ci; ++c) {
      const double* xplane = X + static_cast<std::size_t>(c) * h * w;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const double wv = W[((static_cast<std::size_t>(o) * ci + c) * k + ky) * k + kx];
          const int y0 = std::max(0, pad - ky), y1 = std::min(oh, h + pad - ky);
          const int x0 = std::max(0, pad - kx), x1 = std::min(ow, w + pad - kx);
          for (int y = y0; y < y1; ++y) {
            const double* xrow = xplane + (y + ky - pad) * w + (kx - pad);
            double* orow = oplane + y * ow;
            for (int xx = x0; xx < x1; ++xx) orow[xx] += wv * xrow[xx];
          }
        }
      }
    }
  }
  return make(std::move(out), {x, weight, bias}, [=](Node& node) {
    const double* G = node.grad.data.data();
    const double* X = node.parents[0]->value.data.data();
    const double* W = node.parents[1]->value.data.data();
    double* gX = pgrad(node, 0);
    double* gW = pgrad(node, 1);
    if (double* gB = pgrad(node, 2)) {
      for (int o = 0; o < co; ++o) {
        double s = 0.0;
        const double* gp = G + static_cast<std::size_t>(o) * oh * ow;
        for (int i = 0; i < oh * ow; ++i) s += gp[i];
        gB[o] += s;
      }
    }
    if (!gX && !gW) return;
    for (int o = 0; o < co; ++o) {
      const double* gplane = G + static_cast<std::size_t>(o) * oh * ow;
      for (int c = 0; c < ci; ++c) {
        const double* xplane = X + static_cast<std::size_t>(c) * h * w;
        double* gxplane = gX ? gX + static_cast<std::size_t>(c) * h * w : nullptr;
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const std::size_t widx = ((static_cast<std::size_t>(o) * ci + c) * k + ky) * k + kx;
            const double wv = W[widx];
            const int y0 = std::max(0, pad - ky), y1 = std::min(oh, h + pad - ky);
            const int x0 = std::max(0, pad - kx), x1 = std::min(ow, w + pad - kx);
            double acc = 0.0;
            for (int y = y0; y < y1; ++y) {
              const int off = (y + ky - pad) * w + (kx - pad);
              const double* grow = gplane + y * ow;
              const double* xrow = xplane + off;
              if (gxplane) {
                double* gxrow = gxplane + off;
                for (int xx = x0; xx < x1; ++xx) {
                  acc += grow[xx] * xrow[xx];
                  gxrow[xx] += wv * grow[xx];
                }
              } else {
                for (int xx = x0; xx < x1; ++xx) acc += grow[xx] * xrow[xx];
              }
            }
            if (gW) gW[widx] += acc;
          }
        }
      }
    }
  });
}

Var add_channel_bias(const Var& x, const Var& bias) {
  check_rank(x, 3, "add_channel_bias");
  const int c = x.value().dim(0);
  const int hw = x.value().dim(1) * x.value().dim(2);
  if (bias.value().size() != static_cast<std::size_t>(c)) throw ShapeError("add_channel_bias: bias size");
  Tensor out = x.value();
  for (int k = 0; k < c; ++k)
    for (int i = 0; i < hw; ++i) out[static_cast<std::size_t>(k) * hw + i] += bias.value()[k];
  return make(std::move(out), {x, bias}, [c, hw](Node& node) {
    const auto& g = node.grad.data;
    if (double* gx = pgrad(node, 0)) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (double* gb = pgrad(node, 1)) {
      for (int k = 0; k < c; ++k) {
        double s = 0.0;
        for (int i = 0; i < hw; ++i) s += g[static_cast<std::size_t>(k) * hw + i];
        gb[k] += s;
      }
    }
  });
}

Var avg_pool2(const Var& x) {
  check_rank(x, 3, "avg_pool2");
  const int c = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2);
  if (h % 2 || w % 2) throw ShapeError("avg_pool2: odd spatial size");
  const int oh = h / 2, ow = w / 2;
  Tensor out({c, oh, ow});
  for (int k = 0; k < c; ++k)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        out.at(k, y, xx) = 0.25 * (x.value().at(k, 2 * y, 2 * xx) + x.value().at(k, 2 * y, 2 * xx + 1) +
                                   x.value().at(k, 2 * y + 1, 2 * xx) + x.value().at(k, 2 * y + 1, 2 * xx + 1));
      }
  return make(std::move(out), {x}, [c, h, w, oh, ow](Node& node) {
    double* gx = pgrad(node, 0);
    if (!gx) return;
    for (int k = 0; k < c; ++k)
      for (int y = 0; y < oh; ++y)
        for (int xx = 0; xx < ow; ++xx) {
          const double g = 0.25 * node.grad.at(k, y, xx);
          const std::size_t base = static_cast<std::size_t>(k) * h * w;
          gx[base + (2 * y) * w + 2 * xx] += g;
          gx[base + (2 * y) * w + 2 * xx + 1] += g;
          gx[base + (2 * y + 1) * w + 2 * xx] += g;
          gx[base + (2 * y + 1) * w + 2 * xx + 1] += g;
        }
  });
}

Var upsample_nearest2(const Var& x) {
  check_rank(x, 3, "upsample_nearest2");
  const int c = x.value().dim(0), h = x.value().dim(1), w = x.value().dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (int k = 0; k < c; ++k)
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx) out.at(k, y, xx) = x.value().at(k, y / 2, xx / 2);
  return make(std::move(out), {x}, [c, h, w](Node& node) {
    double* gx = pgrad(node, 0);
    if (!gx) return;
    for (int k = 0; k < c; ++k)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx)
          gx[(static_cast<std::size_t>(k) * h + y / 2) * w + xx / 2] += node.grad.at(k, y, xx);
  });
}

Var concat_channels(const Var& a, const Var& b) {
  check_rank(a, 3, "concat_channels");
  check_rank(b, 3, "concat_channels");
  if (a.value().dim(1) != b.value().dim(1) || a.value().dim(2) != b.value().dim(2)) {
    throw ShapeError("concat_channels: spatial mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  Tensor out({a.value().dim(0) + b.value().dim(0), a.value().dim(1), a.value().dim(2)});
  std::copy(a.value().data.begin(), a.value().data.end(), out.data.begin());
  std::copy(b.value().data.begin(), b.value().data.end(),
            out.data.begin() + static_cast<std::ptrdiff_t>(a.value().size()));
  const std::size_t na = a.value().size();
  return make(std::move(out), {a, b}, [na](Node& node) {
    const auto& g = node.grad.data;
    if (double* ga = pgrad(node, 0)) {
      for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
    }
    if (double* gb = pgrad(node, 1)) {
      for (std::size_t i = na; i < g.size(); ++i) gb[i - na] += g[i];
    }
  });
}

Var silu(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data) v = v / (1.0 + std::exp(-v));
  return make(std::move(out), {x}, [](Node& node) {
    double* gx = pgrad(node, 0);
    if (!gx) return;
    const auto& xv = node.parents[0]->value.data;
    const auto& g = node.grad.data;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-xv[i]));
      gx[i] += g[i] * (s + xv[i] * s * (1.0 - s));
    }
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data) s += v;
  return make(Tensor({1}, s), {x}, [](Node& node) {
    double* gx = pgrad(node, 0);
    if (!gx) return;
    const double g = node.grad[0];
    const std::size_t n = node.parents[0]->value.size();
    for (std::size_t i = 0; i < n; ++i) gx[i] += g;
  });
}

Var sum_squares(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data) s += v * v;
  return make(Tensor({1}, s), {x}, [](Node& node) {
    double* gx = pgrad(node, 0);
    if (!gx) return;
    const double g = node.grad[0];
    const auto& xv = node.parents[0]->value.data;
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += 2.0 * g * xv[i];
  });
}

Var resize_bilinear(const Var& x, int out_h, int out_w) {
  check_rank(x, 2, "resize_bilinear");
  const int h = x.value().dim(0), w = x.value().dim(1);
  const auto ys = bilinear_taps(h, out_h);
  const auto xs = bilinear_taps(w, out_w);
  Tensor out({out_h, out_w});
  for (int y = 0; y < out_h; ++y)
    for (int xx = 0; xx < out_w; ++xx) {
      const auto& ty = ys[y];
      const auto& tx = xs[xx];
      const double* X = x.value().data.data();
      out[y * out_w + xx] = (1 - ty.frac) * ((1 - tx.frac) * X[ty.lo * w + tx.lo] + tx.frac * X[ty.lo * w + tx.hi]) +
                            ty.frac * ((1 - tx.frac) * X[ty.hi * w + tx.lo] + tx.frac * X[ty.hi * w + tx.hi]);
    }
  return make(std::move(out), {x}, [=](Node& node) {
    double* gx = pgrad(node, 0);
    if (!gx) return;
    for (int y = 0; y < out_h; ++y)
      for (int xx = 0; xx < out_w; ++xx) {
        const double g = node.grad[y * out_w + xx];
        const auto& ty = ys[y];
        const auto& tx = xs[xx];
        gx[ty.lo * w + tx.lo] += g * (1 - ty.frac) * (1 - tx.frac);
        gx[ty.lo * w + tx.hi] += g * (1 - ty.frac) * tx.frac;
        gx[ty.hi * w + tx.lo] += g * ty.frac * (1 - tx.frac);
        gx[ty.hi * w + tx.hi] += g * ty.frac * tx.frac;
      }
  });
}

}  // namespace agile::ag
