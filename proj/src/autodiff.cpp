#include "mua/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace mua::nn {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapC = Eigen::Map<const MatRM>;

constexpr double kNormGuard = 1e-12;

Value make_node(Tensor val, std::vector<Value> parents, std::function<void(Node&)> fn) {
  auto n = std::make_shared<Node>();
  n->val = std::move(val);
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  if (rg) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backprop = std::move(fn);
  }
  return n;
}

void accumulate(const Value& p, const Tensor& g) {
  if (!p->requires_grad) return;
  p->ensure_grad();
  double* dst = p->grad.data();
  const double* src = g.data();
  const std::size_t n = g.numel();
  for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
}

void check_same_shape(const Value& a, const Value& b, const char* op) {
  if (!a->val.same_shape(b->val))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a->val.shape()) + " vs " + shape_str(b->val.shape()));
}

// col is {Cin*kh*kw, Ho*Wo}, row-major.
void im2col(const double* src, int C, int H, int W, int kh, int kw, int stride, int pad,
            int Ho, int Wo, double* col) {
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        double* row = col + (static_cast<std::size_t>(c) * kh * kw + ki * kw + kj) *
                                (static_cast<std::size_t>(Ho) * Wo);
        for (int oh = 0; oh < Ho; ++oh) {
          int ih = oh * stride - pad + ki;
          double* out = row + static_cast<std::size_t>(oh) * Wo;
          if (ih < 0 || ih >= H) {
            std::fill(out, out + Wo, 0.0);
            continue;
          }
          const double* in = src + (static_cast<std::size_t>(c) * H + ih) * W;
          for (int ow = 0; ow < Wo; ++ow) {
            int iw = ow * stride - pad + kj;
            out[ow] = (iw >= 0 && iw < W) ? in[iw] : 0.0;
          }
        }
      }
    }
  }
}

// scatter-add of col grads back onto the image
void col2im(const double* col, int C, int H, int W, int kh, int kw, int stride, int pad,
            int Ho, int Wo, double* dst) {
  for (int c = 0; c < C; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const double* row = col + (static_cast<std::size_t>(c) * kh * kw + ki * kw + kj) *
                                      (static_cast<std::size_t>(Ho) * Wo);
        for (int oh = 0; oh < Ho; ++oh) {
          int ih = oh * stride - pad + ki;
          if (ih < 0 || ih >= H) continue;
          const double* in = row + static_cast<std::size_t>(oh) * Wo;
          double* out = dst + (static_cast<std::size_t>(c) * H + ih) * W;
          for (int ow = 0; ow < Wo; ++ow) {
            int iw = ow * stride - pad + kj;
            if (iw >= 0 && iw < W) out[iw] += in[ow];
          }
        }
      }
    }
  }
}

Value unary_elementwise(const Value& a, std::function<double(double)> f,
                        std::function<double(double, double)> dfdx_from_xy) {
  Tensor out(a->val.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = f(a->val[i]);
  Tensor saved = out;
  return make_node(std::move(out), {a}, [a, saved, dfdx_from_xy](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (std::size_t i = 0; i < n.grad.numel(); ++i)
      a->grad[i] += n.grad[i] * dfdx_from_xy(a->val[i], saved[i]);
  });
}

}  // namespace

Value constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->val = std::move(t);
  return n;
}

Value variable(Tensor t) {
  auto n = std::make_shared<Node>();
  n->val = std::move(t);
  n->requires_grad = true;
  return n;
}

Value detach(const Value& v) { return constant(v->val); }

void backward(const Value& root) {
  if (root->val.numel() != 1)
    throw std::invalid_argument("backward: root must be a scalar");
  if (!root->requires_grad) return;

  // iterative post-order DFS
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop && n->grad.numel() != 0) n->backprop(*n);
  }
}

Value add(const Value& a, const Value& b) {
  check_same_shape(a, b, "add");
  Tensor out(a->val.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->val[i] + b->val[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    accumulate(a, n.grad);
    accumulate(b, n.grad);
  });
}

Value sub(const Value& a, const Value& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a->val.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->val[i] - b->val[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    accumulate(a, n.grad);
    if (!b->requires_grad) return;
    b->ensure_grad();
    for (std::size_t i = 0; i < n.grad.numel(); ++i) b->grad[i] -= n.grad[i];
  });
}

Value mul(const Value& a, const Value& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a->val.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->val[i] * b->val[i];
  return make_node(std::move(out), {a, b}, [a, b](Node& n) {
    if (a->requires_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < n.grad.numel(); ++i) a->grad[i] += n.grad[i] * b->val[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < n.grad.numel(); ++i) b->grad[i] += n.grad[i] * a->val[i];
    }
  });
}

Value neg(const Value& a) { return scale(a, -1.0); }

Value scale(const Value& a, double s) {
  Tensor out(a->val.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = s * a->val[i];
  return make_node(std::move(out), {a}, [a, s](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    for (std::size_t i = 0; i < n.grad.numel(); ++i) a->grad[i] += s * n.grad[i];
  });
}

Value add_scalar(const Value& a, double s) {
  Tensor out(a->val.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a->val[i] + s;
  return make_node(std::move(out), {a}, [a](Node& n) { accumulate(a, n.grad); });
}

Value leaky_relu(const Value& a, double slope) {
  return unary_elementwise(
      a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Value tanh_(const Value& a) {
  return unary_elementwise(a, [](double x) { return std::tanh(x); },
                           [](double, double y) { return 1.0 - y * y; });
}

Value sigmoid_(const Value& a) {
  return unary_elementwise(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                           [](double, double y) { return y * (1.0 - y); });
}

Value clamp_(const Value& a, double lo, double hi) {
  return unary_elementwise(
      a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Value log_(const Value& a) {
  return unary_elementwise(a, [](double x) { return std::log(x); },
                           [](double x, double) { return 1.0 / x; });
}

Value conv2d(const Value& x, const Value& w, const Value& b, int stride, int pad) {
  const auto& xs = x->val.shape();
  const auto& ws = w->val.shape();
  if (xs.size() != 4 || ws.size() != 4)
    throw std::invalid_argument("conv2d: expects 4-d input and weight");
  if (xs[1] != ws[1])
    throw std::invalid_argument("conv2d: channel mismatch " + shape_str(xs) + " vs " +
                                shape_str(ws));
  const int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const int Cout = ws[0], kh = ws[2], kw = ws[3];
  if (b->val.rank() != 1 || b->val.dim(0) != Cout)
    throw std::invalid_argument("conv2d: bias shape mismatch");
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  if (Ho <= 0 || Wo <= 0) throw std::invalid_argument("conv2d: empty output");
  const int K = C * kh * kw;
  const std::size_t plane = static_cast<std::size_t>(Ho) * Wo;

  Tensor out({N, Cout, Ho, Wo});
  std::vector<double> col(static_cast<std::size_t>(K) * plane);
  MapC wm(w->val.data(), Cout, K);
  for (int n = 0; n < N; ++n) {
    im2col(x->val.data() + x->val.idx4(n, 0, 0, 0), C, H, W, kh, kw, stride, pad, Ho, Wo,
           col.data());
    MapC cm(col.data(), K, static_cast<int>(plane));
    MapM om(out.data() + out.idx4(n, 0, 0, 0), Cout, static_cast<int>(plane));
    om.noalias() = wm * cm;
    for (int co = 0; co < Cout; ++co) om.row(co).array() += b->val[static_cast<std::size_t>(co)];
  }

  return make_node(std::move(out), {x, w, b},
                   [x, w, b, N, C, H, W, Cout, kh, kw, stride, pad, Ho, Wo, K, plane](Node& n) {
    std::vector<double> col(static_cast<std::size_t>(K) * plane);
    std::vector<double> dcol(static_cast<std::size_t>(K) * plane);
    MapC wm(w->val.data(), Cout, K);
    const bool need_dw = w->requires_grad;
    const bool need_dx = x->requires_grad;
    const bool need_db = b->requires_grad;
    if (need_dw) w->ensure_grad();
    if (need_dx) x->ensure_grad();
    if (need_db) b->ensure_grad();
    for (int s = 0; s < N; ++s) {
      MapC gm(n.grad.data() + n.grad.idx4(s, 0, 0, 0), Cout, static_cast<int>(plane));
      if (need_dw || need_db) {
        if (need_dw) {
          im2col(x->val.data() + x->val.idx4(s, 0, 0, 0), C, H, W, kh, kw, stride, pad, Ho, Wo,
                 col.data());
          MapC cm(col.data(), K, static_cast<int>(plane));
          MapM dwm(w->grad.data(), Cout, K);
          dwm.noalias() += gm * cm.transpose();
        }
        if (need_db) {
          // fixed-order scalar sum; Eigen redux order depends on pointer alignment
          const double* gp = n.grad.data() + n.grad.idx4(s, 0, 0, 0);
          for (int co = 0; co < Cout; ++co) {
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) acc += gp[co * plane + i];
            b->grad[static_cast<std::size_t>(co)] += acc;
          }
        }
      }
      if (need_dx) {
        MapM dcm(dcol.data(), K, static_cast<int>(plane));
        dcm.noalias() = wm.transpose() * gm;
        col2im(dcol.data(), C, H, W, kh, kw, stride, pad, Ho, Wo,
               x->grad.data() + x->grad.idx4(s, 0, 0, 0));
      }
    }
  });
}

Value avg_pool2(const Value& x) {
  const auto& xs = x->val.shape();
  if (xs.size() != 4 || xs[2] % 2 != 0 || xs[3] % 2 != 0)
    throw std::invalid_argument("avg_pool2: expects 4-d input with even H,W");
  const int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  Tensor out({N, C, H / 2, W / 2});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < H / 2; ++h)
        for (int w = 0; w < W / 2; ++w)
          out[out.idx4(n, c, h, w)] =
              0.25 * (x->val[x->val.idx4(n, c, 2 * h, 2 * w)] +
                      x->val[x->val.idx4(n, c, 2 * h, 2 * w + 1)] +
                      x->val[x->val.idx4(n, c, 2 * h + 1, 2 * w)] +
                      x->val[x->val.idx4(n, c, 2 * h + 1, 2 * w + 1)]);
  return make_node(std::move(out), {x}, [x, N, C, H, W](Node& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int s = 0; s < N; ++s)
      for (int c = 0; c < C; ++c)
        for (int h = 0; h < H / 2; ++h)
          for (int w = 0; w < W / 2; ++w) {
            double g = 0.25 * n.grad[n.grad.idx4(s, c, h, w)];
            x->grad[x->grad.idx4(s, c, 2 * h, 2 * w)] += g;
            x->grad[x->grad.idx4(s, c, 2 * h, 2 * w + 1)] += g;
            x->grad[x->grad.idx4(s, c, 2 * h + 1, 2 * w)] += g;
            x->grad[x->grad.idx4(s, c, 2 * h + 1, 2 * w + 1)] += g;
          }
  });
}

Value upsample2(const Value& x) {
  const auto& xs = x->val.shape();
  if (xs.size() != 4) throw std::invalid_argument("upsample2: expects 4-d input");
  const int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  Tensor out({N, C, 2 * H, 2 * W});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int h = 0; h < 2 * H; ++h)
        for (int w = 0; w < 2 * W; ++w)
          out[out.idx4(n, c, h, w)] = x->val[x->val.idx4(n, c, h / 2, w / 2)];
  return make_node(std::move(out), {x}, [x, N, C, H, W](Node& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int s = 0; s < N; ++s)
      for (int c = 0; c < C; ++c)
        for (int h = 0; h < 2 * H; ++h)
          for (int w = 0; w < 2 * W; ++w)
            x->grad[x->grad.idx4(s, c, h / 2, w / 2)] += n.grad[n.grad.idx4(s, c, h, w)];
  });
}

Value global_avg_pool(const Value& x) {
  const auto& xs = x->val.shape();
  if (xs.size() != 4) throw std::invalid_argument("global_avg_pool: expects 4-d input");
  const int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const double inv = 1.0 / (static_cast<double>(H) * W);
  Tensor out({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      double s = 0.0;
      const double* p = x->val.data() + x->val.idx4(n, c, 0, 0);
      for (int i = 0; i < H * W; ++i) s += p[i];
      out[out.idx2(n, c)] = s * inv;
    }
  return make_node(std::move(out), {x}, [x, N, C, H, W, inv](Node& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int s = 0; s < N; ++s)
      for (int c = 0; c < C; ++c) {
        double g = n.grad[n.grad.idx2(s, c)] * inv;
        double* p = x->grad.data() + x->grad.idx4(s, c, 0, 0);
        for (int i = 0; i < H * W; ++i) p[i] += g;
      }
  });
}

Value instance_norm(const Value& x, const Value& gamma, const Value& beta, double eps) {
  const auto& xs = x->val.shape();
  if (xs.size() != 4) throw std::invalid_argument("instance_norm: expects 4-d input");
  const int N = xs[0], C = xs[1], H = xs[2], W = xs[3];
  const int M = H * W;
  if (gamma->val.rank() != 1 || gamma->val.dim(0) != C || beta->val.rank() != 1 ||
      beta->val.dim(0) != C)
    throw std::invalid_argument("instance_norm: affine parameter shape mismatch");

  Tensor out(xs);
  Tensor mean({N, C}), istd({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double* p = x->val.data() + x->val.idx4(n, c, 0, 0);
      double mu = 0.0;
      for (int i = 0; i < M; ++i) mu += p[i];
      mu /= M;
      double var = 0.0;
      for (int i = 0; i < M; ++i) var += (p[i] - mu) * (p[i] - mu);
      var /= M;
      double is = 1.0 / std::sqrt(var + eps);
      mean[mean.idx2(n, c)] = mu;
      istd[istd.idx2(n, c)] = is;
      double g = gamma->val[static_cast<std::size_t>(c)];
      double bta = beta->val[static_cast<std::size_t>(c)];
      double* o = out.data() + out.idx4(n, c, 0, 0);
      for (int i = 0; i < M; ++i) o[i] = g * (p[i] - mu) * is + bta;
    }

  return make_node(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, mean, istd, N, C, M](Node& n) {
    const bool need_dx = x->requires_grad;
    const bool need_dg = gamma->requires_grad;
    const bool need_db = beta->requires_grad;
    if (need_dx) x->ensure_grad();
    if (need_dg) gamma->ensure_grad();
    if (need_db) beta->ensure_grad();
    for (int s = 0; s < N; ++s)
      for (int c = 0; c < C; ++c) {
        const double mu = mean[mean.idx2(s, c)];
        const double is = istd[istd.idx2(s, c)];
        const double* p = x->val.data() + x->val.idx4(s, c, 0, 0);
        const double* dy = n.grad.data() + n.grad.idx4(s, c, 0, 0);
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int i = 0; i < M; ++i) {
          double xh = (p[i] - mu) * is;
          sum_dy += dy[i];
          sum_dy_xhat += dy[i] * xh;
        }
        if (need_dg) gamma->grad[static_cast<std::size_t>(c)] += sum_dy_xhat;
        if (need_db) beta->grad[static_cast<std::size_t>(c)] += sum_dy;
        if (need_dx) {
          const double g = gamma->val[static_cast<std::size_t>(c)];
          double* dx = x->grad.data() + x->grad.idx4(s, c, 0, 0);
          const double k1 = sum_dy / M;
          const double k2 = sum_dy_xhat / M;
          for (int i = 0; i < M; ++i) {
            double xh = (p[i] - mu) * is;
            dx[i] += g * is * (dy[i] - k1 - xh * k2);
          }
        }
      }
  });
}

Value concat_c(const Value& a, const Value& b) {
  const auto& as = a->val.shape();
  const auto& bs = b->val.shape();
  if (as.size() != bs.size() || (as.size() != 2 && as.size() != 4))
    throw std::invalid_argument("concat_c: rank mismatch or unsupported rank");
  for (std::size_t i = 0; i < as.size(); ++i)
    if (i != 1 && as[i] != bs[i]) throw std::invalid_argument("concat_c: non-axis-1 dims differ");

  std::vector<int> os = as;
  os[1] = as[1] + bs[1];
  Tensor out(os);
  const int N = as[0];
  const std::size_t inner =
      as.size() == 4 ? static_cast<std::size_t>(as[2]) * as[3] : 1;
  const std::size_t arow = static_cast<std::size_t>(as[1]) * inner;
  const std::size_t brow = static_cast<std::size_t>(bs[1]) * inner;
  for (int n = 0; n < N; ++n) {
    std::copy_n(a->val.data() + n * arow, arow, out.data() + n * (arow + brow));
    std::copy_n(b->val.data() + n * brow, brow, out.data() + n * (arow + brow) + arow);
  }
  return make_node(std::move(out), {a, b}, [a, b, N, arow, brow](Node& n) {
    if (a->requires_grad) {
      a->ensure_grad();
      for (int s = 0; s < N; ++s) {
        const double* g = n.grad.data() + s * (arow + brow);
        double* dst = a->grad.data() + s * arow;
        for (std::size_t i = 0; i < arow; ++i) dst[i] += g[i];
      }
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (int s = 0; s < N; ++s) {
        const double* g = n.grad.data() + s * (arow + brow) + arow;
        double* dst = b->grad.data() + s * brow;
        for (std::size_t i = 0; i < brow; ++i) dst[i] += g[i];
      }
    }
  });
}

Value linear(const Value& x, const Value& w, const Value& b) {
  const auto& xs = x->val.shape();
  const auto& ws = w->val.shape();
  if (xs.size() != 2 || ws.size() != 2)
    throw std::invalid_argument("linear: expects 2-d input and weight");
  if (xs[1] != ws[1])
    throw std::invalid_argument("linear: dimension mismatch " + shape_str(xs) + " vs " +
                                shape_str(ws));
  const int N = xs[0], D = xs[1], O = ws[0];
  if (b->val.rank() != 1 || b->val.dim(0) != O)
    throw std::invalid_argument("linear: bias shape mismatch");
  Tensor out({N, O});
  {
    MapC xm(x->val.data(), N, D);
    MapC wm(w->val.data(), O, D);
    MapM om(out.data(), N, O);
    om.noalias() = xm * wm.transpose();
    for (int n = 0; n < N; ++n)
      for (int o = 0; o < O; ++o) out[out.idx2(n, o)] += b->val[static_cast<std::size_t>(o)];
  }
  return make_node(std::move(out), {x, w, b}, [x, w, b, N, D, O](Node& n) {
    MapC gm(n.grad.data(), N, O);
    if (w->requires_grad) {
      w->ensure_grad();
      MapC xm(x->val.data(), N, D);
      MapM dwm(w->grad.data(), O, D);
      dwm.noalias() += gm.transpose() * xm;
    }
    if (x->requires_grad) {
      x->ensure_grad();
      MapC wm(w->val.data(), O, D);
      MapM dxm(x->grad.data(), N, D);
      dxm.noalias() += gm * wm;
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (int s = 0; s < N; ++s)
        for (int o = 0; o < O; ++o) b->grad[static_cast<std::size_t>(o)] += gm(s, o);
    }
  });
}

Value l2_normalize_rows(const Value& x) {
  const auto& xs = x->val.shape();
  if (xs.size() != 2) throw std::invalid_argument("l2_normalize_rows: expects 2-d input");
  const int N = xs[0], D = xs[1];
  Tensor out(xs);
  Tensor norms({N});
  int guarded = 0;
  for (int n = 0; n < N; ++n) {
    const double* p = x->val.data() + x->val.idx2(n, 0);
    double s = 0.0;
    for (int d = 0; d < D; ++d) s += p[d] * p[d];
    double nr = std::sqrt(s);
    norms[static_cast<std::size_t>(n)] = nr;
    double* o = out.data() + out.idx2(n, 0);
    if (nr < kNormGuard) {
      ++guarded;
      std::fill(o, o + D, 0.0);
    } else {
      for (int d = 0; d < D; ++d) o[d] = p[d] / nr;
    }
  }
  Tensor saved = out;
  auto node = make_node(std::move(out), {x}, [x, saved, norms, N, D](Node& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int s = 0; s < N; ++s) {
      double nr = norms[static_cast<std::size_t>(s)];
      if (nr < kNormGuard) continue;  // guarded rows pass no gradient
      const double* u = saved.data() + saved.idx2(s, 0);
      const double* g = n.grad.data() + n.grad.idx2(s, 0);
      double dot = 0.0;
      for (int d = 0; d < D; ++d) dot += u[d] * g[d];
      double* dx = x->grad.data() + x->grad.idx2(s, 0);
      for (int d = 0; d < D; ++d) dx[d] += (g[d] - u[d] * dot) / nr;
    }
  });
  node->aux_i = guarded;
  return node;
}

Value rowwise_distance(const Value& a, const Value& b) {
  check_same_shape(a, b, "rowwise_distance");
  const auto& as = a->val.shape();
  if (as.size() != 2) throw std::invalid_argument("rowwise_distance: expects 2-d inputs");
  const int N = as[0], D = as[1];
  Tensor out({N});
  for (int n = 0; n < N; ++n) {
    double s = 0.0;
    for (int d = 0; d < D; ++d) {
      double diff = a->val[a->val.idx2(n, d)] - b->val[b->val.idx2(n, d)];
      s += diff * diff;
    }
    out[static_cast<std::size_t>(n)] = std::sqrt(s);
  }
  Tensor saved = out;
  return make_node(std::move(out), {a, b}, [a, b, saved, N, D](Node& n) {
    const bool need_da = a->requires_grad;
    const bool need_db = b->requires_grad;
    if (need_da) a->ensure_grad();
    if (need_db) b->ensure_grad();
    for (int s = 0; s < N; ++s) {
      double dist = std::max(saved[static_cast<std::size_t>(s)], kNormGuard);
      double g = n.grad[static_cast<std::size_t>(s)] / dist;
      for (int d = 0; d < D; ++d) {
        double diff = a->val[a->val.idx2(s, d)] - b->val[b->val.idx2(s, d)];
        if (need_da) a->grad[a->grad.idx2(s, d)] += g * diff;
        if (need_db) b->grad[b->grad.idx2(s, d)] -= g * diff;
      }
    }
  });
}

Value mean_all(const Value& a) {
  const double inv = 1.0 / static_cast<double>(a->val.numel());
  double s = 0.0;
  for (std::size_t i = 0; i < a->val.numel(); ++i) s += a->val[i];
  return make_node(Tensor::scalar(s * inv), {a}, [a, inv](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    double g = n.grad[0] * inv;
    for (std::size_t i = 0; i < a->grad.numel(); ++i) a->grad[i] += g;
  });
}

Value sum_all(const Value& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a->val.numel(); ++i) s += a->val[i];
  return make_node(Tensor::scalar(s), {a}, [a](Node& n) {
    if (!a->requires_grad) return;
    a->ensure_grad();
    double g = n.grad[0];
    for (std::size_t i = 0; i < a->grad.numel(); ++i) a->grad[i] += g;
  });
}

Value softmax_cross_entropy(const Value& logits, const std::vector<int>& labels) {
  const auto& ls = logits->val.shape();
  if (ls.size() != 2) throw std::invalid_argument("softmax_cross_entropy: expects 2-d logits");
  const int N = ls[0], K = ls[1];
  if (static_cast<int>(labels.size()) != N)
    throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  Tensor probs({N, K});
  double loss = 0.0;
  for (int n = 0; n < N; ++n) {
    const double* p = logits->val.data() + logits->val.idx2(n, 0);
    double mx = p[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, p[k]);
    double z = 0.0;
    for (int k = 0; k < K; ++k) z += std::exp(p[k] - mx);
    double logz = std::log(z) + mx;
    for (int k = 0; k < K; ++k) probs[probs.idx2(n, k)] = std::exp(p[k] - logz);
    loss -= p[labels[static_cast<std::size_t>(n)]] - logz;
  }
  loss /= N;
  return make_node(Tensor::scalar(loss), {logits}, [logits, probs, labels, N, K](Node& n) {
    if (!logits->requires_grad) return;
    logits->ensure_grad();
    double g = n.grad[0] / N;
    for (int s = 0; s < N; ++s)
      for (int k = 0; k < K; ++k) {
        double d = probs[probs.idx2(s, k)] - (labels[static_cast<std::size_t>(s)] == k ? 1.0 : 0.0);
        logits->grad[logits->grad.idx2(s, k)] += g * d;
      }
  });
}

Value replicate_channels(const Value& x, int times) {
  const auto& xs = x->val.shape();
  if (xs.size() != 4 || xs[1] != 1)
    throw std::invalid_argument("replicate_channels: expects {N,1,H,W}");
  const int N = xs[0], H = xs[2], W = xs[3];
  Tensor out({N, times, H, W});
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < times; ++c)
      std::copy_n(x->val.data() + n * plane, plane, out.data() + (n * times + c) * plane);
  return make_node(std::move(out), {x}, [x, N, times, plane](Node& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    for (int s = 0; s < N; ++s)
      for (int c = 0; c < times; ++c) {
        const double* g = n.grad.data() + (s * times + c) * plane;
        double* dst = x->grad.data() + s * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] += g[i];
      }
  });
}

Value luminance(const Value& x) {
  const auto& xs = x->val.shape();
  if (xs.size() != 4 || xs[1] != 3)
    throw std::invalid_argument("luminance: expects {N,3,H,W}");
  const int N = xs[0], H = xs[2], W = xs[3];
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const double wc[3] = {kLuminanceR, kLuminanceG, kLuminanceB};
  Tensor out({N, 1, H, W});
  for (int n = 0; n < N; ++n) {
    double* o = out.data() + n * plane;
    std::fill(o, o + plane, 0.0);
    for (int c = 0; c < 3; ++c) {
      const double* p = x->val.data() + (n * 3 + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) o[i] += wc[c] * p[i];
    }
  }
  return make_node(std::move(out), {x}, [x, N, plane, wc0 = wc[0], wc1 = wc[1],
                                         wc2 = wc[2]](Node& n) {
    if (!x->requires_grad) return;
    x->ensure_grad();
    const double wc[3] = {wc0, wc1, wc2};
    for (int s = 0; s < N; ++s) {
      const double* g = n.grad.data() + s * plane;
      for (int c = 0; c < 3; ++c) {
        double* dst = x->grad.data() + (s * 3 + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] += wc[c] * g[i];
      }
    }
  });
}

std::uint64_t ParamStore::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, v] : items) {
    for (char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    h ^= v->val.checksum();
    h *= 0x100000001b3ULL;
  }
  return h;
}

void Adam::step(const std::vector<std::pair<std::string, Value>>& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (const auto& [name, p] : params) {
    if (p->grad.numel() == 0) continue;  // parameter untouched by this graph
    auto& st = state_[p.get()];
    if (st.m.numel() == 0) {
      st.m = Tensor(p->val.shape());
      st.v = Tensor(p->val.shape());
    }
    for (std::size_t i = 0; i < p->val.numel(); ++i) {
      double g = p->grad[i];
      st.m[i] = beta1_ * st.m[i] + (1.0 - beta1_) * g;
      st.v[i] = beta2_ * st.v[i] + (1.0 - beta2_) * g * g;
      double mhat = st.m[i] / bc1;
      double vhat = st.v[i] / bc2;
      p->val[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void Adam::zero_grad(const std::vector<std::pair<std::string, Value>>& params) {
  for (const auto& [name, p] : params)
    if (p->grad.numel() != 0) p->grad.fill(0.0);
}

}  // namespace mua::nn
