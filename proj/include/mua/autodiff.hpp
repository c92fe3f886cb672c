#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "mua/tensor.hpp"

namespace mua::nn {

// Reverse-mode autodiff over Tensor. Graphs are built define-by-run; a Node
// op whose inputs all have requires_grad=false is emitted as a plain constant
// (no parents, no closure), so inference paths cost no graph memory.
class Node {
 public:
  Tensor val;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents
  int aux_i = 0;  // op-specific bookkeeping (e.g. zero-guard row count)

  void ensure_grad() {
    if (grad.numel() == 0) grad = Tensor(val.shape());
  }
};

using Value = std::shared_ptr<Node>;

Value constant(Tensor t);
Value variable(Tensor t);  // leaf with requires_grad=true
Value detach(const Value& v);

// Runs reverse accumulation from a scalar root (shape {1}).
void backward(const Value& root);

// ---- elementwise / structural ops ----
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);  // hadamard
Value neg(const Value& a);
Value scale(const Value& a, double s);
Value add_scalar(const Value& a, double s);
Value leaky_relu(const Value& a, double slope);
Value tanh_(const Value& a);
Value sigmoid_(const Value& a);
Value clamp_(const Value& a, double lo, double hi);  // pass-through grad strictly inside
Value log_(const Value& a);

// ---- conv nets ----
// x {N,Cin,H,W}, w {Cout,Cin,kh,kw}, b {Cout}
Value conv2d(const Value& x, const Value& w, const Value& b, int stride, int pad);
Value avg_pool2(const Value& x);      // 2x2 stride 2, even dims required
Value upsample2(const Value& x);      // nearest x2
Value global_avg_pool(const Value& x);  // {N,C,H,W} -> {N,C}
Value instance_norm(const Value& x, const Value& gamma, const Value& beta, double eps = 1e-5);
Value concat_c(const Value& a, const Value& b);  // axis 1 for {N,C,H,W} or {N,D}

// ---- dense / features ----
Value linear(const Value& x, const Value& w, const Value& b);  // x {N,D}, w {O,D}, b {O}
// Rows with pre-normalization norm < 1e-12 come out as zero rows; the count of
// guarded rows is recorded in the result node's aux_i.
Value l2_normalize_rows(const Value& x);
Value rowwise_distance(const Value& a, const Value& b);  // {N,D},{N,D} -> {N}
Value mean_all(const Value& a);  // -> {1}
Value sum_all(const Value& a);   // -> {1}
Value softmax_cross_entropy(const Value& logits, const std::vector<int>& labels);  // -> {1}

// ---- channel adaptation (differentiable, used for cross-feeding) ----
Value replicate_channels(const Value& x, int times);            // {N,1,H,W} -> {N,times,H,W}
Value luminance(const Value& x);  // {N,3,H,W} -> {N,1,H,W}, weights 0.299/0.587/0.114

inline constexpr double kLuminanceR = 0.299;
inline constexpr double kLuminanceG = 0.587;
inline constexpr double kLuminanceB = 0.114;

// ---- parameters & optimization ----
struct ParamStore {
  std::vector<std::pair<std::string, Value>> items;

  Value add(const std::string& name, Tensor init) {
    auto v = variable(std::move(init));
    items.emplace_back(name, v);
    return v;
  }
  void append(const ParamStore& other, const std::string& prefix) {
    for (const auto& [n, v] : other.items) items.emplace_back(prefix + n, v);
  }
  void set_requires_grad(bool rg) {
    for (auto& [n, v] : items) v->requires_grad = rg;
  }
  std::uint64_t checksum() const;
  std::size_t count_scalars() const {
    std::size_t n = 0;
    for (const auto& [name, v] : items) n += v->val.numel();
    return n;
  }
};

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<std::pair<std::string, Value>>& params);
  static void zero_grad(const std::vector<std::pair<std::string, Value>>& params);

 private:
  struct State {
    Tensor m, v;
  };
  double lr_, beta1_, beta2_, eps_;
  long long t_ = 0;
  std::unordered_map<Node*, State> state_;
};

}  // namespace mua::nn
