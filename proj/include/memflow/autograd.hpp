#pragma once

#include "memflow/types.hpp"

#include <atomic>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <utility>

namespace memflow {

/// Named learnable tensors of a model. Names are dot-separated, e.g.
/// "fnet.stage1.0.conv1.w"; the first component is the owning module.
template <typename T>
class ParamSet {
 public:
  Mat<T>& add(const std::string& name, Mat<T> value) {
    auto [it, inserted] = tensors_.insert_or_assign(name, std::move(value));
    return it->second;
  }
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const Mat<T>& at(const std::string& name) const;
  Mat<T>& at(const std::string& name);

  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  std::size_t size() const { return tensors_.size(); }
  Eigen::Index numel() const {
    Eigen::Index n = 0;
    for (const auto& [name, m] : tensors_) n += m.size();
    return n;
  }

  template <typename U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (const auto& [name, m] : tensors_) out.add(name, m.template cast<U>());
    return out;
  }

 private:
  std::map<std::string, Mat<T>> tensors_;
};

template <typename T>
const Mat<T>& ParamSet<T>::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error(ErrorCode::InvalidConfig, "unknown parameter " + name);
  return it->second;
}

template <typename T>
Mat<T>& ParamSet<T>::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw Error(ErrorCode::InvalidConfig, "unknown parameter " + name);
  return it->second;
}

template <typename T>
class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Mat<T>& value() const { return tape->value(id); }
  int h() const { return tape->height(id); }
  int w() const { return tape->width(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const { return tape->requires_grad(id); }
};

/// Reverse-mode tape. Nodes are appended in topological order, so the
/// backward sweep is a single reverse pass. Spatial nodes carry (h, w) with
/// rows == h * w; plain matrices use h = rows, w = 1.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat<T>&)>;

  explicit Tape(const ParamSet<T>* params = nullptr, bool grad_enabled = true)
      : params_(params), grad_enabled_(grad_enabled), serial_(next_serial()) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  /// Process-unique id; distinguishes tapes that reuse an address.
  std::uint64_t serial() const { return serial_; }

  /// Parameters whose name starts with `prefix` become constants.
  void freeze(std::string prefix) { frozen_.push_back(std::move(prefix)); }

  Var<T> constant(Mat<T> value, int h, int w) { return push(std::move(value), h, w, false, {}); }
  Var<T> constant(Mat<T> value) {
    const int r = static_cast<int>(value.rows());
    return push(std::move(value), r, 1, false, {});
  }
  Var<T> input(Mat<T> value, int h, int w) { return push(std::move(value), h, w, grad_enabled_, {}); }

  /// Leaf bound to a named parameter; repeated lookups share one node so
  /// gradients from every use accumulate in one place.
  Var<T> param(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return Var<T>{this, it->second};
    if (params_ == nullptr) throw Error(ErrorCode::InvalidConfig, "tape has no parameter set");
    const Mat<T>& p = params_->at(name);
    Var<T> v = push(p, static_cast<int>(p.rows()), 1, grad_enabled_ && !is_frozen(name), {});
    bound_.emplace(name, v.id);
    return v;
  }

  /// Records an op result. The closure is kept only if some parent needs a
  /// gradient.
  Var<T> record(Mat<T> value, int h, int w, std::initializer_list<Var<T>> parents, Backward fn) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || requires_grad(p.id);
    return push(std::move(value), h, w, needs, needs ? std::move(fn) : Backward{});
  }
  Var<T> record(Mat<T> value, int h, int w, const std::vector<Var<T>>& parents, Backward fn) {
    bool needs = false;
    for (const auto& p : parents) needs = needs || requires_grad(p.id);
    return push(std::move(value), h, w, needs, needs ? std::move(fn) : Backward{});
  }

  const Mat<T>& value(int id) const { return nodes_[id].value; }
  int height(int id) const { return nodes_[id].h; }
  int width(int id) const { return nodes_[id].w; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }
  /// Id the next recorded node will receive.
  int next_id() const { return static_cast<int>(nodes_.size()); }

  template <typename Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) n.grad = Mat<T>::Zero(n.value.rows(), n.value.cols());
    n.grad += g;
  }
  /// Direct access for ops that scatter into a parent gradient.
  Mat<T>* grad_buffer(int id) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return nullptr;
    if (n.grad.size() == 0) n.grad = Mat<T>::Zero(n.value.rows(), n.value.cols());
    return &n.grad;
  }

  void backward(Var<T> root) {
    if (root.value().size() != 1) throw Error(ErrorCode::ShapeMismatch, "backward root must be a scalar");
    accumulate(root.id, Mat<T>::Ones(1, 1));
    for (int id = root.id; id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.fn || n.grad.size() == 0) continue;
      n.fn(*this, n.grad);
    }
  }

  /// Gradient of a node, zero if nothing flowed into it.
  Mat<T> grad(Var<T> v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.size() == 0) return Mat<T>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Gradients of every bound, trainable parameter.
  std::map<std::string, Mat<T>> param_grads() const {
    std::map<std::string, Mat<T>> out;
    for (const auto& [name, id] : bound_)
      if (nodes_[id].requires_grad) out.emplace(name, grad(Var<T>{const_cast<Tape*>(this), id}));
    return out;
  }

 private:
  struct Node {
    Mat<T> value;
    Mat<T> grad;
    int h = 0;
    int w = 0;
    bool requires_grad = false;
    Backward fn;
  };

  Var<T> push(Mat<T> value, int h, int w, bool requires_grad, Backward fn) {
    nodes_.push_back(Node{std::move(value), Mat<T>(), h, w, requires_grad, std::move(fn)});
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  bool is_frozen(const std::string& name) const {
    for (const auto& p : frozen_)
      if (name.compare(0, p.size(), p) == 0) return true;
    return false;
  }

  static std::uint64_t next_serial() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
  }

  const ParamSet<T>* params_;
  bool grad_enabled_;
  std::uint64_t serial_;
  std::deque<Node> nodes_;
  std::map<std::string, int> bound_;
  std::vector<std::string> frozen_;
};

}  // namespace memflow
