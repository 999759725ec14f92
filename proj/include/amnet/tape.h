#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <utility>
#include <vector>

#include "amnet/matrix.h"

namespace amnet {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid for the
// lifetime of the tape that produced it.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  // Scalar value of a 1x1 variable.
  double scalar() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  bool requires_grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Backward rule of a recorded operation. `grad_in[i]` is null when input i
// does not require a gradient; otherwise the rule adds its contribution.
using BackwardFn = std::function<void(const Matrix& grad_out, std::span<Matrix* const> grad_in)>;

// Ordered record of executed operations. Node ids increase in execution
// order, so reverse id order is a reverse topological order.
//
// One tape belongs to one thread. Parameter gradients are accumulated into
// the bound Matrix objects, so two tapes bound to the same parameters must
// not run backward concurrently.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  // Binds an external parameter. Repeated calls with the same matrix return
  // the same leaf. With gradients disabled the leaf is a constant.
  Var parameter(Matrix& param);

  Var record(Matrix value, std::vector<Var> inputs, BackwardFn backward, double flops = 0.0);

  // Returns the cached variable for (key, tag), creating it with `make` once.
  Var memo(const void* key, std::size_t tag, const std::function<Var()>& make);

  // Reverse-mode sweep from a 1x1 root. Parameter gradients accumulate.
  void backward(Var root);

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

  // FLOPs reported by recorded operations (see ops.h for the convention).
  double flops() const { return flops_; }
  void add_flops(double f) { flops_ += f; }
  void reset_flops() { flops_ = 0.0; }

 private:
  friend class Var;

  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Matrix* param = nullptr;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;
  std::unordered_map<const void*, std::size_t> params_;
  struct MemoKeyHash {
    std::size_t operator()(const std::pair<const void*, std::size_t>& k) const {
      return std::hash<const void*>()(k.first) ^ (k.second * 0x9e3779b97f4a7c15ULL);
    }
  };
  std::unordered_map<std::pair<const void*, std::size_t>, std::size_t, MemoKeyHash> memo_;
  bool grad_enabled_;
  double flops_ = 0.0;
};

}  // namespace amnet
