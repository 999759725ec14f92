#include "amnet/tape.h"

#include "amnet/error.h"

namespace amnet {

const Matrix& Var::value() const { return tape_->nodes_[id_].value; }

double Var::scalar() const {
  const Matrix& v = value();
  AMNET_REQUIRE(v.rows() == 1 && v.cols() == 1, "scalar(): variable is " + v.shape_string());
  return v[0];
}

bool Var::requires_grad() const { return tape_->nodes_[id_].requires_grad; }

Var Tape::constant(Matrix value) {
  if (!value.all_finite()) throw NumericError("constant: non-finite value");
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(Matrix& param) {
  auto it = params_.find(&param);
  if (it != params_.end()) return Var(this, it->second);
  if (!param.all_finite()) throw NumericError("parameter: non-finite weights");
  Node node;
  node.value = param;
  node.value.clear_grad();
  if (grad_enabled_) {
    node.param = &param;
    node.requires_grad = true;
  }
  nodes_.push_back(std::move(node));
  params_.emplace(&param, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::vector<Var> inputs, BackwardFn backward, double flops) {
  if (!value.all_finite()) throw NumericError("operation produced a non-finite value");
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    AMNET_REQUIRE(in.tape_ == this, "record: input belongs to a different tape");
    node.inputs.push_back(in.id_);
    node.requires_grad = node.requires_grad || nodes_[in.id_].requires_grad;
  }
  if (node.requires_grad) node.backward = std::move(backward);
  flops_ += flops;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::memo(const void* key, std::size_t tag, const std::function<Var()>& make) {
  auto it = memo_.find({key, tag});
  if (it != memo_.end()) return Var(this, it->second);
  Var v = make();
  memo_.emplace(std::make_pair(key, tag), v.id_);
  return v;
}

void Tape::backward(Var root) {
  AMNET_REQUIRE(root.tape_ == this, "backward: root belongs to a different tape");
  const Matrix& rv = nodes_[root.id_].value;
  AMNET_REQUIRE(rv.rows() == 1 && rv.cols() == 1,
                "backward: root must be 1x1, got " + rv.shape_string());
  for (Node& n : nodes_) n.grad = Matrix();
  if (!nodes_[root.id_].requires_grad) return;
  nodes_[root.id_].grad = Matrix(1, 1, 1.0);

  std::vector<Matrix*> grad_in;
  for (std::size_t i = root.id_ + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.grad.empty() || !node.requires_grad) continue;
    if (node.param != nullptr) {
      auto g = node.param->ensure_grad();
      auto src = node.grad.data();
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += src[k];
      continue;
    }
    if (!node.backward) continue;
    grad_in.assign(node.inputs.size(), nullptr);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      Node& in = nodes_[node.inputs[k]];
      if (!in.requires_grad) continue;
      if (in.grad.empty()) in.grad = Matrix(in.value.rows(), in.value.cols());
      grad_in[k] = &in.grad;
    }
    node.backward(node.grad, grad_in);
  }
}

}  // namespace amnet
