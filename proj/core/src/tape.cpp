#include "cpf/tape.hpp"

#include <cmath>
#include <string>

#include "cpf/errors.hpp"
#include "gemm.hpp"

namespace cpf {

const char* to_string(OpKind op) {
  switch (op) {
    case OpKind::kConstant: return "constant";
    case OpKind::kParameter: return "parameter";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kConcatLastDim: return "concat-lastdim";
    case OpKind::kSoftmaxLastDim: return "softmax-lastdim";
    case OpKind::kScale: return "scale";
    case OpKind::kCrossEntropy: return "cross-entropy";
    case OpKind::kSelectRows: return "select-row";
  }
  return "unknown";
}

Var Tape::push(Node n) {
  if (!n.requires_grad) {
    // Nothing upstream is differentiable: keep the value only.
    Node c;
    c.op = OpKind::kConstant;
    c.value = std::move(n.value);
    nodes_.push_back(std::move(c));
  } else {
    nodes_.push_back(std::move(n));
  }
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::parameter(Tensor& param) {
  Node n;
  n.op = OpKind::kParameter;
  n.requires_grad = true;
  n.value = param;
  n.value.drop_grad();
  n.param = &param;
  return push(std::move(n));
}

Var Tape::matmul(Var a, Var b, kernels::Transpose tb) {
  Node n;
  n.op = OpKind::kMatmul;
  n.value = kernels::matmul(value(a), value(b), tb);
  n.inputs[0] = a.id;
  n.inputs[1] = b.id;
  n.transpose = tb;
  n.requires_grad = requires_grad(a) || requires_grad(b);
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  Node n;
  n.op = OpKind::kAdd;
  n.value = kernels::add(value(a), value(b));
  n.inputs[0] = a.id;
  n.inputs[1] = b.id;
  n.requires_grad = requires_grad(a) || requires_grad(b);
  return push(std::move(n));
}

Var Tape::concat_lastdim(std::span<const Var> parts) {
  std::vector<Tensor> values;
  values.reserve(parts.size());
  Node n;
  n.op = OpKind::kConcatLastDim;
  for (Var p : parts) {
    values.push_back(value(p));
    n.extra_inputs.push_back(p.id);
    n.requires_grad = n.requires_grad || requires_grad(p);
  }
  n.value = kernels::concat_lastdim(values);
  return push(std::move(n));
}

Var Tape::softmax_lastdim(Var x) {
  Node n;
  n.op = OpKind::kSoftmaxLastDim;
  n.value = kernels::softmax_lastdim(value(x));
  n.inputs[0] = x.id;
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

Var Tape::scale(Var x, double factor) {
  Node n;
  n.op = OpKind::kScale;
  n.value = kernels::scale(value(x), factor);
  n.inputs[0] = x.id;
  n.factor = factor;
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

Var Tape::cross_entropy(Var logits, std::size_t label, double temperature) {
  const Tensor& z = value(logits);
  const std::vector<double> logp = kernels::log_softmax(z.data(), temperature);
  if (label >= logp.size()) {
    throw IndexError("cross_entropy label " + std::to_string(label) + " out of range for " +
                     std::to_string(logp.size()) + " classes");
  }
  Node n;
  n.op = OpKind::kCrossEntropy;
  const double loss = -logp[label];
  n.value = Tensor({1}, {loss < 0.0 ? 0.0 : loss});
  n.inputs[0] = logits.id;
  n.label = label;
  n.factor = temperature;
  n.requires_grad = requires_grad(logits);
  if (n.requires_grad) {
    n.saved.resize(logp.size());
    for (std::size_t i = 0; i < logp.size(); ++i) n.saved[i] = std::exp(logp[i]);
  }
  return push(std::move(n));
}

Var Tape::select_rows(Var x, std::vector<std::size_t> rows) {
  Node n;
  n.op = OpKind::kSelectRows;
  n.value = kernels::select_rows(value(x), rows);
  n.inputs[0] = x.id;
  n.rows = std::move(rows);
  n.requires_grad = requires_grad(x);
  return push(std::move(n));
}

std::vector<double>& Tape::grad_of(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  const Node& root = node(loss);
  if (root.value.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        to_string(root.value.shape()));
  }
  if (root.requires_grad) {
    grad_of(loss.id)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      backward_node(n);
    }
  }
  nodes_.clear();
}

void Tape::backward_node(Node& n) {
  const std::vector<double>& g = n.grad;
  switch (n.op) {
    case OpKind::kConstant:
      break;
    case OpKind::kParameter:
      n.param->accumulate_grad(g);
      break;
    case OpKind::kMatmul: {
      const Node& a = nodes_[n.inputs[0]];
      const Node& b = nodes_[n.inputs[1]];
      const std::size_t m = a.value.rows();
      const std::size_t k = a.value.cols();
      const bool trans = n.transpose == kernels::Transpose::kYes;
      const std::size_t cols = n.value.cols();
      const auto ad = a.value.data();
      const auto bd = b.value.data();
      const double* gd = g.data();
      if (a.requires_grad) {
        auto& ga = grad_of(n.inputs[0]);
        if (trans) {
          // dA = G B, B is cols x k
          detail::gemm_nn(gd, bd.data(), ga.data(), m, cols, k);
        } else {
          // dA = G B^T
          detail::gemm_nt(gd, bd.data(), ga.data(), m, cols, k);
        }
      }
      if (nodes_[n.inputs[1]].requires_grad) {
        auto& gb = grad_of(n.inputs[1]);
        if (trans) {
          // dB = G^T A, B is cols x k
          detail::gemm_tn(gd, ad.data(), gb.data(), m, cols, k);
        } else {
          // dB = A^T G, B is k x cols
          detail::gemm_tn(ad.data(), gd, gb.data(), m, k, cols);
        }
      }
      break;
    }
    case OpKind::kAdd: {
      if (nodes_[n.inputs[0]].requires_grad) {
        auto& ga = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (nodes_[n.inputs[1]].requires_grad) {
        auto& gb = grad_of(n.inputs[1]);
        const std::size_t bsize = gb.size();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i % bsize] += g[i];
      }
      break;
    }
    case OpKind::kConcatLastDim: {
      const std::size_t total = n.value.cols();
      const std::size_t rows = n.value.rows();
      std::size_t offset = 0;
      for (std::uint32_t id : n.extra_inputs) {
        const std::size_t w = nodes_[id].value.cols();
        if (nodes_[id].requires_grad) {
          auto& gp = grad_of(id);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < w; ++c) gp[r * w + c] += g[r * total + offset + c];
          }
        }
        offset += w;
      }
      break;
    }
    case OpKind::kSoftmaxLastDim: {
      auto& gx = grad_of(n.inputs[0]);
      const auto y = n.value.data();
      const std::size_t cols = n.value.cols();
      for (std::size_t r = 0; r < n.value.rows(); ++r) {
        const std::size_t base = r * cols;
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += g[base + c] * y[base + c];
        if (options_.inject_softmax_fault) dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) gx[base + c] += y[base + c] * (g[base + c] - dot);
      }
      break;
    }
    case OpKind::kScale: {
      auto& gx = grad_of(n.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += n.factor * g[i];
      break;
    }
    case OpKind::kCrossEntropy: {
      auto& gz = grad_of(n.inputs[0]);
      const double upstream = g[0] / n.factor;
      for (std::size_t i = 0; i < n.saved.size(); ++i) {
        gz[i] += upstream * (n.saved[i] - (i == n.label ? 1.0 : 0.0));
      }
      break;
    }
    case OpKind::kSelectRows: {
      auto& gx = grad_of(n.inputs[0]);
      const std::size_t cols = n.value.cols();
      for (std::size_t i = 0; i < n.rows.size(); ++i) {
        for (std::size_t c = 0; c < cols; ++c) gx[n.rows[i] * cols + c] += g[i * cols + c];
      }
      break;
    }
  }
}

}  // namespace cpf
