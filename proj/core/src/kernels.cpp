#include "cpf/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cpf/errors.hpp"
#include "gemm.hpp"

namespace cpf::kernels {

namespace {

void require_finite(std::span<const double> values, const char* op) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input element");
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b, Transpose tb) {
  if (a.rank() > 2 || b.rank() > 2) {
    throw DimensionError("matmul expects rank <= 2 operands, got " + to_string(a.shape()) +
                         " and " + to_string(b.shape()));
  }
  const std::size_t m = a.rows();
  const std::size_t k = a.cols();
  const bool trans = tb == Transpose::kYes;
  const std::size_t bk = trans ? b.cols() : b.rows();
  const std::size_t n = trans ? b.rows() : b.cols();
  if (k != bk) {
    throw DimensionError("matmul inner dimensions disagree: " + to_string(a.shape()) +
                         (trans ? " x T" : " x ") + to_string(b.shape()));
  }
  Tensor c({m, n});
  const auto ad = a.data();
  const auto bd = b.data();
  auto cd = c.data();
  if (trans) {
    detail::gemm_nt(ad.data(), bd.data(), cd.data(), m, k, n);
  } else {
    detail::gemm_nn(ad.data(), bd.data(), cd.data(), m, k, n);
  }
  return c;
}

Tensor add(const Tensor& a, const Tensor& b) {
  const bool broadcast = b.rows() == 1 && a.rows() > 1 && b.cols() == a.cols();
  if (!broadcast && a.shape() != b.shape()) {
    throw DimensionError("add shape mismatch: " + to_string(a.shape()) + " + " +
                         to_string(b.shape()));
  }
  Tensor c = a;
  auto cd = c.data();
  const auto bd = b.data();
  const std::size_t cols = a.cols();
  for (std::size_t i = 0; i < cd.size(); ++i) cd[i] += bd[broadcast ? i % cols : i];
  return c;
}

Tensor scale(const Tensor& x, double factor) {
  Tensor y = x;
  for (double& v : y.data()) v *= factor;
  return y;
}

Tensor concat_lastdim(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_lastdim needs at least one part");
  const std::size_t rows = parts.front().rows();
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != rows) {
      throw DimensionError("concat_lastdim row mismatch: " + to_string(parts.front().shape()) +
                           " vs " + to_string(p.shape()));
    }
    total += p.cols();
  }
  Tensor out({rows, total});
  auto od = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t offset = r * total;
    for (const Tensor& p : parts) {
      const auto src = p.row_view(r);
      std::copy(src.begin(), src.end(), od.begin() + static_cast<std::ptrdiff_t>(offset));
      offset += src.size();
    }
  }
  return out;
}

Tensor softmax_lastdim(const Tensor& x) {
  require_finite(x.data(), "softmax_lastdim");
  Tensor y(x.shape());
  const std::size_t n = x.cols();
  const auto xd = x.data();
  auto yd = y.data();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const std::size_t base = r * n;
    double mx = xd[base];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, xd[base + i]);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      yd[base + i] = std::exp(xd[base + i] - mx);
      total += yd[base + i];
    }
    for (std::size_t i = 0; i < n; ++i) yd[base + i] /= total;
  }
  return y;
}

Tensor select_rows(const Tensor& x, std::span<const std::size_t> rows) {
  if (rows.empty()) throw IndexError("select_rows: empty row list");
  const std::size_t cols = x.cols();
  Tensor out({rows.size(), cols});
  auto od = out.data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) {
      throw IndexError("select_rows: row " + std::to_string(rows[i]) + " out of range for " +
                       to_string(x.shape()));
    }
    const auto src = x.row_view(rows[i]);
    std::copy(src.begin(), src.end(), od.begin() + static_cast<std::ptrdiff_t>(i * cols));
  }
  return out;
}

Attention scaled_dot_attention(const Tensor& q, const Tensor& keys, const Tensor& values,
                               double scale_by) {
  if (!(scale_by > 0.0)) throw ContractError("attention scale must be positive");
  if (keys.rows() != values.rows()) {
    throw DimensionError("attention keys " + to_string(keys.shape()) + " and values " +
                         to_string(values.shape()) + " differ in token count");
  }
  Tensor scores = matmul(q, keys, Transpose::kYes);
  Tensor weights = softmax_lastdim(scale(scores, 1.0 / scale_by));
  Tensor out = matmul(weights, values);
  return {std::move(out), std::move(weights)};
}

std::vector<double> log_softmax(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw ContractError("temperature must be positive");
  if (logits.empty()) throw DimensionError("log_softmax of an empty vector");
  require_finite(logits, "log_softmax");
  double mx = logits[0] / temperature;
  for (double v : logits) mx = std::max(mx, v / temperature);
  double total = 0.0;
  for (double v : logits) total += std::exp(v / temperature - mx);
  const double lse = mx + std::log(total);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] / temperature - lse;
  return out;
}

double cross_entropy(std::span<const double> logits, std::size_t label, double temperature) {
  if (label >= logits.size()) {
    throw IndexError("cross_entropy label " + std::to_string(label) + " out of range for " +
                     std::to_string(logits.size()) + " classes");
  }
  const double loss = -log_softmax(logits, temperature)[label];
  // log-sum-exp >= every term, so the exact value is nonnegative.
  return loss < 0.0 ? 0.0 : loss;
}

}  // namespace cpf::kernels
