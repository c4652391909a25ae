// SPDX-License-Identifier: Apache-2.0
#include "nhp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace nhp {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

// Probes one coordinate. Returns false when a kink was detected.
bool probe(const std::function<double()>& eval, double& value, double eps, double& numeric) {
  const double saved = value;
  const double f0 = eval();
  value = saved + eps;
  const double fp = eval();
  value = saved - eps;
  const double fm = eval();
  value = saved;
  const double forward = (fp - f0) / eps;
  const double backward = (f0 - fm) / eps;
  numeric = (fp - fm) / (2 * eps);
  const double scale = std::max({1.0, std::abs(forward), std::abs(backward)});
  return std::abs(forward - backward) <= std::sqrt(eps) * scale;
}

void record(GradCheckResult& res, double analytic, double numeric, double floor,
            const std::string& where) {
  const double err = relative_error(analytic, numeric, floor);
  ++res.checked;
  if (res.checked == 1 || err > res.max_rel_error) {
    std::ostringstream os;
    os << where << " analytic=" << analytic << " numeric=" << numeric;
    res.worst = os.str();
    res.max_rel_error = err;
  }
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                           const Tensor<double>& x, double eps, double floor) {
  Tensor<double> var(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
  Tensor<double> out = f(var);
  if (out.size() != 1) throw DimensionError("grad_check: function must be scalar-valued");
  backward(out);
  std::vector<double> analytic(var.size(), 0.0);
  if (var.has_grad()) std::copy(var.grad().begin(), var.grad().end(), analytic.begin());

  GradCheckResult res;
  auto values = var.mutable_data();
  auto eval = [&]() { return f(var.detach()).item(); };
  for (std::size_t i = 0; i < values.size(); ++i) {
    double numeric = 0;
    if (!probe(eval, values[i], eps, numeric)) {
      ++res.skipped_kinks;
      continue;
    }
    record(res, analytic[i], numeric, floor, "x[" + std::to_string(i) + "]");
  }
  return res;
}

GradCheckResult grad_check_params(const std::function<Tensor<double>()>& loss,
                                  std::vector<std::pair<std::string, Tensor<double>>> params,
                                  double eps, double floor, std::size_t max_entries_per_param,
                                  std::uint64_t seed) {
  for (auto& [name, p] : params) p.zero_grad();
  Tensor<double> out = loss();
  if (out.size() != 1) throw DimensionError("grad_check_params: loss must be scalar-valued");
  backward(out);
  std::vector<std::vector<double>> analytic;
  for (auto& [name, p] : params) {
    std::vector<double> g(p.size(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), g.begin());
    analytic.push_back(std::move(g));
  }

  GradCheckResult res;
  std::mt19937_64 rng(seed);
  auto eval = [&]() { return loss().item(); };
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& [name, p] = params[k];
    std::vector<std::size_t> idx(p.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (max_entries_per_param && idx.size() > max_entries_per_param) {
      for (std::size_t i = 0; i < max_entries_per_param; ++i) {
        std::size_t j = i + static_cast<std::size_t>(rng() % (idx.size() - i));
        std::swap(idx[i], idx[j]);
      }
      idx.resize(max_entries_per_param);
    }
    auto values = p.mutable_data();
    for (std::size_t i : idx) {
      double numeric = 0;
      if (!probe(eval, values[i], eps, numeric)) {
        ++res.skipped_kinks;
        continue;
      }
      record(res, analytic[k][i], numeric, floor, name + "[" + std::to_string(i) + "]");
    }
  }
  return res;
}

}  // namespace nhp
