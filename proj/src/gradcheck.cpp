#include "dan/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace dan {

GradCheckReport gradcheck(const std::function<Tensor()>& loss_fn,
                          const std::vector<std::pair<std::string, Tensor>>& params,
                          const GradCheckOptions& opts) {
  if (opts.step <= 0.0) throw ValueError("gradcheck: step must be positive");

  // Analytic pass.
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  {
    for (auto& [name, p] : params) {
      Tensor t = p;
      if (!t.requires_grad()) throw ValueError("gradcheck: parameter '" + name + "' does not require grad");
      t.zero_grad();
    }
    Tensor loss = loss_fn();
    backward(loss);
    for (auto& [name, p] : params) {
      if (!p.has_grad()) {
        // Never touched by the loss: treat as all-zero gradient.
        analytic.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
      } else {
        auto g = p.grad();
        analytic.emplace_back(g.begin(), g.end());
      }
    }
  }

  GradCheckReport report;
  NoGradGuard no_grad;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const auto& name = params[pi].first;
    Tensor p = params[pi].second;
    auto vals = p.mutable_values();
    const std::int64_t n = p.numel();

    std::vector<std::int64_t> indices;
    if (opts.max_entries_per_param > 0 && n > opts.max_entries_per_param) {
      if (!opts.rng) throw ValueError("gradcheck: sampling requested but no rng provided");
      // Seeded sample without replacement: partial Fisher-Yates prefix.
      std::vector<std::int64_t> all(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
      for (std::int64_t i = 0; i < opts.max_entries_per_param; ++i) {
        const std::int64_t j = i + opts.rng->below(n - i);
        std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(j)]);
      }
      indices.assign(all.begin(), all.begin() + opts.max_entries_per_param);
      std::sort(indices.begin(), indices.end());
    } else {
      indices.resize(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) indices[static_cast<std::size_t>(i)] = i;
    }

    for (std::int64_t idx : indices) {
      const auto i = static_cast<std::size_t>(idx);
      const double saved = vals[i];
      vals[i] = saved + opts.step;
      const double fp = loss_fn().item();
      vals[i] = saved - opts.step;
      const double fm = loss_fn().item();
      vals[i] = saved;

      const double numeric = (fp - fm) / (2.0 * opts.step);
      const double a = analytic[pi][i];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      const double rel = std::abs(a - numeric) / denom;
      ++report.entries_checked;
      if (rel > report.max_rel_err || report.entries_checked == 1) {
        report.max_rel_err = rel;
        report.worst = {name, idx, a, numeric, rel};
      }
    }
  }
  report.passed = report.max_rel_err < opts.tol;
  return report;
}

}  // namespace dan
