#include "dan/optim.hpp"

#include <cmath>
#include <numbers>

#include "dan/error.hpp"

namespace dan {

Optimizer::Optimizer(const OptimSpec& spec,
                     const std::vector<std::pair<std::string, Tensor>>& params)
    : spec_(spec) {
  if (spec_.kind != "sgd" && spec_.kind != "adam")
    throw ConfigError("optimizer: unknown kind '" + spec_.kind + "'");
  names_.reserve(params.size());
  slot1_.reserve(params.size());
  for (const auto& [name, p] : params) {
    names_.push_back(name);
    slot1_.push_back(zeros(p.shape()));
    if (spec_.kind == "adam") slot2_.push_back(zeros(p.shape()));
  }
}

void Optimizer::step(std::vector<std::pair<std::string, Tensor>>& params, double lr) {
  if (params.size() != names_.size())
    throw ValueError("optimizer: parameter list size changed (" + std::to_string(params.size()) +
                     " vs " + std::to_string(names_.size()) + ")");
  if (spec_.kind == "adam") ++t_;
  const double bc1 = spec_.kind == "adam" ? 1.0 - std::pow(kAdamBeta1, static_cast<double>(t_)) : 0.0;
  const double bc2 = spec_.kind == "adam" ? 1.0 - std::pow(kAdamBeta2, static_cast<double>(t_)) : 0.0;

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].second;
    if (p.shape() != slot1_[i].shape())
      throw ShapeError("optimizer: parameter '" + params[i].first + "' changed shape");
    auto pv = p.mutable_values();
    const bool has_grad = p.has_grad();
    auto gv = has_grad ? p.grad() : std::span<const double>{};

    if (spec_.kind == "sgd") {
      auto vel = slot1_[i].mutable_values();
      for (std::size_t j = 0; j < pv.size(); ++j) {
        const double g = has_grad ? gv[j] : 0.0;
        vel[j] = spec_.momentum * vel[j] + g;
        pv[j] -= lr * vel[j];
      }
    } else {
      auto m = slot1_[i].mutable_values();
      auto v = slot2_[i].mutable_values();
      for (std::size_t j = 0; j < pv.size(); ++j) {
        const double g = has_grad ? gv[j] : 0.0;
        m[j] = kAdamBeta1 * m[j] + (1.0 - kAdamBeta1) * g;
        v[j] = kAdamBeta2 * v[j] + (1.0 - kAdamBeta2) * g * g;
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        pv[j] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
      }
    }
  }
}

std::vector<std::pair<std::string, Tensor>> Optimizer::named_state() {
  std::vector<std::pair<std::string, Tensor>> out;
  out.reserve(slot1_.size() + slot2_.size() + 1);
  for (std::size_t i = 0; i < slot1_.size(); ++i)
    out.emplace_back("optim.slot1." + names_[i], slot1_[i]);
  for (std::size_t i = 0; i < slot2_.size(); ++i)
    out.emplace_back("optim.slot2." + names_[i], slot2_[i]);
  out.emplace_back("optim.t", from_values({1}, {static_cast<double>(t_)}));
  return out;
}

double scheduled_lr(const OptimSpec& spec, std::int64_t step, std::int64_t total_steps) {
  if (spec.schedule == "constant" || total_steps <= 1) return spec.lr;
  const double prog = static_cast<double>(step) / static_cast<double>(total_steps - 1);
  const double lo = spec.min_lr_frac * spec.lr;
  return lo + (spec.lr - lo) * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(prog, 1.0)));
}

}  // namespace dan
