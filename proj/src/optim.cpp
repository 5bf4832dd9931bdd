#include "pcdepth/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace pcdepth::optim {

namespace {

double cosine_anneal(double start, double end, double frac) {
  return end + (start - end) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

}  // namespace

double one_cycle_lr(int step, int total, const OptimConfig& cfg) {
  const double initial = cfg.lr / cfg.div_factor;
  const double final_lr = initial / cfg.final_div_factor;
  if (total <= 1) return cfg.lr;
  const double up_end = cfg.pct_start * total - 1.0;
  const double last = total - 1.0;
  const double s = step;
  if (s <= up_end) return cosine_anneal(initial, cfg.lr, up_end > 0 ? s / up_end : 1.0);
  return cosine_anneal(cfg.lr, final_lr, std::min(1.0, (s - up_end) / (last - up_end)));
}

double grad_norm(const nn::ParamStore& store) {
  double sq = 0;
  for (const auto& e : store.entries())
    for (double g : e.var.grad()) sq += g * g;
  return std::sqrt(sq);
}

AdamW::AdamW(nn::ParamStore& store, const OptimConfig& cfg) : store_(&store), cfg_(cfg) {
  for (const auto& e : store.entries()) {
    state_.m.emplace_back(e.var.numel(), 0.0);
    state_.v.emplace_back(e.var.numel(), 0.0);
  }
}

void AdamW::set_state(AdamState s) {
  const auto& entries = store_->entries();
  if (s.m.size() != entries.size() || s.v.size() != entries.size())
    throw std::invalid_argument("optimizer state has " + std::to_string(s.m.size()) + " buffers, model has " +
                                std::to_string(entries.size()) + " parameters");
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (s.m[i].size() != entries[i].var.numel() || s.v[i].size() != entries[i].var.numel())
      throw std::invalid_argument("optimizer state size mismatch for " + entries[i].name);
  state_ = std::move(s);
}

void AdamW::step(double lr, double grad_scale) {
  ++state_.t;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state_.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state_.t));
  const auto& entries = store_->entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    ag::Var p = entries[i].var;
    const auto& g = p.grad();
    auto& w = p.mutable_value();
    auto& m = state_.m[i];
    auto& v = state_.v[i];
    const double decay = p.ndim() >= 2 ? lr * cfg_.weight_decay : 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k] * grad_scale;
      m[k] = b1 * m[k] + (1 - b1) * gk;
      v[k] = b2 * v[k] + (1 - b2) * gk * gk;
      w[k] -= decay * w[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
      w[k] = nn::round_f32(w[k]);
    }
  }
}

}  // namespace pcdepth::optim
