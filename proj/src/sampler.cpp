#include "scnas/sampler.hpp"

#include <cmath>

namespace scnas {

Real TemperatureSchedule::at(int epoch) const {
  if (!(tau_start > 0.0) || !(tau_min > 0.0))
    throw std::invalid_argument("temperature schedule: tau values must be positive");
  if (epochs <= 1) return std::max(tau_min, tau_start);
  const Real rate = std::pow(tau_min / tau_start, 1.0 / static_cast<Real>(epochs - 1));
  return std::max(tau_min, tau_start * std::pow(rate, static_cast<Real>(epoch)));
}

Tensor relax(const Tensor& logits, const std::vector<Real>& eps, Real tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("relax: temperature must be positive");
  if (static_cast<std::int64_t>(eps.size()) != logits.size())
    throw std::invalid_argument("relax: noise size does not match logits");
  if (!logits.all_finite()) throw std::invalid_argument("relax: non-finite logits");
  Tensor noise = Tensor::from_vector(logits.shape(), eps);
  Tensor shifted = scale(add(logits, noise), 1.0 / tau);
  return softmax(shifted, 0);
}

std::vector<std::pair<int, int>> unordered_pairs(int n) {
  std::vector<std::pair<int, int>> pairs;
  for (int a = 0; a < n; ++a)
    for (int b = a + 1; b < n; ++b) pairs.emplace_back(a, b);
  return pairs;
}

std::vector<Real> pair_probabilities(const std::vector<Real>& z_bar) {
  const int n = static_cast<int>(z_bar.size());
  if (n < 2) throw std::invalid_argument("pair_probabilities: need at least two operations");
  std::vector<Real> q;
  q.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (const auto& [a, b] : unordered_pairs(n))
    q.push_back((z_bar[static_cast<std::size_t>(a)] + z_bar[static_cast<std::size_t>(b)]) /
                static_cast<Real>(n - 1));
  return q;
}

namespace {

std::vector<Real> relaxed_values(const std::vector<Real>& logits, const std::vector<Real>& eps,
                                 Real tau) {
  const std::size_t n = logits.size();
  std::vector<Real> z(n);
  Real mx = -std::numeric_limits<Real>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = (logits[i] + eps[i]) / tau;
    mx = std::max(mx, z[i]);
  }
  Real denom = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = std::exp(z[i] - mx);
    denom += z[i];
  }
  for (auto& v : z) v /= denom;
  return z;
}

SamplePlan::Edge draw_edge(const Tensor& logits, Real tau, Rng& rng) {
  if (!logits.all_finite()) throw std::invalid_argument("sample: non-finite logits");
  const int n = static_cast<int>(logits.size());
  SamplePlan::Edge edge;
  edge.eps.resize(static_cast<std::size_t>(n));
  std::vector<Real> lv(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    edge.eps[static_cast<std::size_t>(i)] = rng.gumbel();
    lv[static_cast<std::size_t>(i)] = logits[i];
  }
  const std::vector<Real> z = relaxed_values(lv, edge.eps, tau);
  const auto pairs = unordered_pairs(n);
  const int pick = rng.categorical(pair_probabilities(z));
  edge.op_a = pairs[static_cast<std::size_t>(pick)].first;
  edge.op_b = pairs[static_cast<std::size_t>(pick)].second;
  return edge;
}

EdgeSelection selection_for_edge(const Tensor& logits, const SamplePlan::Edge& edge, Real tau) {
  Tensor z_bar = relax(logits, edge.eps, tau);
  Tensor za = gather_scalar(z_bar, edge.op_a);
  Tensor zb = gather_scalar(z_bar, edge.op_b);
  Tensor total = add(za, zb);
  EdgeSelection sel;
  sel.entries.push_back({edge.op_a, div_scalar(za, total)});
  sel.entries.push_back({edge.op_b, div_scalar(zb, total)});
  return sel;
}

}  // namespace

SamplePlan draw_plan(const ArchitectureParams& params, Real tau, Rng& rng) {
  if (!(tau > 0.0)) throw std::invalid_argument("draw_plan: temperature must be positive");
  SamplePlan plan;
  plan.tau = tau;
  for (int t = 0; t < kNumCellTypes; ++t)
    for (const Tensor& logits : params.logits[static_cast<std::size_t>(t)])
      plan.edges[static_cast<std::size_t>(t)].push_back(draw_edge(logits, tau, rng));
  return plan;
}

SelectionMap build_selections(const ArchitectureParams& params, const SamplePlan& plan) {
  SelectionMap map;
  for (int t = 0; t < kNumCellTypes; ++t) {
    const auto& logits = params.logits[static_cast<std::size_t>(t)];
    const auto& edges = plan.edges[static_cast<std::size_t>(t)];
    if (logits.size() != edges.size())
      throw std::invalid_argument("build_selections: plan does not match params");
    for (std::size_t e = 0; e < edges.size(); ++e)
      map[static_cast<std::size_t>(t)].push_back(
          selection_for_edge(logits[e], edges[e], plan.tau));
  }
  return map;
}

SelectionMap sample_architecture(const ArchitectureParams& params, Real tau, Rng& rng,
                                 SamplePlan* plan_out) {
  SamplePlan plan = draw_plan(params, tau, rng);
  SelectionMap map = build_selections(params, plan);
  if (plan_out) *plan_out = std::move(plan);
  return map;
}

EdgeSelection sample_pair(const Tensor& logits, Real tau, Rng& rng) {
  if (!(tau > 0.0)) throw std::invalid_argument("sample_pair: temperature must be positive");
  const SamplePlan::Edge edge = draw_edge(logits, tau, rng);
  return selection_for_edge(logits, edge, tau);
}

Real mean_entropy(const ArchitectureParams& params, CellType type) {
  const auto& per_type = params.logits[static_cast<std::size_t>(type)];
  Real total = 0.0;
  for (const Tensor& logits : per_type) {
    std::vector<Real> lv(static_cast<std::size_t>(logits.size()));
    for (std::int64_t i = 0; i < logits.size(); ++i) lv[static_cast<std::size_t>(i)] = logits[i];
    const std::vector<Real> zeros(lv.size(), 0.0);
    const std::vector<Real> p = relaxed_values(lv, zeros, 1.0);
    Real h = 0.0;
    for (Real v : p)
      if (v > 0.0) h -= v * std::log(v);
    total += h;
  }
  return per_type.empty() ? 0.0 : total / static_cast<Real>(per_type.size());
}

}  // namespace scnas
