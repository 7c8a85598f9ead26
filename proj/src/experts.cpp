#include "ecmvae/experts.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace ecmvae {

std::string to_string(DivergenceMode m) {
  switch (m) {
    case DivergenceMode::KL: return "KL";
    case DivergenceMode::PoE: return "PoE";
    case DivergenceMode::MoE: return "MoE";
    case DivergenceMode::JS: return "JS";
  }
  return "?";
}

DivergenceMode divergence_from_string(const std::string& s) {
  std::string u;
  for (char c : s) u += char(std::toupper(uint8_t(c)));
  if (u == "KL") return DivergenceMode::KL;
  if (u == "POE") return DivergenceMode::PoE;
  if (u == "MOE") return DivergenceMode::MoE;
  if (u == "JS" || u == "JSD") return DivergenceMode::JS;
  throw std::invalid_argument("unknown divergence mode '" + s + "' (want KL|PoE|MoE|JS)");
}

static std::vector<double> check_weights(size_t k, std::vector<double> w, const char* where) {
  if (k == 0) throw std::invalid_argument(std::string(where) + ": no experts");
  if (w.empty()) w.assign(k, 1.0 / double(k));
  if (w.size() != k) throw std::invalid_argument(std::string(where) + ": weight count mismatch");
  double total = 0.0;
  for (double v : w) {
    if (v < 0.0) throw std::invalid_argument(std::string(where) + ": weights must be >= 0");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument(std::string(where) + ": weights must sum to 1");
  return w;
}

ExpertSet make_expert_set(std::vector<DiagGaussian> experts, std::vector<double> weights) {
  ExpertSet s;
  s.weights = check_weights(experts.size(), std::move(weights), "make_expert_set");
  for (size_t i = 1; i < experts.size(); ++i)
    require_same_shape(experts[0].mu, experts[i].mu, "make_expert_set");
  s.experts = std::move(experts);
  return s;
}

ExpertSetVar make_expert_set(Tape& t, std::vector<DiagGaussianVar> experts,
                             std::vector<double> weights) {
  ExpertSetVar s;
  s.weights = check_weights(experts.size(), std::move(weights), "make_expert_set");
  for (size_t i = 1; i < experts.size(); ++i)
    require_same_shape(t.val(experts[0].mu), t.val(experts[i].mu), "make_expert_set");
  s.experts = std::move(experts);
  return s;
}

// ------------------------------------------------------------- plain values

DiagGaussian poe_combine(const ExpertSet& s) {
  const Tensor& ref = s.experts[0].mu;
  Tensor prec(ref.shape, 0.0), wmu(ref.shape, 0.0);
  for (const auto& e : s.experts)
    for (int64_t i = 0; i < ref.numel(); ++i) {
      const double pk = std::exp(-e.logvar[i]);
      prec[i] += pk;
      wmu[i] += pk * e.mu[i];
    }
  Tensor mu(ref.shape), logvar(ref.shape);
  for (int64_t i = 0; i < ref.numel(); ++i) {
    mu[i] = wmu[i] / prec[i];
    logvar[i] = -std::log(prec[i]);
  }
  return DiagGaussian(std::move(mu), std::move(logvar));
}

double mixture_log_prob(const ExpertSet& m, const Tensor& x) {
  std::vector<double> lp(m.experts.size());
  for (size_t k = 0; k < m.experts.size(); ++k)
    lp[k] = std::log(m.weights[k]) + log_prob(m.experts[k], x);
  const double mx = *std::max_element(lp.begin(), lp.end());
  double acc = 0.0;
  for (double v : lp) acc += std::exp(v - mx);
  return mx + std::log(acc);
}

Tensor moe_sample(const ExpertSet& s, Rng& rng) {
  // K=1 degenerates to a plain reparameterized draw (no component pick)
  const int k = s.experts.size() == 1 ? 0 : rng.categorical(s.weights);
  return reparam_sample(s.experts[size_t(k)], rng);
}

double moe_kl_upper(const ExpertSet& q, const ExpertSet& p) {
  if (q.experts.size() != p.experts.size())
    throw std::invalid_argument("moe_kl_upper: expert count mismatch");
  double acc = 0.0;
  for (size_t k = 0; k < q.experts.size(); ++k)
    acc += q.weights[k] * kl_closed_form(q.experts[k], p.experts[k]);
  return acc;
}

McEstimate mc_mixture_kl(const ExpertSet& q, const ExpertSet& p, int64_t n_samples, Rng& rng) {
  if (n_samples < 1) throw std::invalid_argument("mc_mixture_kl: n_samples must be >= 1");
  double acc = 0.0, acc2 = 0.0;
  for (int64_t s = 0; s < n_samples; ++s) {
    Tensor z = moe_sample(q, rng);
    const double v = mixture_log_prob(q, z) - mixture_log_prob(p, z);
    acc += v;
    acc2 += v * v;
  }
  McEstimate e;
  e.n = n_samples;
  e.mean = acc / double(n_samples);
  e.se = std::sqrt(std::max(0.0, acc2 / double(n_samples) - e.mean * e.mean) / double(n_samples));
  return e;
}

static std::vector<double> jsd_pi(size_t n_components, const std::vector<double>& pi) {
  std::vector<double> w = pi;
  if (w.empty()) w.assign(n_components, 1.0 / double(n_components));
  if (w.size() != n_components)
    throw std::invalid_argument("jsd_dynamic_prior: pi must have one weight per component");
  double total = 0.0;
  for (double v : w) total += v;
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("jsd_dynamic_prior: pi must sum to 1");
  return w;
}

McEstimate jsd_dynamic_prior(const ExpertSet& q, const ExpertSet& p, int64_t n_per_component,
                             Rng& rng, const std::vector<double>& pi) {
  if (n_per_component < 1) throw std::invalid_argument("jsd_dynamic_prior: need n >= 1");
  std::vector<DiagGaussian> comps = q.experts;
  comps.insert(comps.end(), p.experts.begin(), p.experts.end());
  const size_t n2k = comps.size();
  const std::vector<double> w = jsd_pi(n2k, pi);
  ExpertSet f = make_expert_set(comps);  // dynamic prior: equal-weight mixture

  double mean = 0.0, var = 0.0;
  for (size_t k = 0; k < n2k; ++k) {
    double acc = 0.0, acc2 = 0.0;
    for (int64_t s = 0; s < n_per_component; ++s) {
      Tensor z = reparam_sample(comps[k], rng);
      const double v = log_prob(comps[k], z) - mixture_log_prob(f, z);
      acc += v;
      acc2 += v * v;
    }
    const double mk = acc / double(n_per_component);
    const double vk =
        std::max(0.0, acc2 / double(n_per_component) - mk * mk) / double(n_per_component);
    mean += w[k] * mk;
    var += w[k] * w[k] * vk;
  }
  McEstimate e;
  e.n = n_per_component * int64_t(n2k);
  e.mean = mean;
  e.se = std::sqrt(var);
  return e;
}

// ------------------------------------------------------------- graph values

DiagGaussianVar poe_combine(Tape& t, const ExpertSetVar& s) {
  if (s.experts.empty()) throw std::invalid_argument("poe_combine: no experts");
  Var prec = t.exp(t.mul_scalar(s.experts[0].logvar, -1.0));
  Var wmu = t.mul(prec, s.experts[0].mu);
  for (size_t k = 1; k < s.experts.size(); ++k) {
    Var pk = t.exp(t.mul_scalar(s.experts[k].logvar, -1.0));
    prec = t.add(prec, pk);
    wmu = t.add(wmu, t.mul(pk, s.experts[k].mu));
  }
  Var mu = t.div(wmu, prec);
  Var logvar = t.mul_scalar(t.log(prec), -1.0);
  return make_gaussian(t, mu, logvar);
}

Var mixture_log_prob(Tape& t, const ExpertSetVar& m, Var x) {
  std::vector<Var> lp;
  lp.reserve(m.experts.size());
  for (const auto& e : m.experts) lp.push_back(log_prob(t, e, x));
  // max by current value; the shift cancels exactly so the pick only affects
  // numerical conditioning
  size_t mi = 0;
  for (size_t k = 1; k < lp.size(); ++k)
    if (t.scalar(lp[k]) > t.scalar(lp[mi])) mi = k;
  Var acc;
  for (size_t k = 0; k < lp.size(); ++k) {
    Var term = t.mul_scalar(t.exp(t.sub(lp[k], lp[mi])), m.weights[k]);
    acc = (k == 0) ? term : t.add(acc, term);
  }
  return t.add(lp[mi], t.log(acc));
}

Var moe_kl_upper(Tape& t, const ExpertSetVar& q, const ExpertSetVar& p) {
  if (q.experts.size() != p.experts.size())
    throw std::invalid_argument("moe_kl_upper: expert count mismatch");
  Var acc;
  for (size_t k = 0; k < q.experts.size(); ++k) {
    Var term = t.mul_scalar(kl_closed_form(t, q.experts[k], p.experts[k]), q.weights[k]);
    acc = (k == 0) ? term : t.add(acc, term);
  }
  return acc;
}

Var jsd_dynamic_prior(Tape& t, const ExpertSetVar& q, const ExpertSetVar& p, int n_per_component,
                      Rng& rng, const std::vector<double>& pi) {
  if (n_per_component < 1) throw std::invalid_argument("jsd_dynamic_prior: need n >= 1");
  std::vector<DiagGaussianVar> comps = q.experts;
  comps.insert(comps.end(), p.experts.begin(), p.experts.end());
  const size_t n2k = comps.size();
  const std::vector<double> w = jsd_pi(n2k, pi);
  ExpertSetVar f = make_expert_set(t, comps);

  Var total;
  bool first = true;
  for (size_t k = 0; k < n2k; ++k) {
    Var acc;
    for (int s = 0; s < n_per_component; ++s) {
      // reparameterized draw from component k: both posteriors and priors
      // receive gradient through their own samples
      Var z = reparam_sample(t, comps[k], rng);
      Var v = t.sub(log_prob(t, comps[k], z), mixture_log_prob(t, f, z));
      acc = (s == 0) ? v : t.add(acc, v);
    }
    Var term = t.mul_scalar(acc, w[k] / double(n_per_component));
    total = first ? term : t.add(total, term);
    first = false;
  }
  return total;
}

MoeDraw moe_sample(Tape& t, const ExpertSetVar& s, Rng& rng) {
  if (s.experts.empty()) throw std::invalid_argument("moe_sample: no experts");
  MoeDraw d;
  d.component = s.experts.size() == 1 ? 0 : rng.categorical(s.weights);
  d.sample = reparam_sample(t, s.experts[size_t(d.component)], rng);
  return d;
}

std::vector<Var> moe_sample_stratified(Tape& t, const ExpertSetVar& s, Rng& rng) {
  std::vector<Var> out;
  out.reserve(s.experts.size());
  for (const auto& e : s.experts) out.push_back(reparam_sample(t, e, rng));
  return out;
}

}  // namespace ecmvae
