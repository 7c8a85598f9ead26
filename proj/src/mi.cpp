#include "ecmvae/mi.hpp"

#include <cmath>

#include "ecmvae/gaussian.hpp"

namespace ecmvae {

MiCritic init_mi_critic(ParamStore& store, const std::string& prefix, int width, int hidden,
                        uint64_t seed) {
  if (width < 1) throw std::invalid_argument("init_mi_critic: width must be >= 1");
  if (hidden < 1) hidden = width;
  MiCritic c{prefix, width, hidden};
  const double s1 = std::sqrt(1.0 / double(width));
  const double s2 = std::sqrt(1.0 / double(hidden));
  for (const char* head : {"mean", "var"}) {
    const std::string base = prefix + "." + head;
    store.add(base + ".fc1.w", normal_init({width, hidden}, s1, seed, base + ".fc1.w"));
    store.add(base + ".fc1.b", Tensor({hidden}, 0.0));
    store.add(base + ".fc2.w", normal_init({hidden, width}, s2, seed, base + ".fc2.w"));
    store.add(base + ".fc2.b", Tensor({width}, 0.0));
  }
  return c;
}

static Var critic_head(Tape& t, ParamBinder& bind, const MiCritic& c, const char* head, Var x) {
  const std::string base = c.prefix + "." + head;
  Var h = t.add_rowwise(t.matmul(x, bind(base + ".fc1.w")), bind(base + ".fc1.b"));
  h = t.tanh(h);
  return t.add_rowwise(t.matmul(h, bind(base + ".fc2.w")), bind(base + ".fc2.b"));
}

Var i_ba_surrogate(Tape& t, ParamBinder& bind, const MiCritic& critic, Var sc_a, Var sc_v) {
  require_same_shape(t.val(sc_a), t.val(sc_v), "i_ba_surrogate");
  if (t.val(sc_a).ndim() != 2 || t.val(sc_a).shape[1] != critic.width)
    throw std::invalid_argument("i_ba_surrogate: codes must be (T," +
                                std::to_string(critic.width) + ")");
  const double rows = double(t.val(sc_a).shape[0]);
  Var mu = critic_head(t, bind, critic, "mean", sc_v);
  Var logvar = t.clamp(critic_head(t, bind, critic, "var", sc_v), kLogvarLo, kLogvarHi);
  DiagGaussianVar cond{mu, logvar};
  Var lp = log_prob(t, cond, sc_a);  // summed over rows and dims
  return t.mul_scalar(lp, 1.0 / rows);
}

Var sic_loss(Tape& t, Var surrogate_po, Var surrogate_pr, double alpha2) {
  if (alpha2 < 0.0 || alpha2 > 1.0) throw std::invalid_argument("sic_loss: alpha2 in [0,1]");
  return t.add(t.mul_scalar(surrogate_po, -alpha2), t.mul_scalar(surrogate_pr, -(1.0 - alpha2)));
}

double sic_loss(double surrogate_po, double surrogate_pr, double alpha2) {
  if (alpha2 < 0.0 || alpha2 > 1.0) throw std::invalid_argument("sic_loss: alpha2 in [0,1]");
  return -alpha2 * surrogate_po - (1.0 - alpha2) * surrogate_pr;
}

double gaussian_mi_oracle(double rho) {
  if (!(std::abs(rho) < 1.0)) throw std::invalid_argument("gaussian_mi_oracle: |rho| < 1 required");
  return -0.5 * std::log(1.0 - rho * rho);
}

}  // namespace ecmvae
