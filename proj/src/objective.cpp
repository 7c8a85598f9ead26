#include "ecmvae/objective.hpp"

#include <cmath>
#include <cstdio>

namespace ecmvae {

void LossWeights::validate() const {
  if (alpha1 < 0 || alpha1 > 1 || alpha2 < 0 || alpha2 > 1)
    throw std::invalid_argument("LossWeights: alpha1, alpha2 must be in [0,1]");
  if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0)
    throw std::invalid_argument("LossWeights: lambdas must be >= 0");
  if (beta < 0) throw std::invalid_argument("LossWeights: beta must be >= 0");
}

double LossReport::recombine(const LossWeights& w) const {
  const double elbo = elbo_hat_loss(rec_posterior, kl_s_a, kl_s_v, c_term, w.beta);
  const double h = helbo_loss(elbo, rec_prior, w.alpha1);
  return h + w.lambda1 * diff + w.lambda2 * sic + w.lambda3 * avm;
}

const char* LossReport::csv_header() {
  return "total,rec_posterior,rec_prior,kl_s_a,kl_s_v,c_term,diff,sic,avm";
}

std::string LossReport::csv_row() const {
  char buf[352];
  std::snprintf(buf, sizeof buf,
                "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", total, rec_posterior,
                rec_prior, kl_s_a, kl_s_v, c_term, diff, sic, avm);
  return buf;
}

void LossReport::accumulate(const LossReport& o, double scale) {
  total += scale * o.total;
  rec_posterior += scale * o.rec_posterior;
  rec_prior += scale * o.rec_prior;
  kl_s_a += scale * o.kl_s_a;
  kl_s_v += scale * o.kl_s_v;
  c_term += scale * o.c_term;
  diff += scale * o.diff;
  sic += scale * o.sic;
  avm += scale * o.avm;
}

void require_binary(const Tensor& t, const char* where) {
  for (double v : t.data)
    if (v != 0.0 && v != 1.0)
      throw std::invalid_argument(std::string(where) + ": target mask must be binary");
}

Var bce_with_logits(Tape& t, Var logits, Var targets) {
  require_same_shape(t.val(logits), t.val(targets), "bce_with_logits");
  require_binary(t.val(targets), "bce_with_logits");
  // softplus(z) - z*y, summed
  return t.sum(t.sub(t.softplus(logits), t.mul(logits, targets)));
}

Var soft_iou_loss(Tape& t, Var logits, Var targets) {
  const Tensor& tv = t.val(logits);
  require_same_shape(tv, t.val(targets), "soft_iou_loss");
  require_binary(t.val(targets), "soft_iou_loss");
  if (tv.ndim() != 4) throw std::invalid_argument("soft_iou_loss: need (T,1,h,w)");
  const int64_t T = tv.shape[0];
  const int64_t px = tv.numel() / T;
  Var p = t.sigmoid(logits);
  Var flat_p = t.reshape(p, {T, px});
  Var flat_y = t.reshape(targets, {T, px});
  Var ones = t.input(Tensor({px, 1}, 1.0));
  Var inter = t.matmul(t.mul(flat_p, flat_y), ones);          // (T,1)
  Var psum = t.matmul(flat_p, ones);
  Var ysum = t.matmul(flat_y, ones);
  Var uni = t.sub(t.add(psum, ysum), inter);
  // (inter + eps) / (union + eps); empty-vs-empty frames cost 0
  Var iou = t.div(t.add_scalar(inter, 1e-6), t.add_scalar(uni, 1e-6));
  return t.sum(t.add_scalar(t.mul_scalar(iou, -1.0), 1.0));
}

Var rec_loss_single(Tape& t, Var logits, Var targets) {
  return t.add(bce_with_logits(t, logits, targets),
               t.mul_scalar(soft_iou_loss(t, logits, targets), kRecIouWeight));
}

Var rec_loss(Tape& t, Var logits_a, Var logits_v, Var targets) {
  return t.add(rec_loss_single(t, logits_a, targets), rec_loss_single(t, logits_v, targets));
}

Var elbo_hat_loss(Tape& t, Var rec, Var kl_sa, Var kl_sv, Var c_term, double beta) {
  Var reg = t.add(t.add(kl_sa, kl_sv), c_term);
  return t.add(rec, t.mul_scalar(reg, beta));
}

double elbo_hat_loss(double rec, double kl_sa, double kl_sv, double c_term, double beta) {
  return rec + beta * (kl_sa + kl_sv + c_term);
}

Var helbo_loss(Tape& t, Var elbo_hat, Var rec_prior, double alpha1) {
  if (alpha1 < 0.0 || alpha1 > 1.0) throw std::invalid_argument("helbo_loss: alpha1 in [0,1]");
  return t.add(t.mul_scalar(elbo_hat, alpha1), t.mul_scalar(rec_prior, 1.0 - alpha1));
}

double helbo_loss(double elbo_hat, double rec_prior, double alpha1) {
  if (alpha1 < 0.0 || alpha1 > 1.0) throw std::invalid_argument("helbo_loss: alpha1 in [0,1]");
  return alpha1 * elbo_hat + (1.0 - alpha1) * rec_prior;
}

Var total_loss(Tape& t, Var helbo, Var diff, Var sic, Var avm, const LossWeights& w) {
  w.validate();
  Var out = t.add(helbo, t.mul_scalar(diff, w.lambda1));
  out = t.add(out, t.mul_scalar(sic, w.lambda2));
  return t.add(out, t.mul_scalar(avm, w.lambda3));
}

double total_loss(double helbo, double diff, double sic, double avm, const LossWeights& w) {
  w.validate();
  const struct {
    const char* name;
    double v;
  } parts[] = {{"helbo", helbo}, {"diff", diff}, {"sic", sic}, {"avm", avm}};
  for (const auto& p : parts)
    if (!std::isfinite(p.v))
      throw NumericalError(std::string("total_loss: non-finite component '") + p.name + "'");
  return helbo + w.lambda1 * diff + w.lambda2 * sic + w.lambda3 * avm;
}

}  // namespace ecmvae
