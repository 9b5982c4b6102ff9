#include "sfdm/losses.hpp"

#include <cmath>
#include <numeric>

#include "sfdm/error.hpp"

namespace sfdm {

namespace {

// Dynamic range 2 for [-1, 1] images.
constexpr double kC1 = (0.01 * 2) * (0.01 * 2);
constexpr double kC2 = (0.03 * 2) * (0.03 * 2);

Tensor as_batch(const Tensor& t) {
  Shape s{1};
  s.insert(s.end(), t.shape().begin(), t.shape().end());
  return t.reshaped(s);
}

void same_shape(const Var& a, const Var& b, const char* what) { require_same_shape(a.value(), b.value(), what); }

double mean_of(const Var& v) { return v.value().mean(); }

}  // namespace

LossReport compose(const LossComponents& c, const LossWeights& w) {
  LossReport r;
  r.l2 = c.l2;
  r.ms_ssim = c.ms_ssim;
  r.lpips = c.lpips;
  r.id = c.id;
  r.inv_id = c.inv_id;
  r.feat = c.feat;
  r.adv = c.adv;
  r.im_composite = w.lambda_l2 * c.l2 + w.lambda_lpips * c.lpips + w.lambda_ms_ssim * c.ms_ssim + w.lambda_id * c.id;
  r.total = r.im_composite + w.lambda_inv_id * c.inv_id + w.lambda_feat * c.feat + w.lambda_adv * c.adv;
  return r;
}

std::vector<double> ms_ssim_weights(std::size_t scales) {
  static const double standard[] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
  if (scales == 0 || scales > 5) throw ConfigError("MS-SSIM supports 1 to 5 scales");
  std::vector<double> w(standard, standard + scales);
  const double s = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= s;
  return w;
}

Tensor gaussian_window(std::size_t window, double sigma) {
  std::vector<double> g(window);
  const double c = (static_cast<double>(window) - 1) / 2;
  double s = 0;
  for (std::size_t i = 0; i < window; ++i) {
    g[i] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
    s += g[i];
  }
  Tensor k({window, window});
  for (std::size_t i = 0; i < window; ++i)
    for (std::size_t j = 0; j < window; ++j) k[i * window + j] = g[i] * g[j] / (s * s);
  return k;
}

Var l2_per_sample(const Var& out, const Var& gt) {
  same_shape(out, gt, "l2 loss");
  return ad::mean_per_sample(ad::square(ad::sub(out, gt)));
}

Var ms_ssim_per_sample(const Var& out, const Var& gt, const MsSsimConfig& cfg) {
  same_shape(out, gt, "ms-ssim");
  if (out.value().rank() != 4) throw ShapeMismatch("ms-ssim expects [N, C, H, W]");
  const std::size_t side = std::min(out.dim(2), out.dim(3));
  if (side < cfg.window * (std::size_t{1} << (cfg.scales - 1))) {
    throw TooSmallForScales("image side " + std::to_string(side) + " is too small for " + std::to_string(cfg.scales) +
                            " scales with window " + std::to_string(cfg.window));
  }
  const auto weights = ms_ssim_weights(cfg.scales);
  auto kernel = std::make_shared<const Tensor>(gaussian_window(cfg.window, cfg.sigma));
  Var x = out, y = gt;
  Var acc;
  for (std::size_t s = 0; s < cfg.scales; ++s) {
    Var mu1 = ad::depthwise_conv_valid(x, kernel);
    Var mu2 = ad::depthwise_conv_valid(y, kernel);
    Var mu1_sq = ad::square(mu1), mu2_sq = ad::square(mu2), mu12 = ad::mul(mu1, mu2);
    Var s1 = ad::sub(ad::depthwise_conv_valid(ad::square(x), kernel), mu1_sq);
    Var s2 = ad::sub(ad::depthwise_conv_valid(ad::square(y), kernel), mu2_sq);
    Var s12 = ad::sub(ad::depthwise_conv_valid(ad::mul(x, y), kernel), mu12);
    Var cs = ad::div(ad::add_scalar(ad::scale(s12, 2.0), kC2), ad::add_scalar(ad::add(s1, s2), kC2));
    Var factor;
    if (s + 1 < cfg.scales) {
      factor = ad::pow_scalar(ad::mean_spatial(cs), weights[s]);
      x = ad::avg_pool2(x);
      y = ad::avg_pool2(y);
    } else {
      Var lum = ad::div(ad::add_scalar(ad::scale(mu12, 2.0), kC1), ad::add_scalar(ad::add(mu1_sq, mu2_sq), kC1));
      factor = ad::pow_scalar(ad::mean_spatial(ad::mul(lum, cs)), weights[s]);
    }
    acc = acc.valid() ? ad::mul(acc, factor) : factor;
  }
  return ad::mean_per_sample(acc);
}

Var ms_ssim_loss_per_sample(const Var& out, const Var& gt, const MsSsimConfig& cfg) {
  Var v = ms_ssim_per_sample(out, gt, cfg);
  return ad::add_scalar(ad::scale(v, -1.0), 1.0);
}

Var lpips_per_sample(Tape& tape, const Var& out, const Var& gt, const PerceptualNet& net) {
  same_shape(out, gt, "lpips");
  const auto fo = net.features(tape, out);
  const auto fg = net.features(tape, gt);
  Var acc;
  for (std::size_t s = 0; s < fo.size(); ++s) {
    Var d = ad::mean_per_sample(ad::square(ad::sub(fo[s], fg[s])));
    acc = acc.valid() ? ad::add(acc, d) : d;
  }
  return acc;
}

Var id_per_sample(Tape& tape, const Var& out, const Var& gt, const FaceRecognizer& frs) {
  Var s = ad::rowwise_dot(frs.embed(tape, out), frs.embed(tape, gt));
  return ad::add_scalar(ad::scale(s, -1.0), 1.0);
}

Var inverse_id_per_sample(Tape& tape, const Var& out, const Var& ref, double margin, const FaceRecognizer& frs) {
  Var s = ad::rowwise_dot(frs.embed(tape, out), frs.embed(tape, ref));
  return ad::relu(ad::add_scalar(s, -margin));
}

Var feature_per_sample(const Var& f_out, const Var& f_gt) {
  same_shape(f_out, f_gt, "feature loss");
  return ad::mean_per_sample(ad::square(ad::sub(f_out, f_gt)));
}

Var adversarial_per_sample(Tape& tape, const Var& out, const Discriminator& disc) {
  return ad::softplus(ad::scale(disc.logit(tape, out), -1.0));
}

DiscriminatorTerms discriminator_per_sample(Tape& tape, const Tensor& gt, const Tensor& out, double gamma,
                                            const Discriminator& disc) {
  require_same_shape(gt, out, "discriminator loss");
  DiscriminatorTerms t;
  auto real = disc.logit_with_input_gradient(tape, tape.constant(gt));
  t.real = ad::softplus(ad::scale(real.logit, -1.0));
  t.fake = ad::softplus(disc.logit(tape, tape.constant(out)));
  t.penalty = ad::scale(real.grad_sq_norm, gamma / 2.0);
  t.total = ad::add(ad::add(t.real, t.fake), t.penalty);
  return t;
}

GeneratorObjective generator_objective(Tape& tape, const DemorphTrace& trace, const Tensor& gt, const Tensor& refs,
                                       const LossWeights& w, const MsSsimConfig& ms, const Backends& backends,
                                       const Discriminator& disc) {
  const Var& out = trace.image;
  Var g = tape.constant(gt);
  Var f_gt = tape.constant(backends.encoder->encode_batch(gt).second);

  Var l2 = l2_per_sample(out, g);
  Var msl = ms_ssim_loss_per_sample(out, g, ms);
  Var lp = lpips_per_sample(tape, out, g, *backends.perceptual);
  Var id = id_per_sample(tape, out, g, *backends.frs);
  Var inv = inverse_id_per_sample(tape, out, tape.constant(refs), w.margin_m, *backends.frs);
  Var feat = feature_per_sample(trace.f_out, f_gt);
  Var adv = adversarial_per_sample(tape, out, disc);

  Var im = ad::add(ad::add(ad::scale(l2, w.lambda_l2), ad::scale(lp, w.lambda_lpips)),
                   ad::add(ad::scale(msl, w.lambda_ms_ssim), ad::scale(id, w.lambda_id)));
  Var total = ad::add(im, ad::add(ad::scale(feat, w.lambda_feat), ad::scale(adv, w.lambda_adv)));
  // A zero coefficient removes the term from the graph entirely.
  if (w.lambda_inv_id != 0.0) total = ad::add(total, ad::scale(inv, w.lambda_inv_id));

  LossComponents c{mean_of(l2), mean_of(msl), mean_of(lp), mean_of(id), mean_of(inv), mean_of(feat), mean_of(adv)};
  GeneratorObjective obj{ad::mean(total), compose(c, w)};
  return obj;
}

double l2_loss(const ImageTensor& out, const ImageTensor& gt) {
  Tape t;
  return l2_per_sample(t.constant(as_batch(out.tensor())), t.constant(as_batch(gt.tensor()))).value()[0];
}

double ms_ssim_loss(const ImageTensor& out, const ImageTensor& gt, const MsSsimConfig& cfg) {
  Tape t;
  return ms_ssim_loss_per_sample(t.constant(as_batch(out.tensor())), t.constant(as_batch(gt.tensor())), cfg).value()[0];
}

double lpips_loss(const ImageTensor& out, const ImageTensor& gt, const PerceptualNet& net) {
  Tape t;
  return lpips_per_sample(t, t.constant(as_batch(out.tensor())), t.constant(as_batch(gt.tensor())), net).value()[0];
}

double id_loss(const ImageTensor& out, const ImageTensor& gt, const FaceRecognizer& frs) {
  Tape t;
  return id_per_sample(t, t.constant(as_batch(out.tensor())), t.constant(as_batch(gt.tensor())), frs).value()[0];
}

double inverse_id_loss(const ImageTensor& out, const ImageTensor& ref, double margin, const FaceRecognizer& frs) {
  Tape t;
  return inverse_id_per_sample(t, t.constant(as_batch(out.tensor())), t.constant(as_batch(ref.tensor())), margin, frs)
      .value()[0];
}

double feature_loss(const FeatureMap& f_out, const FeatureMap& f_gt) {
  Tape t;
  return feature_per_sample(t.constant(as_batch(f_out.tensor())), t.constant(as_batch(f_gt.tensor()))).value()[0];
}

double adversarial_generator_loss(const ImageTensor& out, const Discriminator& disc) {
  return neg_log_sigmoid(disc.logit(out));
}

double discriminator_loss(const ImageTensor& gt, const ImageTensor& out, double gamma, const Discriminator& disc) {
  Tape t;
  return discriminator_per_sample(t, as_batch(gt.tensor()), as_batch(out.tensor()), gamma, disc).total.value()[0];
}

double inverse_id_from_similarity(double s, double margin) { return std::max(0.0, s - margin); }

double neg_log_sigmoid(double x) { return x > 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x)); }

}  // namespace sfdm
