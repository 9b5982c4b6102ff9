#pragma once

#include "sfdm/backends.hpp"
#include "sfdm/config.hpp"
#include "sfdm/core.hpp"
#include "sfdm/demorpher.hpp"

namespace sfdm {

/// Unweighted sub-losses, each already averaged over the mini-batch.
struct LossComponents {
  double l2 = 0, ms_ssim = 0, lpips = 0, id = 0, inv_id = 0, feat = 0, adv = 0;
};

struct LossReport {
  double l2 = 0, ms_ssim = 0, lpips = 0, id = 0, inv_id = 0, feat = 0, adv = 0;
  double im_composite = 0, total = 0;
  double disc = 0;
};

/// Applies the pass coefficients: im = l2 + lpips + ms_ssim + id terms,
/// total = im + inv_id + feat + adv terms.
LossReport compose(const LossComponents& c, const LossWeights& w);

// ---- per-sample tape expressions; every function returns a [N] Var.

Var l2_per_sample(const Var& out, const Var& gt);
/// 1 - MS-SSIM for images in [-1, 1]. Throws TooSmallForScales when the
/// side length is below window * 2^(scales - 1).
Var ms_ssim_loss_per_sample(const Var& out, const Var& gt, const MsSsimConfig& cfg);
/// MS-SSIM itself.
Var ms_ssim_per_sample(const Var& out, const Var& gt, const MsSsimConfig& cfg);
Var lpips_per_sample(Tape& tape, const Var& out, const Var& gt, const PerceptualNet& net);
Var id_per_sample(Tape& tape, const Var& out, const Var& gt, const FaceRecognizer& frs);
Var inverse_id_per_sample(Tape& tape, const Var& out, const Var& ref, double margin, const FaceRecognizer& frs);
Var feature_per_sample(const Var& f_out, const Var& f_gt);
/// -log sigmoid(D(out)) via softplus.
Var adversarial_per_sample(Tape& tape, const Var& out, const Discriminator& disc);

/// Per-sample critic objective on real images and detached outputs:
/// -log sigmoid(D(gt)) - log(1 - sigmoid(D(out))) + gamma / 2 ||grad_gt D||^2.
struct DiscriminatorTerms {
  Var real, fake, penalty, total;  // each [N]
};
DiscriminatorTerms discriminator_per_sample(Tape& tape, const Tensor& gt, const Tensor& out, double gamma,
                                            const Discriminator& disc);

/// Batch-mean generator objective of one pass.
struct GeneratorObjective {
  Var total;  // scalar to differentiate
  LossReport report;
};
GeneratorObjective generator_objective(Tape& tape, const DemorphTrace& trace, const Tensor& gt, const Tensor& refs,
                                       const LossWeights& w, const MsSsimConfig& ms, const Backends& backends,
                                       const Discriminator& disc);

// ---- single-sample conveniences.
double l2_loss(const ImageTensor& out, const ImageTensor& gt);
double ms_ssim_loss(const ImageTensor& out, const ImageTensor& gt, const MsSsimConfig& cfg);
double lpips_loss(const ImageTensor& out, const ImageTensor& gt, const PerceptualNet& net);
double id_loss(const ImageTensor& out, const ImageTensor& gt, const FaceRecognizer& frs);
double inverse_id_loss(const ImageTensor& out, const ImageTensor& ref, double margin, const FaceRecognizer& frs);
double feature_loss(const FeatureMap& f_out, const FeatureMap& f_gt);
double adversarial_generator_loss(const ImageTensor& out, const Discriminator& disc);
double discriminator_loss(const ImageTensor& gt, const ImageTensor& out, double gamma, const Discriminator& disc);

/// Hinge form of the inverse identity term on a raw similarity value.
double inverse_id_from_similarity(double s, double margin);
/// Stable -log(sigmoid(x)).
double neg_log_sigmoid(double x);

/// Standard five-scale MS-SSIM weights, truncated to `scales` and renormalized.
std::vector<double> ms_ssim_weights(std::size_t scales);
/// Normalized 2-D Gaussian window [window, window].
Tensor gaussian_window(std::size_t window, double sigma);

}  // namespace sfdm
