#include "sfdm/backends.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "sfdm/error.hpp"

namespace sfdm {

namespace {

constexpr std::size_t kMaxToyMatrixElements = 40'000'000;

std::uint64_t fnv_tensors(const std::vector<std::pair<std::string, const Tensor*>>& items) {
  std::vector<Parameter> ps;
  ps.reserve(items.size());
  for (const auto& [name, t] : items) ps.push_back(Parameter{name, *t, {}, false});
  std::vector<const Parameter*> ptrs;
  for (const auto& p : ps) ptrs.push_back(&p);
  return nn::digest(ptrs);
}

// Separable [1 2 1]/4 blur of one channel plane with clamped borders.
void blur_plane(double* p, std::size_t h, std::size_t w) {
  std::vector<double> tmp(h * w);
  auto at = [&](const double* src, std::ptrdiff_t i, std::ptrdiff_t j) {
    i = std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(h) - 1);
    j = std::clamp<std::ptrdiff_t>(j, 0, static_cast<std::ptrdiff_t>(w) - 1);
    return src[static_cast<std::size_t>(i) * w + static_cast<std::size_t>(j)];
  };
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const auto jj = static_cast<std::ptrdiff_t>(j), ii = static_cast<std::ptrdiff_t>(i);
      tmp[i * w + j] = 0.25 * at(p, ii, jj - 1) + 0.5 * at(p, ii, jj) + 0.25 * at(p, ii, jj + 1);
    }
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const auto jj = static_cast<std::ptrdiff_t>(j), ii = static_cast<std::ptrdiff_t>(i);
      p[i * w + j] = 0.25 * at(tmp.data(), ii - 1, jj) + 0.5 * at(tmp.data(), ii, jj) + 0.25 * at(tmp.data(), ii + 1, jj);
    }
}

void require_batch_shape(const Tensor& t, const Shape& item, const char* what) {
  if (t.rank() != item.size() + 1 || !std::equal(item.begin(), item.end(), t.shape().begin() + 1)) {
    throw ShapeMismatch(std::string(what) + ": expected [N, " + shape_str(item) + "], got " + shape_str(t.shape()));
  }
}

void require_batch_shape(const Var& v, const Shape& item, const char* what) { require_batch_shape(v.value(), item, what); }

Tensor as_batch(const Tensor& t) {
  Shape s{1};
  s.insert(s.end(), t.shape().begin(), t.shape().end());
  return t.reshaped(s);
}

Tensor drop_batch(const Tensor& t) { return unstack(t, 0); }

void check_toy_size(const BackendConfig& cfg) {
  const std::size_t pixels = 3 * cfg.image_size * cfg.image_size;
  const std::size_t cols = cfg.feat_channels * cfg.feat_h * cfg.feat_w + cfg.tail_layers() * cfg.latent_dim;
  if (pixels * cols > kMaxToyMatrixElements || pixels * cfg.frs_dim > kMaxToyMatrixElements) {
    throw ConfigError("toy backends support desk-scale configurations only (" + shape_str(cfg.image_shape()) + " is too large)");
  }
}

}  // namespace

Embedding::Embedding(std::vector<double> v) : v_(std::move(v)) {
  double n = 0;
  for (double x : v_) n += x * x;
  n = std::sqrt(n);
  if (!std::isfinite(n)) throw NonFiniteValue("embedding contains non-finite values");
  if (n < 1e-12) {
    std::fill(v_.begin(), v_.end(), 0.0);
    if (!v_.empty()) v_[0] = 1.0;
    return;
  }
  for (double& x : v_) x /= n;
}

double similarity(const Embedding& a, const Embedding& b) {
  if (a.dim() != b.dim()) throw ShapeMismatch("embedding dimensions differ");
  double s = 0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += a.values()[i] * b.values()[i];
  return std::clamp(s, -1.0, 1.0);
}

std::pair<LatentCode, FeatureMap> Encoder::encode(const ImageTensor& image) const {
  auto [w, f] = encode_batch(as_batch(image.tensor()));
  return {LatentCode(drop_batch(w)), FeatureMap(drop_batch(f))};
}

ImageTensor Generator::synthesize(const FeatureMap& features, const LatentCode& w_tail) const {
  Tape tape;
  Var img = synthesize(tape, tape.constant(as_batch(features.tensor())), tape.constant(as_batch(w_tail.tensor())));
  return ImageTensor(drop_batch(img.value()));
}

Embedding FaceRecognizer::embed(const ImageTensor& image) const { return embed_batch(as_batch(image.tensor())).at(0); }

std::vector<Embedding> FaceRecognizer::embed_batch(const Tensor& images) const {
  Tape tape;
  const Tensor e = embed(tape, tape.constant(images)).value();
  const std::size_t n = e.dim(0), d = e.dim(1);
  std::vector<Embedding> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.emplace_back(std::vector<double>(e.vec().begin() + static_cast<std::ptrdiff_t>(i * d),
                                         e.vec().begin() + static_cast<std::ptrdiff_t>((i + 1) * d)));
  return out;
}

std::vector<FeatureMap> PerceptualNet::features(const ImageTensor& image) const {
  Tape tape;
  std::vector<FeatureMap> out;
  for (const Var& v : features(tape, tape.constant(as_batch(image.tensor())))) out.emplace_back(drop_batch(v.value()));
  return out;
}

double Discriminator::logit(const ImageTensor& image) const {
  Tape tape;
  return logit(tape, tape.constant(as_batch(image.tensor()))).value()[0];
}

std::uint64_t Discriminator::digest() { return nn::digest(parameters()); }

// ---------------------------------------------------------------- generator

ToyGenerator::ToyGenerator(const BackendConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  check_toy_size(cfg_);
  const std::size_t s = cfg_.image_size, c = cfg_.feat_channels, fh = cfg_.feat_h, fw = cfg_.feat_w;
  const std::size_t r = s / fh;
  if (3 * r * r < c) {
    throw ConfigError("toy generator needs 3 * (image_size / feat_h)^2 >= feat_channels to stay injective");
  }
  feature_dim_ = c * fh * fw;
  tail_dim_ = cfg_.tail_layers() * cfg_.latent_dim;
  const std::size_t pixels = 3 * s * s, cols = feature_dim_ + tail_dim_;

  std::mt19937_64 rng(cfg_.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  // Pixel-shuffle kernel: channel k at cell (i, j) paints an r x r RGB block.
  std::vector<double> kernel(c * 3 * r * r);
  for (auto& v : kernel) v = normal(rng) / std::sqrt(static_cast<double>(c));

  Tensor m({pixels, cols});
  std::vector<double> img(pixels);
  double feat_norm_sq = 0;
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < fh; ++i)
      for (std::size_t j = 0; j < fw; ++j) {
        std::fill(img.begin(), img.end(), 0.0);
        for (std::size_t ch = 0; ch < 3; ++ch)
          for (std::size_t a = 0; a < r; ++a)
            for (std::size_t b = 0; b < r; ++b)
              img[(ch * s + r * i + a) * s + r * j + b] = kernel[((k * 3 + ch) * r + a) * r + b];
        // 0.6 identity + 0.4 blur: smooth, and its frequency response stays >= 0.6.
        std::vector<double> blurred = img;
        for (std::size_t ch = 0; ch < 3; ++ch) blur_plane(blurred.data() + ch * s * s, s, s);
        const std::size_t col = (k * fh + i) * fw + j;
        for (std::size_t p = 0; p < pixels; ++p) {
          const double v = 0.6 * img[p] + 0.4 * blurred[p];
          m[p * cols + col] = v;
          feat_norm_sq += v * v;
        }
      }
  const double target_norm = std::sqrt(feat_norm_sq / static_cast<double>(feature_dim_));

  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_int_distribution<int> freq(0, 2);
  for (std::size_t t = 0; t < tail_dim_; ++t) {
    double colour[3] = {normal(rng), normal(rng), normal(rng)};
    const double fy = freq(rng), fx = freq(rng), py = phase(rng), px = phase(rng);
    double norm_sq = 0;
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x) {
          const double v = colour[ch] * std::cos(std::numbers::pi * fy * (y + 0.5) / s + py) *
                           std::cos(std::numbers::pi * fx * (x + 0.5) / s + px);
          img[(ch * s + y) * s + x] = v;
          norm_sq += v * v;
        }
    const double scale = target_norm / std::sqrt(norm_sq);
    for (std::size_t p = 0; p < pixels; ++p) m[p * cols + feature_dim_ + t] = img[p] * scale;
  }
  matrix_ = std::make_shared<const Tensor>(std::move(m));
}

Var ToyGenerator::synthesize(Tape& tape, const Var& features, const Var& w_tail) const {
  (void)tape;
  require_batch_shape(features, cfg_.feature_shape(), "ToyGenerator features");
  require_batch_shape(w_tail, {cfg_.tail_layers(), cfg_.latent_dim}, "ToyGenerator w_tail");
  if (features.dim(0) != w_tail.dim(0)) throw ShapeMismatch("ToyGenerator: batch sizes differ");
  const std::size_t n = features.dim(0), s = cfg_.image_size;
  Var code = ad::concat_channels(ad::reshape(features, {n, feature_dim_}), ad::reshape(w_tail, {n, tail_dim_}));
  return ad::reshape(ad::matmul_fixed(code, matrix_), {n, 3, s, s});
}

std::vector<double> ToyGenerator::apply(const std::vector<double>& code) const {
  const std::size_t cols = feature_dim_ + tail_dim_;
  if (code.size() != cols) throw ShapeMismatch("ToyGenerator::apply: code length");
  const std::size_t rows = matrix_->dim(0);
  std::vector<double> out(rows, 0.0);
  for (std::size_t p = 0; p < rows; ++p) {
    const double* row = matrix_->data().data() + p * cols;
    double acc = 0;
    for (std::size_t j = 0; j < cols; ++j) acc += row[j] * code[j];
    out[p] = acc;
  }
  return out;
}

std::uint64_t ToyGenerator::digest() const { return fnv_tensors({{"generator.matrix", matrix_.get()}}); }

// ---------------------------------------------------------------- encoder

ToyEncoder::ToyEncoder(const BackendConfig& cfg, const ToyGenerator& generator) : cfg_(cfg) {
  const Tensor& m = generator.matrix();
  const auto rows = static_cast<Eigen::Index>(m.dim(0)), cols = static_cast<Eigen::Index>(m.dim(1));
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> em(m.data().data(), rows,
                                                                                              cols);
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(em);
  if (cod.rank() != cols) throw ConfigError("toy generator is not injective; choose another backend.seed");
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> pinv = cod.pseudoInverse();
  pinv_ = Tensor({m.dim(1), m.dim(0)}, std::vector<double>(pinv.data(), pinv.data() + pinv.size()));

  std::mt19937_64 rng(cfg_.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(m.dim(0))));
  head_ = Tensor({cfg_.injection_layer_k * cfg_.latent_dim, m.dim(0)});
  for (auto& v : head_.vec()) v = normal(rng);
}

std::pair<Tensor, Tensor> ToyEncoder::encode_batch(const Tensor& images) const {
  require_batch_shape(images, cfg_.image_shape(), "ToyEncoder");
  const std::size_t n = images.dim(0), pixels = pinv_.dim(1), codes = pinv_.dim(0), heads = head_.dim(0);
  const std::size_t fdim = cfg_.feat_channels * cfg_.feat_h * cfg_.feat_w;
  Shape wshape{n, cfg_.latent_layers, cfg_.latent_dim};
  Shape fshape{n, cfg_.feat_channels, cfg_.feat_h, cfg_.feat_w};
  Tensor w(wshape), f(fshape);
  const std::size_t wsize = cfg_.latent_layers * cfg_.latent_dim;
  for (std::size_t b = 0; b < n; ++b) {
    const double* x = images.data().data() + b * pixels;
    for (std::size_t i = 0; i < codes; ++i) {
      const double* row = pinv_.data().data() + i * pixels;
      double acc = 0;
      for (std::size_t p = 0; p < pixels; ++p) acc += row[p] * x[p];
      if (i < fdim) {
        f[b * fdim + i] = acc;
      } else {
        w[b * wsize + heads + (i - fdim)] = acc;
      }
    }
    for (std::size_t i = 0; i < heads; ++i) {
      const double* row = head_.data().data() + i * pixels;
      double acc = 0;
      for (std::size_t p = 0; p < pixels; ++p) acc += row[p] * x[p];
      w[b * wsize + i] = acc;
    }
  }
  return {std::move(w), std::move(f)};
}

std::uint64_t ToyEncoder::digest() const { return fnv_tensors({{"encoder.pinv", &pinv_}, {"encoder.head", &head_}}); }

// ---------------------------------------------------------------- FRS

ToyFaceRecognizer::ToyFaceRecognizer(const BackendConfig& cfg, std::uint64_t seed, std::string name)
    : cfg_(cfg), name_(std::move(name)) {
  check_toy_size(cfg_);
  const std::size_t s = cfg_.image_size, pixels = 3 * s * s;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor p({cfg_.frs_dim, pixels});
  for (std::size_t r = 0; r < cfg_.frs_dim; ++r) {
    double* row = p.data().data() + r * pixels;
    for (std::size_t i = 0; i < pixels; ++i) row[i] = normal(rng);
    for (std::size_t ch = 0; ch < 3; ++ch) {
      blur_plane(row + ch * s * s, s, s);
      blur_plane(row + ch * s * s, s, s);
    }
    double mean = 0;
    for (std::size_t i = 0; i < pixels; ++i) mean += row[i];
    mean /= static_cast<double>(pixels);
    double norm = 0;
    for (std::size_t i = 0; i < pixels; ++i) {
      row[i] -= mean;
      norm += row[i] * row[i];
    }
    norm = std::sqrt(norm);
    for (std::size_t i = 0; i < pixels; ++i) row[i] /= norm;
  }
  projection_ = std::make_shared<const Tensor>(std::move(p));
}

Var ToyFaceRecognizer::embed(Tape& tape, const Var& images) const {
  (void)tape;
  require_batch_shape(images, cfg_.image_shape(), "ToyFaceRecognizer");
  const std::size_t n = images.dim(0);
  Var flat = ad::reshape(images, {n, projection_->dim(1)});
  return ad::l2_normalize_rows(ad::matmul_fixed(flat, projection_));
}

std::uint64_t ToyFaceRecognizer::digest() const { return fnv_tensors({{name_ + ".projection", projection_.get()}}); }

// ---------------------------------------------------------------- perceptual

ToyPerceptualNet::ToyPerceptualNet(const BackendConfig& cfg) {
  const std::size_t channels[] = {3, 8, 16, 16};
  std::mt19937_64 rng(cfg.seed + 101);
  for (std::size_t st = 0; st < 3; ++st) {
    const std::size_t in = channels[st], out = channels[st + 1];
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(in * 9)));
    Tensor w({out, in, 3, 3});
    for (auto& v : w.vec()) v = normal(rng);
    weights_.push_back(std::move(w));
  }
  if (cfg.image_size < 8) throw ConfigError("perceptual net needs image_size >= 8");
}

std::vector<Var> ToyPerceptualNet::features(Tape& tape, const Var& images) const {
  if (images.value().rank() != 4 || images.dim(1) != 3) {
    throw ShapeMismatch("perceptual net expects [N, 3, H, W], got " + shape_str(images.shape()));
  }
  std::vector<Var> out;
  Var x = images;
  for (const Tensor& w : weights_) {
    x = ad::tanh(ad::conv2d(x, tape.constant(w), nullptr, 2, 1));
    out.push_back(ad::normalize_channels(x));
  }
  return out;
}

std::uint64_t ToyPerceptualNet::digest() const {
  std::vector<std::pair<std::string, const Tensor*>> items;
  for (std::size_t i = 0; i < weights_.size(); ++i) items.emplace_back("perceptual." + std::to_string(i), &weights_[i]);
  return fnv_tensors(items);
}

// ---------------------------------------------------------------- discriminator

MlpDiscriminator::MlpDiscriminator(const BackendConfig& cfg, std::uint64_t seed) {
  const std::size_t pixels = 3 * cfg.image_size * cfg.image_size, hidden = cfg.disc_hidden;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n1(0.0, 1.0 / std::sqrt(static_cast<double>(pixels)));
  std::normal_distribution<double> n2(0.0, 1.0 / std::sqrt(static_cast<double>(hidden)));
  w1_ = Parameter{"disc.w1", Tensor({hidden, pixels}), {}};
  for (auto& v : w1_.value.vec()) v = n1(rng);
  b1_ = Parameter{"disc.b1", Tensor({hidden}), {}};
  w2_ = Parameter{"disc.w2", Tensor({1, hidden}), {}};
  for (auto& v : w2_.value.vec()) v = n2(rng);
  b2_ = Parameter{"disc.b2", Tensor({1}), {}};
}

Var MlpDiscriminator::logit(Tape& tape, const Var& images) const {
  const std::size_t n = images.dim(0);
  Var flat = ad::reshape(images, {n, w1_.value.dim(1)});
  Var h = ad::tanh(ad::add_rowvec(ad::matmul(flat, ad::transpose(tape.parameter(w1_))), tape.parameter(b1_)));
  Var out = ad::add_rowvec(ad::matmul(h, ad::transpose(tape.parameter(w2_))), tape.parameter(b2_));
  return ad::reshape(out, {n});
}

Discriminator::WithInputGradient MlpDiscriminator::logit_with_input_gradient(Tape& tape, const Var& images) const {
  const std::size_t n = images.dim(0), hidden = w1_.value.dim(0);
  Var w1 = tape.parameter(w1_);
  Var w2 = tape.parameter(w2_);
  Var flat = ad::reshape(images, {n, w1_.value.dim(1)});
  Var h = ad::tanh(ad::add_rowvec(ad::matmul(flat, ad::transpose(w1)), tape.parameter(b1_)));
  Var out = ad::add_rowvec(ad::matmul(h, ad::transpose(w2)), tape.parameter(b2_));
  // d logit / d x = W1^T (w2 * (1 - h^2)), assembled from tape ops.
  Var slope = ad::sub(tape.constant(Tensor({n, hidden}, 1.0)), ad::square(h));
  Var w2_rows = ad::matmul(tape.constant(Tensor({n, 1}, 1.0)), w2);
  Var grad_x = ad::matmul(ad::mul(slope, w2_rows), w1);
  return {ad::reshape(out, {n}), ad::sum_per_sample(ad::square(grad_x))};
}

nn::ParameterList MlpDiscriminator::parameters() { return {&w1_, &b1_, &w2_, &b2_}; }

// ---------------------------------------------------------------- preprocess

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  if (image.rank() != 3) throw ShapeMismatch("resize_bilinear expects CxHxW");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == out_h && w == out_w) return image;
  Tensor out({c, out_h, out_w});
  const double sy = static_cast<double>(h) / out_h, sx = static_cast<double>(w) / out_w;
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double ty = fy - y0;
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double tx = fx - x0;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double top = (1 - tx) * image.at(ch, y0, x0) + tx * image.at(ch, y0, x1);
        const double bot = (1 - tx) * image.at(ch, y1, x0) + tx * image.at(ch, y1, x1);
        out.at(ch, y, x) = (1 - ty) * top + ty * bot;
      }
    }
  }
  return out;
}

ImageTensor ResizePreprocessor::operator()(const Tensor& raw) const {
  if (raw.rank() != 3 || raw.dim(0) != 3 || raw.dim(1) == 0 || raw.dim(2) == 0) {
    throw DecodeError("expected a 3-channel image, got shape " + shape_str(raw.shape()));
  }
  if (!raw.all_finite()) throw DecodeError("image contains non-finite values");
  Tensor t = raw;
  const double lo = t.min(), hi = t.max();
  if (lo < -1.0 || hi > 1.0) {
    if (lo < 0.0 || hi > 255.0) throw DecodeError("pixel values outside both [-1, 1] and [0, 255]");
    for (auto& v : t.vec()) v = v / 127.5 - 1.0;
  }
  t = resize_bilinear(t, size_, size_);
  for (auto& v : t.vec()) v = std::clamp(v, -1.0, 1.0);
  return ImageTensor(std::move(t));
}

// ---------------------------------------------------------------- bundle

std::uint64_t Backends::frozen_digest() const {
  std::uint64_t parts[4] = {encoder->digest(), generator->digest(), frs->digest(), perceptual->digest()};
  std::string bytes(reinterpret_cast<const char*>(parts), sizeof parts);
  return fnv1a64(bytes);
}

const ToyGenerator& Backends::toy_generator() const {
  const auto* g = dynamic_cast<const ToyGenerator*>(generator.get());
  if (g == nullptr) throw ConfigError("operation requires the toy generator backend");
  return *g;
}

Backends make_toy_backends(const BackendConfig& cfg) {
  cfg.validate();
  check_toy_size(cfg);
  Backends b;
  b.config = cfg;
  auto gen = std::make_shared<const ToyGenerator>(cfg);
  b.encoder = std::make_shared<const ToyEncoder>(cfg, *gen);
  b.generator = gen;
  b.frs = std::make_shared<const ToyFaceRecognizer>(cfg, cfg.seed + 1);
  b.perceptual = std::make_shared<const ToyPerceptualNet>(cfg);
  b.preprocess = std::make_shared<const ResizePreprocessor>(cfg.image_size);
  return b;
}

std::unique_ptr<Discriminator> make_discriminator(const BackendConfig& cfg, std::uint64_t seed) {
  return std::make_unique<MlpDiscriminator>(cfg, seed);
}

}  // namespace sfdm
