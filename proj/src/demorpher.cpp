#include "sfdm/demorpher.hpp"

#include <algorithm>

#include "sfdm/error.hpp"

namespace sfdm {

namespace {

std::size_t log2_exact(std::size_t v) {
  std::size_t n = 0;
  while ((std::size_t{1} << n) < v) ++n;
  return n;
}

// [I | 0]: the first `out` input channels pass through unchanged.
std::vector<std::vector<double>> select_first(std::size_t out, std::size_t in) {
  std::vector<std::vector<double>> m(out, std::vector<double>(in, 0.0));
  for (std::size_t i = 0; i < out; ++i) m[i][i] = 1.0;
  return m;
}

std::vector<std::vector<double>> zeros(std::size_t out, std::size_t in) {
  return std::vector<std::vector<double>>(out, std::vector<double>(in, 0.0));
}

Tensor as_batch(const Tensor& t) {
  Shape s{1};
  s.insert(s.end(), t.shape().begin(), t.shape().end());
  return t.reshaped(s);
}

void require_features(const Var& v, const BackendConfig& cfg, const char* what) {
  const Shape& s = v.shape();
  const Shape want = cfg.feature_shape();
  if (s.size() != 4 || !std::equal(want.begin(), want.end(), s.begin() + 1)) {
    throw ShapeMismatch(std::string(what) + ": expected [N, " + shape_str(want) + "], got " + shape_str(s));
  }
}

}  // namespace

DemorpherShapes demorpher_shapes(const BackendConfig& b, const ModelConfig& m) {
  (void)m;
  b.validate();
  const std::size_t c = b.feat_channels;
  DemorpherShapes s;
  s.fdm_input = {2 * c, b.feat_h, b.feat_w};
  s.fdm_output = b.feature_shape();
  s.idm_input = {6, b.image_size, b.image_size};
  s.idm_latent = b.latent_shape();
  s.idm_features = b.feature_shape();
  s.ffm_input = {2 * c, b.feat_h, b.feat_w};
  s.ffm_output = b.feature_shape();
  return s;
}

FeatureDemorphModule::FeatureDemorphModule(const BackendConfig& b, const ModelConfig& m, std::mt19937_64& rng) {
  const std::size_t c = b.feat_channels;
  for (std::size_t i = 0; i < m.fdm_blocks; ++i) {
    const std::size_t in = i <= 1 ? 2 * c : c;
    const std::size_t out = i == 0 ? 2 * c : c;
    blocks_.emplace_back("fdm.block" + std::to_string(i), in, out, 1, rng, m.bn_momentum);
  }
  skip_ = nn::Conv2d("fdm.skip", 2 * c, c, 1, 1, 0, true, rng);
  skip_.set_pointwise(select_first(c, 2 * c));
  proj_ = nn::Conv2d("fdm.proj", c, c, 1, 1, 0, false, rng);
  proj_.set_pointwise(zeros(c, c));
}

Var FeatureDemorphModule::forward(Tape& tape, const Var& f_doc, const Var& f_ref, bool training) const {
  const Var in = ad::concat_channels(f_doc, f_ref);
  Var x = in;
  for (const auto& blk : blocks_) x = blk.forward(tape, x, training);
  return ad::add(skip_.forward(tape, in), proj_.forward(tape, x));
}

void FeatureDemorphModule::collect(nn::ParameterList& out) {
  for (auto& blk : blocks_) blk.collect(out);
  skip_.collect(out);
  proj_.collect(out);
}

ImageDemorphModule::ImageDemorphModule(const BackendConfig& b, const ModelConfig& m, std::mt19937_64& rng) : cfg_(b) {
  const std::size_t ci = m.idm_channels;
  stem_ = nn::Conv2d("idm.stem.conv", 6, ci, 3, 1, 1, false, rng);
  stem_bn_ = nn::BatchNorm2d("idm.stem.bn", ci, m.bn_momentum);
  stem_act_ = nn::PReLU("idm.stem.prelu", ci);
  const std::size_t downs = log2_exact(b.image_size / b.feat_h);
  for (std::size_t i = 0; i < downs; ++i)
    down_.emplace_back("idm.down" + std::to_string(i), ci, ci, 2, rng, m.bn_momentum);
  lateral_ = nn::Conv2d("idm.lateral", ci, b.feat_channels, 1, 1, 0, true, rng);
  tail_ = nn::ResNetIRBlock("idm.tail", ci, ci, 2, rng, m.bn_momentum);
  const Shape t = nn::ResNetIRBlock::output_shape({ci, b.feat_h, b.feat_w}, ci, 2);
  latent_head_ = nn::Linear("idm.latent_head", numel(t), b.latent_layers * b.latent_dim, rng, 0.0);
  latent_skip_ = nn::Linear("idm.latent_skip", 6 * b.image_size * b.image_size, b.latent_layers * b.latent_dim, rng, 0.0);
}

std::pair<Var, Var> ImageDemorphModule::forward(Tape& tape, const Var& doc, const Var& ref, bool training) const {
  Var x = ad::concat_channels(doc, ref);
  x = stem_act_.forward(tape, stem_bn_.forward(tape, stem_.forward(tape, x), training));
  for (const auto& blk : down_) x = blk.forward(tape, x, training);
  Var f_idm = lateral_.forward(tape, x);
  Var t = tail_.forward(tape, x, training);
  const std::size_t n = t.dim(0);
  Var w = latent_head_.forward(tape, ad::reshape(t, {n, t.value().size() / n}));
  const Var pixels = ad::concat_channels(doc, ref);
  w = ad::add(w, latent_skip_.forward(tape, ad::reshape(pixels, {n, pixels.value().size() / n})));
  return {ad::reshape(w, {n, cfg_.latent_layers, cfg_.latent_dim}), f_idm};
}

void ImageDemorphModule::collect(nn::ParameterList& out) {
  stem_.collect(out);
  stem_bn_.collect(out);
  stem_act_.collect(out);
  for (auto& blk : down_) blk.collect(out);
  lateral_.collect(out);
  tail_.collect(out);
  latent_head_.collect(out);
  latent_skip_.collect(out);
}

FeatureFusionModule::FeatureFusionModule(const BackendConfig& b, const ModelConfig& m, std::mt19937_64& rng) {
  const std::size_t c = b.feat_channels;
  for (std::size_t i = 0; i < m.ffm_blocks; ++i)
    blocks_.emplace_back("ffm.block" + std::to_string(i), i == 0 ? 2 * c : c, c, 1, rng, m.bn_momentum);
  skip_ = nn::Conv2d("ffm.skip", 2 * c, c, 1, 1, 0, true, rng);
  skip_.set_pointwise(select_first(c, 2 * c));
  proj_ = nn::Conv2d("ffm.proj", c, c, 1, 1, 0, false, rng);
  proj_.set_pointwise(zeros(c, c));
}

Var FeatureFusionModule::forward(Tape& tape, const Var& f_fdm, const Var& f_idm, bool training) const {
  const Var in = ad::concat_channels(f_fdm, f_idm);
  Var x = in;
  for (const auto& blk : blocks_) x = blk.forward(tape, x, training);
  return ad::add(skip_.forward(tape, in), proj_.forward(tape, x));
}

void FeatureFusionModule::collect(nn::ParameterList& out) {
  for (auto& blk : blocks_) blk.collect(out);
  skip_.collect(out);
  proj_.collect(out);
}

DemorpherModel::DemorpherModel(const BackendConfig& backend, const ModelConfig& model)
    : backend_(backend), model_(model) {
  backend_.validate();
  if (model_.fdm_blocks < 2 || model_.ffm_blocks < 1) throw ConfigError("model needs >= 2 FDM and >= 1 FFM blocks");
  std::mt19937_64 rng(model_.seed);
  fdm_ = FeatureDemorphModule(backend_, model_, rng);
  idm_ = ImageDemorphModule(backend_, model_, rng);
  ffm_ = FeatureFusionModule(backend_, model_, rng);
}

DemorphTrace DemorpherModel::forward(Tape& tape, const Backends& backends, const Tensor& docs, const Tensor& refs,
                                     bool training) const {
  if (docs.shape() != refs.shape()) {
    throw ShapeMismatch("demorph: docs " + shape_str(docs.shape()) + " vs refs " + shape_str(refs.shape()));
  }
  auto [w_doc, f_doc] = backends.encoder->encode_batch(docs);
  auto [w_ref, f_ref] = backends.encoder->encode_batch(refs);
  (void)w_doc;
  (void)w_ref;
  DemorphTrace tr;
  tr.f_doc = tape.constant(std::move(f_doc));
  tr.f_ref = tape.constant(std::move(f_ref));
  tr.f_fdm = fdm_.forward(tape, tr.f_doc, tr.f_ref, training);
  auto [w_out, f_idm] = idm_.forward(tape, tape.constant(docs), tape.constant(refs), training);
  tr.w_out = w_out;
  tr.f_idm = f_idm;
  require_features(tr.f_fdm, backend_, "FDM output");
  require_features(tr.f_idm, backend_, "IDM output");
  tr.f_out = ffm_.forward(tape, tr.f_fdm, tr.f_idm, training);
  const std::size_t k = backend_.injection_layer_k;
  Var w_tail = ad::narrow(tr.w_out, 1, k, backend_.latent_layers - k);
  tr.image = backends.generator->synthesize(tape, tr.f_out, w_tail);
  return tr;
}

void DemorpherModel::warm_start(const Encoder& encoder) {
  const std::size_t s = backend_.image_size;
  const std::size_t px = 3 * s * s;
  const std::size_t ld = backend_.latent_layers * backend_.latent_dim;
  Tensor& weight = idm_.latent_skip_.weight().value;  // [ld, 2 px]
  Tensor& bias = idm_.latent_skip_.bias().value;
  const Tensor w0 = encoder.encode_batch(Tensor({1, 3, s, s})).first;
  for (std::size_t j = 0; j < ld; ++j) bias[j] = w0[j];
  weight = Tensor(weight.shape());
  constexpr std::size_t chunk = 256;
  for (std::size_t start = 0; start < px; start += chunk) {
    const std::size_t n = std::min(chunk, px - start);
    Tensor impulses({n, 3, s, s});
    for (std::size_t i = 0; i < n; ++i) impulses[i * px + start + i] = 1.0;
    const Tensor w = encoder.encode_batch(impulses).first;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < ld; ++j) weight[j * 2 * px + start + i] = w[i * ld + j] - w0[j];
  }
}

nn::ParameterList DemorpherModel::fdm_parameters() {
  nn::ParameterList out;
  fdm_.collect(out);
  return out;
}

nn::ParameterList DemorpherModel::idm_parameters() {
  nn::ParameterList out;
  idm_.collect(out);
  return out;
}

nn::ParameterList DemorpherModel::ffm_parameters() {
  nn::ParameterList out;
  ffm_.collect(out);
  return out;
}

nn::ParameterList DemorpherModel::parameters() {
  nn::ParameterList out;
  fdm_.collect(out);
  idm_.collect(out);
  ffm_.collect(out);
  return out;
}

FeatureMap fdm_forward(const DemorpherModel& model, const FeatureMap& f_doc, const FeatureMap& f_ref) {
  if (f_doc.shape() != model.backend_config().feature_shape() || f_ref.shape() != f_doc.shape()) {
    throw ShapeMismatch("fdm_forward: feature maps must be " + shape_str(model.backend_config().feature_shape()));
  }
  Tape tape;
  Var out = model.fdm().forward(tape, tape.constant(as_batch(f_doc.tensor())), tape.constant(as_batch(f_ref.tensor())),
                                false);
  return FeatureMap(unstack(out.value(), 0));
}

std::pair<LatentCode, FeatureMap> idm_forward(const DemorpherModel& model, const ImageTensor& doc,
                                              const ImageTensor& ref) {
  if (doc.shape() != model.backend_config().image_shape() || ref.shape() != doc.shape()) {
    throw ShapeMismatch("idm_forward: images must be " + shape_str(model.backend_config().image_shape()));
  }
  Tape tape;
  auto [w, f] =
      model.idm().forward(tape, tape.constant(as_batch(doc.tensor())), tape.constant(as_batch(ref.tensor())), false);
  return {LatentCode(unstack(w.value(), 0)), FeatureMap(unstack(f.value(), 0))};
}

FeatureMap ffm_forward(const DemorpherModel& model, const FeatureMap& f_fdm, const FeatureMap& f_idm) {
  if (f_fdm.shape() != model.backend_config().feature_shape() || f_idm.shape() != f_fdm.shape()) {
    throw ShapeMismatch("ffm_forward: feature maps must be " + shape_str(model.backend_config().feature_shape()));
  }
  Tape tape;
  Var out = model.ffm().forward(tape, tape.constant(as_batch(f_fdm.tensor())), tape.constant(as_batch(f_idm.tensor())),
                                false);
  return FeatureMap(unstack(out.value(), 0));
}

DemorphResult demorph(const DocumentPair& pair, const DemorpherModel& model, const Backends& backends) {
  validate_pair(pair);
  Tape tape;
  const DemorphTrace tr = model.forward(tape, backends, as_batch(pair.doc.tensor()), as_batch(pair.ref.tensor()), false);
  return {ImageTensor(unstack(tr.image.value(), 0)), FeatureMap(unstack(tr.f_out.value(), 0)),
          LatentCode(unstack(tr.w_out.value(), 0))};
}

Tensor demorph_batch(const Tensor& docs, const Tensor& refs, const DemorpherModel& model, const Backends& backends) {
  Tape tape;
  return model.forward(tape, backends, docs, refs, false).image.value();
}

}  // namespace sfdm
