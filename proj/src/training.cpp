#include "sfdm/training.hpp"

#include <algorithm>
#include <sstream>

#include "sfdm/error.hpp"
#include "sfdm/io.hpp"
#include "sfdm/serialize.hpp"

namespace sfdm {

namespace {

constexpr char kMagic[] = "SFDM1";
constexpr std::uint64_t kVersion = 1;

void write_section(BinaryWriter& w, const std::string& name, const nn::ParameterList& params) {
  w.str(name);
  w.u64(params.size());
  for (const Parameter* p : params) {
    w.str(p->name);
    w.tensor(p->value);
  }
}

void read_section(BinaryReader& r, const std::string& name, const nn::ParameterList& params) {
  if (r.str() != name) throw StateMismatch("checkpoint section missing: " + name);
  if (r.u64() != params.size()) throw StateMismatch("checkpoint section " + name + " has a different layout");
  for (Parameter* p : params) {
    const std::string pname = r.str();
    Tensor t = r.tensor();
    if (pname != p->name || t.shape() != p->value.shape())
      throw StateMismatch("checkpoint parameter mismatch at " + p->name);
    p->value = std::move(t);
  }
}

CheckpointInfo read_header(BinaryReader& r, std::istream& is) {
  char magic[5];
  is.read(magic, 5);
  if (is.gcount() != 5 || std::string(magic, 5) != kMagic) throw DecodeError("not an SFDM1 checkpoint");
  CheckpointInfo info;
  info.version = r.u64();
  if (info.version != kVersion) throw StateMismatch("unsupported checkpoint version");
  info.model_digest = r.str();
  info.manifest_digest = r.str();
  info.step = r.u64();
  return info;
}

Tensor stack_images(const std::vector<const ImageTensor*>& images) {
  std::vector<Tensor> t;
  for (const auto* i : images) t.push_back(i->tensor());
  return stack(t);
}

}  // namespace

std::string_view to_string(PassType p) { return p == PassType::BonaFide ? "bonafide" : "morphed"; }

PassType next_pass(std::size_t step) noexcept { return step % 2 == 0 ? PassType::BonaFide : PassType::Morphed; }

double curriculum_probability(std::size_t step, const TrainConfig& cfg) {
  if (cfg.curriculum_cap_step == 0) return cfg.curriculum_p_max;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(cfg.curriculum_cap_step));
  return cfg.curriculum_p_max * frac;
}

const ImageTensor& sample_reference(const MorphSample& entry, std::size_t step, const TrainConfig& cfg,
                                    std::mt19937_64& rng) {
  if (entry.ref_live.empty()) throw MissingLiveCapture("morph entry has no live capture of the reference subject");
  std::bernoulli_distribution live(curriculum_probability(step, cfg));
  if (!live(rng)) return entry.ref_document;
  std::uniform_int_distribution<std::size_t> pick(0, entry.ref_live.size() - 1);
  return entry.ref_live[pick(rng)];
}

TrainBatch make_batch(const TrainingSet& set, std::size_t step, const TrainConfig& cfg) {
  if (set.bona_fide.empty() || set.morphs.empty())
    throw EmptyDataset("training needs both bona fide and morph entries");
  std::mt19937_64 rng(derive_seed(cfg.seed, {0xba7c, step}));
  TrainBatch b;
  b.pass = next_pass(step);
  b.curriculum_p = curriculum_probability(step, cfg);
  std::vector<const ImageTensor*> docs, refs, gts;
  for (std::size_t i = 0; i < cfg.batch_size; ++i) {
    if (b.pass == PassType::BonaFide) {
      const auto& e = set.bona_fide[std::uniform_int_distribution<std::size_t>(0, set.bona_fide.size() - 1)(rng)];
      if (e.live.empty()) throw MissingLiveCapture("bona fide entry has no live capture");
      docs.push_back(&e.doc);
      gts.push_back(&e.doc);
      refs.push_back(&e.live[std::uniform_int_distribution<std::size_t>(0, e.live.size() - 1)(rng)]);
    } else {
      const auto& e = set.morphs[std::uniform_int_distribution<std::size_t>(0, set.morphs.size() - 1)(rng)];
      docs.push_back(&e.morph);
      gts.push_back(&e.gt);
      refs.push_back(&sample_reference(e, step, cfg, rng));
    }
  }
  b.docs = stack_images(docs);
  b.refs = stack_images(refs);
  b.gts = stack_images(gts);
  return b;
}

std::string log_header() { return "step,pass,l2,ms_ssim,lpips,id,inv_id,feat,adv,im,total,disc,curriculum_p"; }

std::string format_log_row(const LogRow& row) {
  const LossReport& r = row.report;
  std::string s = std::to_string(row.step) + "," + std::string(to_string(row.pass));
  for (double v : {r.l2, r.ms_ssim, r.lpips, r.id, r.inv_id, r.feat, r.adv, r.im_composite, r.total, r.disc,
                   row.curriculum_p})
    s += "," + io::format_double(v);
  return s;
}

Trainer::Trainer(const RunConfig& cfg, Backends backends, std::string manifest_digest)
    : cfg_(cfg), backends_(std::move(backends)), manifest_digest_(std::move(manifest_digest)) {
  cfg_.validate();
  if (!(cfg_.backend == backends_.config)) throw ConfigError("backends were built for a different configuration");
  model_ = std::make_unique<DemorpherModel>(cfg_.backend, cfg_.model);
  model_->warm_start(*backends_.encoder);
  disc_ = make_discriminator(cfg_.backend, derive_seed(cfg_.model.seed, {0xd15c}));
  opt_modules_ = optim::make_module_optimizer(cfg_.train.optimizer, model_->parameters(), cfg_.train.lr_modules);
  opt_disc_ = optim::make_disc_optimizer(disc_->parameters(), cfg_.train.lr_disc);
}

LossReport Trainer::train_step(const TrainBatch& batch) {
  if (batch.gts.size() == 0) throw MissingGroundTruth("training batch carries no ground truth");
  require_same_shape(batch.docs, batch.gts, "train_step");
  require_same_shape(batch.docs, batch.refs, "train_step");
  const LossWeights& w = batch.pass == PassType::BonaFide ? cfg_.loss.bona_fide : cfg_.loss.morphed;

  opt_modules_->zero_grad();
  Tensor out;
  LossReport report;
  {
    Tape tape;
    const DemorphTrace trace = model_->forward(tape, backends_, batch.docs, batch.refs, true);
    const GeneratorObjective obj =
        generator_objective(tape, trace, batch.gts, batch.refs, w, cfg_.loss.ms_ssim, backends_, *disc_);
    tape.backward(obj.total);
    report = obj.report;
    out = trace.image.value();
  }
  opt_modules_->step();

  // the adversarial term also reached the critic's gradients; start clean
  opt_disc_->zero_grad();
  {
    Tape tape;
    const DiscriminatorTerms terms = discriminator_per_sample(tape, batch.gts, out, w.gamma_r1, *disc_);
    const Var loss = ad::mean(terms.total);
    tape.backward(loss);
    report.disc = loss.value()[0];
  }
  opt_disc_->step();
  return report;
}

std::vector<LogRow> Trainer::run(const TrainingSet& set, std::size_t until,
                                 const std::function<void(const LogRow&)>& on_step) {
  std::vector<LogRow> rows;
  while (step_ < until) {
    const TrainBatch batch = make_batch(set, step_, cfg_.train);
    LogRow row;
    row.step = step_;
    row.pass = batch.pass;
    row.curriculum_p = batch.curriculum_p;
    row.report = train_step(batch);
    ++step_;
    rows.push_back(row);
    if (on_step) on_step(row);
  }
  return rows;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  std::ostringstream os;
  os.write(kMagic, 5);
  BinaryWriter w(os);
  w.u64(kVersion);
  w.str(cfg_.model_digest());
  w.str(manifest_digest_);
  w.u64(step_);
  write_section(w, "fdm", model_->fdm_parameters());
  write_section(w, "idm", model_->idm_parameters());
  write_section(w, "ffm", model_->ffm_parameters());
  write_section(w, "disc", disc_->parameters());
  w.str("opt_modules");
  opt_modules_->save(w);
  w.str("opt_disc");
  opt_disc_->save(w);
  io::write_file_atomic(path, os.str());
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  std::istringstream is(io::read_file(path));
  BinaryReader r(is);
  const CheckpointInfo info = read_header(r, is);
  if (info.model_digest != cfg_.model_digest())
    throw StateMismatch("checkpoint was written under a different configuration");
  if (info.manifest_digest != manifest_digest_)
    throw StateMismatch("checkpoint was trained on a different corpus");
  read_section(r, "fdm", model_->fdm_parameters());
  read_section(r, "idm", model_->idm_parameters());
  read_section(r, "ffm", model_->ffm_parameters());
  read_section(r, "disc", disc_->parameters());
  if (r.str() != "opt_modules") throw StateMismatch("checkpoint lacks module optimizer state");
  opt_modules_->load(r);
  if (r.str() != "opt_disc") throw StateMismatch("checkpoint lacks discriminator optimizer state");
  opt_disc_->load(r);
  step_ = info.step;
}

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  std::istringstream is(io::read_file(path));
  BinaryReader r(is);
  return read_header(r, is);
}

std::unique_ptr<DemorpherModel> load_model(const std::filesystem::path& path, const RunConfig& cfg) {
  std::istringstream is(io::read_file(path));
  BinaryReader r(is);
  const CheckpointInfo info = read_header(r, is);
  if (info.model_digest != cfg.model_digest())
    throw StateMismatch("checkpoint was written under a different configuration");
  auto model = std::make_unique<DemorpherModel>(cfg.backend, cfg.model);
  read_section(r, "fdm", model->fdm_parameters());
  read_section(r, "idm", model->idm_parameters());
  read_section(r, "ffm", model->ffm_parameters());
  return model;
}

}  // namespace sfdm
