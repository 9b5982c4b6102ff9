#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "sfdm/backends.hpp"
#include "sfdm/config.hpp"
#include "sfdm/demorpher.hpp"
#include "sfdm/losses.hpp"
#include "sfdm/optim.hpp"

namespace sfdm {

enum class PassType { BonaFide, Morphed };
std::string_view to_string(PassType p);

/// Even steps are bona fide passes, odd steps morphed passes.
PassType next_pass(std::size_t step) noexcept;
/// p_max * min(1, step / cap_step).
double curriculum_probability(std::size_t step, const TrainConfig& cfg);

/// Bona fide pass source: the document is also the target, the reference
/// is a live capture of the same subject.
struct BonaFideSample {
  ImageTensor doc;
  std::vector<ImageTensor> live;
};

/// Morphed pass source: I_AC with the criminal's document and live captures
/// as reference candidates and the accomplice document as target.
struct MorphSample {
  ImageTensor morph;
  ImageTensor gt;
  ImageTensor ref_document;
  std::vector<ImageTensor> ref_live;
};

struct TrainingSet {
  std::vector<BonaFideSample> bona_fide;
  std::vector<MorphSample> morphs;
};

/// With the curriculum probability a live capture of the criminal (chosen
/// uniformly), otherwise the constituent document image.
const ImageTensor& sample_reference(const MorphSample& entry, std::size_t step, const TrainConfig& cfg,
                                    std::mt19937_64& rng);

struct TrainBatch {
  PassType pass = PassType::BonaFide;
  Tensor docs, refs, gts;  // [N, 3, S, S]
  double curriculum_p = 0.0;
};

/// The batch of a given step; a pure function of (set, step, cfg.seed).
TrainBatch make_batch(const TrainingSet& set, std::size_t step, const TrainConfig& cfg);

struct LogRow {
  std::size_t step = 0;
  PassType pass = PassType::BonaFide;
  LossReport report;
  double curriculum_p = 0.0;
};

std::string log_header();
std::string format_log_row(const LogRow& row);

/// Owns the trainable state: demorpher modules, discriminator and both
/// optimizers. Frozen backends are shared read-only.
class Trainer {
 public:
  /// manifest_digest identifies the training corpus; it is stored in
  /// checkpoints and must match on resume.
  Trainer(const RunConfig& cfg, Backends backends, std::string manifest_digest = "");

  /// Module update from the generator objective, then a discriminator
  /// update on the same batch with the outputs detached.
  LossReport train_step(const TrainBatch& batch);

  /// Runs steps [step(), until) and returns one log row per step.
  std::vector<LogRow> run(const TrainingSet& set, std::size_t until,
                          const std::function<void(const LogRow&)>& on_step = {});

  /// Completed steps; the next step index.
  std::size_t step() const { return step_; }

  void save_checkpoint(const std::filesystem::path& path) const;
  /// Restores a checkpoint written with the same model and corpus digests;
  /// otherwise StateMismatch.
  void load_checkpoint(const std::filesystem::path& path);

  DemorpherModel& model() { return *model_; }
  const DemorpherModel& model() const { return *model_; }
  Discriminator& discriminator() { return *disc_; }
  const Backends& backends() const { return backends_; }
  const RunConfig& config() const { return cfg_; }

 private:
  RunConfig cfg_;
  Backends backends_;
  std::string manifest_digest_;
  std::unique_ptr<DemorpherModel> model_;
  std::unique_ptr<Discriminator> disc_;
  std::unique_ptr<optim::Optimizer> opt_modules_;
  std::unique_ptr<optim::Optimizer> opt_disc_;
  std::size_t step_ = 0;
};

/// Reads a checkpoint's step counter and digests without building a model.
struct CheckpointInfo {
  std::uint64_t version = 0;
  std::string model_digest;
  std::string manifest_digest;
  std::size_t step = 0;
};
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

/// Loads only the demorpher parameters of a checkpoint into a fresh model.
std::unique_ptr<DemorpherModel> load_model(const std::filesystem::path& path, const RunConfig& cfg);

}  // namespace sfdm
