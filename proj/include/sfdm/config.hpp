#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "sfdm/core.hpp"

namespace sfdm {

/// Every shape parameter of the frozen backends. Shrinking these uniformly
/// yields the toy world.
struct BackendConfig {
  std::size_t image_size = 16;
  std::size_t latent_layers = 4;
  std::size_t latent_dim = 8;
  std::size_t feat_channels = 8;
  std::size_t feat_h = 8;
  std::size_t feat_w = 8;
  std::size_t injection_layer_k = 2;
  std::size_t frs_dim = 64;
  std::size_t disc_hidden = 32;
  std::uint64_t seed = 7;

  static BackendConfig toy() { return {}; }
  static BackendConfig reference();
  void validate() const;

  Shape image_shape() const { return {3, image_size, image_size}; }
  Shape feature_shape() const { return {feat_channels, feat_h, feat_w}; }
  Shape latent_shape() const { return {latent_layers, latent_dim}; }
  /// Number of latent layers consumed after injection at layer k.
  std::size_t tail_layers() const { return latent_layers - injection_layer_k; }

  friend bool operator==(const BackendConfig&, const BackendConfig&) = default;
};

struct ModelConfig {
  std::size_t idm_channels = 16;
  std::size_t fdm_blocks = 4;
  std::size_t ffm_blocks = 2;
  double bn_momentum = 0.1;
  std::uint64_t seed = 11;
};

struct TrainConfig {
  std::size_t total_steps = 2000;
  std::size_t batch_size = 8;
  double lr_modules = 3e-3;
  double lr_disc = 1e-3;
  std::size_t curriculum_cap_step = 1000;
  double curriculum_p_max = 0.8;
  std::uint64_t seed = 3;
  std::size_t checkpoint_every = 500;
  std::string optimizer = "ranger";

  static TrainConfig toy() { return {}; }
  static TrainConfig reference();
  void validate() const;
};

struct MsSsimConfig {
  std::size_t scales = 3;
  std::size_t window = 3;
  double sigma = 1.0;

  static MsSsimConfig reference() { return {5, 11, 1.5}; }
};

struct LossConfig {
  LossWeights bona_fide = LossWeights::bona_fide_pass();
  LossWeights morphed = LossWeights::morphed_pass();
  MsSsimConfig ms_ssim;
};

struct CorpusConfig {
  std::size_t n_identities = 100;
  std::size_t id_dim = 8;
  std::size_t live_per_identity = 3;
  double live_noise_sigma = 0.05;
  double live_illum_max = 0.1;
  double alpha = 0.5;
  std::vector<std::string> methods = {"blend", "splice"};
  std::size_t random_per_identity = 3;
  std::size_t lookalike_per_identity = 3;
  std::size_t lookalike_pool = 5;
  double target_fmr = 0.01;
  double test_fraction = 0.2;
  double splice_area = 0.44;
  double pixel_std = 0.2;
  std::uint64_t seed = 1;

  void validate() const;
};

struct EvalConfig {
  std::string dataset = "toy";
};

/// Merged, fully-resolved configuration of a run. Text form: UTF-8
/// `section.key = value` lines, `#` comments; unknown keys are rejected.
struct RunConfig {
  BackendConfig backend;
  ModelConfig model;
  TrainConfig train;
  LossConfig loss;
  CorpusConfig corpus;
  EvalConfig eval;

  static RunConfig toy() { return {}; }
  static RunConfig reference();

  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::filesystem::path& path);

  /// Canonical key -> value map (every key, sorted).
  std::map<std::string, std::string> to_map() const;
  static RunConfig from_map(const std::map<std::string, std::string>& kv);
  std::string to_text() const;

  /// Hash of the canonical form restricted to keys with one of the prefixes
  /// (all keys when empty). Independent of the order keys were written in.
  std::string digest(const std::vector<std::string>& prefixes = {}) const;
  /// Digest of the sections a checkpoint depends on.
  std::string model_digest() const { return digest({"backend.", "model.", "train.", "loss."}); }
  std::string backend_digest() const { return digest({"backend."}); }

  void validate() const;
};

std::string hex64(std::uint64_t v);
std::uint64_t fnv1a64(std::string_view bytes);
/// Deterministic child seed (splitmix64 over the parts).
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> parts);

}  // namespace sfdm
