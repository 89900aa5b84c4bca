#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "factordiff/data.hpp"
#include "factordiff/denoiser.hpp"
#include "factordiff/engine.hpp"
#include "factordiff/predictor.hpp"
#include "factordiff/schedule.hpp"

namespace factordiff {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Datasets and panels
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kDatasetVersion = 1;

/// Binary sequence dataset (layout in docs/formats.md).
void save_dataset(const SequenceBatch& batch, const fs::path& path);
SequenceBatch load_dataset(const fs::path& path);

/// Comma-separated panel with header date,stock_id,sector_id,close,f0..f{d-1}.
void write_panel_csv(const FactorPanel& panel, const fs::path& path);
FactorPanel read_panel_csv(const fs::path& path);

/// Generator ground truth and split boundaries, stored as JSON next to the panel.
struct MarketSidecar {
  std::uint64_t seed = 0;
  double snr = 0.0;
  std::vector<double> weights;
  std::vector<double> normalized_weights;
  std::vector<std::size_t> target_stocks;
  DateSplit split;
  std::string config = "{}";  // JSON text
};
void write_sidecar(const MarketSidecar& sidecar, const fs::path& path);
MarketSidecar read_sidecar(const fs::path& path);

/// Per-sample training losses as CSV: stock_id,date,loss.
void write_losses(const LossRegistry& losses, const fs::path& path);
LossRegistry read_losses(const fs::path& path);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointKind : std::uint32_t { denoiser = 1, regressor = 2 };
std::string to_string(CheckpointKind kind);

struct Checkpoint {
  CheckpointKind kind = CheckpointKind::denoiser;
  std::string config = "{}";    // model config, JSON text
  std::vector<double> betas;    // empty for regressors
  ParameterSet tensors;
  std::string metadata = "{}";  // training metadata, JSON text

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
/// Validates magic, version, section order and checksum. A non-empty
/// `expected` kind must match the stored tag.
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes,
                             std::optional<CheckpointKind> expected = std::nullopt);

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path);
Checkpoint load_checkpoint(const fs::path& path, std::optional<CheckpointKind> expected = std::nullopt);

std::string config_to_json(const DenoiserConfig& config);
DenoiserConfig denoiser_config_from_json(const std::string& text);
std::string config_to_json(const RegressorConfig& config);
RegressorConfig regressor_config_from_json(const std::string& text);

/// Denoiser, its schedule and training history. Wall-clock times are left
/// out so equal runs give equal bytes.
Checkpoint make_checkpoint(const TrainedDenoiser& trained, std::uint64_t seed, int t_prime);
Checkpoint make_checkpoint(const DenoiserModel& model, const Schedule& sched, std::string metadata = "{}");
/// The regressor's target scaling is stored as two scalar tensors.
Checkpoint make_checkpoint(const RegressorModel& model, std::string metadata = "{}");

struct LoadedDenoiser {
  DenoiserModel model;
  Schedule schedule;
};
LoadedDenoiser denoiser_from_checkpoint(const Checkpoint& ckpt);
RegressorModel regressor_from_checkpoint(const Checkpoint& ckpt);

// ---------------------------------------------------------------------------
// Small file helpers
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> read_bytes(const fs::path& path);
void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes);
std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(const std::uint8_t* data, std::size_t size) noexcept;

}  // namespace factordiff
