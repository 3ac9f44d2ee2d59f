#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "prl/env.hpp"
#include "prl/model.hpp"

namespace prl {

inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::uint8_t quantize_pixel(double value);
double dequantize_pixel(std::uint8_t level);

/// One replay unit: an observation, the next k controls and the cumulative
/// targets those controls produced.
struct TrainingCase {
  std::vector<std::uint8_t> observation;  // F*H*W levels, value = level / 255
  std::vector<ControlVector> controls;
  std::vector<TargetVector> targets;
  std::uint32_t iteration = 0;
  std::uint16_t game_id = 0;
  /// Environment state the window starts from. Only kept when requested,
  /// never persisted.
  std::shared_ptr<const Environment> origin;

  Observation decoded(std::size_t frames, std::size_t height, std::size_t width) const;
};

struct DatasetHeader {
  std::uint32_t frames = 4;
  std::uint32_t height = 16;
  std::uint32_t width = 16;
  std::uint32_t horizon = 10;
  std::vector<std::string> games;

  std::size_t pixels() const { return std::size_t{frames} * height * width; }
  std::size_t record_size() const;
  bool operator==(const DatasetHeader&) const = default;
};

/// In-memory replay set with a per-iteration index.
class Dataset {
 public:
  explicit Dataset(DatasetHeader header) : header_(std::move(header)) {}

  const DatasetHeader& header() const { return header_; }
  std::size_t size() const { return cases_.size(); }
  bool empty() const { return cases_.empty(); }
  const TrainingCase& operator[](std::size_t i) const { return cases_[i]; }
  const std::vector<TrainingCase>& cases() const { return cases_; }

  /// Throws FormatError when the case does not fit the header.
  void append(TrainingCase c);
  void truncate(std::size_t count);
  const std::map<std::uint32_t, std::vector<std::size_t>>& by_iteration() const { return by_iteration_; }
  std::map<std::uint32_t, std::size_t> iteration_counts() const;
  void validate(const TrainingCase& c) const;

 private:
  DatasetHeader header_;
  std::vector<TrainingCase> cases_;
  std::map<std::uint32_t, std::vector<std::size_t>> by_iteration_;
};

/// Creates (or truncates) a dataset file holding zero records.
void create_dataset_file(const std::filesystem::path& path, const DatasetHeader& header);
/// Appends records, then patches the header count. Records that do not
/// match the header are rejected before anything is written.
void append_cases(const std::filesystem::path& path, std::span<const TrainingCase> cases);
/// Reads the header count of records; bytes past them are ignored.
Dataset load_dataset(const std::filesystem::path& path);

struct ExperimentCursor {
  std::uint32_t iteration = 0;
  std::uint64_t dataset_size = 0;
  std::string rng_state;

  bool operator==(const ExperimentCursor&) const = default;
};

struct Checkpoint {
  Model model;
  ExperimentCursor cursor;
};

void save_checkpoint(const std::filesystem::path& path, const Model& model, const ExperimentCursor& cursor);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// As load_checkpoint, but rejects a checkpoint whose model configuration
/// differs from `expected` with IncompatibleError.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace prl
