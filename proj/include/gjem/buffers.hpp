#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "gjem/container.hpp"
#include "gjem/energy.hpp"
#include "gjem/rng.hpp"
#include "gjem/samplers.hpp"

namespace gjem {

enum class BufferMode { replay, reservoir };

struct BufferConfig {
  std::size_t capacity = 10000;
  double reinit_rate = 0.05;
  BufferMode mode = BufferMode::replay;

  void validate() const;
};

// Draws `count` fresh states, [count, D].
using InitialDistribution = std::function<Tensor(std::size_t count, Rng& rng)>;
// Assigns labels to freshly initialized chains (normally y ~ p(y | x)).
using LabelInitializer = std::function<void(ChainBatch& chains, Rng& rng)>;

InitialDistribution uniform_initial(UniformBox box);
LabelInitializer labels_from_model(const LogitModel& m);

// Persistent store of joint (x, y) chain states. Entries are only ever
// written as pairs.
class JointBuffer {
 public:
  JointBuffer(BufferConfig cfg, std::size_t dim, std::size_t num_attributes);

  const BufferConfig& config() const { return cfg_; }
  std::size_t size() const { return size_; }
  std::size_t dim() const { return dim_; }
  std::size_t num_attributes() const { return num_attributes_; }
  std::uint64_t total_pushes() const { return total_pushes_; }
  bool empty() const { return size_ == 0; }
  JointSample entry(std::size_t i) const;
  std::span<const std::uint8_t> labels(std::size_t i) const;

  struct InitBatch {
    ChainBatch chains;
    std::vector<std::int64_t> slots;  // originating slot, -1 when none
    std::vector<std::uint8_t> fresh;
    std::size_t fresh_count = 0;
  };

  // Each chain is a uniformly drawn entry, or with probability reinit_rate
  // (always, while the buffer is empty) a fresh draw from p0 whose labels come
  // from `init_labels`.
  InitBatch draw_init_batch(std::size_t count, const InitialDistribution& p0, const LabelInitializer& init_labels,
                            Rng& rng) const;

  // Replay mode: below capacity the chains are appended; at capacity each
  // chain overwrites its originating slot (oldest slot when it has none).
  // Diverged chains are dropped.
  void write_back(const ChainBatch& chains, std::span<const std::int64_t> slots);

  // Reservoir mode: classic reservoir sampling over all pushes.
  void reservoir_update(const JointSample& sample, Rng& rng);

  struct Fetch {
    std::vector<JointSample> samples;
    std::size_t matching_entries = 0;
    std::size_t shortfall = 0;
  };
  // Up to `count` entries drawn uniformly with replacement among those
  // matching `spec`.
  Fetch conditional_fetch(const ConditioningSpec& spec, std::size_t count, Rng& rng) const;

  std::vector<Record> snapshot_records() const;
  static JointBuffer from_records(std::span<const Record> records);
  void save(const std::filesystem::path& path) const;
  static JointBuffer load(const std::filesystem::path& path);

 private:
  void put(std::size_t slot, std::span<const double> x, std::span<const std::uint8_t> y);
  void check_entry(std::span<const double> x, std::span<const std::uint8_t> y) const;

  BufferConfig cfg_;
  std::size_t dim_;
  std::size_t num_attributes_;
  std::size_t size_ = 0;
  std::size_t cursor_ = 0;
  std::uint64_t total_pushes_ = 0;
  std::vector<double> x_;
  std::vector<std::uint8_t> y_;
};

}  // namespace gjem
