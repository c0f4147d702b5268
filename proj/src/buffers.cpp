#include "gjem/buffers.hpp"

#include <cmath>

#include "gjem/errors.hpp"

namespace gjem {

void BufferConfig::validate() const {
  if (capacity == 0) throw ConfigError("buffer capacity must be positive");
  if (!(reinit_rate >= 0.0 && reinit_rate <= 1.0)) throw ConfigError("buffer reinit rate must lie in [0, 1]");
}

InitialDistribution uniform_initial(UniformBox box) {
  return [box = std::move(box)](std::size_t count, Rng& rng) { return box.sample(count, rng); };
}

LabelInitializer labels_from_model(const LogitModel& m) {
  return [&m](ChainBatch& chains, Rng& rng) {
    const std::vector<std::int8_t> free(m.num_attributes(), ad::kMarginalize);
    resample_labels(m, chains, free, rng);
  };
}

JointBuffer::JointBuffer(BufferConfig cfg, std::size_t dim, std::size_t num_attributes)
    : cfg_(cfg), dim_(dim), num_attributes_(num_attributes) {
  cfg_.validate();
  if (dim == 0 || num_attributes == 0) throw ShapeError("buffer dimensions must be positive");
}

JointSample JointBuffer::entry(std::size_t i) const {
  if (i >= size_) throw std::out_of_range("buffer entry out of range");
  Tensor x(Shape{dim_}, std::vector<double>(x_.begin() + i * dim_, x_.begin() + (i + 1) * dim_));
  const auto y = labels(i);
  return JointSample{std::move(x), AttributeVector(y.begin(), y.end())};
}

std::span<const std::uint8_t> JointBuffer::labels(std::size_t i) const {
  return {y_.data() + i * num_attributes_, num_attributes_};
}

void JointBuffer::check_entry(std::span<const double> x, std::span<const std::uint8_t> y) const {
  for (double v : x) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("buffer entries must lie in [0, 1]^D");
  }
  validate_attributes(y, num_attributes_);
}

void JointBuffer::put(std::size_t slot, std::span<const double> x, std::span<const std::uint8_t> y) {
  check_entry(x, y);
  if (slot == size_) {
    x_.insert(x_.end(), x.begin(), x.end());
    y_.insert(y_.end(), y.begin(), y.end());
    ++size_;
    return;
  }
  std::copy(x.begin(), x.end(), x_.begin() + slot * dim_);
  std::copy(y.begin(), y.end(), y_.begin() + slot * num_attributes_);
}

JointBuffer::InitBatch JointBuffer::draw_init_batch(std::size_t count, const InitialDistribution& p0,
                                                    const LabelInitializer& init_labels, Rng& rng) const {
  if (count == 0) throw std::invalid_argument("initial batch size must be positive");
  InitBatch out;
  out.slots.assign(count, -1);
  out.fresh.assign(count, 0);
  const bool full = size_ == cfg_.capacity;
  for (std::size_t b = 0; b < count; ++b) {
    const bool fresh = size_ == 0 || (cfg_.reinit_rate > 0.0 && uniform01(rng) < cfg_.reinit_rate);
    out.fresh[b] = fresh ? 1 : 0;
    if (!fresh || full) out.slots[b] = static_cast<std::int64_t>(uniform_index(rng, size_));
  }
  for (std::uint8_t f : out.fresh) out.fresh_count += f;

  Tensor x(Shape{count, dim_});
  std::vector<std::uint8_t> y(count * num_attributes_, 0);
  if (out.fresh_count > 0) {
    if (!p0) throw std::invalid_argument("buffer needs an initial distribution for fresh chains");
    ChainBatch fresh = ChainBatch::from_x(p0(out.fresh_count, rng), num_attributes_);
    if (fresh.x.extent(0) != out.fresh_count || fresh.x.extent(1) != dim_) {
      throw ShapeError("initial distribution returned the wrong shape");
    }
    if (init_labels) init_labels(fresh, rng);
    std::size_t j = 0;
    for (std::size_t b = 0; b < count; ++b) {
      if (!out.fresh[b]) continue;
      std::copy_n(fresh.x.raw() + j * dim_, dim_, x.raw() + b * dim_);
      std::copy_n(fresh.y.data() + j * num_attributes_, num_attributes_, y.data() + b * num_attributes_);
      ++j;
    }
  }
  for (std::size_t b = 0; b < count; ++b) {
    if (out.fresh[b]) continue;
    const std::size_t s = static_cast<std::size_t>(out.slots[b]);
    std::copy_n(x_.data() + s * dim_, dim_, x.raw() + b * dim_);
    std::copy_n(y_.data() + s * num_attributes_, num_attributes_, y.data() + b * num_attributes_);
  }
  out.chains = ChainBatch::from_x(std::move(x), num_attributes_);
  out.chains.y = std::move(y);
  return out;
}

void JointBuffer::write_back(const ChainBatch& chains, std::span<const std::int64_t> slots) {
  if (cfg_.mode != BufferMode::replay) throw std::logic_error("write_back() applies to replay buffers");
  if (chains.x.rank() != 2 || chains.dim() != dim_ || chains.num_attributes != num_attributes_) {
    throw ShapeError("chain batch does not match buffer dimensions");
  }
  if (slots.size() != chains.size()) throw ShapeError("one slot per chain required");
  for (std::size_t b = 0; b < chains.size(); ++b) {
    if (chains.diverged[b]) continue;
    const std::span<const double> x = chains.x.data().subspan(b * dim_, dim_);
    std::size_t slot;
    if (size_ < cfg_.capacity) {
      slot = size_;
    } else if (slots[b] >= 0) {
      slot = static_cast<std::size_t>(slots[b]);
      if (slot >= size_) throw std::out_of_range("write-back slot out of range");
    } else {
      slot = cursor_;
      cursor_ = (cursor_ + 1) % cfg_.capacity;
    }
    put(slot, x, chains.labels(b));
    ++total_pushes_;
  }
}

void JointBuffer::reservoir_update(const JointSample& sample, Rng& rng) {
  if (cfg_.mode != BufferMode::reservoir) throw std::logic_error("reservoir_update() requires a reservoir buffer");
  if (sample.x.size() != dim_) throw ShapeError("sample does not match buffer dimension");
  ++total_pushes_;
  if (size_ < cfg_.capacity) {
    put(size_, sample.x.data(), sample.y);
    return;
  }
  const std::uint64_t j = std::uniform_int_distribution<std::uint64_t>(0, total_pushes_ - 1)(rng);
  if (j < cfg_.capacity) put(static_cast<std::size_t>(j), sample.x.data(), sample.y);
}

JointBuffer::Fetch JointBuffer::conditional_fetch(const ConditioningSpec& spec, std::size_t count, Rng& rng) const {
  spec.validate(num_attributes_);
  std::vector<std::size_t> matches;
  for (std::size_t i = 0; i < size_; ++i) {
    if (spec.matches(labels(i))) matches.push_back(i);
  }
  Fetch out;
  out.matching_entries = matches.size();
  if (matches.empty()) {
    out.shortfall = count;
    return out;
  }
  out.samples.reserve(count);
  for (std::size_t b = 0; b < count; ++b) out.samples.push_back(entry(matches[uniform_index(rng, matches.size())]));
  return out;
}

std::vector<Record> JointBuffer::snapshot_records() const {
  std::vector<Record> records;
  records.push_back({"buffer/meta", Tensor::vector({static_cast<double>(cfg_.capacity), cfg_.reinit_rate,
                                                    cfg_.mode == BufferMode::reservoir ? 1.0 : 0.0,
                                                    static_cast<double>(total_pushes_), static_cast<double>(dim_),
                                                    static_cast<double>(num_attributes_),
                                                    static_cast<double>(cursor_), static_cast<double>(size_)})});
  if (size_ > 0) {
    records.push_back({"buffer/x", Tensor(Shape{size_, dim_}, x_)});
    std::vector<double> y(y_.begin(), y_.end());
    records.push_back({"buffer/y", Tensor(Shape{size_, num_attributes_}, std::move(y))});
  }
  return records;
}

JointBuffer JointBuffer::from_records(std::span<const Record> records) {
  const Tensor& meta = find_record(records, "buffer/meta");
  if (meta.size() != 8) throw IoError("buffer metadata record has the wrong length");
  for (double v : meta.data()) {
    if (!std::isfinite(v) || v < 0.0) throw IoError("corrupt buffer metadata");
  }
  BufferConfig cfg{static_cast<std::size_t>(meta[0]), meta[1], meta[2] != 0.0 ? BufferMode::reservoir : BufferMode::replay};
  JointBuffer buf = [&] {
    try {
      return JointBuffer(cfg, static_cast<std::size_t>(meta[4]), static_cast<std::size_t>(meta[5]));
    } catch (const std::exception& e) {
      throw IoError(std::string("invalid buffer snapshot: ") + e.what());
    }
  }();
  buf.total_pushes_ = static_cast<std::uint64_t>(meta[3]);
  buf.cursor_ = static_cast<std::size_t>(meta[6]);
  const std::size_t n = static_cast<std::size_t>(meta[7]);
  if (n > cfg.capacity) throw IoError("buffer snapshot exceeds its capacity");
  if (n > 0) {
    const Tensor& x = find_record(records, "buffer/x");
    const Tensor& y = find_record(records, "buffer/y");
    if (x.shape() != Shape{n, buf.dim_} || y.shape() != Shape{n, buf.num_attributes_}) {
      throw IoError("buffer snapshot blocks have inconsistent shapes");
    }
    for (std::size_t i = 0; i < n; ++i) {
      AttributeVector labels(buf.num_attributes_);
      for (std::size_t k = 0; k < labels.size(); ++k) {
        const double v = y[i * buf.num_attributes_ + k];
        if (v != 0.0 && v != 1.0) throw IoError("buffer snapshot holds non-binary labels");
        labels[k] = v == 1.0 ? 1 : 0;
      }
      try {
        buf.put(i, x.data().subspan(i * buf.dim_, buf.dim_), labels);
      } catch (const std::invalid_argument& e) {
        throw IoError(std::string("invalid buffer entry: ") + e.what());
      }
    }
  }
  return buf;
}

void JointBuffer::save(const std::filesystem::path& path) const { write_container(path, snapshot_records()); }

JointBuffer JointBuffer::load(const std::filesystem::path& path) { return from_records(read_container(path)); }

}  // namespace gjem
