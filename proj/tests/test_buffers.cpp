#include "doctest.h"

#include <cmath>
#include <set>

#include <boost/math/distributions/chi_squared.hpp>

#include "gjem/buffers.hpp"
#include "gjem/errors.hpp"
#include "gjem/toy_models.hpp"
#include "support.hpp"

using namespace gjem;

namespace {

ChainBatch batch(std::vector<double> xs, std::vector<std::uint8_t> ys) {
  const std::size_t n = xs.size();
  ChainBatch c = ChainBatch::from_x(Tensor(Shape{n, 1}, std::move(xs)), 1);
  c.y = std::move(ys);
  return c;
}

JointSample item(std::size_t i, std::size_t n) {
  return JointSample{Tensor::vector({static_cast<double>(i) / static_cast<double>(n)}), AttributeVector{1}};
}

const InitialDistribution kNoise = uniform_initial(UniformBox::unit(1));
const LabelInitializer kLabelsOne = [](ChainBatch& c, Rng&) { std::fill(c.y.begin(), c.y.end(), 1); };

}  // namespace

TEST_CASE("config validation") {
  CHECK_THROWS_AS((BufferConfig{0, 0.05}.validate()), ConfigError);
  CHECK_THROWS_AS((BufferConfig{10, 1.5}.validate()), ConfigError);
  CHECK_THROWS_AS(JointBuffer(BufferConfig{}, 0, 1), ShapeError);
  const BufferConfig defaults;
  CHECK(defaults.capacity == 10000);
  CHECK(defaults.reinit_rate == 0.05);
}

TEST_CASE("empty buffer draws only fresh chains") {
  JointBuffer buf(BufferConfig{10, 0.0}, 1, 1);
  gjem::Rng rng(1);
  const auto init = buf.draw_init_batch(5, kNoise, kLabelsOne, rng);
  CHECK(init.fresh_count == 5);
  for (std::size_t b = 0; b < 5; ++b) {
    CHECK(init.slots[b] == -1);
    CHECK(init.chains.labels(b)[0] == 1);
  }
  CHECK_THROWS(buf.draw_init_batch(0, kNoise, kLabelsOne, rng));
}

TEST_CASE("reinit rate one gives all fresh chains") {
  JointBuffer buf(BufferConfig{10, 1.0}, 1, 1);
  buf.write_back(batch({0.25}, {0}), std::vector<std::int64_t>{-1});
  gjem::Rng rng(2);
  CHECK(buf.draw_init_batch(64, kNoise, kLabelsOne, rng).fresh_count == 64);
}

TEST_CASE("reinit rate zero replays the only entry") {
  JointBuffer buf(BufferConfig{10, 0.0}, 1, 1);
  buf.write_back(batch({0.25}, {0}), std::vector<std::int64_t>{-1});
  gjem::Rng rng(3);
  const auto init = buf.draw_init_batch(7, kNoise, kLabelsOne, rng);
  CHECK(init.fresh_count == 0);
  for (std::size_t b = 0; b < 7; ++b) {
    CHECK(init.chains.x[b] == 0.25);
    CHECK(init.chains.labels(b)[0] == 0);
    CHECK(init.slots[b] == 0);
  }
}

TEST_CASE("reinit count follows the binomial law") {
  JointBuffer buf(BufferConfig{100, 0.05}, 1, 1);
  buf.write_back(batch({0.5, 0.6}, {1, 0}), std::vector<std::int64_t>{-1, -1});
  gjem::Rng rng(4);
  const std::size_t n = 10000;
  const double fresh = static_cast<double>(buf.draw_init_batch(n, kNoise, kLabelsOne, rng).fresh_count);
  const double mean = 0.05 * n, sd = std::sqrt(n * 0.05 * 0.95);
  CHECK(std::abs(fresh - mean) < 3 * sd);
}

TEST_CASE("written states are what comes back") {
  JointBuffer buf(BufferConfig{10, 0.0}, 1, 1);
  buf.write_back(batch({0.1, 0.2, 0.3}, {1, 0, 1}), std::vector<std::int64_t>{-1, -1, -1});
  gjem::Rng rng(5);
  const auto init = buf.draw_init_batch(200, kNoise, kLabelsOne, rng);
  for (std::size_t b = 0; b < 200; ++b) {
    const double x = init.chains.x[b];
    const int y = init.chains.labels(b)[0];
    CHECK(((x == 0.1 && y == 1) || (x == 0.2 && y == 0) || (x == 0.3 && y == 1)));
  }
}

TEST_CASE("replay capacity and overwrite semantics") {
  JointBuffer buf(BufferConfig{10, 0.0}, 1, 1);
  std::vector<double> xs;
  for (int i = 0; i < 15; ++i) xs.push_back(i / 20.0);
  buf.write_back(batch(xs, std::vector<std::uint8_t>(15, 1)), std::vector<std::int64_t>(15, -1));
  CHECK(buf.size() == 10);
  CHECK(buf.total_pushes() == 15);
  // Slotless chains cycle through the oldest slots.
  for (std::size_t i = 0; i < 5; ++i) CHECK(buf.entry(i).x[0] == xs[10 + i]);
  for (std::size_t i = 5; i < 10; ++i) CHECK(buf.entry(i).x[0] == xs[i]);
  // Chains drawn from a slot return to it.
  buf.write_back(batch({0.99}, {0}), std::vector<std::int64_t>{7});
  CHECK(buf.entry(7).x[0] == 0.99);
  CHECK(buf.labels(7)[0] == 0);
}

TEST_CASE("diverged chains are not written back") {
  JointBuffer buf(BufferConfig{10, 0.0}, 1, 1);
  ChainBatch c = batch({0.1, 0.2}, {1, 1});
  c.diverged[0] = 1;
  buf.write_back(c, std::vector<std::int64_t>{-1, -1});
  CHECK(buf.size() == 1);
  CHECK(buf.entry(0).x[0] == 0.2);
}

TEST_CASE("entries must lie in the unit box with binary labels") {
  JointBuffer buf(BufferConfig{10, 0.0}, 1, 1);
  CHECK_THROWS(buf.write_back(batch({1.5}, {1}), std::vector<std::int64_t>{-1}));
  CHECK_THROWS(buf.write_back(batch({0.5}, {2}), std::vector<std::int64_t>{-1}));
  CHECK(buf.empty());
}

TEST_CASE("reservoir mode") {
  gjem::Rng rng(6);
  SUBCASE("pushes below capacity are all retained") {
    JointBuffer buf(BufferConfig{50, 0.0, BufferMode::reservoir}, 1, 1);
    for (std::size_t i = 0; i < 30; ++i) buf.reservoir_update(item(i, 30), rng);
    CHECK(buf.size() == 30);
    for (std::size_t i = 0; i < 30; ++i) CHECK(buf.entry(i).x[0] == item(i, 30).x[0]);
  }
  SUBCASE("capacity one keeps the second push half the time") {
    const int trials = 100000;
    int second = 0;
    for (int t = 0; t < trials; ++t) {
      JointBuffer buf(BufferConfig{1, 0.0, BufferMode::reservoir}, 1, 1);
      buf.reservoir_update(item(0, 2), rng);
      buf.reservoir_update(item(1, 2), rng);
      second += buf.entry(0).x[0] == 0.5;
    }
    CHECK(std::abs(static_cast<double>(second) / trials - 0.5) < 0.01);
  }
  SUBCASE("inclusion is uniform over the stream") {
    const std::size_t capacity = 20, pushes = 400, trials = 2000;
    std::vector<double> counts(pushes, 0.0);
    for (std::size_t t = 0; t < trials; ++t) {
      JointBuffer buf(BufferConfig{capacity, 0.0, BufferMode::reservoir}, 1, 1);
      for (std::size_t i = 0; i < pushes; ++i) buf.reservoir_update(item(i, pushes), rng);
      for (std::size_t j = 0; j < buf.size(); ++j) counts[std::lround(buf.entry(j).x[0] * pushes)] += 1.0;
    }
    const double expected = static_cast<double>(trials * capacity) / pushes;
    double stat = 0.0;
    for (double c : counts) stat += (c - expected) * (c - expected) / expected;
    const boost::math::chi_squared dist(static_cast<double>(pushes - 1));
    CHECK(stat < boost::math::quantile(dist, 0.99));
  }
  JointBuffer replay(BufferConfig{5, 0.0}, 1, 1);
  CHECK_THROWS_AS(replay.reservoir_update(item(0, 1), rng), std::logic_error);
  JointBuffer res(BufferConfig{5, 0.0, BufferMode::reservoir}, 1, 1);
  CHECK_THROWS_AS(res.write_back(batch({0.1}, {1}), std::vector<std::int64_t>{-1}), std::logic_error);
}

TEST_CASE("conditional fetch") {
  JointBuffer buf(BufferConfig{100, 0.0}, 1, 2);
  ChainBatch c = ChainBatch::from_x(Tensor(Shape{100, 1}), 2);
  for (std::size_t i = 0; i < 100; ++i) {
    c.x[i] = i / 100.0;
    c.y[2 * i] = i < 30 ? 1 : 0;
    c.y[2 * i + 1] = i % 2;
  }
  buf.write_back(c, std::vector<std::int64_t>(100, -1));
  gjem::Rng rng(7);
  SUBCASE("empty conditioning draws from everything") {
    const auto f = buf.conditional_fetch(ConditioningSpec{}, 50, rng);
    CHECK(f.matching_entries == 100);
    CHECK(f.samples.size() == 50);
    CHECK(f.shortfall == 0);
  }
  SUBCASE("draws come only from the matching subset") {
    const auto f = buf.conditional_fetch(ConditioningSpec({{0, 1}}), 100, rng);
    CHECK(f.matching_entries == 30);
    REQUIRE(f.samples.size() == 100);
    std::set<double> seen;
    for (const auto& s : f.samples) {
      CHECK(s.y[0] == 1);
      CHECK(s.x[0] < 0.3);
      seen.insert(s.x[0]);
    }
    CHECK(seen.size() > 1);
  }
  SUBCASE("no match is a full shortfall") {
    JointBuffer small(BufferConfig{10, 0.0}, 1, 2);
    ChainBatch z = ChainBatch::from_x(Tensor(Shape{1, 1}, 0.5), 2);
    small.write_back(z, std::vector<std::int64_t>{-1});
    const auto f = small.conditional_fetch(ConditioningSpec({{0, 1}, {1, 1}}), 16, rng);
    CHECK(f.samples.empty());
    CHECK(f.shortfall == 16);
    CHECK(f.matching_entries == 0);
  }
}

TEST_CASE("snapshot round trip is bit-exact") {
  gjem::test::TempDir dir("buffer");
  gjem::Rng rng(8);
  JointBuffer buf(BufferConfig{40, 0.1}, 3, 2);
  for (int round = 0; round < 3; ++round) {
    ChainBatch c = ChainBatch::from_x(gjem::test::random_tensor({20, 3}, rng, 0.0, 1.0), 2);
    for (auto& v : c.y) v = bernoulli(rng, 0.5);
    buf.write_back(c, std::vector<std::int64_t>(20, -1));
  }
  buf.save(dir / "b.gjem");
  const JointBuffer back = JointBuffer::load(dir / "b.gjem");
  CHECK(back.size() == buf.size());
  CHECK(back.total_pushes() == buf.total_pushes());
  CHECK(back.config().reinit_rate == 0.1);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    CHECK(back.entry(i).x == buf.entry(i).x);
    CHECK(back.entry(i).y == buf.entry(i).y);
  }
  // Both copies continue identically.
  JointBuffer a = buf, b = back;
  ChainBatch c = ChainBatch::from_x(Tensor(Shape{2, 3}, 0.5), 2);
  a.write_back(c, std::vector<std::int64_t>{-1, -1});
  b.write_back(c, std::vector<std::int64_t>{-1, -1});
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.entry(i).x == b.entry(i).x);

  const JointBuffer empty(BufferConfig{5, 0.0}, 2, 1);
  empty.save(dir / "e.gjem");
  CHECK(JointBuffer::load(dir / "e.gjem").empty());
}

TEST_CASE("labels from the model fill fresh chains") {
  ConstantLogitModel m(1, Tensor(Shape{2, 2}, {0.0, 60.0, 60.0, 0.0}));
  JointBuffer buf(BufferConfig{10, 1.0}, 1, 2);
  gjem::Rng rng(9);
  const auto init = buf.draw_init_batch(10, kNoise, labels_from_model(m), rng);
  for (std::size_t b = 0; b < 10; ++b) {
    CHECK(init.chains.labels(b)[0] == 1);
    CHECK(init.chains.labels(b)[1] == 0);
  }
}
