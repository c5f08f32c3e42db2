#include <doctest.h>

#include <random>

#include "dkparc/inference.hpp"
#include "support.hpp"

using namespace dkparc;

namespace {

/// Logits that depend only on the input values, so the backend is deterministic but far
/// from constant.
class WavyBackend : public SegmenterBackend {
 public:
  WavyBackend(int channels, int classes) : channels_(channels), classes_(classes) {}
  int input_channels() const override { return channels_; }
  int classes() const override { return classes_; }
  std::string identity() const override { return "wavy"; }
  Patch predict(const Patch& input, const TileContext&) override {
    Patch out(input.shape, classes_);
    for (std::int64_t v = 0; v < input.voxels(); ++v)
      for (int c = 0; c < classes_; ++c) out.values(v, c) = 3.0f * std::sin(input.values(v, 0) * float(c + 1) + float(c));
    return out;
  }

 private:
  int channels_, classes_;
};

/// Returns whatever the test asks of it.
class RogueBackend : public SegmenterBackend {
 public:
  enum class Mode { Shape, Classes, NonFinite };
  RogueBackend(Mode mode, std::optional<Eigen::Vector3i> patch = std::nullopt) : mode_(mode), patch_(patch) {}
  int input_channels() const override { return 1; }
  int classes() const override { return 2; }
  std::optional<Eigen::Vector3i> patch_shape() const override { return patch_; }
  std::string identity() const override { return "rogue"; }
  Patch predict(const Patch& input, const TileContext& tile) override {
    switch (mode_) {
      case Mode::Shape: return Patch(input.shape + Eigen::Vector3i(1, 0, 0), 2);
      case Mode::Classes: return Patch(input.shape, 3);
      case Mode::NonFinite: {
        Patch p(input.shape, 2);
        if (tile.origin[0] > 0) p.values(0, 1) = std::numeric_limits<float>::infinity();
        return p;
      }
    }
    return {};
  }

 private:
  Mode mode_;
  std::optional<Eigen::Vector3i> patch_;
};

std::vector<Volume<float>> random_channels(const Grid& g, int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0, 1);
  std::vector<Volume<float>> out;
  for (int c = 0; c < n; ++c) {
    Volume<float> v(g);
    for (std::int64_t i = 0; i < v.size(); ++i) v[i] = u(rng);
    out.push_back(std::move(v));
  }
  return out;
}

LabelImage random_classes(const Grid& g, int k, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(0, k - 1);
  LabelImage out(g);
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = u(rng);
  return out;
}

SlidingWindowConfig window(int patch, double overlap) {
  SlidingWindowConfig c;
  c.patch.setConstant(patch);
  c.overlap = overlap;
  return c;
}

}  // namespace

TEST_SUITE("inference") {

TEST_CASE("gaussian weight: peak, corners, symmetry, positivity") {
  for (int s : {7, 9, 16, 128}) {
    CAPTURE(s);
    const Eigen::Vector3i shape = Eigen::Vector3i::Constant(s);
    const auto w = gaussian_weight(shape, 0.125);
    const double sigma = s / 8.0, half = (s - 1) / 2.0;
    if (s % 2) CHECK(w[(s / 2) + s * ((s / 2) + s * (s / 2))] == 1.0f);
    CHECK(w.maxCoeff() <= 1.0f);
    CHECK(w.minCoeff() > 0.0f);
    const double corner = std::exp(-3 * half * half / (2 * sigma * sigma));
    CHECK(w[0] == doctest::Approx(corner).epsilon(1e-5));
    CHECK(w[w.size() - 1] == doctest::Approx(corner).epsilon(1e-5));
    std::mt19937_64 rng(s);
    std::uniform_int_distribution<int> u(0, s - 1);
    for (int i = 0; i < 200; ++i) {
      const int x = u(rng), y = u(rng), z = u(rng);
      const float here = w[x + s * (y + s * z)];
      CHECK(w[(s - 1 - x) + s * (y + s * z)] == here);
      CHECK(w[x + s * ((s - 1 - y) + s * z)] == here);
      CHECK(w[x + s * (y + s * (s - 1 - z))] == here);
      CHECK(w[y + s * (z + s * x)] == doctest::Approx(here).epsilon(1e-6));  // separable, cubic
    }
  }
  // A tiny sigma would underflow; weights still stay strictly positive.
  CHECK(gaussian_weight({32, 32, 32}, 0.01).minCoeff() > 0.0f);
  CHECK_THROWS_AS(gaussian_weight({4, 4, 4}, 0), ConfigError);
}

TEST_CASE("tile starts") {
  CHECK(tile_starts(256, 128, 0.5) == std::vector<int>{0, 64, 128});
  CHECK(tile_starts(256, 128, 0.0) == std::vector<int>{0, 128});
  CHECK(tile_starts(200, 128, 0.5) == std::vector<int>{0, 64, 72});
  CHECK(tile_starts(128, 128, 0.5) == std::vector<int>{0});
  CHECK(tile_starts(10, 3, 0.9) == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
  CHECK_THROWS_AS(tile_starts(10, 12, 0.5), ArgumentError);

  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> pe(1, 40), ex(0, 60);
  std::uniform_real_distribution<double> ov(0, 0.95);
  for (int i = 0; i < 2000; ++i) {
    const int patch = pe(rng), extent = patch + ex(rng);
    const double overlap = ov(rng);
    const auto s = tile_starts(extent, patch, overlap);
    const int stride = std::max(1, static_cast<int>(std::floor(patch * (1 - overlap))));
    REQUIRE(!s.empty());
    CHECK(s.front() == 0);
    CHECK(s.back() == extent - patch);
    for (std::size_t k = 1; k < s.size(); ++k) {
      CHECK(s[k] > s[k - 1]);
      CHECK(s[k] - s[k - 1] <= stride);
      if (k + 1 < s.size()) CHECK(s[k] - s[k - 1] == stride);
    }
  }
}

TEST_CASE("constant scores give the same argmax for every overlap") {
  const Grid g = Grid::axis_aligned({37, 30, 23}, {1, 1, 1});
  const auto in = random_channels(g, 2, 1);
  for (double overlap : {0.0, 0.25, 0.5, 0.75}) {
    CAPTURE(overlap);
    ConstantBackend backend(2, {0.2f, 0.8f});
    const auto p = sliding_window_predict(in, backend, window(16, overlap));
    CHECK((p.argmax().data() == 1).all());
    CHECK((p.probabilities.col(1) - 0.8f).abs().maxCoeff() < 1e-6f);
    CHECK((p.weight > 0).all());
  }
  // Logits are softmaxed.
  ConstantBackend logits(2, {1.0f, 2.0f, 3.0f});
  const auto p = sliding_window_predict(in, logits, window(16, 0.5));
  const double e = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(p.probabilities(100, 2) == doctest::Approx(std::exp(3.0) / e).epsilon(1e-6));
  CHECK((p.argmax().data() == 2).all());
}

TEST_CASE("one tile reproduces the backend softmax") {
  const Grid g = Grid::axis_aligned({12, 12, 12}, {1, 1, 1});
  const auto in = random_channels(g, 1, 2);
  WavyBackend backend(1, 4);
  const auto p = sliding_window_predict(in, backend, window(12, 0.5));
  Patch patch({12, 12, 12}, 1);
  patch.values.col(0) = in[0].data();
  const auto raw = backend.predict(patch, {});
  for (std::int64_t v = 0; v < g.size(); ++v) {
    const Eigen::ArrayXd logits = raw.values.row(v).transpose().cast<double>();
    const Eigen::ArrayXd sm = (logits - logits.maxCoeff()).exp() / (logits - logits.maxCoeff()).exp().sum();
    CHECK((p.probabilities.row(v).transpose().cast<double>() - sm).abs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("one-hot oracle is reproduced exactly") {
  struct Shape {
    Eigen::Vector3i dims;
    int patch;
    double overlap;
  };
  for (const auto& s : {Shape{{37, 29, 41}, 16, 0.5}, Shape{{10, 9, 8}, 16, 0.5}, Shape{{33, 33, 33}, 8, 0.0},
                        Shape{{20, 24, 18}, 12, 0.75}}) {
    const Grid g = Grid::axis_aligned(s.dims, {1, 1, 1});
    const auto truth = random_classes(g, 5, static_cast<std::uint64_t>(s.patch));
    LabelOracleBackend oracle(1, 5, truth);
    const auto p = sliding_window_predict(random_channels(g, 1, 0), oracle, window(s.patch, s.overlap));
    CHECK((p.argmax().data() == truth.data()).all());
  }
}

TEST_CASE("finalized probabilities sum to one at every voxel") {
  const Grid g = Grid::axis_aligned({40, 35, 30}, {1, 1, 1});
  const auto in = random_channels(g, 1, 3);
  for (double overlap : {0.0, 0.5, 0.8}) {
    WavyBackend backend(1, 6);
    const auto p = sliding_window_predict(in, backend, window(16, overlap));
    const Eigen::ArrayXd sums = p.probabilities.cast<double>().rowwise().sum();
    CHECK((sums - 1).abs().maxCoeff() < 1e-6);
    CHECK((p.probabilities >= 0).all());
  }
}

TEST_CASE("prediction is deterministic") {
  const Grid g = Grid::axis_aligned({30, 30, 30}, {1, 1, 1});
  const auto in = random_channels(g, 1, 4);
  WavyBackend a(1, 3), b(1, 3);
  const auto p = sliding_window_predict(in, a, window(16, 0.5));
  const auto q = sliding_window_predict(in, b, window(16, 0.5));
  CHECK((p.probabilities == q.probabilities).all());
}

TEST_CASE("contract violations") {
  const Grid g = Grid::axis_aligned({20, 20, 20}, {1, 1, 1});
  const auto one = random_channels(g, 1, 5);
  const auto two = random_channels(g, 2, 5);
  ConstantBackend c(1, {0.5f, 0.5f});
  CHECK_THROWS_AS(sliding_window_predict(two, c, window(8, 0.5)), ContractError);

  RogueBackend fixed(RogueBackend::Mode::Classes, Eigen::Vector3i(8, 8, 8));
  CHECK_THROWS_AS(sliding_window_predict(one, fixed, window(16, 0.5)), ContractError);
  RogueBackend shape(RogueBackend::Mode::Shape);
  CHECK_THROWS_AS(sliding_window_predict(one, shape, window(8, 0.5)), ContractError);
  RogueBackend classes(RogueBackend::Mode::Classes);
  CHECK_THROWS_AS(sliding_window_predict(one, classes, window(8, 0.5)), ContractError);

  RogueBackend inf(RogueBackend::Mode::NonFinite);
  try {
    (void)sliding_window_predict(one, inf, window(8, 0.5));
    FAIL("non-finite scores accepted");
  } catch (const BackendError& e) {
    CHECK(std::string(e.what()).find("tile at (4,0,0)") != std::string::npos);
  }

  std::vector<Volume<float>> mixed{one[0], Volume<float>(Grid::axis_aligned({20, 20, 21}, {1, 1, 1}))};
  ConstantBackend c2(2, {0.5f, 0.5f});
  CHECK_THROWS(sliding_window_predict(mixed, c2, window(8, 0.5)));

  auto bad = window(8, 1.0);
  CHECK_THROWS_AS(sliding_window_predict(one, c, bad), ConfigError);
}

TEST_CASE("window config json") {
  const auto c = SlidingWindowConfig::from_json({{"patch", 96}, {"overlap", 0.25}});
  CHECK(c.patch == Eigen::Vector3i(96, 96, 96));
  CHECK(c.overlap == 0.25);
  CHECK(c.sigma_fraction == 0.125);
  const auto d = SlidingWindowConfig::from_json(c.to_json());
  CHECK(d.patch == c.patch);
  CHECK(SlidingWindowConfig::from_json(nlohmann::json::object()).patch == Eigen::Vector3i(128, 128, 128));
  CHECK(SlidingWindowConfig::from_json({{"patch", {64, 32, 16}}}).patch == Eigen::Vector3i(64, 32, 16));
  CHECK_THROWS_AS(SlidingWindowConfig::from_json({{"overlap", -0.1}}), ConfigError);
  CHECK_THROWS_AS(SlidingWindowConfig::from_json({{"patch", {1, 2}}}), ConfigError);
  CHECK_THROWS_AS(SlidingWindowConfig::from_json({{"sigma_fraction", "wide"}}), ConfigError);
}

TEST_CASE("fine input stack") {
  const Grid g = Grid::axis_aligned({3, 1, 1}, {1, 1, 1});
  const auto maps = random_channels(g, 4, 6);
  LabelVolume coarse{LabelImage(g), LabelSpace::Coarse};
  coarse.image[1] = 7;
  coarse.image[2] = 5;
  const auto stack = build_fine_input(maps, coarse);
  REQUIRE(stack.size() == 5);
  for (int c = 0; c < 4; ++c) CHECK((stack[c].data() == maps[c].data()).all());
  CHECK(stack[4][0] == 0.0f);
  CHECK(stack[4][1] == 1.0f);
  CHECK(stack[4][2] == doctest::Approx(0.7143).epsilon(1e-4));
  CHECK((stack[4].data() >= 0).all());
  CHECK((stack[4].data() <= 1).all());
  CHECK_THROWS_AS(build_fine_input(maps, LabelVolume{LabelImage(g), LabelSpace::FineInternal}), DataError);
}

TEST_CASE("coarse and fine stages with oracle backends") {
  const auto& schema = LabelSchema::dk101();
  const Grid g = testing::lia_grid(40);
  const auto truth = testing::box_phantom(g, schema);
  const auto coarse_truth = coarse_project(truth, schema);
  const auto maps = random_channels(g, 4, 7);
  const auto cfg = window(16, 0.5);

  LabelOracleBackend coarse_oracle(4, 8, testing::oracle_classes(truth, schema, 0));
  const auto coarse = run_coarse(maps, coarse_oracle, cfg);
  CHECK(coarse.space == LabelSpace::Coarse);
  CHECK((coarse.image.data() == coarse_truth.image.data()).all());

  const auto stack = build_fine_input(maps, coarse);
  for (int group : schema.fine_groups()) {
    CAPTURE(group);
    const int k = static_cast<int>(schema.partition(group).size()) + 1;
    LabelOracleBackend oracle(5, k, testing::oracle_classes(truth, schema, group));
    const auto fine = run_fine(stack, group, oracle, schema, cfg);
    for (std::int64_t v = 0; v < g.size(); ++v) {
      const int expect = truth.image[v] && schema.group_of(truth.image[v]) == group ? truth.image[v] : 0;
      if (fine.image[v] != expect) {
        FAIL_CHECK("voxel " << v << " got " << fine.image[v] << " expected " << expect);
        break;
      }
    }
    ConstantBackend wrong(5, std::vector<float>(static_cast<std::size_t>(k + 1), 1.0f));
    CHECK_THROWS_AS(run_fine(stack, group, wrong, schema, cfg), ContractError);
  }
  ConstantBackend any(5, {1, 0});
  CHECK_THROWS_AS(run_fine(stack, 1, any, schema, cfg), ConfigError);
  CHECK_THROWS_AS(run_fine(stack, 8, any, schema, cfg), ConfigError);
}

TEST_CASE("coarse stage edge cases") {
  const Grid g = Grid::axis_aligned({10, 10, 10}, {1, 1, 1});
  std::vector<Volume<float>> zeros(4, Volume<float>(g));
  std::vector<float> background(8, 0.0f);
  background[0] = 1;
  ConstantBackend bg(4, background);
  CHECK((run_coarse(zeros, bg, window(8, 0.5)).image.data() == 0).all());

  WavyBackend wavy(4, 8);
  const auto labels = run_coarse(random_channels(g, 4, 8), wavy, window(8, 0.5)).image;
  CHECK((labels.data() >= 0).all());
  CHECK((labels.data() <= 7).all());

  ConstantBackend seven(4, std::vector<float>(7, 1.0f));
  CHECK_THROWS_AS(run_coarse(zeros, seven, window(8, 0.5)), ContractError);

  ScalarMapSet partial;
  partial.set(MapCode::FA, Volume<double>(g));
  CHECK_THROWS_AS(run_coarse(partial, bg, window(8, 0.5)), ConfigError);
  CHECK(default_input_maps() == std::vector<MapCode>{MapCode::FA, MapCode::TR, MapCode::CS, MapCode::E1});
}

}  // TEST_SUITE
