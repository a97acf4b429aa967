#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "sleeprad/error.hpp"
#include "sleeprad/features.hpp"
#include "sleeprad/model.hpp"
#include "sleeprad/sim.hpp"

using namespace sleeprad;
using model::ModelConfig;
using model::Network;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.input_channels = 6;
  c.pool = 2;
  c.conv_channels = {4};
  c.kernel = 3;
  c.hidden = 4;
  c.dropout = 0.0;
  return c;
}

model::Sample toy_sample(std::size_t channels, std::size_t n_epochs, std::uint64_t seed) {
  const std::size_t frames_per_epoch = 8;
  model::Sample s;
  s.n_epochs = n_epochs;
  s.inputs = Matrix(n_epochs * frames_per_epoch, channels);
  std::uint64_t state = seed;
  for (double& v : s.inputs.data) {
    state = mix_seed(state, 7);
    v = static_cast<double>(state % 2001) / 1000.0 - 1.0;
  }
  for (std::size_t k = 0; k < s.inputs.rows; ++k) s.frame_epoch.push_back(k / frames_per_epoch);
  for (std::size_t e = 0; e < n_epochs; ++e) s.stage_labels.push_back(static_cast<int>(e % kNumStages));
  for (std::size_t k = 0; k < s.inputs.rows; ++k) s.event_labels.push_back((k / 5) % 3 == 0);
  return s;
}

model::ModelOutput uniform_output(std::size_t epochs, std::size_t frames, double event_p) {
  model::ModelOutput o;
  o.stage_probs = Matrix(epochs, kNumStages, 1.0 / kNumStages);
  o.event_probs.assign(frames, event_p);
  return o;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("sleeprad_model_" + name);
}

}  // namespace

TEST_CASE("forward output shapes and simplex rows") {
  Network net(small_config());
  const auto s = toy_sample(6, 7, 1);
  const auto out = net.forward(s.inputs, s.frame_epoch, s.n_epochs);
  REQUIRE(out.stage_probs.rows == 7);
  REQUIRE(out.stage_probs.cols == kNumStages);
  for (std::size_t e = 0; e < 7; ++e) {
    const double* r = out.stage_probs.row(e);
    CHECK(std::accumulate(r, r + kNumStages, 0.0) == doctest::Approx(1.0).epsilon(1e-6));
  }
  REQUIRE(out.event_probs.size() == s.inputs.rows);
  for (double p : out.event_probs) {
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }
}

TEST_CASE("forward rejects bad input") {
  Network net(small_config());
  const std::vector<std::size_t> none;
  CHECK_THROWS_AS(net.forward(Matrix(0, 6), none, 0), std::invalid_argument);
  const auto s = toy_sample(5, 2, 1);
  CHECK_THROWS_AS(net.forward(s.inputs, s.frame_epoch, s.n_epochs), std::invalid_argument);
}

TEST_CASE("loss values at known points") {
  auto s = toy_sample(6, 4, 2);
  const std::size_t frames = s.inputs.rows;

  SUBCASE("perfect prediction") {
    model::ModelOutput o;
    o.stage_probs = Matrix(4, kNumStages, 0.0);
    for (std::size_t e = 0; e < 4; ++e) o.stage_probs(e, static_cast<std::size_t>(s.stage_labels[e])) = 1.0;
    for (auto l : s.event_labels) o.event_probs.push_back(l ? 1.0 : 0.0);
    CHECK(model::loss(o, s) == doctest::Approx(0.0).epsilon(1e-9));
  }
  SUBCASE("uniform stage prediction") {
    const auto o = uniform_output(4, frames, 0.5);
    CHECK(model::loss(o, s, {1.0, 0.0}) == doctest::Approx(std::log(5.0)));
    CHECK(model::loss(o, s, {0.0, 1.0}) == doctest::Approx(std::log(2.0)));
  }
  SUBCASE("excluded epochs do not contribute") {
    auto o = uniform_output(4, frames, 0.5);
    o.stage_probs(1, 0) = 0.96;
    for (std::size_t c = 1; c < kNumStages; ++c) o.stage_probs(1, c) = 0.01;
    s.stage_labels[1] = -1;
    CHECK(model::loss(o, s, {1.0, 0.0}) == doctest::Approx(std::log(5.0)));
  }
}

TEST_CASE("zeroed heads give zero gradient through the body") {
  Network net(small_config());
  for (const auto& t : net.tensors()) {
    if (t.name.find("head") == std::string::npos) continue;
    for (std::size_t i = 0; i < t.size(); ++i) net.parameters()[t.offset + i] = 0.0;
  }
  std::vector<double> grad;
  net.loss_and_gradient(toy_sample(6, 3, 4), {}, grad);
  REQUIRE(grad.size() == net.parameter_count());
  for (const auto& t : net.tensors()) {
    if (t.name.find("head") != std::string::npos) continue;
    double worst = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) worst = std::max(worst, std::abs(grad[t.offset + i]));
    CHECK_MESSAGE(worst == 0.0, t.name);
  }
}

TEST_CASE("training is reproducible under a fixed seed") {
  std::vector<model::Sample> data = {toy_sample(6, 4, 10), toy_sample(6, 4, 11), toy_sample(6, 4, 12)};
  model::TrainSpec spec;
  spec.max_epochs = 5;
  spec.batch_records = 2;
  spec.seed = 3;
  auto cfg = small_config();
  cfg.dropout = 0.1;

  Network a(cfg), b(cfg);
  const auto ha = model::train(a, data, {}, spec);
  const auto hb = model::train(b, data, {}, spec);
  CHECK(ha.train_loss == hb.train_loss);
  CHECK(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()));
  CHECK(ha.steps == 10);
  CHECK(ha.train_loss.back() < ha.train_loss.front());
}

TEST_CASE("training an empty set is an error") {
  Network net(small_config());
  CHECK_THROWS_AS(model::train(net, {}, {}, {}), EmptyInputError);
}

TEST_CASE("checkpoint round trip") {
  Network net(small_config());
  features::Normalizer norm{{0.0, 1.0, 2.0, 3.0, 4.0, 5.0}, {1.0, 2.0, 1.0, 2.0, 1.0, 2.0}};
  const auto path = temp_file("roundtrip.ckpt");
  model::save_checkpoint(path, net, norm);
  const auto ck = model::load_checkpoint(path);
  CHECK(ck.config.conv_channels == net.config().conv_channels);
  CHECK(ck.normalizer.mean == norm.mean);
  const auto restored = model::network_from(ck);

  const auto s = toy_sample(6, 3, 5);
  const auto x = net.forward(s.inputs, s.frame_epoch, s.n_epochs);
  const auto y = restored.forward(s.inputs, s.frame_epoch, s.n_epochs);
  for (std::size_t i = 0; i < x.stage_probs.data.size(); ++i) {
    CHECK(y.stage_probs.data[i] == doctest::Approx(x.stage_probs.data[i]).epsilon(1e-5));
  }
  std::filesystem::remove(path);
}

TEST_CASE("malformed checkpoints are data errors") {
  const auto path = temp_file("bad.ckpt");
  {
    std::ofstream os(path, std::ios::binary);
    os << "not a checkpoint";
  }
  CHECK_THROWS_AS(model::load_checkpoint(path), DataError);

  Network net(small_config());
  const auto good = temp_file("trunc.ckpt");
  model::save_checkpoint(good, net, {});
  std::filesystem::resize_file(good, std::filesystem::file_size(good) - 8);
  CHECK_THROWS_AS(model::load_checkpoint(good), DataError);
  CHECK_THROWS_AS(model::load_checkpoint(temp_file("missing.ckpt")), DataError);
  std::filesystem::remove(path);
  std::filesystem::remove(good);
}

TEST_CASE("model config validation") {
  ModelConfig c = small_config();
  CHECK_NOTHROW(c.validate());
  c.kernel = 4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.hidden = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_config();
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("oracle rules") {
  const auto p = sim::make_profile("o", Severity::Moderate, 21);
  const auto bundle = sim::simulate_record(p, 2.0);
  auto f = features::compute(bundle);
  const auto ep = f.frame_epochs();

  SUBCASE("a movement block forces Wake") {
    const std::size_t target = 100;
    for (std::size_t k = 0; k < ep.size(); ++k) {
      if (ep[k] == target) f.radar.movement_power[k] = 1e6;
    }
    const auto out = model::rule_based_oracle(f);
    CHECK(out.stage_probs(target, 0) > 0.99);
    for (std::size_t k = 0; k < ep.size(); ++k) {
      if (ep[k] == target) CHECK(out.event_probs[k] == 0.0);
    }
  }
  SUBCASE("a full flow drop near a desaturation is certain") {
    const auto base = model::rule_based_oracle(f);
    std::size_t frame = 0;
    for (const auto& d : f.ppg.desats) {
      const auto k = static_cast<std::size_t>(d.start_s / f.framing().hop_s);
      if (k < ep.size() && base.stage_probs(ep[k], 0) < 0.5) {
        frame = k;
        break;
      }
    }
    REQUIRE(frame > 0);
    f.ratios.flow_ratio[frame] = 0.05;
    CHECK(model::rule_based_oracle(f).event_probs[frame] == 1.0);
  }
}

TEST_CASE("oracle recovers most deep sleep") {
  std::size_t deep = 0, hit = 0;
  for (std::uint64_t seed : {31u, 32u}) {
    const auto p = sim::make_profile("n3", Severity::Healthy, seed);
    const auto bundle = sim::simulate_record(p, 8.0);
    const auto out = model::rule_based_oracle(features::compute(bundle));
    const auto& truth = bundle.truth_hypnogram.stages;
    for (std::size_t e = 0; e < truth.size() && e < out.stage_probs.rows; ++e) {
      if (truth[e] != Stage::N3) continue;
      ++deep;
      const double* r = out.stage_probs.row(e);
      hit += static_cast<std::size_t>(std::max_element(r, r + kNumStages) - r) == 3;
    }
  }
  REQUIRE(deep > 0);
  CHECK(static_cast<double>(hit) / static_cast<double>(deep) >= 0.6);
}
