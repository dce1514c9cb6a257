#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "doctest.h"
#include "paip/error.hpp"
#include "paip/toponet.hpp"

using namespace paip;
using namespace paip::topo;

namespace {

TopoConfig tiny_config() {
  TopoConfig c;
  c.c_init = 2;
  c.c_bot = 4;
  c.height = 8;
  c.width = 8;
  c.batch_size = 2;
  return c;
}

template <class T>
Tensor<T> random_tensor(int n, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor<T> t(n, 1, h, w);
  for (auto& v : t.data) v = static_cast<T>(u(rng));
  return t;
}

// Random filled discs on a blank map.
std::vector<float> blob_map(Rng& rng, int h, int w) {
  std::vector<float> m(static_cast<std::size_t>(h) * w, 0.0f);
  std::uniform_int_distribution<int> count(3, 6);
  std::uniform_real_distribution<double> cx(0, w), cy(0, h), r(2.0, 5.0);
  const int n = count(rng);
  for (int i = 0; i < n; ++i) {
    const double x0 = cx(rng), y0 = cy(rng), rr = r(rng);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if ((x + 0.5 - x0) * (x + 0.5 - x0) + (y + 0.5 - y0) * (y + 0.5 - y0) <= rr * rr) m[y * w + x] = 1.0f;
  }
  return m;
}

double loss_of(TopoNet<double>& net, const Tensor<double>& in, const Tensor<double>& label) {
  const auto out = net.forward(in, Mode::Train);
  double s = 0;
  for (std::size_t i = 0; i < out.size(); ++i) s += (out.data[i] - label.data[i]) * (out.data[i] - label.data[i]);
  return s / static_cast<double>(out.size());
}

}  // namespace

TEST_CASE("config validation") {
  TopoConfig c;
  CHECK_NOTHROW(c.validate());
  c.height = 60;
  CHECK_THROWS_AS(c.validate(), InvalidParameter);
  c = TopoConfig{};
  c.mask_rate = 1.0;
  CHECK_THROWS_AS(c.validate(), InvalidParameter);
  c = TopoConfig{};
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), InvalidParameter);
  c = TopoConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), InvalidParameter);
}

TEST_CASE("parameter counts") {
  auto cfg = [](int a, int b) {
    TopoConfig c;
    c.c_init = a;
    c.c_bot = b;
    return c;
  };
  // Hand count of the (4,16) network, layer by layer.
  const std::int64_t enc = (36 + 4 + 8 + 144 + 4 + 8) + (288 + 8 + 16 + 576 + 8 + 16) + (1152 + 16 + 32 + 2304 + 16 + 32);
  const std::int64_t mid = 3 * (2304 + 16);
  const std::int64_t dec = (1024 + 16 + 4608 + 16 + 32 + 2304 + 16 + 32) + (512 + 8 + 1152 + 8 + 16 + 576 + 8 + 16) +
                           (128 + 4 + 288 + 4 + 8 + 144 + 4 + 8);
  const std::int64_t head = 36 + 1;
  CHECK(param_count(cfg(4, 16)) == enc + mid + dec + head);
  CHECK(param_count(cfg(4, 16)) == 22597);
  for (auto [a, b] : {std::pair{4, 16}, std::pair{8, 32}, std::pair{16, 64}, std::pair{2, 4}})
    CHECK(TopoNet<float>(cfg(a, b)).parameter_count() == param_count(cfg(a, b)));
  const auto n1 = param_count(cfg(4, 16)), n2 = param_count(cfg(8, 32)), n3 = param_count(cfg(16, 64));
  CHECK(n1 < n2);
  CHECK(n2 < n3);
  const double r1 = static_cast<double>(n2) / n1, r2 = static_cast<double>(n3) / n2;
  CHECK(r1 >= 3.0);
  CHECK(r1 <= 5.0);
  CHECK(r2 >= 3.0);
  CHECK(r2 <= 5.0);
}

TEST_CASE("forward shapes and ranges") {
  TopoConfig c;
  TopoNet<float> net(c, 3);
  const auto in = random_tensor<float>(2, 64, 64, 1);
  const auto out = net.forward(in);
  CHECK(out.n == 2);
  CHECK(out.c == 1);
  CHECK(out.h == 64);
  CHECK(out.w == 64);
  for (float v : out.data) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
  CHECK_THROWS_AS(net.forward(random_tensor<float>(1, 32, 64, 1)), InvalidArgument);
  Tensor<float> two_channel(1, 2, 64, 64);
  CHECK_THROWS_AS(net.forward(two_channel), InvalidArgument);

  net.zero_parameters();
  for (float v : net.forward(in).data) CHECK(v == 0.5f);
  for (float v : net.forward(in, Mode::Train).data) CHECK(v == 0.5f);
}

TEST_CASE("saturated logits stay strictly inside (0,1)") {
  TopoNet<float> net(tiny_config(), 1);
  for (auto& p : net.params())
    if (p.name == "head.bias") p.value[0] = 80.0f;
  for (float v : net.forward(random_tensor<float>(1, 8, 8, 2)).data) CHECK(v < 1.0f);
  for (auto& p : net.params())
    if (p.name == "head.bias") p.value[0] = -80.0f;
  for (float v : net.forward(random_tensor<float>(1, 8, 8, 2)).data) CHECK(v > 0.0f);
}

TEST_CASE("loss is zero at the network's own output and quadratic in the residual") {
  TopoNet<double> net(tiny_config(), 5);
  const auto in = random_tensor<double>(2, 8, 8, 9);
  const auto out = net.forward(in, Mode::Train);
  const auto g = net.backward(in, out);
  CHECK(g.loss == 0.0);
  for (const auto& b : g.blocks)
    for (double v : b) CHECK(v == 0.0);

  auto label = out;
  for (std::size_t i = 0; i < label.size(); ++i) label.data[i] = out.data[i] + (i % 2 ? 0.05 : -0.03);
  auto label2 = out;
  for (std::size_t i = 0; i < label.size(); ++i) label2.data[i] = out.data[i] + 2 * (label.data[i] - out.data[i]);
  const double l1 = net.backward(in, label).loss;
  const double l2 = net.backward(in, label2).loss;
  CHECK(l2 == doctest::Approx(4 * l1).epsilon(1e-12));

  CHECK_THROWS_AS(net.backward(in, random_tensor<double>(1, 8, 8, 1)), InvalidArgument);
}

TEST_CASE("analytic gradients match central differences for every layer type") {
  TopoNet<double> net(tiny_config(), 21);
  // Move normalization parameters off their identity initialization so their gradients are generic.
  Rng rng(4);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& p : net.params())
    if (p.name.find("norm") != std::string::npos || p.name.find(".bias") != std::string::npos)
      for (auto& v : p.value) v += u(rng);
  const auto in = random_tensor<double>(2, 8, 8, 31);
  const auto label = random_tensor<double>(2, 8, 8, 32);
  const auto g = net.backward(in, label);

  const double eps = 1e-4;
  std::map<std::string, double> worst;
  int checked = 0;
  for (std::size_t b = 0; b < net.params().size(); ++b) {
    auto& p = net.params()[b];
    const std::string kind = p.name.substr(0, p.name.find('.')) + p.name.substr(p.name.rfind('.'));
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double keep = p.value[i];
      p.value[i] = keep + eps;
      const double lp = loss_of(net, in, label);
      p.value[i] = keep - eps;
      const double lm = loss_of(net, in, label);
      p.value[i] = keep;
      const double numeric = (lp - lm) / (2 * eps);
      const double analytic = g.blocks[b][i];
      const double scale = std::max(std::fabs(numeric), std::fabs(analytic));
      // Gradients that vanish analytically (biases feeding a normalization) must vanish numerically.
      const double err = scale < 1e-9 ? 0.0 : std::fabs(numeric - analytic) / scale;
      if (scale < 1e-9) CHECK(std::fabs(numeric) < 1e-9);
      worst[kind] = std::max(worst[kind], err);
      ++checked;
    }
  }
  CHECK(checked == param_count(tiny_config()));
  for (const auto& [kind, err] : worst) {
    INFO(kind << " max relative error " << err);
    CHECK(err < 1e-4);
  }
  // Every layer type is exercised.
  for (const char* k : {"enc1.weight", "enc1.scale", "enc1.shift", "mid1.weight", "mid2.weight", "up3.weight",
                        "dec1.weight", "head.weight", "head.bias"})
    CHECK(worst.count(k) == 1);
}

TEST_CASE("mask_map") {
  Rng rng(1);
  const auto full = blob_map(rng, 64, 64);
  const auto s = mask_map(full, 64, 64, 0.9, 77);
  std::vector<float> ones(4096, 1.0f);
  const auto all = mask_map(ones, 64, 64, 0.9, 77);
  CHECK(std::count(all.partial.begin(), all.partial.end(), 0.0f) == 3686);
  for (std::size_t i = 0; i < full.size(); ++i) CHECK(s.partial[i] <= s.full[i]);
  CHECK(s.full == full);
  CHECK(mask_map(full, 64, 64, 0.0, 5).partial == full);
  const auto again = mask_map(full, 64, 64, 0.9, 77);
  CHECK(again.partial == s.partial);
  CHECK(mask_map(full, 64, 64, 0.9, 78).partial != s.partial);
  CHECK_THROWS_AS(mask_map(full, 64, 64, 1.0, 1), InvalidParameter);
  CHECK_THROWS_AS(mask_map(full, 32, 64, 0.5, 1), InvalidArgument);
}

TEST_CASE("mask_map selects cells uniformly") {
  // Each cell of a 16x16 all-ones map should be masked about half the time at rate 0.5.
  std::vector<float> ones(256, 1.0f);
  std::vector<int> hits(256, 0);
  const int trials = 2000;
  for (int t = 0; t < trials; ++t) {
    const auto s = mask_map(ones, 16, 16, 0.5, static_cast<std::uint64_t>(t));
    for (int i = 0; i < 256; ++i) hits[i] += s.partial[i] == 0.0f;
  }
  for (int h : hits) {
    CHECK(h > 850);
    CHECK(h < 1150);
  }
}

TEST_CASE("training is deterministic and reduces loss") {
  TopoConfig c;
  c.c_init = 2;
  c.c_bot = 8;
  c.height = 16;
  c.width = 16;
  c.batch_size = 8;
  c.mask_rate = 0.5;
  const MapGenerator gen = [](Rng& r) { return blob_map(r, 16, 16); };
  TrainOptions opt;
  opt.epochs = 8;
  opt.samples_per_epoch = 64;
  opt.validation_samples = 32;
  opt.seed = 9;

  TopoNet<float> a(c, 1), b(c, 1);
  const auto ra = train(a, gen, opt);
  const auto rb = train(b, gen, opt);
  REQUIRE(ra.loss_history.size() == 8);
  CHECK(ra.loss_history == rb.loss_history);
  CHECK(ra.validation_mse == rb.validation_mse);
  CHECK(ra.loss_history.back() < ra.loss_history.front());
  for (std::size_t i = 0; i < a.params().size(); ++i) CHECK(a.params()[i].value == b.params()[i].value);

  TopoNet<float> untouched(c, 1), reference(c, 1);
  opt.epochs = 0;
  const auto r0 = train(untouched, gen, opt);
  CHECK(r0.loss_history.empty());
  for (std::size_t i = 0; i < untouched.params().size(); ++i)
    CHECK(untouched.params()[i].value == reference.params()[i].value);
}

TEST_CASE("non-finite loss is reported as divergence") {
  TopoNet<float> net(tiny_config(), 2);
  const MapGenerator gen = [](Rng& r) {
    auto m = blob_map(r, 8, 8);
    m[5] = std::numeric_limits<float>::quiet_NaN();
    return m;
  };
  TrainOptions opt;
  opt.epochs = 2;
  opt.samples_per_epoch = 4;
  CHECK_THROWS_AS(train(net, gen, opt), TrainingDiverged);
}

TEST_CASE("model file round trip") {
  TopoConfig c = tiny_config();
  TopoNet<float> net(c, 8);
  net.running_mean()[0][1] = 0.25f;
  net.running_var()[2][0] = 3.5f;
  std::stringstream ss;
  write_model(ss, net);
  CHECK(ss.str().rfind("PAIPNET v1\n", 0) == 0);
  TopoNet<float> back = read_model(ss);
  CHECK(back.config() == net.config());
  for (std::size_t i = 0; i < net.params().size(); ++i) CHECK(back.params()[i].value == net.params()[i].value);
  CHECK(back.running_mean() == net.running_mean());
  CHECK(back.running_var() == net.running_var());
  const auto in = random_tensor<float>(1, 8, 8, 3);
  CHECK(back.forward(in).data == net.forward(in).data);

  std::stringstream bad("PAIPNET v2\n");
  CHECK_THROWS_AS(read_model(bad), IoError);
}

TEST_CASE("predict maps an observed grid to probabilities") {
  TopoConfig c = tiny_config();
  TopoNet<float> net(c, 8);
  gridmap::GridMap obs(8, 8, 0.02);
  obs.set(3, 3, 1.0);
  const auto p = predict(net, obs);
  CHECK(p.geometry() == obs.geometry());
  for (double v : p.costs()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  CHECK_THROWS_AS(predict(net, gridmap::GridMap(16, 8, 0.02)), InvalidArgument);
}
