#include <doctest.h>

#include "fodnet/net/checkpoint.hpp"
#include "fodnet/net/network.hpp"
#include "fodnet/net/optimizer.hpp"
#include "net_oracles.hpp"

#include <cmath>
#include <functional>
#include <random>

using namespace fodnet::net;

using namespace net_oracle;

TEST_CASE("gradient check: conv3d") {
  std::mt19937_64 rng(1);
  struct Case {
    int cin, cout, k, dil;
    bool bias;
  };
  for (const Case c : {Case{3, 4, 3, 1, true}, Case{2, 3, 3, 2, true}, Case{3, 2, 1, 1, true}, Case{2, 2, 3, 1, false},
                       Case{1, 2, 5, 1, true}}) {
    CAPTURE(c.k);
    CAPTURE(c.dil);
    Conv3d<double> conv(c.cin, c.cout, c.k, c.dil, c.bias);
    randomize(conv, rng);
    const auto x = random_tensor(Shape{2, c.cin, 4, 4, 4}, rng);
    CHECK(layer_gradient_error(conv, {x}, Mode::train, 11) < 1e-4);
  }
}

TEST_CASE("gradient check: batchnorm in both modes") {
  std::mt19937_64 rng(2);
  BatchNorm<double> bn(3);
  randomize(bn, rng);
  const auto x = random_tensor(Shape{2, 3, 4, 4, 4}, rng, 2.0);
  CHECK(layer_gradient_error(bn, {x}, Mode::train, 12) < 1e-4);
  bn.running_mean << 0.3, -0.2, 0.1;
  bn.running_var << 2.0, 0.5, 1.5;
  CHECK(layer_gradient_error(bn, {x}, Mode::infer, 13) < 1e-4);
}

TEST_CASE("gradient check: prelu, add, maxpool, upsample, concat") {
  std::mt19937_64 rng(3);
  PRelu<double> act(3);
  randomize(act, rng);
  CHECK(layer_gradient_error(act, {random_tensor(Shape{2, 3, 4, 4, 4}, rng)}, Mode::train, 14) < 1e-4);

  Add<double> add;
  CHECK(layer_gradient_error(add, {random_tensor(Shape{2, 4, 4, 4, 4}, rng), random_tensor(Shape{2, 4, 4, 4, 4}, rng)},
                             Mode::train, 15) < 1e-4);
  CHECK(layer_gradient_error(add, {random_tensor(Shape{2, 4, 4, 4, 4}, rng), random_tensor(Shape{2, 2, 4, 4, 4}, rng)},
                             Mode::train, 16) < 1e-4);

  MaxPool2<double> pool;
  CHECK(layer_gradient_error(pool, {random_tensor(Shape{2, 2, 4, 4, 4}, rng)}, Mode::train, 17) < 1e-4);

  Upsample2<double> up;
  CHECK(layer_gradient_error(up, {random_tensor(Shape{2, 2, 4, 4, 4}, rng)}, Mode::train, 18) < 1e-4);

  Concat<double> cat;
  CHECK(layer_gradient_error(cat, {random_tensor(Shape{2, 2, 4, 4, 4}, rng), random_tensor(Shape{2, 3, 4, 4, 4}, rng)},
                             Mode::train, 19) < 1e-4);
}

TEST_CASE("gradient check: l2 loss") {
  std::mt19937_64 rng(4);
  auto p = random_tensor(Shape{2, 3, 4, 4, 4}, rng);
  const auto t = random_tensor(p.shape(), rng);
  Tensor4<double> g;
  CHECK(l2_loss(t, t) == 0.0);
  l2_loss(p, t, &g);
  const double h = 1e-4;
  double worst = 0.0;
  for (std::size_t i : probe(p.size(), rng)) {
    const double v = p.data()[i];
    p.data()[i] = v + h;
    const double fp = l2_loss(p, t);
    p.data()[i] = v - h;
    const double fm = l2_loss(p, t);
    p.data()[i] = v;
    worst = std::max(worst, rel_error(g.data()[i], (fp - fm) / (2 * h)));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("gradient check: whole networks") {
  Network<double> hr(highresnet_lite(3));
  CHECK(network_gradient_error(hr, Shape{2, 3, 4, 4, 4}, 21) < 1e-4);
  Network<double> un(unet_lite(3));
  CHECK(network_gradient_error(un, Shape{2, 3, 4, 4, 4}, 22) < 1e-4);
}

TEST_CASE("residual add passes the upstream gradient to both branches") {
  std::mt19937_64 rng(5);
  Add<double> add;
  const auto a = random_tensor(Shape{1, 3, 4, 4, 4}, rng), b = random_tensor(Shape{1, 3, 4, 4, 4}, rng);
  Tensor4<double> out;
  add.forward({&a, &b}, out, Mode::train);
  const auto g = random_tensor(out.shape(), rng);
  Tensor4<double> ga(a.shape()), gb(b.shape());
  add.backward({&a, &b}, out, g, {&ga, &gb});
  CHECK(ga.values() == g.values());
  CHECK(gb.values() == g.values());
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
  Network<double> net(highresnet_lite(3));
  he_uniform_init(net, 3);
  std::mt19937_64 rng(6);
  const auto x = random_tensor(Shape{1, 3, 4, 4, 4}, rng);
  const auto& y = net.forward(x, Mode::train);
  net.zero_grad();
  net.backward(Tensor4<double>(y.shape()));
  for (auto* p : net.params()) CHECK(p->grad.abs().maxCoeff() == 0.0);
}

TEST_CASE("identity and zero networks") {
  std::mt19937_64 rng(7);
  Network<float> id(identity_net(15));
  auto* w = id.params()[0];
  w->value.setZero();
  for (int c = 0; c < 15; ++c) w->value[c * 15 + c] = 1.0f;
  const Tensor4<float> x = random_tensor(Shape{1, 15, 6, 5, 4}, rng).cast<float>();
  CHECK(id.forward(x, Mode::infer).values() == x.values());

  Network<float> hr(highresnet_lite(15));
  for (auto* p : hr.params())
    if (p->role == ParamRole::conv_weight || p->role == ParamRole::bias) p->value.setZero();
  CHECK(hr.forward(x, Mode::train).array().abs().maxCoeff() == 0.0f);
}

TEST_CASE("highresnet maps a 32^3 x 15 patch to the same shape") {
  Network<float> net(highresnet_lite(15));
  he_uniform_init(net, 1);
  std::mt19937_64 rng(8);
  const Tensor4<float> x = random_tensor(Shape{1, 15, 32, 32, 32}, rng).cast<float>();
  const auto& y = net.forward(x, Mode::train);
  CHECK(y.shape() == x.shape());
  CHECK(y.all_finite());
  CHECK(Network<float>(unet_lite(15)).output_shape(x.shape()) == x.shape());
}

TEST_CASE("shape errors name the layer") {
  Network<float> net(highresnet_lite(15));
  CHECK_THROWS_WITH_AS(net.forward(Tensor4<float>(Shape{1, 14, 4, 4, 4}), Mode::infer),
                       doctest::Contains("layer 'conv0'"), std::invalid_argument);
  Network<float> un(unet_lite(15));
  CHECK_THROWS_WITH_AS(un.output_shape(Shape{1, 15, 5, 4, 4}), doctest::Contains("layer 'pool'"),
                       std::invalid_argument);
  NetworkSpec bad = identity_net(4);
  bad.layers.push_back(LayerSpec{"sum", "add", {"head", "nowhere"}});
  CHECK_THROWS_WITH_AS(Network<float>{bad}, doctest::Contains("layer 'sum'"), std::invalid_argument);
  CHECK_THROWS_AS(architecture("resnet"), std::invalid_argument);
}

TEST_CASE("backward requires a cached forward pass") {
  Network<float> net(identity_net(2));
  CHECK_THROWS_AS(net.backward(Tensor4<float>(Shape{1, 2, 2, 2, 2})), std::logic_error);
  const Tensor4<float> x(Shape{1, 2, 2, 2, 2}, 1.0f);
  net.forward(x, Mode::train);
  net.backward(Tensor4<float>(Shape{1, 2, 2, 2, 2}));
  CHECK_THROWS_AS(net.backward(Tensor4<float>(Shape{1, 2, 2, 2, 2})), std::logic_error);
}

TEST_CASE("parameter counts and receptive fields") {
  const auto hr = Network<float>(highresnet_lite(15)).parameter_count();
  const auto un = Network<float>(unet_lite(15)).parameter_count();
  CHECK(double(hr) == doctest::Approx(160000).epsilon(0.10));
  CHECK(double(un) == doctest::Approx(3930000).epsilon(0.10));
  CHECK(receptive_field(highresnet_lite()) == 27);
  CHECK(receptive_field(unet_lite()) == 28);
  CHECK(receptive_field(identity_net()) == 1);
  CHECK(size_multiple(unet_lite()) == 2);
  CHECK(size_multiple(highresnet_lite()) == 1);
}

TEST_CASE("receptive field matches the measured influence region") {
  for (const auto& spec : {highresnet_lite(2), unet_lite(2)}) {
    CAPTURE(spec.arch);
    Network<double> net(spec);
    he_uniform_init(net, 4);
    const int n = 40;
    Tensor4<double> x(Shape{1, 2, n, n, n});
    net.forward(x, Mode::infer);
    Tensor4<double> g(Shape{1, 2, n, n, n});
    g.at(0, 0, n / 2, n / 2, n / 2) = 1.0;
    net.zero_grad();
    const auto gx = net.backward(g, true);
    int lo = n, hi = -1;
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < 2; ++c)
        if (gx.at(0, c, i, n / 2, n / 2) != 0.0) {
          lo = std::min(lo, i);
          hi = std::max(hi, i);
        }
    CHECK(hi - lo + 1 <= receptive_field(spec));
    CHECK(hi - lo + 1 <= 32);
  }
}

TEST_CASE("he uniform init statistics and determinism") {
  NetworkSpec spec;
  spec.arch = "wide";
  spec.in_channels = 16;
  spec.layers.push_back(LayerSpec{"conv", "conv3d", {"input"}, 256, 3, 1, true});
  Network<double> net(spec);
  he_uniform_init(net, 42);
  const auto& w = net.params()[0]->value;
  REQUIRE(w.size() >= 100000);
  const double fan_in = 16 * 27;
  const double mean = w.mean();
  const double var = (w - mean).square().mean();
  CHECK(var == doctest::Approx(2.0 / fan_in).epsilon(0.05));
  CHECK(w.abs().maxCoeff() <= std::sqrt(6.0 / fan_in));
  CHECK(net.params()[1]->value.abs().maxCoeff() == 0.0);

  Network<double> again(spec);
  he_uniform_init(again, 42);
  CHECK((again.params()[0]->value == w).all());

  NetworkSpec six = identity_net(6);
  Network<double> small(six);
  he_uniform_init(small, 1);
  CHECK(small.params()[0]->fan_in == 6);
  CHECK(small.params()[0]->value.abs().maxCoeff() <= 1.0);

  Network<float> hr(highresnet_lite());
  he_uniform_init(hr, 1);
  for (auto& [name, p] : hr.named_params())
    if (p->role == ParamRole::prelu_slope) CHECK((p->value == 0.25f).all());
}

TEST_CASE("batchnorm train and infer modes") {
  std::mt19937_64 rng(9);
  BatchNorm<double> bn(2);
  auto x = random_tensor(Shape{2, 2, 4, 4, 4}, rng, 3.0);
  for (auto& v : x.values()) v += 5.0;
  Tensor4<double> train, infer;
  bn.forward({&x}, train, Mode::infer);
  bn.forward({&x}, train, Mode::train);
  bn.forward({&x}, infer, Mode::infer);
  CHECK((train.array() - infer.array()).abs().maxCoeff() > 0.1);
  for (int i = 0; i < 300; ++i) bn.forward({&x}, train, Mode::train);
  bn.forward({&x}, infer, Mode::infer);
  // Running variance is unbiased, so a small residual remains.
  CHECK((train.array() - infer.array()).abs().maxCoeff() < 0.02);
}

TEST_CASE("forward is pure and independent of the thread count") {
  std::mt19937_64 rng(10);
  Network<float> a(highresnet_lite(15), 1), b(highresnet_lite(15), 3);
  he_uniform_init(a, 5);
  he_uniform_init(b, 5);
  const Tensor4<float> x = random_tensor(Shape{3, 15, 8, 8, 8}, rng).cast<float>();
  const auto y1 = a.forward(x, Mode::train);
  const auto y2 = a.forward(x, Mode::train);
  const auto y3 = b.forward(x, Mode::train);
  CHECK(y1.values() == y2.values());
  CHECK(y1.values() == y3.values());
  a.zero_grad();
  b.zero_grad();
  a.forward(x, Mode::train);
  a.backward(y1);
  b.backward(y1);
  const auto pa = a.params(), pb = b.params();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK((pa[i]->grad == pb[i]->grad).all());
}

TEST_CASE("rmsprop closed forms") {
  Param<double> p("w", ParamRole::conv_weight, 3, 1);
  p.value << 1.0, -2.0, 0.5;
  RmsProp<double> zero({&p}, RmsPropConfig{0.1, 0.9, 1e-8, 0.0});
  zero.step();
  CHECK((p.value == Eigen::Array3d(1.0, -2.0, 0.5)).all());

  Param<double> q("w", ParamRole::conv_weight, 1, 1);
  q.grad[0] = 1.0;
  RmsProp<double> one({&q}, RmsPropConfig{0.1, 0.9, 0.0, 0.0});
  one.step();
  CHECK(q.value[0] == doctest::Approx(-0.1 / std::sqrt(0.1)).epsilon(1e-12));
  CHECK(one.accumulators()[0][0] == doctest::Approx(0.1));

  Param<double> r("w", ParamRole::conv_weight, 1, 1);
  r.value[0] = 2.0;
  RmsProp<double> decay({&r}, RmsPropConfig{0.1, 0.9, 0.0, 0.5});
  r.grad[0] = 1.0;
  decay.step();
  CHECK(r.value[0] == doctest::Approx(2.0 - 0.1 * (1.0 + 0.5 * 2.0) / std::sqrt(0.1)));
}

TEST_CASE("rmsprop descends a quadratic bowl") {
  Param<double> p("xy", ParamRole::conv_weight, 2, 1);
  p.value << 3.0, -4.0;
  const Eigen::Array2d curv(1.0, 10.0);
  RmsProp<double> opt({&p}, RmsPropConfig{0.01, 0.9, 1e-8, 0.0});
  std::vector<double> loss;
  for (int step = 0; step < 200; ++step) {
    loss.push_back(0.5 * (curv * p.value.square()).sum());
    p.grad = curv * p.value;
    opt.step();
  }
  for (std::size_t i = 6; i < loss.size(); ++i) CHECK(loss[i] < loss[i - 1]);
  CHECK(loss.back() < 0.5 * loss.front());
}

TEST_CASE("checkpoint round trip and corruption errors") {
  Network<float> net(highresnet_lite(15));
  he_uniform_init(net, 9);
  RmsProp<float> opt(net.params(), RmsPropConfig{0.01, 0.9, 1e-8, 1e-6});
  std::mt19937_64 rng(11);
  const Tensor4<float> x = random_tensor(Shape{2, 15, 6, 6, 6}, rng).cast<float>();
  net.forward(x, Mode::train);
  net.backward(x);
  opt.step();
  Checkpoint ck = snapshot(net, &opt);
  ck.epoch = 7;
  ck.train_loss = 0.25;
  ck.rng = "123 456";
  ck.extra = R"({"note":"unit"})";
  const std::string bytes = encode_checkpoint(ck);
  CHECK(bytes.substr(0, 8) == "FODNETCK");
  const Checkpoint back = decode_checkpoint(bytes);
  CHECK(back.epoch == 7);
  CHECK(std::isnan(back.val_loss));
  CHECK(back.rng == ck.rng);
  CHECK(encode_checkpoint(back) == bytes);

  auto loaded = load_network(back);
  RmsProp<float> opt2(loaded->params());
  restore(back, *loaded, &opt2);
  CHECK(loaded->forward(x, Mode::infer).values() == net.forward(x, Mode::infer).values());
  for (std::size_t i = 0; i < opt2.accumulators().size(); ++i)
    CHECK((opt2.accumulators()[i] == opt.accumulators()[i]).all());

  CHECK_THROWS_WITH_AS(decode_checkpoint("FODNETXX" + bytes.substr(8)), doctest::Contains("byte offset 0"),
                       fodnet::FormatError);
  CHECK_THROWS_WITH_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), doctest::Contains("truncated"),
                       fodnet::FormatError);
  CHECK_THROWS_WITH_AS(decode_checkpoint(bytes + "x"), doctest::Contains("trailing"), fodnet::FormatError);

  Network<float> other(unet_lite(15));
  CHECK_THROWS_AS(restore(back, other), std::invalid_argument);
}
