#include <doctest.h>

#include "fodnet/trainer.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

using namespace fodnet;

namespace {

CoeffVolume random_coeffs(Dims d, std::uint64_t seed, int lmax = 4) {
  CoeffVolume v(d, TissueLayout{lmax, false, false});
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 0.3f);
  for (auto& x : v.data()) x = n(rng);
  return v;
}

// Smoothly varying coefficients: a blend of two fixed vectors along x.
CoeffVolume smooth_coeffs(Dims d, std::uint64_t seed) {
  CoeffVolume v(d, TissueLayout{4, false, false});
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.3);
  Eigen::VectorXd a(15), b(15);
  for (int i = 0; i < 15; ++i) {
    a[i] = n(rng);
    b[i] = n(rng);
  }
  for (std::size_t i = 0; i < d.voxels(); ++i) {
    const double t = double(d.coords(i).x()) / double(d.x - 1);
    v.voxel_vec(i) = ((1 - t) * a + t * b).cast<float>();
  }
  return v;
}

Mask box_mask(Dims d, int margin) {
  Mask m(d);
  for (std::size_t i = 0; i < d.voxels(); ++i) {
    const auto c = d.coords(i);
    if (c.minCoeff() >= margin && c.x() < d.x - margin && c.y() < d.y - margin && c.z() < d.z - margin) m.set(i, true);
  }
  return m;
}

TrainingScene scene(const std::string& name, Dims d, std::uint64_t seed) {
  TrainingScene s;
  s.name = name;
  s.input = smooth_coeffs(d, seed);
  s.target = smooth_coeffs(d, seed + 100);
  s.mask = box_mask(d, 2);
  return s;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.epochs = 3;
  c.patch_size = 8;
  c.patches_per_subject = 4;
  c.micro_batch = 2;
  c.validation_patches = 2;
  c.seed = 5;
  c.base_lr = 1e-3;
  return c;
}

net::Network<float> identity_network(int channels) {
  net::Network<float> id(net::identity_net(channels));
  auto* w = id.params()[0];
  w->value.setZero();
  for (int c = 0; c < channels; ++c) w->value[c * channels + c] = 1.0f;
  return id;
}

}  // namespace

TEST_CASE("sample_patches: bounds, content and single-voxel masks") {
  const Dims d{64, 64, 64};
  const auto in = random_coeffs(d, 1), tg = random_coeffs(d, 2);
  Mask one(d);
  one.set(d.index(32, 32, 32), true);
  std::mt19937_64 rng(3);
  const auto same = sample_patches(in, tg, one, 10, 32, rng);
  REQUIRE(same.size() == 10);
  for (const auto& p : same) CHECK(p.origin == Eigen::Vector3i(32, 32, 32));

  const Dims s{48, 48, 48};
  const auto si = random_coeffs(s, 4), st = random_coeffs(s, 5);
  const Mask brain = box_mask(s, 4);
  const auto pairs = sample_patches(si, st, brain, 40, 32, rng);
  REQUIRE(pairs.size() == 40);
  for (const auto& p : pairs) {
    CHECK(brain[s.index(p.origin.x(), p.origin.y(), p.origin.z())]);
    CHECK((p.origin.array() - 16).minCoeff() >= 0);
    CHECK((p.origin.array() + 16).maxCoeff() <= 48);
    CHECK(p.input.shape() == net::Shape{1, 15, 32, 32, 32});
    const Eigen::Vector3i c = p.origin.array() - 16;
    CHECK(p.input.at(0, 7, 3, 5, 9) == si.at(s.index(c.x() + 3, c.y() + 5, c.z() + 9), 7));
    CHECK(p.target.at(0, 2, 31, 0, 17) == st.at(s.index(c.x() + 31, c.y(), c.z() + 17), 2));
  }

  Mask edge(s);
  edge.set(s.index(0, 0, 0), true);
  CHECK_THROWS_AS(sample_patches(si, st, edge, 1, 32, rng), std::invalid_argument);

  std::mt19937_64 r1(9), r2(9);
  const auto a = sample_patches(si, st, brain, 5, 16, r1), b = sample_patches(si, st, brain, 5, 16, r2);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].origin == b[i].origin);
}

TEST_CASE("sample_patches: centers are uniform over the mask") {
  const Dims d{12, 12, 12};
  const auto in = random_coeffs(d, 1), tg = random_coeffs(d, 2);
  Mask two(d);
  two.set(d.index(5, 6, 6), true);
  two.set(d.index(6, 6, 6), true);
  std::mt19937_64 rng(77);
  const int n = 10000;
  const auto pairs = sample_patches(in, tg, two, n, 4, rng);
  double left = 0;
  for (const auto& p : pairs) left += p.origin.x() == 5 ? 1 : 0;
  const double e = n / 2.0;
  const double chi2 = (left - e) * (left - e) / e + ((n - left) - e) * ((n - left) - e) / e;
  // One degree of freedom: p > 0.001 iff chi2 < 10.828.
  CHECK(chi2 < 10.828);
}

TEST_CASE("rotation augmentation preserves degree norms and ACC") {
  const Dims d{16, 16, 16};
  const auto in = random_coeffs(d, 11), tg = random_coeffs(d, 12);
  std::mt19937_64 rng(13);
  auto pairs = sample_patches(in, tg, box_mask(d, 5), 3, 8, rng);
  const auto original = pairs;

  std::mt19937_64 r0(1);
  auto same = pairs;
  augment_rotation(same, r0, 0.0);
  for (std::size_t k = 0; k < same.size(); ++k) CHECK(same[k].input.values() == pairs[k].input.values());

  augment_rotation(pairs, rng, 25.0);
  bool changed = false;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const Eigen::MatrixXf a = original[k].input.matrix(0), b = pairs[k].input.matrix(0);
    const Eigen::MatrixXf ta = original[k].target.matrix(0), tb = pairs[k].target.matrix(0);
    for (Eigen::Index v = 0; v < a.cols(); ++v) {
      for (int l = 0; l <= 4; l += 2) {
        const int first = sh_index(l, -l);
        CHECK(std::abs(a.col(v).segment(first, 2 * l + 1).norm() - b.col(v).segment(first, 2 * l + 1).norm()) < 1e-6);
      }
      CHECK(std::abs(acc(a.col(v), ta.col(v)) - acc(b.col(v), tb.col(v))) < 1e-5);
      changed = changed || (a.col(v) - b.col(v)).norm() > 1e-3;
    }
  }
  CHECK(changed);
}

TEST_CASE("learning-rate schedule and config grammar") {
  TrainConfig c;
  CHECK(c.lr_at(0) == doctest::Approx(3e-2));
  CHECK(c.lr_at(49) == doctest::Approx(3e-2));
  CHECK(c.lr_at(50) == doctest::Approx(1.5e-2));
  CHECK(c.lr_at(120) == doctest::Approx(7.5e-3));
  CHECK(c.epochs == 400);
  CHECK(c.patches_per_subject == 40);
  CHECK(c.patch_size == 32);

  c.epochs = 17;
  c.base_lr = 0.0125;
  c.arch = "unet";
  const auto back = TrainConfig::from_config(Config::parse(c.to_config(), "t.cfg"));
  CHECK(back.to_config() == c.to_config());
  CHECK(back.epochs == 17);
  CHECK(back.arch == "unet");

  CHECK_THROWS_WITH_AS(TrainConfig::from_config(Config::parse("[train]\nepoch = 3\n", "t.cfg")),
                       doctest::Contains("train.epoch"), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_config(Config::parse("[train]\nepochs = 0\n", "t.cfg")), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_config(Config::parse("[train]\narch = vgg\n", "t.cfg")), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_config(Config::parse("[train]\narch = unet\npatch_size = 9\n", "t.cfg")),
                  ConfigError);
}

TEST_CASE("training is deterministic across runs and thread counts") {
  const Dims d{16, 16, 16};
  const std::vector<TrainingScene> tr{scene("a", d, 1), scene("b", d, 2)};
  const std::vector<TrainingScene> va{scene("v", d, 3)};
  const auto cfg = tiny_config();
  TrainOptions one, two;
  two.threads = 2;
  const auto r1 = train(cfg, tr, va, one);
  const auto r2 = train(cfg, tr, va, two);
  REQUIRE(r1.history.size() == 3);
  for (std::size_t i = 0; i < r1.history.size(); ++i) {
    CHECK(r1.history[i].train_loss == r2.history[i].train_loss);
    CHECK(r1.history[i].val_loss == r2.history[i].val_loss);
    CHECK(r1.history[i].train_loss >= 0.0);
  }
  CHECK(net::encode_checkpoint(r1.final) == net::encode_checkpoint(r2.final));
  CHECK(net::encode_checkpoint(r1.best) == net::encode_checkpoint(r2.best));
  CHECK(r1.best.val_loss <= r1.final.val_loss);
  CHECK(r1.final.epoch == 3);

  auto other = cfg;
  other.seed = 6;
  CHECK(train(other, tr, va).history[0].train_loss != r1.history[0].train_loss);

  const std::string csv = loss_history_csv(r1.history);
  CHECK(csv.rfind("epoch,train_loss,val_loss,lr\n1,", 0) == 0);

  CHECK_THROWS_AS(train(cfg, {}, va), std::invalid_argument);
  CHECK_THROWS_AS(train(cfg, tr, {}), std::invalid_argument);
  auto big = cfg;
  big.patch_size = 32;
  CHECK_THROWS_WITH_AS(train(big, tr, va), doctest::Contains("patch size"), std::invalid_argument);
}

TEST_CASE("training writes outputs and aborts on divergence") {
  const Dims d{16, 16, 16};
  const auto dir = std::filesystem::temp_directory_path() / "fodnet_test_trainer";
  std::filesystem::remove_all(dir);
  TrainOptions opt;
  opt.out_dir = dir;
  auto cfg = tiny_config();
  cfg.epochs = 2;
  const std::vector<TrainingScene> va{scene("v", d, 3)};
  train(cfg, {scene("a", d, 1)}, va, opt);
  CHECK(std::filesystem::exists(dir / "best.ckpt"));
  CHECK(std::filesystem::exists(dir / "final.ckpt"));
  std::ifstream csv(dir / "loss.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "epoch,train_loss,val_loss,lr");
  CHECK(net::read_checkpoint(dir / "final.ckpt").epoch == 2);

  auto bad = scene("nan", d, 4);
  bad.target.at(d.index(8, 8, 8), 3) = std::nanf("");
  bad.mask = Mask(d);
  bad.mask.set(d.index(8, 8, 8), true);
  CHECK_THROWS_WITH_AS(train(cfg, {bad}, va, opt), doctest::Contains("epoch 1"), TrainingDiverged);
  CHECK(std::filesystem::exists(dir / "diverged.ckpt"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("training reduces the loss on a single scene") {
  const Dims d{16, 16, 16};
  auto cfg = tiny_config();
  cfg.epochs = 30;
  cfg.base_lr = 3e-3;
  cfg.lr_halving_period = 15;
  const std::vector<TrainingScene> tr{scene("a", d, 1)};
  const auto r = train(cfg, tr, tr);
  CHECK(r.history.back().train_loss < 0.2 * r.history.front().train_loss);
}

TEST_CASE("infer_volume with an identity network") {
  const Dims d{40, 36, 34};
  const auto in = random_coeffs(d, 21);
  const Mask mask = box_mask(d, 3);
  auto id = identity_network(15);
  const auto out16 = infer_volume(id, in, mask, 32, 16);
  const auto out8 = infer_volume(id, in, mask, 32, 8);
  CHECK(out16.data() == out8.data());
  CHECK(out16.layout() == TissueLayout{4, false, false});
  double worst = 0.0;
  for (std::size_t i = 0; i < d.voxels(); ++i)
    for (int c = 0; c < 15; ++c) {
      if (mask[i])
        worst = std::max(worst, double(std::abs(out16.at(i, c) - in.at(i, c))));
      else
        CHECK(out16.at(i, c) == 0.0f);
    }
  CHECK(worst <= 1e-6);

  // Smaller than one patch: reflect padding then crop.
  const Dims small{20, 24, 18};
  const auto si = random_coeffs(small, 22);
  const Mask all(small, true);
  const auto so = infer_volume(id, si, all, 32, 16);
  CHECK(so.data() == si.data());

  CHECK_THROWS_AS(infer_volume(id, random_coeffs(small, 1, 2), all), std::invalid_argument);
}
