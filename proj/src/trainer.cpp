#include "fodnet/trainer.hpp"

#include "fodnet/net/optimizer.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <sstream>

namespace fodnet {

using net::Mode;
using net::Shape;
using net::Tensor4;

namespace {

std::string format_double(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

int wm_channels(const CoeffVolume& v) { return v.layout().wm_count(); }

// Copies the WM channels of the P^3 block starting at `corner` into sample n of `t`.
void extract_block(const CoeffVolume& v, const Eigen::Vector3i& corner, int p, Tensor4<float>& t, int n) {
  const int nc = t.shape().c;
  const Dims& d = v.dims();
  for (int z = 0; z < p; ++z)
    for (int y = 0; y < p; ++y)
      for (int x = 0; x < p; ++x) {
        const auto src = v.voxel(d.index(corner.x() + x, corner.y() + y, corner.z() + z));
        for (int c = 0; c < nc; ++c) t.at(n, c, x, y, z) = src[std::size_t(c)];
      }
}

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

Tensor4<float> stack_inputs(const std::vector<PatchPair>& pairs, std::size_t first, std::size_t count, bool target) {
  const Shape s1 = (target ? pairs[first].target : pairs[first].input).shape();
  Tensor4<float> out(Shape{int(count), s1.c, s1.x, s1.y, s1.z});
  for (std::size_t k = 0; k < count; ++k) {
    const auto& src = target ? pairs[first + k].target : pairs[first + k].input;
    std::copy(src.sample(0), src.sample(0) + s1.sample_size(), out.sample(int(k)));
  }
  return out;
}

void check_scene(const TrainingScene& s, const TrainConfig& cfg) {
  if (!(s.input.dims() == s.target.dims()) || !(s.input.dims() == s.mask.dims()))
    throw std::invalid_argument("scene '" + s.name + "': input, target and mask dimensions differ");
  if (wm_channels(s.input) != wm_channels(s.target))
    throw std::invalid_argument("scene '" + s.name + "': input and target WM orders differ");
  if (cfg.patch_size > s.input.dims().min())
    throw std::invalid_argument("scene '" + s.name + "': patch size " + std::to_string(cfg.patch_size) +
                                " exceeds smallest volume dimension " + std::to_string(s.input.dims().min()));
}

// Mean loss over fixed, unrotated validation patches in inference mode.
double validation_loss(net::Network<float>& net, const std::vector<std::vector<PatchPair>>& val, int micro) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& pairs : val)
    for (std::size_t b = 0; b < pairs.size(); b += std::size_t(micro)) {
      const std::size_t m = std::min(pairs.size() - b, std::size_t(micro));
      const auto x = stack_inputs(pairs, b, m, false);
      const auto y = stack_inputs(pairs, b, m, true);
      sum += net::l2_loss(net.forward(x, Mode::infer), y) * double(m);
      count += m;
    }
  net.clear_cache();
  return count ? sum / double(count) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

double TrainConfig::lr_at(int epoch) const {
  return base_lr * std::pow(0.5, double(epoch / lr_halving_period));
}

void TrainConfig::validate() const {
  auto positive = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("train config: " + what + " must be positive");
  };
  positive(epochs > 0, "epochs");
  positive(base_lr > 0, "base_lr");
  positive(lr_halving_period > 0, "lr_halving_period");
  positive(weight_decay >= 0, "weight_decay");
  positive(patches_per_subject > 0, "patches_per_subject");
  positive(patch_size > 0, "patch_size");
  positive(micro_batch > 0, "micro_batch");
  positive(rotation_range_deg >= 0, "rotation_range_deg");
  positive(validation_every > 0, "validation_every");
  positive(validation_patches > 0, "validation_patches");
  positive(rho > 0 && rho < 1, "rho");
  positive(eps >= 0, "eps");
  net::architecture(arch);
  if (patch_size % net::size_multiple(net::architecture(arch)) != 0)
    throw std::invalid_argument("train config: patch_size must be even for " + arch);
}

TrainConfig TrainConfig::from_config(const Config& cfg) {
  static const std::vector<std::string> known = {
      "arch",       "epochs",      "base_lr",          "lr_halving_period", "weight_decay",
      "patches_per_subject", "patch_size", "micro_batch", "rotation_range_deg", "seed",
      "validation_every", "validation_patches", "rho", "eps"};
  for (const auto& [key, value] : cfg.values()) {
    if (key.rfind("train.", 0) != 0) continue;
    const std::string k = key.substr(6);
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw ConfigError(cfg.source() + ": unknown key 'train." + k + "'");
  }
  TrainConfig t;
  t.arch = cfg.get("train.arch", t.arch);
  t.epochs = int(cfg.get_int("train.epochs", t.epochs));
  t.base_lr = cfg.get_double("train.base_lr", t.base_lr);
  t.lr_halving_period = int(cfg.get_int("train.lr_halving_period", t.lr_halving_period));
  t.weight_decay = cfg.get_double("train.weight_decay", t.weight_decay);
  t.patches_per_subject = int(cfg.get_int("train.patches_per_subject", t.patches_per_subject));
  t.patch_size = int(cfg.get_int("train.patch_size", t.patch_size));
  t.micro_batch = int(cfg.get_int("train.micro_batch", t.micro_batch));
  t.rotation_range_deg = cfg.get_double("train.rotation_range_deg", t.rotation_range_deg);
  t.seed = std::uint64_t(cfg.get_int("train.seed", (long long)t.seed));
  t.validation_every = int(cfg.get_int("train.validation_every", t.validation_every));
  t.validation_patches = int(cfg.get_int("train.validation_patches", t.validation_patches));
  t.rho = cfg.get_double("train.rho", t.rho);
  t.eps = cfg.get_double("train.eps", t.eps);
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(cfg.source() + ": " + e.what());
  }
  return t;
}

std::string TrainConfig::to_config() const {
  std::ostringstream out;
  out << "[train]\n"
      << "arch = " << arch << "\n"
      << "epochs = " << epochs << "\n"
      << "base_lr = " << format_double(base_lr) << "\n"
      << "lr_halving_period = " << lr_halving_period << "\n"
      << "weight_decay = " << format_double(weight_decay) << "\n"
      << "patches_per_subject = " << patches_per_subject << "\n"
      << "patch_size = " << patch_size << "\n"
      << "micro_batch = " << micro_batch << "\n"
      << "rotation_range_deg = " << format_double(rotation_range_deg) << "\n"
      << "seed = " << seed << "\n"
      << "validation_every = " << validation_every << "\n"
      << "validation_patches = " << validation_patches << "\n"
      << "rho = " << format_double(rho) << "\n"
      << "eps = " << format_double(eps) << "\n";
  return out.str();
}

std::vector<std::size_t> patch_centers(const Mask& mask, int patch_size) {
  const Dims& d = mask.dims();
  const int h = patch_size / 2;
  std::vector<std::size_t> out;
  for (auto idx : mask.indices()) {
    const Eigen::Vector3i c = d.coords(idx);
    if (c.x() - h >= 0 && c.y() - h >= 0 && c.z() - h >= 0 && c.x() - h + patch_size <= d.x &&
        c.y() - h + patch_size <= d.y && c.z() - h + patch_size <= d.z)
      out.push_back(idx);
  }
  return out;
}

std::vector<PatchPair> sample_patches(const CoeffVolume& input, const CoeffVolume& target, const Mask& mask, int n,
                                      int patch_size, std::mt19937_64& rng) {
  if (!(input.dims() == target.dims()) || !(input.dims() == mask.dims()))
    throw std::invalid_argument("sample_patches: volumes and mask are not aligned");
  const auto centers = patch_centers(mask, patch_size);
  if (centers.empty())
    throw std::invalid_argument("sample_patches: no mask voxel admits an in-bounds " + std::to_string(patch_size) +
                                "^3 patch");
  std::uniform_int_distribution<std::size_t> pick(0, centers.size() - 1);
  const int h = patch_size / 2;
  std::vector<PatchPair> out;
  out.reserve(std::size_t(n));
  for (int k = 0; k < n; ++k) {
    PatchPair p;
    p.origin = input.dims().coords(centers[pick(rng)]);
    const Eigen::Vector3i corner = p.origin - Eigen::Vector3i::Constant(h);
    p.input = Tensor4<float>(Shape{1, wm_channels(input), patch_size, patch_size, patch_size});
    p.target = Tensor4<float>(Shape{1, wm_channels(target), patch_size, patch_size, patch_size});
    extract_block(input, corner, patch_size, p.input, 0);
    extract_block(target, corner, patch_size, p.target, 0);
    out.push_back(std::move(p));
  }
  return out;
}

RotationSpec draw_rotation(std::mt19937_64& rng, double range_deg) {
  const double r = range_deg * std::numbers::pi / 180.0;
  std::uniform_real_distribution<double> u(-r, r);
  RotationSpec s;
  s.alpha = u(rng);
  s.beta = u(rng);
  s.gamma = u(rng);
  return s;
}

void rotate_patch(PatchPair& pair, const RotationSpec& r) {
  const int nc = pair.input.shape().c;
  const int lmax = int(std::lround((std::sqrt(8.0 * nc + 1.0) - 3.0) / 2.0));
  const Eigen::MatrixXd rot = sh_rotation_matrix(lmax, r);
  for (auto* t : {&pair.input, &pair.target}) {
    auto m = t->matrix(0);
    const Eigen::MatrixXd rotated = rot * m.cast<double>();
    m = rotated.cast<float>();
  }
}

void augment_rotation(std::vector<PatchPair>& pairs, std::mt19937_64& rng, double range_deg) {
  const RotationSpec r = draw_rotation(rng, range_deg);
  if (range_deg == 0.0) return;
  for (auto& p : pairs) rotate_patch(p, r);
}

PatchPair augment_rotation(PatchPair pair, std::mt19937_64& rng, double range_deg) {
  std::vector<PatchPair> one{std::move(pair)};
  augment_rotation(one, rng, range_deg);
  return std::move(one.front());
}

std::string loss_history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream out;
  out << "epoch,train_loss,val_loss,lr\n";
  for (const auto& h : history)
    out << h.epoch << "," << format_double(h.train_loss) << ","
        << (std::isfinite(h.val_loss) ? format_double(h.val_loss) : std::string("")) << "," << format_double(h.lr)
        << "\n";
  return out.str();
}

TrainResult train(const TrainConfig& cfg, const std::vector<TrainingScene>& train_scenes,
                  const std::vector<TrainingScene>& val_scenes, const TrainOptions& opt) {
  cfg.validate();
  if (train_scenes.empty()) throw std::invalid_argument("train: at least one training scene is required");
  if (val_scenes.empty()) throw std::invalid_argument("train: at least one validation scene is required");
  for (const auto& s : train_scenes) check_scene(s, cfg);
  for (const auto& s : val_scenes) check_scene(s, cfg);
  const int channels = wm_channels(train_scenes.front().input);
  if (!opt.out_dir.empty()) std::filesystem::create_directories(opt.out_dir);

  net::Network<float> model(net::architecture(cfg.arch, channels), opt.threads);
  net::he_uniform_init(model, cfg.seed);
  net::RmsProp<float> optimizer(model.params(),
                                net::RmsPropConfig{cfg.base_lr, cfg.rho, cfg.eps, cfg.weight_decay});
  std::mt19937_64 rng(cfg.seed);

  // Validation patches are drawn once from a separate stream and never rotated.
  std::vector<std::vector<PatchPair>> val;
  std::mt19937_64 val_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  for (const auto& s : val_scenes)
    val.push_back(sample_patches(s.input, s.target, s.mask, cfg.validation_patches, cfg.patch_size, val_rng));

  nlohmann::ordered_json extra;
  extra["train_config"] = cfg.to_config();
  std::vector<std::string> names;
  for (const auto& s : train_scenes) names.push_back(s.name);
  extra["train_scenes"] = names;
  names.clear();
  for (const auto& s : val_scenes) names.push_back(s.name);
  extra["val_scenes"] = names;
  const nlohmann::json prov = nlohmann::json::parse(opt.provenance.empty() ? "{}" : opt.provenance, nullptr, false);
  extra["provenance"] = prov.is_discarded() ? nlohmann::json(opt.provenance) : prov;

  TrainResult result;
  double best_val = std::numeric_limits<double>::infinity();
  auto capture = [&](int epoch, double train_loss, double val_loss) {
    net::Checkpoint ck = net::snapshot(model, &optimizer);
    ck.epoch = epoch;
    ck.train_loss = train_loss;
    ck.val_loss = val_loss;
    ck.rng = rng_state(rng);
    ck.extra = extra.dump();
    return ck;
  };

  std::vector<std::size_t> order(train_scenes.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_at(epoch);
    optimizer.config().lr = lr;
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t s : order) {
      const TrainingScene& scene = train_scenes[s];
      auto pairs = sample_patches(scene.input, scene.target, scene.mask, cfg.patches_per_subject, cfg.patch_size, rng);
      augment_rotation(pairs, rng, cfg.rotation_range_deg);
      model.zero_grad();
      double loss = 0.0;
      const std::size_t total = pairs.size();
      for (std::size_t b = 0; b < total; b += std::size_t(cfg.micro_batch)) {
        const std::size_t m = std::min(total - b, std::size_t(cfg.micro_batch));
        const auto x = stack_inputs(pairs, b, m, false);
        const auto y = stack_inputs(pairs, b, m, true);
        Tensor4<float> grad;
        const double part = net::l2_loss(model.forward(x, Mode::train), y, &grad);
        // Weight each micro-batch so the step follows the mean loss of the whole batch.
        grad.array() *= float(double(m) / double(total));
        model.backward(grad);
        loss += part * double(m) / double(total);
      }
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "training diverged: non-finite loss at epoch " << epoch + 1 << ", scene '" << scene.name << "'";
        if (!opt.out_dir.empty()) {
          net::write_checkpoint(opt.out_dir / "diverged.ckpt", capture(epoch + 1, loss, std::nan("")));
          std::ofstream(opt.out_dir / "loss.csv") << loss_history_csv(result.history);
          msg << "; snapshot written to " << (opt.out_dir / "diverged.ckpt").string();
        }
        throw TrainingDiverged(msg.str());
      }
      optimizer.step();
      epoch_loss += loss / double(order.size());
    }
    EpochRecord rec{epoch + 1, epoch_loss, std::numeric_limits<double>::quiet_NaN(), lr};
    const bool last = epoch + 1 == cfg.epochs;
    if ((epoch + 1) % cfg.validation_every == 0 || last) {
      rec.val_loss = validation_loss(model, val, cfg.micro_batch);
      if (rec.val_loss <= best_val) {
        best_val = rec.val_loss;
        result.best = capture(epoch + 1, epoch_loss, rec.val_loss);
      }
    }
    result.history.push_back(rec);
    if (opt.verbose)
      std::cerr << "epoch " << rec.epoch << " train " << rec.train_loss << " val " << rec.val_loss << " lr " << lr
                << "\n";
    if (last) result.final = capture(epoch + 1, epoch_loss, rec.val_loss);
  }
  if (!opt.out_dir.empty()) {
    net::write_checkpoint(opt.out_dir / "best.ckpt", result.best);
    net::write_checkpoint(opt.out_dir / "final.ckpt", result.final);
    std::ofstream(opt.out_dir / "loss.csv") << loss_history_csv(result.history);
  }
  return result;
}

CoeffVolume infer_volume(net::Network<float>& net, const CoeffVolume& input, const Mask& mask, int patch_size,
                         int stride) {
  const int nc = wm_channels(input);
  if (nc != net.in_channels())
    throw std::invalid_argument("infer_volume: input has " + std::to_string(nc) + " WM coefficients, network expects " +
                                std::to_string(net.in_channels()));
  if (!(mask.dims() == input.dims())) throw std::invalid_argument("infer_volume: mask and input are not aligned");
  if (patch_size <= 0 || stride <= 0 || stride > patch_size)
    throw std::invalid_argument("infer_volume: need 0 < stride <= patch_size");
  if (patch_size % net::size_multiple(net.spec()) != 0)
    throw std::invalid_argument("infer_volume: patch size not compatible with the architecture");

  const Dims d = input.dims();
  // Work grid: the input, reflect-padded up to one patch where it is smaller.
  const Dims g{std::max(d.x, patch_size), std::max(d.y, patch_size), std::max(d.z, patch_size)};
  auto reflect = [](int i, int n) {
    const int period = 2 * n;
    int j = ((i % period) + period) % period;
    return j < n ? j : period - 1 - j;
  };
  auto starts = [&](int n) {
    std::vector<int> s;
    for (int o = 0; o + patch_size <= n; o += stride) s.push_back(o);
    if (s.back() + patch_size < n) s.push_back(n - patch_size);
    return s;
  };
  const auto sx = starts(g.x), sy = starts(g.y), sz = starts(g.z);

  std::vector<double> sum(g.voxels() * std::size_t(nc), 0.0);
  std::vector<int> hits(g.voxels(), 0);
  Tensor4<float> patch(Shape{1, nc, patch_size, patch_size, patch_size});
  for (int oz : sz)
    for (int oy : sy)
      for (int ox : sx) {
        for (int z = 0; z < patch_size; ++z)
          for (int y = 0; y < patch_size; ++y)
            for (int x = 0; x < patch_size; ++x) {
              const auto src =
                  input.voxel(d.index(reflect(ox + x, d.x), reflect(oy + y, d.y), reflect(oz + z, d.z)));
              for (int c = 0; c < nc; ++c) patch.at(0, c, x, y, z) = src[std::size_t(c)];
            }
        const auto& out = net.forward(patch, Mode::infer);
        for (int z = 0; z < patch_size; ++z)
          for (int y = 0; y < patch_size; ++y)
            for (int x = 0; x < patch_size; ++x) {
              const std::size_t gi = g.index(ox + x, oy + y, oz + z);
              ++hits[gi];
              for (int c = 0; c < nc; ++c) sum[gi * std::size_t(nc) + std::size_t(c)] += double(out.at(0, c, x, y, z));
            }
      }
  net.clear_cache();

  CoeffVolume result(d, TissueLayout{input.layout().wm_lmax, false, false});
  result.voxel_size_mm = input.voxel_size_mm;
  result.scale = input.scale;
  for (std::size_t i = 0; i < d.voxels(); ++i) {
    if (!mask[i]) continue;
    const Eigen::Vector3i c = d.coords(i);
    const std::size_t gi = g.index(c.x(), c.y(), c.z());
    auto dst = result.voxel(i);
    for (int k = 0; k < nc; ++k) dst[std::size_t(k)] = float(sum[gi * std::size_t(nc) + std::size_t(k)] / hits[gi]);
  }
  return result;
}

}  // namespace fodnet
