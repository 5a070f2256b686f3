#include "fodnet/net/layers.hpp"

#include "fodnet/parallel.hpp"

#include <algorithm>
#include <cstring>

namespace fodnet::net {

namespace {

constexpr std::size_t kMaxColumnEntries = std::size_t(1) << 22;

void require_inputs(std::size_t got, std::size_t want, const std::string& kind) {
  if (got != want)
    throw std::invalid_argument(kind + " expects " + std::to_string(want) + " input(s), got " + std::to_string(got));
}

// Fills rows (ci, kz, ky, kx) of `cols` for output planes [z0, z1) of one sample.
template <typename S>
void im2col(const S* x, const Shape& s, int k, int dil, int z0, int z1, RowMat<S>& cols) {
  const int h = k / 2;
  const int X = s.x, Y = s.y, Z = s.z;
  const std::size_t plane = std::size_t(X) * Y;
  Eigen::Index r = 0;
  for (int ci = 0; ci < s.c; ++ci) {
    const S* xc = x + std::size_t(ci) * plane * Z;
    for (int kz = 0; kz < k; ++kz)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx, ++r) {
          const int dz = (kz - h) * dil, dy = (ky - h) * dil, dx = (kx - h) * dil;
          const int lo = std::max(0, -dx), hi = std::min(X, X - dx);
          S* dst = cols.row(r).data();
          for (int z = z0; z < z1; ++z) {
            const int zs = z + dz;
            for (int y = 0; y < Y; ++y, dst += X) {
              const int ys = y + dy;
              if (zs < 0 || zs >= Z || ys < 0 || ys >= Y || lo >= hi) {
                std::fill(dst, dst + X, S(0));
                continue;
              }
              const S* src = xc + (std::size_t(zs) * Y + ys) * X;
              std::fill(dst, dst + lo, S(0));
              std::copy(src + lo + dx, src + hi + dx, dst + lo);
              std::fill(dst + hi, dst + X, S(0));
            }
          }
        }
  }
}

// Adjoint of im2col: scatter-adds the rows of `cols` into one input sample.
template <typename S>
void col2im(const RowMat<S>& cols, const Shape& s, int k, int dil, int z0, int z1, S* gx) {
  const int h = k / 2;
  const int X = s.x, Y = s.y, Z = s.z;
  const std::size_t plane = std::size_t(X) * Y;
  Eigen::Index r = 0;
  for (int ci = 0; ci < s.c; ++ci) {
    S* gc = gx + std::size_t(ci) * plane * Z;
    for (int kz = 0; kz < k; ++kz)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx, ++r) {
          const int dz = (kz - h) * dil, dy = (ky - h) * dil, dx = (kx - h) * dil;
          const int lo = std::max(0, -dx), hi = std::min(X, X - dx);
          const S* src = cols.row(r).data();
          for (int z = z0; z < z1; ++z) {
            const int zs = z + dz;
            for (int y = 0; y < Y; ++y, src += X) {
              const int ys = y + dy;
              if (zs < 0 || zs >= Z || ys < 0 || ys >= Y) continue;
              S* dst = gc + (std::size_t(zs) * Y + ys) * X;
              for (int xx = lo; xx < hi; ++xx) dst[xx + dx] += src[xx];
            }
          }
        }
  }
}

int slab_depth(std::size_t rows, const Shape& s) {
  const std::size_t plane = std::size_t(s.x) * s.y;
  const std::size_t per = std::max<std::size_t>(1, rows * plane);
  return int(std::clamp<std::size_t>(kMaxColumnEntries / per, 1, std::size_t(s.z)));
}

}  // namespace

// ---------------------------------------------------------------- Conv3d

template <typename S>
Conv3d<S>::Conv3d(int in_channels, int out_channels, int kernel, int dilation, bool bias)
    : cin_(in_channels), cout_(out_channels), k_(kernel), dil_(dilation), has_bias_(bias) {
  if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("conv3d kernel must be odd and positive");
  if (dilation < 1) throw std::invalid_argument("conv3d dilation must be positive");
  const int fan_in = cin_ * k_ * k_ * k_;
  weight = Param<S>("weight", ParamRole::conv_weight, Eigen::Index(cout_) * fan_in, fan_in);
  if (has_bias_) this->bias = Param<S>("bias", ParamRole::bias, cout_);
}

template <typename S>
std::vector<Param<S>*> Conv3d<S>::params() {
  if (has_bias_) return {&weight, &bias};
  return {&weight};
}

template <typename S>
Shape Conv3d<S>::output_shape(const std::vector<Shape>& in) const {
  require_inputs(in.size(), 1, kind());
  if (in[0].c != cin_)
    throw std::invalid_argument("conv3d expects " + std::to_string(cin_) + " input channels, got " +
                                std::to_string(in[0].c));
  Shape o = in[0];
  o.c = cout_;
  return o;
}

template <typename S>
void Conv3d<S>::forward(const Inputs<S>& in, Tensor4<S>& out, Mode) {
  const Tensor4<S>& x = *in[0];
  const Shape os = output_shape({x.shape()});
  if (!(out.shape() == os)) out.resize(os);
  const Shape& s = x.shape();
  const Eigen::Index kk = Eigen::Index(cin_) * k_ * k_ * k_;
  const Eigen::Map<const RowMat<S>> w(weight.value.data(), cout_, kk);
  const std::size_t plane = std::size_t(s.x) * s.y;
  parallel_for(std::size_t(s.n), this->threads, [&](std::size_t b0, std::size_t b1) {
    RowMat<S> cols;
    for (std::size_t n = b0; n < b1; ++n) {
      auto o = out.matrix(int(n));
      if (k_ == 1) {
        o.noalias() = w * x.matrix(int(n));
      } else {
        const int depth = slab_depth(std::size_t(kk), s);
        for (int z0 = 0; z0 < s.z; z0 += depth) {
          const int z1 = std::min(s.z, z0 + depth);
          const Eigen::Index nv = Eigen::Index(plane) * (z1 - z0);
          cols.resize(kk, nv);
          im2col(x.sample(int(n)), s, k_, dil_, z0, z1, cols);
          o.middleCols(Eigen::Index(plane) * z0, nv).noalias() = w * cols;
        }
      }
      if (has_bias_)
        for (int c = 0; c < cout_; ++c) o.row(c).array() += bias.value[c];
    }
  });
}

template <typename S>
void Conv3d<S>::backward(const Inputs<S>& in, const Tensor4<S>&, const Tensor4<S>& grad_out,
                         const std::vector<Tensor4<S>*>& grad_in) {
  const Tensor4<S>& x = *in[0];
  const Shape& s = x.shape();
  const Eigen::Index kk = Eigen::Index(cin_) * k_ * k_ * k_;
  const Eigen::Map<const RowMat<S>> w(weight.value.data(), cout_, kk);
  const std::size_t plane = std::size_t(s.x) * s.y;
  Tensor4<S>* gx = grad_in.empty() ? nullptr : grad_in[0];
  // Per-sample parameter gradients, reduced in sample order afterwards.
  std::vector<RowMat<S>> gw(std::size_t(s.n), RowMat<S>::Zero(cout_, kk));
  std::vector<Eigen::Array<S, Eigen::Dynamic, 1>> gb(std::size_t(s.n), Eigen::Array<S, Eigen::Dynamic, 1>::Zero(cout_));
  parallel_for(std::size_t(s.n), this->threads, [&](std::size_t b0, std::size_t b1) {
    RowMat<S> cols, gcols;
    for (std::size_t n = b0; n < b1; ++n) {
      const auto go = grad_out.matrix(int(n));
      if (has_bias_)
        for (int c = 0; c < cout_; ++c) {
          const S* g = grad_out.channel(int(n), c);
          double sum = 0.0;
          for (std::size_t v = 0; v < plane * std::size_t(s.z); ++v) sum += double(g[v]);
          gb[n][c] = S(sum);
        }
      if (k_ == 1) {
        gw[n].noalias() += go * x.matrix(int(n)).transpose();
        if (gx) gx->matrix(int(n)).noalias() += w.transpose() * go;
        continue;
      }
      const int depth = slab_depth(std::size_t(kk), s);
      for (int z0 = 0; z0 < s.z; z0 += depth) {
        const int z1 = std::min(s.z, z0 + depth);
        const Eigen::Index nv = Eigen::Index(plane) * (z1 - z0);
        const auto gslab = go.middleCols(Eigen::Index(plane) * z0, nv);
        cols.resize(kk, nv);
        im2col(x.sample(int(n)), s, k_, dil_, z0, z1, cols);
        gw[n].noalias() += gslab * cols.transpose();
        if (gx) {
          gcols.noalias() = w.transpose() * gslab;
          col2im(gcols, s, k_, dil_, z0, z1, gx->sample(int(n)));
        }
      }
    }
  });
  Eigen::Map<RowMat<S>> wg(weight.grad.data(), cout_, kk);
  for (std::size_t n = 0; n < gw.size(); ++n) {
    wg += gw[n];
    if (has_bias_) bias.grad += gb[n];
  }
}

// ---------------------------------------------------------------- BatchNorm

template <typename S>
BatchNorm<S>::BatchNorm(int channels, double momentum, double eps)
    : scale("scale", ParamRole::bn_scale, channels),
      shift("shift", ParamRole::bn_shift, channels),
      running_mean(Eigen::Array<S, Eigen::Dynamic, 1>::Zero(channels)),
      running_var(Eigen::Array<S, Eigen::Dynamic, 1>::Ones(channels)),
      channels_(channels),
      momentum_(momentum),
      eps_(eps) {
  scale.value.setOnes();
}

template <typename S>
Shape BatchNorm<S>::output_shape(const std::vector<Shape>& in) const {
  require_inputs(in.size(), 1, kind());
  if (in[0].c != channels_)
    throw std::invalid_argument("batchnorm expects " + std::to_string(channels_) + " channels, got " +
                                std::to_string(in[0].c));
  return in[0];
}

template <typename S>
void BatchNorm<S>::forward(const Inputs<S>& in, Tensor4<S>& out, Mode mode) {
  const Tensor4<S>& x = *in[0];
  const Shape s = output_shape({x.shape()});
  if (!(out.shape() == s)) out.resize(s);
  const std::size_t nv = s.voxels();
  const double count = double(nv) * s.n;
  batch_mean_.assign(std::size_t(channels_), 0.0);
  batch_invstd_.assign(std::size_t(channels_), 0.0);
  used_batch_stats_ = mode == Mode::train;
  parallel_for(std::size_t(channels_), this->threads, [&](std::size_t c0, std::size_t c1) {
    for (std::size_t c = c0; c < c1; ++c) {
      double mean, var;
      if (used_batch_stats_) {
        double sum = 0.0;
        for (int n = 0; n < s.n; ++n) {
          const S* p = x.channel(n, int(c));
          for (std::size_t v = 0; v < nv; ++v) sum += double(p[v]);
        }
        mean = sum / count;
        double sq = 0.0;
        for (int n = 0; n < s.n; ++n) {
          const S* p = x.channel(n, int(c));
          for (std::size_t v = 0; v < nv; ++v) {
            const double d = double(p[v]) - mean;
            sq += d * d;
          }
        }
        var = sq / count;
        const double unbiased = count > 1 ? sq / (count - 1) : var;
        running_mean[Eigen::Index(c)] = S((1 - momentum_) * double(running_mean[Eigen::Index(c)]) + momentum_ * mean);
        running_var[Eigen::Index(c)] = S((1 - momentum_) * double(running_var[Eigen::Index(c)]) + momentum_ * unbiased);
      } else {
        mean = double(running_mean[Eigen::Index(c)]);
        var = double(running_var[Eigen::Index(c)]);
      }
      const double invstd = 1.0 / std::sqrt(var + eps_);
      batch_mean_[c] = mean;
      batch_invstd_[c] = invstd;
      const double g = double(scale.value[Eigen::Index(c)]) * invstd;
      const double b = double(shift.value[Eigen::Index(c)]) - mean * g;
      for (int n = 0; n < s.n; ++n) {
        const S* p = x.channel(n, int(c));
        S* q = out.channel(n, int(c));
        for (std::size_t v = 0; v < nv; ++v) q[v] = S(double(p[v]) * g + b);
      }
    }
  });
}

template <typename S>
void BatchNorm<S>::backward(const Inputs<S>& in, const Tensor4<S>&, const Tensor4<S>& grad_out,
                            const std::vector<Tensor4<S>*>& grad_in) {
  const Tensor4<S>& x = *in[0];
  const Shape& s = x.shape();
  if (batch_mean_.size() != std::size_t(channels_)) throw std::logic_error("batchnorm backward before forward");
  const std::size_t nv = s.voxels();
  const double count = double(nv) * s.n;
  Tensor4<S>* gx = grad_in.empty() ? nullptr : grad_in[0];
  parallel_for(std::size_t(channels_), this->threads, [&](std::size_t c0, std::size_t c1) {
    for (std::size_t c = c0; c < c1; ++c) {
      const double mean = batch_mean_[c], invstd = batch_invstd_[c];
      double sum_g = 0.0, sum_gx = 0.0;
      for (int n = 0; n < s.n; ++n) {
        const S* p = x.channel(n, int(c));
        const S* g = grad_out.channel(n, int(c));
        for (std::size_t v = 0; v < nv; ++v) {
          sum_g += double(g[v]);
          sum_gx += double(g[v]) * (double(p[v]) - mean) * invstd;
        }
      }
      scale.grad[Eigen::Index(c)] += S(sum_gx);
      shift.grad[Eigen::Index(c)] += S(sum_g);
      if (!gx) continue;
      const double gamma = double(scale.value[Eigen::Index(c)]);
      for (int n = 0; n < s.n; ++n) {
        const S* p = x.channel(n, int(c));
        const S* g = grad_out.channel(n, int(c));
        S* q = gx->channel(n, int(c));
        if (used_batch_stats_) {
          const double k = gamma * invstd / count;
          for (std::size_t v = 0; v < nv; ++v) {
            const double xhat = (double(p[v]) - mean) * invstd;
            q[v] += S(k * (count * double(g[v]) - sum_g - xhat * sum_gx));
          }
        } else {
          for (std::size_t v = 0; v < nv; ++v) q[v] += S(double(g[v]) * gamma * invstd);
        }
      }
    }
  });
}

// ---------------------------------------------------------------- PRelu

template <typename S>
PRelu<S>::PRelu(int channels) : slope("slope", ParamRole::prelu_slope, channels), channels_(channels) {
  slope.value.setConstant(S(0.25));
}

template <typename S>
Shape PRelu<S>::output_shape(const std::vector<Shape>& in) const {
  require_inputs(in.size(), 1, kind());
  if (in[0].c != channels_)
    throw std::invalid_argument("prelu expects " + std::to_string(channels_) + " channels, got " +
                                std::to_string(in[0].c));
  return in[0];
}

template <typename S>
void PRelu<S>::forward(const Inputs<S>& in, Tensor4<S>& out, Mode) {
  const Tensor4<S>& x = *in[0];
  const Shape s = output_shape({x.shape()});
  if (!(out.shape() == s)) out.resize(s);
  const std::size_t nv = s.voxels();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const S a = slope.value[c];
      const S* p = x.channel(n, c);
      S* q = out.channel(n, c);
      for (std::size_t v = 0; v < nv; ++v) q[v] = p[v] > S(0) ? p[v] : a * p[v];
    }
}

template <typename S>
void PRelu<S>::backward(const Inputs<S>& in, const Tensor4<S>&, const Tensor4<S>& grad_out,
                        const std::vector<Tensor4<S>*>& grad_in) {
  const Tensor4<S>& x = *in[0];
  const Shape& s = x.shape();
  const std::size_t nv = s.voxels();
  Tensor4<S>* gx = grad_in.empty() ? nullptr : grad_in[0];
  for (int c = 0; c < s.c; ++c) {
    const S a = slope.value[c];
    double ga = 0.0;
    for (int n = 0; n < s.n; ++n) {
      const S* p = x.channel(n, c);
      const S* g = grad_out.channel(n, c);
      S* q = gx ? gx->channel(n, c) : nullptr;
      for (std::size_t v = 0; v < nv; ++v) {
        if (p[v] > S(0)) {
          if (q) q[v] += g[v];
        } else {
          ga += double(g[v]) * double(p[v]);
          if (q) q[v] += a * g[v];
        }
      }
    }
    slope.grad[c] += S(ga);
  }
}

// ---------------------------------------------------------------- Add

template <typename S>
Shape Add<S>::output_shape(const std::vector<Shape>& in) const {
  require_inputs(in.size(), 2, kind());
  if (!in[0].same_spatial(in[1]) || in[0].n != in[1].n)
    throw std::invalid_argument("add inputs differ in size: " + in[0].str() + " vs " + in[1].str());
  if (in[1].c > in[0].c)
    throw std::invalid_argument("add skip input has more channels (" + std::to_string(in[1].c) + ") than main (" +
                                std::to_string(in[0].c) + ")");
  return in[0];
}

template <typename S>
void Add<S>::forward(const Inputs<S>& in, Tensor4<S>& out, Mode) {
  const Shape s = output_shape({in[0]->shape(), in[1]->shape()});
  if (!(out.shape() == s)) out.resize(s);
  const std::size_t nv = s.voxels();
  const int cs = in[1]->shape().c;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const S* a = in[0]->channel(n, c);
      S* q = out.channel(n, c);
      if (c < cs) {
        const S* b = in[1]->channel(n, c);
        for (std::size_t v = 0; v < nv; ++v) q[v] = a[v] + b[v];
      } else {
        std::copy(a, a + nv, q);
      }
    }
}

template <typename S>
void Add<S>::backward(const Inputs<S>& in, const Tensor4<S>&, const Tensor4<S>& grad_out,
                      const std::vector<Tensor4<S>*>& grad_in) {
  const Shape& s = grad_out.shape();
  const std::size_t nv = s.voxels();
  const int cs = in[1]->shape().c;
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c) {
      const S* g = grad_out.channel(n, c);
      if (grad_in[0]) {
        S* q = grad_in[0]->channel(n, c);
        for (std::size_t v = 0; v < nv; ++v) q[v] += g[v];
      }
      if (grad_in.size() > 1 && grad_in[1] && c < cs) {
        S* q = grad_in[1]->channel(n, c);
        for (std::size_t v = 0; v < nv; ++v) q[v] += g[v];
      }
    }
}

// ---------------------------------------------------------------- MaxPool2

template <typename S>
Shape MaxPool2<S>::output_shape(const std::vector<Shape>& in) const {
  require_inputs(in.size(), 1, kind());
  const Shape& s = in[0];
  if (s.x % 2 || s.y % 2 || s.z % 2) throw std::invalid_argument("maxpool2 needs even spatial sizes, got " + s.str());
  return Shape{s.n, s.c, s.x / 2, s.y / 2, s.z / 2};
}

template <typename S>
void MaxPool2<S>::forward(const Inputs<S>& in, Tensor4<S>& out, Mode) {
  const Tensor4<S>& x = *in[0];
  const Shape os = output_shape({x.shape()});
  if (!(out.shape() == os)) out.resize(os);
  argmax_.assign(os.size(), 0);
  const Shape& s = x.shape();
  std::size_t o = 0;
  for (int n = 0; n < os.n; ++n)
    for (int c = 0; c < os.c; ++c)
      for (int z = 0; z < os.z; ++z)
        for (int y = 0; y < os.y; ++y)
          for (int xx = 0; xx < os.x; ++xx, ++o) {
            S best = x.at(n, c, 2 * xx, 2 * y, 2 * z);
            std::uint8_t arg = 0;
            for (std::uint8_t k = 1; k < 8; ++k) {
              const S v = x.at(n, c, 2 * xx + (k & 1), 2 * y + ((k >> 1) & 1), 2 * z + ((k >> 2) & 1));
              if (v > best) {
                best = v;
                arg = k;
              }
            }
            out.data()[o] = best;
            argmax_[o] = arg;
          }
  (void)s;
}

template <typename S>
void MaxPool2<S>::backward(const Inputs<S>&, const Tensor4<S>&, const Tensor4<S>& grad_out,
                           const std::vector<Tensor4<S>*>& grad_in) {
  if (argmax_.size() != grad_out.size()) throw std::logic_error("maxpool2 backward before forward");
  Tensor4<S>* gx = grad_in[0];
  if (!gx) return;
  const Shape& os = grad_out.shape();
  std::size_t o = 0;
  for (int n = 0; n < os.n; ++n)
    for (int c = 0; c < os.c; ++c)
      for (int z = 0; z < os.z; ++z)
        for (int y = 0; y < os.y; ++y)
          for (int xx = 0; xx < os.x; ++xx, ++o) {
            const std::uint8_t k = argmax_[o];
            gx->at(n, c, 2 * xx + (k & 1), 2 * y + ((k >> 1) & 1), 2 * z + ((k >> 2) & 1)) += grad_out.data()[o];
          }
}

// ---------------------------------------------------------------- Upsample2

template <typename S>
Shape Upsample2<S>::output_shape(const std::vector<Shape>& in) const {
  require_inputs(in.size(), 1, kind());
  const Shape& s = in[0];
  return Shape{s.n, s.c, 2 * s.x, 2 * s.y, 2 * s.z};
}

template <typename S>
void Upsample2<S>::forward(const Inputs<S>& in, Tensor4<S>& out, Mode) {
  const Tensor4<S>& x = *in[0];
  const Shape os = output_shape({x.shape()});
  if (!(out.shape() == os)) out.resize(os);
  std::size_t o = 0;
  for (int n = 0; n < os.n; ++n)
    for (int c = 0; c < os.c; ++c)
      for (int z = 0; z < os.z; ++z)
        for (int y = 0; y < os.y; ++y)
          for (int xx = 0; xx < os.x; ++xx, ++o) out.data()[o] = x.at(n, c, xx / 2, y / 2, z / 2);
}

template <typename S>
void Upsample2<S>::backward(const Inputs<S>&, const Tensor4<S>&, const Tensor4<S>& grad_out,
                            const std::vector<Tensor4<S>*>& grad_in) {
  Tensor4<S>* gx = grad_in[0];
  if (!gx) return;
  const Shape& os = grad_out.shape();
  std::size_t o = 0;
  for (int n = 0; n < os.n; ++n)
    for (int c = 0; c < os.c; ++c)
      for (int z = 0; z < os.z; ++z)
        for (int y = 0; y < os.y; ++y)
          for (int xx = 0; xx < os.x; ++xx, ++o) gx->at(n, c, xx / 2, y / 2, z / 2) += grad_out.data()[o];
}

// ---------------------------------------------------------------- Concat

template <typename S>
Shape Concat<S>::output_shape(const std::vector<Shape>& in) const {
  require_inputs(in.size(), 2, kind());
  if (!in[0].same_spatial(in[1]) || in[0].n != in[1].n)
    throw std::invalid_argument("concat inputs differ in size: " + in[0].str() + " vs " + in[1].str());
  Shape o = in[0];
  o.c = in[0].c + in[1].c;
  return o;
}

template <typename S>
void Concat<S>::forward(const Inputs<S>& in, Tensor4<S>& out, Mode) {
  const Shape os = output_shape({in[0]->shape(), in[1]->shape()});
  if (!(out.shape() == os)) out.resize(os);
  for (int n = 0; n < os.n; ++n) {
    const std::size_t a = in[0]->shape().sample_size(), b = in[1]->shape().sample_size();
    std::copy(in[0]->sample(n), in[0]->sample(n) + a, out.sample(n));
    std::copy(in[1]->sample(n), in[1]->sample(n) + b, out.sample(n) + a);
  }
}

template <typename S>
void Concat<S>::backward(const Inputs<S>& in, const Tensor4<S>&, const Tensor4<S>& grad_out,
                         const std::vector<Tensor4<S>*>& grad_in) {
  const std::size_t a = in[0]->shape().sample_size(), b = in[1]->shape().sample_size();
  for (int n = 0; n < grad_out.shape().n; ++n) {
    const S* g = grad_out.sample(n);
    if (grad_in[0]) {
      S* q = grad_in[0]->sample(n);
      for (std::size_t i = 0; i < a; ++i) q[i] += g[i];
    }
    if (grad_in[1]) {
      S* q = grad_in[1]->sample(n);
      for (std::size_t i = 0; i < b; ++i) q[i] += g[a + i];
    }
  }
}

// ---------------------------------------------------------------- loss

template <typename S>
double l2_loss(const Tensor4<S>& prediction, const Tensor4<S>& target, Tensor4<S>* grad) {
  if (!(prediction.shape() == target.shape()))
    throw std::invalid_argument("loss shapes differ: " + prediction.shape().str() + " vs " + target.shape().str());
  const std::size_t n = prediction.size();
  if (grad && !(grad->shape() == prediction.shape())) grad->resize(prediction.shape());
  double sum = 0.0;
  const double inv = 1.0 / double(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = double(prediction.data()[i]) - double(target.data()[i]);
    sum += 0.5 * d * d;
    if (grad) grad->data()[i] = S(d * inv);
  }
  return sum * inv;
}

template class Conv3d<float>;
template class Conv3d<double>;
template class BatchNorm<float>;
template class BatchNorm<double>;
template class PRelu<float>;
template class PRelu<double>;
template class Add<float>;
template class Add<double>;
template class MaxPool2<float>;
template class MaxPool2<double>;
template class Upsample2<float>;
template class Upsample2<double>;
template class Concat<float>;
template class Concat<double>;
template double l2_loss(const Tensor4<float>&, const Tensor4<float>&, Tensor4<float>*);
template double l2_loss(const Tensor4<double>&, const Tensor4<double>&, Tensor4<double>*);

}  // namespace fodnet::net
