#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "../dataset.hpp"
#include "../error.hpp"
#include "../rng.hpp"
#include "../roadnet.hpp"
#include "layers.hpp"

namespace fcplan {

struct SurrogateArch {
  int H = 0;
  int W = 0;
  int cin = 7;  // n, lambda, tau, nu, a, b, s
  int c1 = 8;
  int c2 = 8;

  int Hp() const { return nn::pooled(H); }
  int Wp() const { return nn::pooled(W); }
  int cells() const { return H * W; }
  int flat() const { return c2 * Hp() * Wp(); }
  int outputs() const { return 2 * cells(); }  // n_c plane then gamma plane
};

// conv3x3 -> relu -> maxpool2 -> conv3x3 -> relu -> flatten -> dense ->
// softplus. Parameters live in one flat vector.
class ConvNet {
 public:
  struct Cache {
    std::vector<double> x, z1, a1, p1, z2, a2, z3, y;
    std::vector<int> arg;
  };
  struct Scratch {
    std::vector<double> dz3, da2, dz2, dp1, da1, dz1, dx;
  };

  ConvNet() = default;
  explicit ConvNet(const SurrogateArch& a) : arch_(a) {
    std::size_t at = 0;
    auto take = [&](std::size_t n) {
      const std::size_t o = at;
      at += n;
      return o;
    };
    w1_ = take(static_cast<std::size_t>(a.c1) * a.cin * 9);
    b1_ = take(a.c1);
    w2_ = take(static_cast<std::size_t>(a.c2) * a.c1 * 9);
    b2_ = take(a.c2);
    w3_ = take(static_cast<std::size_t>(a.outputs()) * a.flat());
    b3_ = take(a.outputs());
    params.assign(at, 0.0);
  }

  const SurrogateArch& arch() const { return arch_; }
  std::size_t num_params() const { return params.size(); }

  std::span<double> w1(std::span<double> p) const { return p.subspan(w1_, b1_ - w1_); }
  std::span<double> b1(std::span<double> p) const { return p.subspan(b1_, w2_ - b1_); }
  std::span<double> w2(std::span<double> p) const { return p.subspan(w2_, b2_ - w2_); }
  std::span<double> b2(std::span<double> p) const { return p.subspan(b2_, w3_ - b2_); }
  std::span<double> w3(std::span<double> p) const { return p.subspan(w3_, b3_ - w3_); }
  std::span<double> b3(std::span<double> p) const { return p.subspan(b3_, p.size() - b3_); }
  std::span<const double> cw(std::size_t off, std::size_t end) const {
    return std::span<const double>(params).subspan(off, end - off);
  }

  // Glorot-uniform convolutions, zero head weights, head bias set per output
  // plane so an untrained net predicts `bias_value[plane]` everywhere.
  void init(Rng& rng, std::array<double, 2> bias_value) {
    std::fill(params.begin(), params.end(), 0.0);
    auto glorot = [&](std::span<double> w, int fan_in, int fan_out) {
      const double s = std::sqrt(6.0 / (fan_in + fan_out));
      for (auto& x : w) x = rng.uniform(-s, s);
    };
    glorot(w1(params), arch_.cin * 9, arch_.c1 * 9);
    glorot(w2(params), arch_.c1 * 9, arch_.c2 * 9);
    auto b = b3(params);
    for (int o = 0; o < arch_.outputs(); ++o)
      b[o] = nn::softplus_inv(std::max(bias_value[o / arch_.cells()], 1e-6));
  }

  void forward(std::span<const double> x, Cache& c) const {
    const auto& a = arch_;
    c.x.assign(x.begin(), x.end());
    c.z1.resize(static_cast<std::size_t>(a.c1) * a.cells());
    c.a1.resize(c.z1.size());
    c.p1.resize(static_cast<std::size_t>(a.c1) * a.Hp() * a.Wp());
    c.arg.resize(c.p1.size());
    c.z2.resize(static_cast<std::size_t>(a.c2) * a.Hp() * a.Wp());
    c.a2.resize(c.z2.size());
    c.z3.resize(a.outputs());
    c.y.resize(a.outputs());
    nn::conv3x3_forward(c.x, a.cin, a.H, a.W, cw(w1_, b1_), cw(b1_, w2_), a.c1, c.z1);
    nn::relu_forward(c.z1, c.a1);
    nn::maxpool2_forward(c.a1, a.c1, a.H, a.W, c.p1, c.arg);
    nn::conv3x3_forward(c.p1, a.c1, a.Hp(), a.Wp(), cw(w2_, b2_), cw(b2_, w3_), a.c2, c.z2);
    nn::relu_forward(c.z2, c.a2);
    nn::dense_forward(c.a2, cw(w3_, b3_), cw(b3_, params.size()), c.z3);
    nn::softplus_forward(c.z3, c.y);
  }

  // Accumulates dLoss/dparams into grad given dLoss/dy. The input gradient
  // ends up in s.dx.
  void backward(const Cache& c, std::span<const double> dy, std::span<double> grad, Scratch& s) const {
    const auto& a = arch_;
    s.dz3.resize(c.z3.size());
    s.da2.resize(c.a2.size());
    s.dz2.resize(c.z2.size());
    s.dp1.resize(c.p1.size());
    s.da1.resize(c.a1.size());
    s.dz1.resize(c.z1.size());
    s.dx.resize(c.x.size());
    nn::softplus_backward(c.z3, dy, s.dz3);
    nn::dense_backward(c.a2, cw(w3_, b3_), s.dz3, s.da2, w3(grad), b3(grad));
    nn::relu_backward(c.z2, s.da2, s.dz2);
    nn::conv3x3_backward(c.p1, a.c1, a.Hp(), a.Wp(), cw(w2_, b2_), a.c2, s.dz2, s.dp1, w2(grad), b2(grad));
    nn::maxpool2_backward(c.arg, s.dp1, s.da1);
    nn::relu_backward(c.z1, s.da1, s.dz1);
    nn::conv3x3_backward(c.x, a.cin, a.H, a.W, cw(w1_, b1_), a.c1, s.dz1, s.dx, w1(grad), b1(grad));
  }

  std::vector<double> params;

 private:
  SurrogateArch arch_;
  std::size_t w1_ = 0, b1_ = 0, w2_ = 0, b2_ = 0, w3_ = 0, b3_ = 0;
};

struct SurrogateModel {
  ConvNet net;
  Normalizer norm;
  std::array<double, 2> target_scale{1.0, 1.0};
  std::vector<int> cell_of;  // raster cell of each link

  const SurrogateArch& arch() const { return net.arch(); }
  int links() const { return static_cast<int>(cell_of.size()); }

  std::vector<std::uint8_t> mask() const {
    std::vector<std::uint8_t> m(arch().cells(), 0);
    for (int c : cell_of) m[c] = 1;
    return m;
  }

  // Input tensor for window w of mobility features m under scheme column t.
  void encode(const MobilityFeatures& m, int w, const FcScheme& A, int t, std::span<double> x) const {
    std::fill(x.begin(), x.end(), 0.0);
    const int cells = arch().cells();
    for (LinkId l = 0; l < links(); ++l) {
      const int c = cell_of[l];
      const auto i = m.idx(l, w);
      x[0 * cells + c] = norm.apply(0, m.n[i]);
      x[1 * cells + c] = norm.apply(1, m.lambda[i]);
      x[2 * cells + c] = norm.apply(2, m.tau[i]);
      x[3 * cells + c] = norm.apply(3, m.nu[i]);
      x[4 * cells + c] = A.a(l, t);
      x[5 * cells + c] = A.b(l, t);
      x[6 * cells + c] = A.s(l, t);
    }
  }
};

inline SurrogateModel make_surrogate(const RasterEmbedding& emb, int c1 = 8, int c2 = 8) {
  require(emb.injective(), ErrorKind::resolution, "surrogate needs an injective raster embedding");
  SurrogateArch a;
  a.H = emb.H;
  a.W = emb.W;
  a.c1 = c1;
  a.c2 = c2;
  require(c1 >= 1 && c2 >= 1, ErrorKind::invalid_parameter, "channel counts must be >= 1");
  SurrogateModel m;
  m.net = ConvNet(a);
  for (std::size_t l = 0; l < emb.cell_of.size(); ++l) m.cell_of.push_back(emb.flat(static_cast<LinkId>(l)));
  return m;
}

// Per-window predictions for every window of m; parent maps windows to the
// scheme column they use.
inline CommFeatures predict(const SurrogateModel& model, const MobilityFeatures& m, const std::vector<int>& parent,
                            const FcScheme& A) {
  require(m.L == model.links() && A.links() == model.links(), ErrorKind::shape,
          "link count differs from the model's embedding");
  require(static_cast<int>(parent.size()) == m.T, ErrorKind::shape, "window parent list does not match features");
  for (int t : parent) require(t >= 0 && t < A.intervals(), ErrorKind::shape, "scheme lacks a needed interval");
  const auto& a = model.arch();
  CommFeatures out;
  out.resize(m.L, m.T);
  std::vector<double> x(static_cast<std::size_t>(a.cin) * a.cells());
  ConvNet::Cache cache;
  for (int w = 0; w < m.T; ++w) {
    model.encode(m, w, A, parent[w], x);
    model.net.forward(x, cache);
    for (LinkId l = 0; l < m.L; ++l) {
      const int c = model.cell_of[l];
      out.n_c[out.idx(l, w)] = cache.y[c] * model.target_scale[0];
      out.gamma[out.idx(l, w)] = cache.y[a.cells() + c] * model.target_scale[1];
    }
  }
  return out;
}

// One prediction per interval: window predictions averaged with their
// durations.
inline CommFeatures predict_intervals(const SurrogateModel& model, const MobilityFeatures& m,
                                      const std::vector<int>& parent, const std::vector<double>& durations,
                                      const FcScheme& A) {
  require(durations.size() == parent.size(), ErrorKind::shape, "durations do not match windows");
  const auto per = predict(model, m, parent, A);
  CommFeatures out;
  out.resize(m.L, A.intervals());
  std::vector<double> len(A.intervals(), 0.0);
  for (int w = 0; w < m.T; ++w) {
    len[parent[w]] += durations[w];
    for (LinkId l = 0; l < m.L; ++l) {
      out.n_c[out.idx(l, parent[w])] += durations[w] * per.n_c[per.idx(l, w)];
      out.gamma[out.idx(l, parent[w])] += durations[w] * per.gamma[per.idx(l, w)];
    }
  }
  for (int t = 0; t < A.intervals(); ++t)
    for (LinkId l = 0; l < m.L; ++l)
      if (len[t] > 0.0) {
        out.n_c[out.idx(l, t)] /= len[t];
        out.gamma[out.idx(l, t)] /= len[t];
      }
  return out;
}

// predict_intervals for many schemes against one fixed set of mobility
// features. The first convolution is linear in its input, so its mobility
// half is computed once per window and only the scheme half per call.
class IntervalPredictor {
 public:
  IntervalPredictor(const SurrogateModel& model, const MobilityFeatures& m, std::vector<int> parent,
                    std::vector<double> durations)
      : model_(&model), parent_(std::move(parent)), durations_(std::move(durations)), L_(m.L), windows_(m.T) {
    require(m.L == model.links(), ErrorKind::shape, "link count differs from the model's embedding");
    require(static_cast<int>(parent_.size()) == m.T && durations_.size() == parent_.size(), ErrorKind::shape,
            "window lists do not match features");
    const auto& a = model.arch();
    const int cells = a.cells();
    const auto w1 = model.net.cw(0, static_cast<std::size_t>(a.c1) * a.cin * 9);
    wm_.resize(static_cast<std::size_t>(a.c1) * 4 * 9);
    ws_.resize(static_cast<std::size_t>(a.c1) * 3 * 9);
    for (int co = 0; co < a.c1; ++co)
      for (int ci = 0; ci < a.cin; ++ci)
        for (int k = 0; k < 9; ++k) {
          const double v = w1[(co * a.cin + ci) * 9 + k];
          if (ci < 4)
            wm_[(co * 4 + ci) * 9 + k] = v;
          else
            ws_[(co * 3 + ci - 4) * 9 + k] = v;
        }
    const auto b1 = model.net.cw(w1.size(), w1.size() + a.c1);
    zmob_.resize(static_cast<std::size_t>(m.T) * a.c1 * cells);
    std::vector<double> x(4 * cells, 0.0);
    for (int w = 0; w < m.T; ++w) {
      for (LinkId l = 0; l < L_; ++l) {
        const int c = model.cell_of[l];
        const auto i = m.idx(l, w);
        x[0 * cells + c] = model.norm.apply(0, m.n[i]);
        x[1 * cells + c] = model.norm.apply(1, m.lambda[i]);
        x[2 * cells + c] = model.norm.apply(2, m.tau[i]);
        x[3 * cells + c] = model.norm.apply(3, m.nu[i]);
      }
      nn::conv3x3_forward(x, 4, a.H, a.W, wm_, b1, a.c1,
                          std::span<double>(zmob_).subspan(static_cast<std::size_t>(w) * a.c1 * cells, a.c1 * cells));
    }
    intervals_ = 0;
    for (int t : parent_) intervals_ = std::max(intervals_, t + 1);
  }

  CommFeatures operator()(const FcScheme& A) const {
    const auto& a = model_->arch();
    const auto& net = model_->net;
    require(A.links() == L_, ErrorKind::shape, "link count differs from the model's embedding");
    require(A.intervals() >= intervals_, ErrorKind::shape, "scheme lacks a needed interval");
    const int cells = a.cells(), T = A.intervals();
    const std::size_t n1 = static_cast<std::size_t>(a.c1) * cells;
    std::vector<double> xs(3 * cells, 0.0), zs(static_cast<std::size_t>(T) * n1), zero(a.c1, 0.0);
    std::vector<bool> used(T, false);
    for (int t : parent_) used[t] = true;
    for (int t = 0; t < T; ++t) {
      if (!used[t]) continue;
      for (LinkId l = 0; l < L_; ++l) {
        const int c = model_->cell_of[l];
        xs[0 * cells + c] = A.a(l, t);
        xs[1 * cells + c] = A.b(l, t);
        xs[2 * cells + c] = A.s(l, t);
      }
      nn::conv3x3_forward(xs, 3, a.H, a.W, ws_, zero, a.c1, std::span<double>(zs).subspan(t * n1, n1));
    }
    const std::size_t o1 = static_cast<std::size_t>(a.c1) * a.cin * 9 + a.c1;
    const std::size_t o2 = o1 + static_cast<std::size_t>(a.c2) * a.c1 * 9;
    const std::size_t o3 = o2 + a.c2;
    const std::size_t o4 = o3 + static_cast<std::size_t>(a.outputs()) * a.flat();
    const auto w2 = net.cw(o1, o2), b2 = net.cw(o2, o3), w3 = net.cw(o3, o4), b3 = net.cw(o4, net.num_params());
    std::vector<double> z1(n1), p1(static_cast<std::size_t>(a.c1) * a.Hp() * a.Wp());
    std::vector<int> arg(p1.size());
    std::vector<double> z2(static_cast<std::size_t>(a.c2) * a.Hp() * a.Wp());
    const std::size_t flat = z2.size();
    CommFeatures out;
    out.resize(L_, T);
    std::vector<double> len(T, 0.0);
    for (int w = 0; w < windows_; ++w) {
      const int t = parent_[w];
      const double* zm = &zmob_[w * n1];
      const double* zt = &zs[t * n1];
      for (std::size_t i = 0; i < n1; ++i) z1[i] = std::max(zm[i] + zt[i], 0.0);
      nn::maxpool2_forward(z1, a.c1, a.H, a.W, p1, arg);
      nn::conv3x3_forward(p1, a.c1, a.Hp(), a.Wp(), w2, b2, a.c2, z2);
      for (auto& v : z2) v = std::max(v, 0.0);
      const double d = durations_[w];
      len[t] += d;
      for (LinkId l = 0; l < L_; ++l)
        for (int plane = 0; plane < 2; ++plane) {
          const int o = plane * cells + model_->cell_of[l];
          double acc = b3[o];
          const double* row = &w3[o * flat];
          for (std::size_t i = 0; i < flat; ++i) acc += row[i] * z2[i];
          const double y = nn::softplus(acc) * model_->target_scale[plane];
          (plane == 0 ? out.n_c : out.gamma)[out.idx(l, t)] += d * y;
        }
    }
    for (int t = 0; t < T; ++t)
      for (LinkId l = 0; l < L_; ++l)
        if (len[t] > 0.0) {
          out.n_c[out.idx(l, t)] /= len[t];
          out.gamma[out.idx(l, t)] /= len[t];
        }
    return out;
  }

 private:
  const SurrogateModel* model_;
  std::vector<int> parent_;
  std::vector<double> durations_;
  int L_ = 0, windows_ = 0, intervals_ = 0;
  std::vector<double> wm_, ws_, zmob_;  // zmob_ includes the first bias
};

// Interval-level features without windows.
inline CommFeatures predict(const SurrogateModel& model, const MobilityFeatures& m, const FcScheme& A) {
  require(m.T == A.intervals(), ErrorKind::shape, "features and scheme have different interval counts");
  std::vector<int> parent(m.T);
  std::iota(parent.begin(), parent.end(), 0);
  return predict(model, m, parent, A);
}

// ---- training ---------------------------------------------------------------

struct TrainOptions {
  int c1 = 8;
  int c2 = 8;
  double learning_rate = 0.01;
  double momentum = 0.9;
  int batch = 32;
  int epochs = 60;
  int patience = 10;
  int folds = 10;
  int cv_epochs = 60;
  double validation_fraction = 0.1;
  std::uint64_t seed = 1;
  // Stop after this many seconds of the final fit; 0 means no limit.
  double time_budget = 0.0;
};

struct FoldLoss {
  int fold = 0;
  double train = 0.0;
  double val = 0.0;
  int epochs = 0;
};

struct FitReport {
  double initial_val = 0.0;
  double best_val = 0.0;
  int epochs = 0;
  int best_epoch = 0;
  std::vector<double> train_curve, val_curve;
};

struct TrainResult {
  SurrogateModel model;
  FitReport final_fit;
  std::vector<FoldLoss> folds;
};

namespace detail {

struct Batch {
  std::vector<double> x, target;
};

inline void sample_tensors(const SurrogateModel& model, const Dataset& ds, SampleRef r, std::span<double> x,
                           std::span<double> y) {
  const auto& p = ds.pairs[r.pair];
  const auto& sf = ds.scenario_of(p);
  model.encode(sf.m, r.window, p.A, sf.parent[r.window], x);
  const int cells = model.arch().cells();
  std::fill(y.begin(), y.end(), 0.0);
  for (LinkId l = 0; l < model.links(); ++l) {
    const int c = model.cell_of[l];
    y[c] = p.c.n_c[p.c.idx(l, r.window)] / model.target_scale[0];
    y[cells + c] = p.c.gamma[p.c.idx(l, r.window)] / model.target_scale[1];
  }
}

}  // namespace detail

// Mean over samples of 1/2 the mean squared error over masked outputs, in
// scaled units.
inline double surrogate_loss(const SurrogateModel& model, const Dataset& ds, const std::vector<SampleRef>& samples) {
  const auto& a = model.arch();
  const auto mask = model.mask();
  const double outs = 2.0 * std::count(mask.begin(), mask.end(), 1);
  std::vector<double> x(static_cast<std::size_t>(a.cin) * a.cells()), y(a.outputs());
  ConvNet::Cache cache;
  double total = 0.0;
  for (auto r : samples) {
    detail::sample_tensors(model, ds, r, x, y);
    model.net.forward(x, cache);
    double s = 0.0;
    for (int o = 0; o < a.outputs(); ++o)
      if (mask[o % a.cells()]) s += (cache.y[o] - y[o]) * (cache.y[o] - y[o]);
    total += 0.5 * s / outs;
  }
  return samples.empty() ? 0.0 : total / samples.size();
}

// Plain per-link MSE of predicted n_c (plane 0) or gamma (plane 1) in
// original units.
inline double surrogate_mse(const SurrogateModel& model, const Dataset& ds, const std::vector<SampleRef>& samples,
                            int plane = 0) {
  double se = 0.0, cnt = 0.0;
  const auto& a = model.arch();
  std::vector<double> x(static_cast<std::size_t>(a.cin) * a.cells());
  ConvNet::Cache cache;
  for (auto r : samples) {
    const auto& p = ds.pairs[r.pair];
    const auto& sf = ds.scenario_of(p);
    model.encode(sf.m, r.window, p.A, sf.parent[r.window], x);
    model.net.forward(x, cache);
    for (LinkId l = 0; l < model.links(); ++l) {
      const double pred = cache.y[plane * a.cells() + model.cell_of[l]] * model.target_scale[plane];
      const double truth = plane == 0 ? p.c.n_c[p.c.idx(l, r.window)] : p.c.gamma[p.c.idx(l, r.window)];
      se += (pred - truth) * (pred - truth);
      cnt += 1.0;
    }
  }
  return cnt > 0 ? se / cnt : 0.0;
}

// MSE of predicting the training mean (one scalar per plane) for every link.
inline double mean_baseline_mse(const Dataset& ds, const std::vector<SampleRef>& train,
                                const std::vector<SampleRef>& test, int plane = 0) {
  auto val = [&](SampleRef r, LinkId l) {
    const auto& p = ds.pairs[r.pair];
    return plane == 0 ? p.c.n_c[p.c.idx(l, r.window)] : p.c.gamma[p.c.idx(l, r.window)];
  };
  double sum = 0.0, cnt = 0.0;
  for (auto r : train)
    for (LinkId l = 0; l < ds.L; ++l) {
      sum += val(r, l);
      cnt += 1.0;
    }
  const double mean = cnt > 0 ? sum / cnt : 0.0;
  double se = 0.0, n = 0.0;
  for (auto r : test)
    for (LinkId l = 0; l < ds.L; ++l) {
      se += (val(r, l) - mean) * (val(r, l) - mean);
      n += 1.0;
    }
  return n > 0 ? se / n : 0.0;
}

// Normalizer, target scale and initial weights from the training samples.
inline void prepare_surrogate(SurrogateModel& model, const Dataset& ds, const std::vector<int>& train_pairs,
                              std::uint64_t seed) {
  require(!train_pairs.empty(), ErrorKind::data, "training set is empty");
  model.norm = fit_normalizer(ds, train_pairs);
  std::array<double, 2> ss{0, 0}, sum{0, 0};
  double cnt = 0.0;
  for (int pi : train_pairs) {
    const auto& c = ds.pairs[pi].c;
    for (std::size_t i = 0; i < c.n_c.size(); ++i) {
      ss[0] += c.n_c[i] * c.n_c[i];
      ss[1] += c.gamma[i] * c.gamma[i];
      sum[0] += c.n_c[i];
      sum[1] += c.gamma[i];
      cnt += 1.0;
    }
  }
  std::array<double, 2> mean{};
  for (int k = 0; k < 2; ++k) {
    const double rms = std::sqrt(ss[k] / cnt);
    model.target_scale[k] = rms > 1e-12 ? rms : 1.0;
    mean[k] = sum[k] / cnt / model.target_scale[k];
  }
  Rng rng(hash_key({seed, 0x696e6974}));
  model.net.init(rng, mean);
}

// Momentum SGD on the masked MSE with early stopping on `val`; the best
// parameters seen are kept. An empty validation set disables early stopping.
inline FitReport fit_surrogate(SurrogateModel& model, const Dataset& ds, std::vector<SampleRef> train,
                               const std::vector<SampleRef>& val, int epochs, const TrainOptions& opt) {
  require(!train.empty(), ErrorKind::data, "no training samples");
  require(opt.batch >= 1 && opt.learning_rate > 0.0 && opt.momentum >= 0.0 && opt.momentum < 1.0,
          ErrorKind::invalid_parameter, "bad optimizer settings");
  const auto& a = model.arch();
  const auto mask = model.mask();
  const double outs = 2.0 * std::count(mask.begin(), mask.end(), 1);
  const std::size_t P = model.net.num_params();
  std::vector<double> grad(P), vel(P, 0.0), best = model.net.params;
  std::vector<double> x(static_cast<std::size_t>(a.cin) * a.cells()), y(a.outputs()), dy(a.outputs());
  ConvNet::Cache cache;
  ConvNet::Scratch scratch;
  Rng rng(hash_key({opt.seed, 0x73687566}));

  FitReport rep;
  const auto& monitor = val.empty() ? train : val;
  rep.initial_val = surrogate_loss(model, ds, monitor);
  rep.best_val = rep.initial_val;
  int since_best = 0;
  const auto t0 = std::chrono::steady_clock::now();
  long step = 0;
  for (int e = 0; e < epochs; ++e) {
    for (std::size_t i = train.size(); i > 1; --i) std::swap(train[i - 1], train[rng.below(i)]);
    double epoch_loss = 0.0;
    for (std::size_t b0 = 0; b0 < train.size(); b0 += opt.batch) {
      const std::size_t b1 = std::min(train.size(), b0 + opt.batch);
      std::fill(grad.begin(), grad.end(), 0.0);
      double batch_loss = 0.0;
      for (std::size_t q = b0; q < b1; ++q) {
        detail::sample_tensors(model, ds, train[q], x, y);
        model.net.forward(x, cache);
        for (int o = 0; o < a.outputs(); ++o) {
          const double d = mask[o % a.cells()] ? cache.y[o] - y[o] : 0.0;
          dy[o] = d / outs / static_cast<double>(b1 - b0);
          batch_loss += 0.5 * d * d / outs;
        }
        model.net.backward(cache, dy, grad, scratch);
      }
      ++step;
      if (!std::isfinite(batch_loss))
        throw Error(ErrorKind::training_failure, "loss diverged at epoch " + std::to_string(e + 1) + ", step " +
                                                     std::to_string(step));
      for (std::size_t i = 0; i < P; ++i) {
        vel[i] = opt.momentum * vel[i] - opt.learning_rate * grad[i];
        model.net.params[i] += vel[i];
      }
      epoch_loss += batch_loss;
    }
    rep.train_curve.push_back(epoch_loss / train.size());
    const double v = surrogate_loss(model, ds, monitor);
    if (!std::isfinite(v))
      throw Error(ErrorKind::training_failure, "validation loss diverged at epoch " + std::to_string(e + 1));
    rep.val_curve.push_back(v);
    rep.epochs = e + 1;
    if (v < rep.best_val) {
      rep.best_val = v;
      rep.best_epoch = e + 1;
      best = model.net.params;
      since_best = 0;
    } else if (!val.empty() && ++since_best >= opt.patience) {
      break;
    }
    if (opt.time_budget > 0.0 &&
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() > opt.time_budget)
      break;
  }
  model.net.params = best;
  return rep;
}

// Deterministic fold assignment of pairs.
inline std::vector<std::vector<int>> pair_folds(const std::vector<int>& pairs, int folds, std::uint64_t seed) {
  require(folds >= 2, ErrorKind::invalid_parameter, "need at least 2 folds");
  require(static_cast<int>(pairs.size()) >= folds, ErrorKind::data, "fewer pairs than folds");
  std::vector<int> order = pairs;
  Rng rng(hash_key({seed, 0x666f6c64}));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  std::vector<std::vector<int>> out(folds);
  for (std::size_t i = 0; i < order.size(); ++i) out[i % folds].push_back(order[i]);
  for (auto& f : out) std::sort(f.begin(), f.end());
  return out;
}

// k-fold cross-validation over `pool` followed by a final fit on the whole
// pool with a held-out validation slice for early stopping.
inline TrainResult train_surrogate(const Dataset& ds, const RasterEmbedding& emb, const std::vector<int>& pool,
                                   const TrainOptions& opt) {
  require(!ds.pairs.empty() && !pool.empty(), ErrorKind::data, "dataset is empty");
  TrainResult res;
  if (opt.folds >= 2 && opt.cv_epochs > 0) {
    const auto folds = pair_folds(pool, opt.folds, opt.seed);
    for (int f = 0; f < opt.folds; ++f) {
      std::vector<int> tr;
      for (int g = 0; g < opt.folds; ++g)
        if (g != f) tr.insert(tr.end(), folds[g].begin(), folds[g].end());
      auto m = make_surrogate(emb, opt.c1, opt.c2);
      prepare_surrogate(m, ds, tr, opt.seed + f);
      auto o = opt;
      o.seed = opt.seed + f;
      o.time_budget = 0.0;
      const auto trs = all_samples(ds, tr), vs = all_samples(ds, folds[f]);
      const auto rep = fit_surrogate(m, ds, trs, vs, opt.cv_epochs, o);
      res.folds.push_back({f, surrogate_loss(m, ds, trs), rep.best_val, rep.epochs});
    }
  }
  std::vector<int> fit_pairs = pool, val_pairs;
  const int nval = static_cast<int>(std::floor(opt.validation_fraction * pool.size()));
  if (nval >= 1 && nval < static_cast<int>(pool.size())) {
    std::vector<int> order = pool;
    Rng rng(hash_key({opt.seed, 0x76616c}));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    val_pairs.assign(order.begin(), order.begin() + nval);
    fit_pairs.assign(order.begin() + nval, order.end());
    std::sort(val_pairs.begin(), val_pairs.end());
    std::sort(fit_pairs.begin(), fit_pairs.end());
  }
  res.model = make_surrogate(emb, opt.c1, opt.c2);
  prepare_surrogate(res.model, ds, fit_pairs, opt.seed);
  res.final_fit = fit_surrogate(res.model, ds, all_samples(ds, fit_pairs), all_samples(ds, val_pairs), opt.epochs, opt);
  return res;
}

// ---- model file ---------------------------------------------------------------
// "FCSM1\n", uint64 little-endian header length, JSON header, then the
// parameters as little-endian float64.

inline void write_model(std::ostream& os, const SurrogateModel& m) {
  const auto& a = m.arch();
  nlohmann::json h;
  h["format"] = "fcplan-surrogate-1";
  h["arch"] = {{"H", a.H}, {"W", a.W}, {"cin", a.cin}, {"c1", a.c1}, {"c2", a.c2}};
  h["normalizer"] = m.norm.to_json();
  h["target_scale"] = m.target_scale;
  h["cell_of"] = m.cell_of;
  h["params"] = m.net.num_params();
  const std::string hs = h.dump();
  os.write("FCSM1\n", 6);
  std::uint64_t len = hs.size();
  unsigned char lb[8];
  for (int i = 0; i < 8; ++i) lb[i] = static_cast<unsigned char>(len >> (8 * i));
  os.write(reinterpret_cast<const char*>(lb), 8);
  os.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  for (double v : m.net.params) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
  }
}

inline SurrogateModel read_model(std::istream& is) {
  char magic[6];
  is.read(magic, 6);
  require(is.good() && std::memcmp(magic, "FCSM1\n", 6) == 0, ErrorKind::parse, "not a surrogate model file");
  unsigned char lb[8];
  is.read(reinterpret_cast<char*>(lb), 8);
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(lb[i]) << (8 * i);
  require(is.good() && len < (1u << 26), ErrorKind::parse, "bad model header length");
  std::string hs(len, '\0');
  is.read(hs.data(), static_cast<std::streamsize>(len));
  require(is.good(), ErrorKind::parse, "truncated model header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(hs);
  } catch (const std::exception& e) {
    throw Error(ErrorKind::parse, std::string("model header: ") + e.what());
  }
  SurrogateArch a;
  a.H = h.at("arch").at("H");
  a.W = h.at("arch").at("W");
  a.cin = h.at("arch").at("cin");
  a.c1 = h.at("arch").at("c1");
  a.c2 = h.at("arch").at("c2");
  SurrogateModel m;
  m.net = ConvNet(a);
  m.norm = Normalizer::from_json(h.at("normalizer"));
  m.target_scale = h.at("target_scale").get<std::array<double, 2>>();
  m.cell_of = h.at("cell_of").get<std::vector<int>>();
  require(h.at("params").get<std::size_t>() == m.net.num_params(), ErrorKind::parse,
          "parameter count does not match architecture");
  for (auto& v : m.net.params) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    require(is.good(), ErrorKind::parse, "truncated model parameters");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    std::memcpy(&v, &bits, 8);
  }
  return m;
}

inline void save_model(const std::filesystem::path& p, const SurrogateModel& m) {
  std::ofstream f(p, std::ios::binary);
  require(f.good(), ErrorKind::io, "cannot write " + p.string());
  write_model(f, m);
}

inline SurrogateModel load_model(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  require(f.good(), ErrorKind::dependency, "model file " + p.string() + " not found");
  return read_model(f);
}

}  // namespace fcplan
