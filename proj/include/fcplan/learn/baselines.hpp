#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "../dataset.hpp"
#include "../error.hpp"
#include "../rng.hpp"

namespace fcplan {

// Row-major feature matrix.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> x;

  const double* row(std::size_t i) const { return &x[i * cols]; }
  double at(std::size_t i, std::size_t j) const { return x[i * cols + j]; }
};

// One row per sample: for each link the four normalized mobility features
// followed by a, b, s of the sample's interval.
inline FeatureMatrix feature_rows(const Dataset& ds, const std::vector<SampleRef>& samples, const Normalizer& nz) {
  FeatureMatrix fm;
  fm.rows = samples.size();
  fm.cols = static_cast<std::size_t>(7) * ds.L;
  fm.x.resize(fm.rows * fm.cols);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& p = ds.pairs[samples[i].pair];
    const auto& sf = ds.scenario_of(p);
    const int w = samples[i].window, t = sf.parent[w];
    double* r = &fm.x[i * fm.cols];
    for (LinkId l = 0; l < ds.L; ++l) {
      const auto c = sf.m.idx(l, w);
      r[7 * l + 0] = nz.apply(0, sf.m.n[c]);
      r[7 * l + 1] = nz.apply(1, sf.m.lambda[c]);
      r[7 * l + 2] = nz.apply(2, sf.m.tau[c]);
      r[7 * l + 3] = nz.apply(3, sf.m.nu[c]);
      r[7 * l + 4] = p.A.a(l, t);
      r[7 * l + 5] = p.A.b(l, t);
      r[7 * l + 6] = p.A.s(l, t);
    }
  }
  return fm;
}

// 1 when the sample meets alpha0 over the ZOI, 0 otherwise (including an
// empty ZOI).
inline std::vector<int> feasibility_labels(const Dataset& ds, const std::vector<SampleRef>& samples,
                                           const std::vector<LinkId>& zoi, double alpha0) {
  std::vector<int> y;
  y.reserve(samples.size());
  for (auto r : samples) {
    const auto a = sample_alpha(ds, r, zoi);
    y.push_back(a && *a >= alpha0 ? 1 : 0);
  }
  return y;
}

namespace detail {
inline int majority(const std::vector<int>& counts) {
  int best = 0;
  for (int c = 1; c < static_cast<int>(counts.size()); ++c)
    if (counts[c] > counts[best]) best = c;
  return best;
}
inline int num_classes(const std::vector<int>& y) {
  int c = 0;
  for (int v : y) {
    require(v >= 0, ErrorKind::invalid_parameter, "class labels must be non-negative");
    c = std::max(c, v + 1);
  }
  return std::max(c, 2);
}
}  // namespace detail

// Exhaustive k-nearest-neighbour vote (Euclidean); ties go to the smaller
// label, equidistant neighbours to the earlier row.
class Knn {
 public:
  void fit(FeatureMatrix X, std::vector<int> y, int k) {
    require(X.rows == y.size(), ErrorKind::shape, "row and label counts differ");
    require(k >= 1 && static_cast<std::size_t>(k) <= X.rows, ErrorKind::invalid_parameter,
            "k = " + std::to_string(k) + " exceeds the " + std::to_string(X.rows) + " training rows");
    X_ = std::move(X);
    y_ = std::move(y);
    k_ = k;
    classes_ = detail::num_classes(y_);
  }

  int predict_one(const double* q) const {
    std::vector<std::pair<double, std::size_t>> d(X_.rows);
    for (std::size_t i = 0; i < X_.rows; ++i) {
      const double* r = X_.row(i);
      double s = 0.0;
      for (std::size_t j = 0; j < X_.cols; ++j) s += (r[j] - q[j]) * (r[j] - q[j]);
      d[i] = {s, i};
    }
    std::partial_sort(d.begin(), d.begin() + k_, d.end());
    std::vector<int> votes(classes_, 0);
    for (int i = 0; i < k_; ++i) ++votes[y_[d[i].second]];
    return detail::majority(votes);
  }

  std::vector<int> predict(const FeatureMatrix& X) const {
    require(X.cols == X_.cols, ErrorKind::shape, "feature count differs from training");
    std::vector<int> out(X.rows);
    for (std::size_t i = 0; i < X.rows; ++i) out[i] = predict_one(X.row(i));
    return out;
  }

 private:
  FeatureMatrix X_;
  std::vector<int> y_;
  int k_ = 1;
  int classes_ = 2;
};

struct TreeOptions {
  int max_depth = 8;
  int min_samples_split = 2;
  int max_features = 0;  // features tried per node; 0 means all
};

// CART classifier with Gini impurity and midpoint thresholds.
class DecisionTree {
 public:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1, right = -1;
    int label = 0;
  };

  void fit(const FeatureMatrix& X, const std::vector<int>& y, const TreeOptions& opt, std::uint64_t seed = 0) {
    std::vector<std::size_t> rows(X.rows);
    std::iota(rows.begin(), rows.end(), 0);
    fit_rows(X, y, rows, opt, seed);
  }

  // Fits on a row multiset (duplicates allowed, as in a bootstrap sample).
  void fit_rows(const FeatureMatrix& X, const std::vector<int>& y, std::vector<std::size_t> rows,
                const TreeOptions& opt, std::uint64_t seed = 0) {
    require(X.rows == y.size(), ErrorKind::shape, "row and label counts differ");
    require(!rows.empty(), ErrorKind::data, "no training rows");
    require(opt.max_depth >= 0, ErrorKind::invalid_parameter, "max_depth must be >= 0");
    classes_ = detail::num_classes(y);
    cols_ = X.cols;
    nodes_.clear();
    Rng rng(seed);
    build(X, y, rows, 0, opt, rng);
  }

  int predict_one(const double* q) const {
    int n = 0;
    while (nodes_[n].feature >= 0) n = q[nodes_[n].feature] <= nodes_[n].threshold ? nodes_[n].left : nodes_[n].right;
    return nodes_[n].label;
  }

  std::vector<int> predict(const FeatureMatrix& X) const {
    require(X.cols == cols_, ErrorKind::shape, "feature count differs from training");
    std::vector<int> out(X.rows);
    for (std::size_t i = 0; i < X.rows; ++i) out[i] = predict_one(X.row(i));
    return out;
  }

  const std::vector<Node>& nodes() const { return nodes_; }
  int depth() const { return depth_of(0); }

 private:
  int depth_of(int n) const {
    if (nodes_[n].feature < 0) return 0;
    return 1 + std::max(depth_of(nodes_[n].left), depth_of(nodes_[n].right));
  }

  static double gini(const std::vector<double>& cnt, double total) {
    if (total <= 0.0) return 0.0;
    double s = 1.0;
    for (double c : cnt) s -= (c / total) * (c / total);
    return s;
  }

  int build(const FeatureMatrix& X, const std::vector<int>& y, std::vector<std::size_t>& rows, int depth,
            const TreeOptions& opt, Rng& rng) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back({});
    std::vector<int> counts(classes_, 0);
    for (auto r : rows) ++counts[y[r]];
    nodes_[id].label = detail::majority(counts);
    const bool pure = std::count(counts.begin(), counts.end(), 0) == classes_ - 1;
    if (depth >= opt.max_depth || pure || static_cast<int>(rows.size()) < opt.min_samples_split) return id;

    std::vector<std::size_t> feats(cols_);
    std::iota(feats.begin(), feats.end(), 0);
    if (opt.max_features > 0 && static_cast<std::size_t>(opt.max_features) < cols_) {
      for (int i = 0; i < opt.max_features; ++i) std::swap(feats[i], feats[i + rng.below(cols_ - i)]);
      feats.resize(opt.max_features);
      std::sort(feats.begin(), feats.end());
    }

    const double n = static_cast<double>(rows.size());
    std::vector<double> total(classes_);
    for (int c = 0; c < classes_; ++c) total[c] = counts[c];
    const double parent = gini(total, n);
    double best = parent - 1e-12;
    int best_f = -1;
    double best_t = 0.0;
    std::vector<std::pair<double, int>> vals(rows.size());
    std::vector<double> left(classes_), right(classes_);
    for (auto f : feats) {
      for (std::size_t i = 0; i < rows.size(); ++i) vals[i] = {X.at(rows[i], f), y[rows[i]]};
      std::sort(vals.begin(), vals.end());
      std::fill(left.begin(), left.end(), 0.0);
      right = total;
      for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
        left[vals[i].second] += 1.0;
        right[vals[i].second] -= 1.0;
        if (vals[i].first == vals[i + 1].first) continue;
        const double nl = static_cast<double>(i + 1), nr = n - nl;
        const double g = (nl * gini(left, nl) + nr * gini(right, nr)) / n;
        if (g < best) {
          best = g;
          best_f = static_cast<int>(f);
          best_t = 0.5 * (vals[i].first + vals[i + 1].first);
        }
      }
    }
    if (best_f < 0) return id;

    std::vector<std::size_t> lr, rr;
    for (auto r : rows) (X.at(r, best_f) <= best_t ? lr : rr).push_back(r);
    rows.clear();
    rows.shrink_to_fit();
    nodes_[id].feature = best_f;
    nodes_[id].threshold = best_t;
    const int l = build(X, y, lr, depth + 1, opt, rng);
    nodes_[id].left = l;
    const int r = build(X, y, rr, depth + 1, opt, rng);
    nodes_[id].right = r;
    return id;
  }

  std::vector<Node> nodes_;
  int classes_ = 2;
  std::size_t cols_ = 0;
};

struct ForestOptions {
  int trees = 20;
  bool bootstrap = true;
  TreeOptions tree{12, 2, 0};  // max_features 0 becomes sqrt(cols) when subsample_features
  bool subsample_features = true;
  std::uint64_t seed = 1;
};

// Bagged CART trees, majority vote (ties to the smaller label).
class RandomForest {
 public:
  void fit(const FeatureMatrix& X, const std::vector<int>& y, const ForestOptions& opt) {
    require(opt.trees >= 1, ErrorKind::invalid_parameter, "forest needs at least one tree");
    classes_ = detail::num_classes(y);
    auto topt = opt.tree;
    if (opt.subsample_features && topt.max_features == 0)
      topt.max_features = std::max(1, static_cast<int>(std::lround(std::sqrt(static_cast<double>(X.cols)))));
    const Rng root(opt.seed);
    trees_.assign(opt.trees, {});
    for (int t = 0; t < opt.trees; ++t) {
      Rng rng = root.split(static_cast<std::uint64_t>(t));
      std::vector<std::size_t> rows(X.rows);
      if (opt.bootstrap)
        for (auto& r : rows) r = rng.below(X.rows);
      else
        std::iota(rows.begin(), rows.end(), 0);
      trees_[t].fit_rows(X, y, rows, topt, rng.next());
    }
  }

  std::vector<int> predict(const FeatureMatrix& X) const {
    std::vector<int> out(X.rows);
    std::vector<int> votes(classes_);
    for (std::size_t i = 0; i < X.rows; ++i) {
      std::fill(votes.begin(), votes.end(), 0);
      for (const auto& t : trees_) ++votes[t.predict_one(X.row(i))];
      out[i] = detail::majority(votes);
    }
    return out;
  }

  const std::vector<DecisionTree>& trees() const { return trees_; }

 private:
  std::vector<DecisionTree> trees_;
  int classes_ = 2;
};

}  // namespace fcplan
