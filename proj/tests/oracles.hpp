#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance binary.

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "wayfinder/common.hpp"
#include "wayfinder/grounding.hpp"
#include "wayfinder/policy.hpp"
#include "wayfinder/semmap.hpp"

namespace wayfinder::oracle {

// ---- grounding ----

inline lang::ParseTree parse_text(const std::string& text) {
  return lang::parse(lang::tokenize(text), lang::Grammar::bundled());
}

inline std::set<std::string> names(const ground::SymbolSpace& sp, const std::vector<ground::Symbol>& syms) {
  std::set<std::string> out;
  for (const auto& s : syms) out.insert(sp.to_string(s));
  return out;
}

inline std::uint32_t lex_key(std::uint32_t mask, int n) {
  std::uint32_t k = 0;
  for (int c = 0; c < n; ++c) k = (k << 1) | (mask >> c & 1u);
  return k;
}

/// Brute-force MAP over every assignment with the documented tie order.
inline ground::Assignment exhaustive_map(const ground::GroundingGraph& g, const ground::FeatureMap& w,
                                         double* score) {
  const int np = static_cast<int>(g.phrases.size());
  const int n = static_cast<int>(g.candidates.size());
  const std::uint64_t total = 1ull << (np * n);
  ground::Assignment best;
  double best_score = -1e300;
  ground::Assignment a(np);
  for (std::uint64_t code = 0; code < total; ++code) {
    for (int p = 0; p < np; ++p) a[p] = static_cast<std::uint32_t>(code >> (p * n)) & ((1u << n) - 1);
    const double s = ground::assignment_score(g, w, a);
    bool better = best.empty() || s > best_score + 1e-12;
    if (!better && std::abs(s - best_score) <= 1e-12) {
      for (int p = 0; p < np; ++p) {
        if (a[p] != best[p]) {
          better = lex_key(a[p], n) < lex_key(best[p], n);
          break;
        }
      }
    }
    if (better) {
      best = a;
      best_score = s;
    }
  }
  *score = best_score;
  return best;
}

/// Random weights over every feature key any assignment can produce.
inline ground::FeatureMap random_weights(const ground::GroundingGraph& g, std::mt19937& rng) {
  const int np = static_cast<int>(g.phrases.size());
  const int n = static_cast<int>(g.candidates.size());
  std::set<std::string> keys;
  ground::Assignment a(np, 0);
  for (int p = 0; p < np; ++p) {
    for (int c = 0; c < n; ++c) {
      for (const auto& [k, v] : ground::factor_features(g, p, c, a)) keys.insert(k);
    }
  }
  for (int p = 0; p < np; ++p) {
    for (int c = 0; c < n; ++c) {
      for (int c2 = 0; c2 < n; ++c2) {
        for (int ch : g.phrases[p].children) {
          ground::Assignment b(np, 0);
          b[ch] = 1u << c2;
          for (const auto& [k, v] : ground::factor_features(g, p, c, b)) keys.insert(k);
        }
      }
    }
  }
  std::normal_distribution<double> nd(0.0, 1.5);
  ground::FeatureMap w;
  for (const auto& k : keys) w[k] = nd(rng);
  return w;
}

/// Four objects; only o1 (kitchen) is down o2 (hallway).
inline ground::MapContext kitchen_hallway_map(const ground::SymbolSpace& sp) {
  ground::MapContext m;
  m.objects = {{1, sp.type_index("kitchen")}, {2, sp.type_index("hallway")}, {3, sp.type_index("office")},
               {4, sp.type_index("lab")}};
  const int down = sp.relation_index("down");
  m.relation_support = [down](int f, int r, int l) { return (f == 0 && r == down && l == 1) ? 1.0 : 0.0; };
  return m;
}

// ---- pose graph ----

inline Eigen::Matrix3d diag_cov(double sxy, double sth) {
  return Eigen::Vector3d(sxy * sxy, sxy * sxy, sth * sth).asDiagonal();
}

/// Dense least squares over nodes 1..n-1 with finite-difference Jacobians.
inline std::vector<geo::Pose2> dense_oracle(const map::PoseGraph& g) {
  using geo::Pose2;
  const int n = g.size() - 1;
  Eigen::VectorXd x(3 * n);
  for (int k = 1; k <= n; ++k) x.segment<3>(3 * (k - 1)) = g.mean(k).vec();
  auto pose_of = [&](const Eigen::VectorXd& v, int k) {
    return k == 0 ? Pose2{} : Pose2::from_vec(v.segment<3>(3 * (k - 1)));
  };
  auto residuals = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd r(3 * g.factors().size());
    for (std::size_t f = 0; f < g.factors().size(); ++f) {
      const auto& fa = g.factors()[f];
      const Pose2 d = geo::between(pose_of(v, fa.i), pose_of(v, fa.j));
      Eigen::Vector3d e(d.x - fa.z.x, d.y - fa.z.y, geo::wrap_angle(d.theta - fa.z.theta));
      const Eigen::Matrix3d l = Eigen::LLT<Eigen::Matrix3d>(fa.cov.inverse()).matrixU();
      r.segment<3>(3 * f) = l * e;
    }
    return r;
  };
  for (int it = 0; it < 100; ++it) {
    const Eigen::VectorXd r0 = residuals(x);
    Eigen::MatrixXd j(r0.size(), x.size());
    for (int c = 0; c < x.size(); ++c) {
      const double h = 1e-7;
      Eigen::VectorXd xp = x, xm = x;
      xp[c] += h;
      xm[c] -= h;
      j.col(c) = (residuals(xp) - residuals(xm)) / (2 * h);
    }
    const Eigen::VectorXd dx = (j.transpose() * j).ldlt().solve(-j.transpose() * r0);
    x += dx;
    if (dx.cwiseAbs().maxCoeff() < 1e-13) break;
  }
  std::vector<Pose2> out{Pose2{}};
  for (int k = 1; k <= n; ++k) out.push_back(pose_of(x, k));
  return out;
}

/// Nine random odometry edges plus four perturbed loop closures.
inline map::PoseGraph random_pose_graph(std::mt19937& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  map::PoseGraph g;
  for (int k = 0; k < 9; ++k) g.add_odometry({u(rng), u(rng), 0.5 * u(rng)}, diag_cov(0.1 + 0.05 * k, 0.05));
  for (int extra = 0; extra < 4; ++extra) {
    const int i = static_cast<int>(rng() % 10);
    int j = static_cast<int>(rng() % 10);
    if (i == j) j = (j + 3) % 10;
    geo::Pose2 z = geo::between(g.mean(i), g.mean(j));
    z.x += 0.3 * nd(rng);
    z.y += 0.3 * nd(rng);
    z.theta += 0.1 * nd(rng);
    g.add_factor(i, j, z, diag_cov(0.2, 0.08));
  }
  return g;
}

// ---- policy learning ----

inline Eigen::VectorXd random_vec(int n, Rng& rng) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = gaussian(rng);
  return v;
}

inline policy::Decision random_decision(int actions, int dim, Rng& rng) {
  policy::Decision d;
  for (int a = 0; a < actions; ++a) d.moments.push_back(random_vec(dim, rng));
  d.expert = static_cast<int>(uniform01(rng) * actions);
  return d;
}

/// Replays a fixed list of states regardless of the chosen action.
class FixedRollout : public policy::Rollout {
 public:
  explicit FixedRollout(std::vector<policy::Decision> states) : states_(std::move(states)) {}
  policy::Decision observe() override { return states_.at(i_); }
  bool act(int) override { return ++i_ == states_.size(); }

 private:
  std::vector<policy::Decision> states_;
  std::size_t i_ = 0;
};

/// Decisions labeled by a hidden linear cost with a clear margin.
inline std::vector<policy::Decision> separable(int n, int dim, std::uint64_t seed) {
  Rng rng(seed);
  const Eigen::VectorXd hidden = random_vec(dim, rng);
  std::vector<policy::Decision> out;
  while (static_cast<int>(out.size()) < n) {
    policy::Decision d = random_decision(3, dim, rng);
    std::vector<double> c;
    for (const auto& m : d.moments) c.push_back(hidden.dot(m));
    auto sorted = c;
    std::sort(sorted.begin(), sorted.end());
    if (sorted[1] - sorted[0] < 0.5) continue;
    d.expert = static_cast<int>(std::min_element(c.begin(), c.end()) - c.begin());
    out.push_back(d);
  }
  return out;
}

/// Three fixed scenarios of four separable states each (k = 1, d = 4).
inline std::vector<policy::RolloutFactory> separable_scenarios(std::uint64_t seed) {
  const auto states = separable(12, 4, seed);
  std::vector<policy::RolloutFactory> scenarios;
  for (int s = 0; s < 3; ++s) {
    std::vector<policy::Decision> part(states.begin() + 4 * s, states.begin() + 4 * (s + 1));
    scenarios.push_back([part](int) { return std::make_unique<FixedRollout>(part); });
  }
  return scenarios;
}

}  // namespace wayfinder::oracle
