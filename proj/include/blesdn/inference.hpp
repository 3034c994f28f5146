#pragma once

// Passive fault diagnosis from sink-side packet counts.
//
// Latent causes: S_i (node i senses) and C_l (link l carries), faults with
// prior mass 1-p_S and 1-p_C. A source whose path holds f faults delivers
// each packet with probability q = max(d0 * eps^f, 1e-6), and observed counts
// are Binomial(expected, q), independent across sources given the causes.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "blesdn/core.hpp"
#include "blesdn/params.hpp"

namespace blesdn {

struct Evidence {
  double observed = 0.0;
  double expected = 0.0;
};

struct NodePosterior {
  double p_sensing = 0.0;
  double p_comm = 0.0;   // fault of the link to this node's master; 0 for the sink
};

enum class InferenceBackend { Exact, MeanField };

struct AnomalyReport {
  SimTime t0 = 0;
  SimTime t1 = 0;
  std::map<NodeId, NodePosterior> nodes;
  std::map<NodeId, Evidence> evidence;   // after clamping
  std::vector<std::string> warnings;
  InferenceBackend backend = InferenceBackend::Exact;
  std::size_t latent_count = 0;
};

/// The Bayesian model instantiated on one tree and one set of counts.
struct FaultModel {
  enum class Kind { Sensing, Link };
  struct Latent {
    Kind kind;
    NodeId node;          // the sensing node, or the child end of the link
    double prior_fault;
  };
  struct Source {
    NodeId node;
    Evidence evidence;
    std::vector<std::size_t> path;   // latent indices: own sensing, then links toward the sink
    std::vector<double> loglik;      // indexed by fault count on the path
  };

  std::vector<Latent> latents;
  std::vector<Source> sources;
  std::vector<std::vector<std::size_t>> sources_of;   // per latent
  std::map<NodeId, std::optional<std::size_t>> sensing_latent, link_latent;
  std::vector<std::string> warnings;

  double loglik(std::size_t s, std::size_t faults) const { return sources[s].loglik[faults]; }
};

namespace detail {

/// o*log q + (n-o)*log(1-q), with 0*log 0 taken as 0.
inline double binomial_loglik(double observed, double expected, double q) {
  double v = 0.0;
  if (observed > 0.0) v += observed * std::log(q);
  const double miss = expected - observed;
  if (miss > 0.0) v += q >= 1.0 ? -std::numeric_limits<double>::infinity() : miss * std::log1p(-q);
  return v;
}

/// Appends a Bernoulli(p) count to a Poisson-binomial distribution.
inline void convolve_bernoulli(std::vector<double>& dist, double p) {
  dist.push_back(0.0);
  for (std::size_t k = dist.size() - 1; k > 0; --k) dist[k] = dist[k] * (1.0 - p) + dist[k - 1] * p;
  dist[0] *= 1.0 - p;
}

inline std::vector<double> convolve(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out(a.size() + b.size() - 1, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) out[i + j] += a[i] * b[j];
  return out;
}

/// E[loglik(shift + X)] with X ~ dist.
inline double expected_loglik(const std::vector<double>& loglik, const std::vector<double>& dist, std::size_t shift) {
  double v = 0.0;
  for (std::size_t k = 0; k < dist.size(); ++k)
    if (dist[k] > 0.0) v += dist[k] * loglik[shift + k];
  return v;
}

inline void normalize_log(std::vector<double>& lw) {
  const double mx = *std::max_element(lw.begin(), lw.end());
  if (!std::isfinite(mx)) {
    std::fill(lw.begin(), lw.end(), 1.0 / static_cast<double>(lw.size()));
    return;
  }
  double z = 0.0;
  for (double& v : lw) z += (v = std::exp(v - mx));
  for (double& v : lw) v /= z;
}

inline double clamp01(double p) { return std::clamp(p, 0.0, 1.0); }

}  // namespace detail

/// Builds latents and sources. Nodes with expected > 0 are sources; only
/// their sensing latents and the links on their paths enter the model.
/// Observed counts above expected are clamped, with a warning.
inline FaultModel build_fault_model(const TreeIndex& tree, const std::map<NodeId, Evidence>& counts,
                                    const ControllerParams& params) {
  FaultModel m;
  std::map<NodeId, std::vector<NodeId>> paths;
  for (NodeId n : tree.nodes()) {
    m.sensing_latent[n];
    m.link_latent[n];
  }
  for (const auto& [node, ev] : counts) {
    if (!tree.contains(node)) throw Error(ErrorCode::UnknownNode, to_string(node) + " not in snapshot");
    if (ev.expected < 0.0 || ev.observed < 0.0) throw Error(ErrorCode::ValueOutOfRange, "negative count for " + to_string(node));
    if (ev.expected > 0.0) paths[node] = tree.path_to_sink(node);
  }
  // latent order: per node ascending id, sensing before link
  for (NodeId n : tree.nodes()) {
    if (paths.count(n))
      m.sensing_latent[n] = m.latents.size(), m.latents.push_back({FaultModel::Kind::Sensing, n, 1.0 - params.prior_sensor_ok});
    // the link n -> master(n) is on a path iff n is, unless n is the sink
    const bool carries = n != tree.sink() && std::any_of(paths.begin(), paths.end(), [&](const auto& kv) {
                           return std::find(kv.second.begin(), kv.second.end(), n) != kv.second.end();
                         });
    if (carries) m.link_latent[n] = m.latents.size(), m.latents.push_back({FaultModel::Kind::Link, n, 1.0 - params.prior_link_ok});
  }
  m.sources_of.resize(m.latents.size());
  for (const auto& [node, path] : paths) {
    FaultModel::Source s;
    s.node = node;
    s.evidence = counts.at(node);
    if (s.evidence.observed > s.evidence.expected) {
      m.warnings.push_back("observed " + std::to_string(s.evidence.observed) + " exceeds expected " +
                           std::to_string(s.evidence.expected) + " for " + to_string(node) + "; clamped");
      s.evidence.observed = s.evidence.expected;
    }
    s.path.push_back(*m.sensing_latent[node]);
    for (std::size_t i = 0; i + 1 < path.size(); ++i) s.path.push_back(*m.link_latent[path[i]]);
    for (std::size_t f = 0; f <= s.path.size(); ++f) {
      const double q = std::max(params.healthy_delivery * std::pow(params.fault_leak, static_cast<double>(f)), 1e-6);
      s.loglik.push_back(detail::binomial_loglik(s.evidence.observed, s.evidence.expected, q));
    }
    for (std::size_t l : s.path) m.sources_of[l].push_back(m.sources.size());
    m.sources.push_back(std::move(s));
  }
  return m;
}

/// Posterior fault probability of every latent by summing over all 2^L
/// assignments. Intended for L <= 26.
inline std::vector<double> infer_exact(const FaultModel& m) {
  const std::size_t L = m.latents.size();
  if (L > 30) throw Error(ErrorCode::ValueOutOfRange, "exact enumeration over " + std::to_string(L) + " latents");
  if (L == 0) return {};
  const std::uint64_t N = std::uint64_t{1} << L;

  std::vector<std::uint64_t> masks;
  for (const auto& s : m.sources) {
    std::uint64_t mask = 0;
    for (std::size_t l : s.path) mask |= std::uint64_t{1} << l;
    masks.push_back(mask);
  }
  std::vector<double> flip(L);   // log-odds of fault per latent
  double base = 0.0;
  for (std::size_t l = 0; l < L; ++l) {
    const double pf = m.latents[l].prior_fault;
    base += std::log1p(-pf);
    flip[l] = std::log(pf) - std::log1p(-pf);
  }

  std::vector<double> lw(N);
  lw[0] = base;
  for (std::uint64_t x = 1; x < N; ++x) lw[x] = lw[x & (x - 1)] + flip[std::countr_zero(x)];
  double mx = -std::numeric_limits<double>::infinity();
  for (std::uint64_t x = 0; x < N; ++x) {
    double v = lw[x];
    for (std::size_t s = 0; s < masks.size(); ++s) v += m.sources[s].loglik[std::popcount(x & masks[s])];
    lw[x] = v;
    mx = std::max(mx, v);
  }
  std::vector<double> marg(L, 0.0);
  if (!std::isfinite(mx)) {
    for (std::size_t l = 0; l < L; ++l) marg[l] = m.latents[l].prior_fault;
    return marg;
  }
  double z = 0.0;
  for (std::uint64_t x = 0; x < N; ++x) {
    const double w = std::exp(lw[x] - mx);
    if (w == 0.0) continue;
    z += w;
    for (std::uint64_t b = x; b; b &= b - 1) marg[std::countr_zero(b)] += w;
  }
  for (double& v : marg) v = detail::clamp01(v / z);
  return marg;
}

namespace detail {

/// Block mean-field: q(latents) = prod_b q_b(block b), blocks updated in turn
/// with the exact conditional given the other blocks' marginals.
class BlockMeanField {
 public:
  BlockMeanField(const FaultModel& m, std::vector<std::vector<std::size_t>> blocks, const ControllerParams& p)
      : m_(m), blocks_(std::move(blocks)), params_(p), joint_(blocks_.size()) {}

  struct Result {
    std::vector<double> marginals;
    double elbo = 0.0;
    std::size_t sweeps = 0;
  };

  Result run(std::vector<double> init) {
    marg_ = std::move(init);
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      // product initial joint, consistent with the starting marginals
      const auto& B = blocks_[b];
      joint_[b].assign(std::size_t{1} << B.size(), 1.0);
      for (std::size_t st = 0; st < joint_[b].size(); ++st)
        for (std::size_t j = 0; j < B.size(); ++j) joint_[b][st] *= (st >> j & 1) ? marg_[B[j]] : 1.0 - marg_[B[j]];
    }
    Result r;
    for (r.sweeps = 1; r.sweeps <= params_.mf_max_sweeps; ++r.sweeps) {
      double change = 0.0;
      for (std::size_t b = 0; b < blocks_.size(); ++b) change = std::max(change, update(b));
      if (change < params_.mf_tolerance) break;
    }
    r.sweeps = std::min(r.sweeps, params_.mf_max_sweeps);
    r.marginals = marg_;
    r.elbo = elbo();
    return r;
  }

 private:
  double log_prior(std::size_t b, std::size_t st) const {
    double v = 0.0;
    const auto& B = blocks_[b];
    for (std::size_t j = 0; j < B.size(); ++j) {
      const double pf = m_.latents[B[j]].prior_fault;
      v += (st >> j & 1) ? std::log(pf) : std::log1p(-pf);
    }
    return v;
  }

  double update(std::size_t b) {
    const auto& B = blocks_[b];
    const std::size_t states = std::size_t{1} << B.size();
    std::vector<double> lw(states);
    for (std::size_t st = 0; st < states; ++st) lw[st] = log_prior(b, st);

    std::vector<std::size_t> srcs;
    for (std::size_t l : B) srcs.insert(srcs.end(), m_.sources_of[l].begin(), m_.sources_of[l].end());
    std::sort(srcs.begin(), srcs.end());
    srcs.erase(std::unique(srcs.begin(), srcs.end()), srcs.end());

    for (std::size_t s : srcs) {
      const auto& src = m_.sources[s];
      std::vector<double> dist{1.0};
      std::size_t in_block = 0;   // bit set over block positions on this path
      for (std::size_t l : src.path) {
        auto it = std::find(B.begin(), B.end(), l);
        if (it == B.end()) convolve_bernoulli(dist, marg_[l]);
        else in_block |= std::size_t{1} << (it - B.begin());
      }
      std::vector<double> by_shift(std::popcount(in_block) + 1);
      for (std::size_t a = 0; a < by_shift.size(); ++a) by_shift[a] = expected_loglik(src.loglik, dist, a);
      for (std::size_t st = 0; st < states; ++st) lw[st] += by_shift[std::popcount(st & in_block)];
    }
    normalize_log(lw);
    joint_[b] = lw;

    double change = 0.0;
    for (std::size_t j = 0; j < B.size(); ++j) {
      double v = 0.0;
      for (std::size_t st = 0; st < states; ++st)
        if (st >> j & 1) v += lw[st];
      v = clamp01(v);
      change = std::max(change, std::abs(v - marg_[B[j]]));
      marg_[B[j]] = v;
    }
    return change;
  }

  // Evidence lower bound under the block-factorized q. The likelihood term
  // uses each block's joint count distribution, not the factorized marginals.
  double elbo() const {
    double v = 0.0;
    for (std::size_t b = 0; b < blocks_.size(); ++b)
      for (std::size_t st = 0; st < joint_[b].size(); ++st)
        if (joint_[b][st] > 0.0) v += joint_[b][st] * (log_prior(b, st) - std::log(joint_[b][st]));
    for (const auto& src : m_.sources) {
      std::vector<double> dist{1.0};
      for (std::size_t b = 0; b < blocks_.size(); ++b) {
        const auto& B = blocks_[b];
        std::size_t on_path = 0;
        for (std::size_t j = 0; j < B.size(); ++j)
          if (std::find(src.path.begin(), src.path.end(), B[j]) != src.path.end()) on_path |= std::size_t{1} << j;
        if (!on_path) continue;
        std::vector<double> cd(std::popcount(on_path) + 1, 0.0);
        for (std::size_t st = 0; st < joint_[b].size(); ++st) cd[std::popcount(st & on_path)] += joint_[b][st];
        dist = convolve(dist, cd);
      }
      v += expected_loglik(src.loglik, dist, 0);
    }
    return v;
  }

  const FaultModel& m_;
  std::vector<std::vector<std::size_t>> blocks_;
  const ControllerParams& params_;
  std::vector<double> marg_;
  std::vector<std::vector<double>> joint_;
};

/// Latent groups per node, in ascending node order.
inline std::map<NodeId, std::vector<std::size_t>> node_groups(const FaultModel& m) {
  std::map<NodeId, std::vector<std::size_t>> g;
  for (std::size_t l = 0; l < m.latents.size(); ++l) g[m.latents[l].node].push_back(l);
  return g;
}

/// Undirected hop distances over the tree from one node.
inline std::map<NodeId, std::size_t> tree_distances(const TreeIndex& tree, NodeId from) {
  std::map<NodeId, std::size_t> dist{{from, 0}};
  std::queue<NodeId> q;
  q.push(from);
  while (!q.empty()) {
    NodeId u = q.front();
    q.pop();
    std::vector<NodeId> nbrs = tree.children_of(u);
    if (auto mm = tree.master_of(u)) nbrs.push_back(*mm);
    for (NodeId v : nbrs)
      if (dist.emplace(v, dist[u] + 1).second) q.push(v);
  }
  return dist;
}

/// Exact joint posterior over a window of latents, treating all others as
/// independent with the given marginals. Returns marginals for the window.
inline std::vector<double> refine_window(const FaultModel& m, const std::vector<std::size_t>& W,
                                         const std::vector<double>& outside) {
  const std::size_t states = std::size_t{1} << W.size();
  std::vector<double> lw(states, 0.0);
  for (std::size_t st = 0; st < states; ++st)
    for (std::size_t j = 0; j < W.size(); ++j) {
      const double pf = m.latents[W[j]].prior_fault;
      lw[st] += (st >> j & 1) ? std::log(pf) : std::log1p(-pf);
    }
  std::vector<bool> touched(m.sources.size(), false);
  for (std::size_t l : W)
    for (std::size_t s : m.sources_of[l]) touched[s] = true;
  for (std::size_t s = 0; s < m.sources.size(); ++s) {
    if (!touched[s]) continue;
    const auto& src = m.sources[s];
    std::vector<double> dist{1.0};
    std::size_t in_window = 0;
    for (std::size_t l : src.path) {
      auto it = std::find(W.begin(), W.end(), l);
      if (it == W.end()) convolve_bernoulli(dist, outside[l]);
      else in_window |= std::size_t{1} << (it - W.begin());
    }
    std::vector<double> by_shift(std::popcount(in_window) + 1);
    for (std::size_t a = 0; a < by_shift.size(); ++a) by_shift[a] = expected_loglik(src.loglik, dist, a);
    for (std::size_t st = 0; st < states; ++st) lw[st] += by_shift[std::popcount(st & in_window)];
  }
  normalize_log(lw);
  std::vector<double> out(W.size(), 0.0);
  for (std::size_t st = 0; st < states; ++st)
    for (std::size_t j = 0; j < W.size(); ++j)
      if (st >> j & 1) out[j] += lw[st];
  for (double& v : out) v = clamp01(v);
  return out;
}

}  // namespace detail

/// Approximate posteriors for models too large to enumerate.
///
/// Plain coordinate-wise mean-field gets trapped on this model: a sensing
/// fault and the fault of the same node's link explain the same evidence,
/// and chains of links toward the sink compete for it. So: per-node
/// (sensing, link) blocks, restarted from the prior and from one "hot" start
/// per latent on an under-delivering source's path, keeping the run with the
/// best ELBO; then each node's latents are re-estimated by exact enumeration
/// over a window of nearby latents with the rest held at their marginals.
inline std::vector<double> infer_mean_field(const FaultModel& m, const TreeIndex& tree, const ControllerParams& params) {
  const std::size_t L = m.latents.size();
  if (L == 0) return {};
  const auto groups = detail::node_groups(m);

  std::vector<std::vector<std::size_t>> blocks;
  for (const auto& [node, g] : groups) {
    if (params.mf_block_latents >= 2) blocks.push_back(g);
    else
      for (std::size_t l : g) blocks.push_back({l});
  }

  std::vector<double> prior(L);
  for (std::size_t l = 0; l < L; ++l) prior[l] = m.latents[l].prior_fault;

  std::vector<bool> hot(L, false);
  for (const auto& s : m.sources)
    if (s.evidence.observed < params.healthy_delivery * s.evidence.expected)
      for (std::size_t l : s.path) hot[l] = true;

  detail::BlockMeanField mf(m, blocks, params);
  auto best = mf.run(prior);
  for (std::size_t l = 0; l < L; ++l) {
    if (!hot[l]) continue;
    auto init = prior;
    init[l] = 0.999;
    auto r = mf.run(std::move(init));
    if (r.elbo > best.elbo + 1e-9) best = std::move(r);
  }
  if (params.mf_refine_window < 2) return best.marginals;

  std::vector<double> out = best.marginals;
  for (const auto& [node, own] : groups) {
    const auto dist = detail::tree_distances(tree, node);
    std::vector<std::pair<std::size_t, NodeId>> order;
    for (const auto& [other, g] : groups) {
      auto it = dist.find(other);
      order.emplace_back(it == dist.end() ? std::numeric_limits<std::size_t>::max() : it->second, other);
    }
    std::sort(order.begin(), order.end());
    std::vector<std::size_t> W;
    for (const auto& [d, other] : order) {
      const auto& g = groups.at(other);
      if (W.size() + g.size() > params.mf_refine_window) break;
      W.insert(W.end(), g.begin(), g.end());
    }
    const auto r = detail::refine_window(m, W, best.marginals);
    for (std::size_t j = 0; j < W.size(); ++j)
      if (std::find(own.begin(), own.end(), W[j]) != own.end()) out[W[j]] = r[j];
  }
  return out;
}

/// Fills an AnomalyReport from latent marginals. Nodes outside the model keep
/// their prior fault mass; the sink's p_comm is 0.
inline AnomalyReport report_from_marginals(const FaultModel& m, const TreeIndex& tree, const std::vector<double>& marg,
                                           const ControllerParams& params) {
  AnomalyReport r;
  r.latent_count = m.latents.size();
  r.warnings = m.warnings;
  for (NodeId n : tree.nodes()) {
    NodePosterior p;
    const auto& sl = m.sensing_latent.at(n);
    const auto& ll = m.link_latent.at(n);
    p.p_sensing = sl ? marg[*sl] : 1.0 - params.prior_sensor_ok;
    p.p_comm = n == tree.sink() ? 0.0 : ll ? marg[*ll] : 1.0 - params.prior_link_ok;
    r.nodes[n] = p;
  }
  for (const auto& s : m.sources) r.evidence[s.node] = s.evidence;
  return r;
}

/// Posterior sensing/communication fault probabilities per node. Exact
/// enumeration up to params.exact_max_latents latents, mean-field beyond.
inline AnomalyReport infer_anomalies(const TreeIndex& tree, const std::map<NodeId, Evidence>& counts,
                                     const ControllerParams& params,
                                     std::optional<InferenceBackend> force = std::nullopt) {
  const FaultModel m = build_fault_model(tree, counts, params);
  const auto backend = force.value_or(m.latents.size() <= params.exact_max_latents ? InferenceBackend::Exact
                                                                                  : InferenceBackend::MeanField);
  const auto marg = backend == InferenceBackend::Exact ? infer_exact(m) : infer_mean_field(m, tree, params);
  AnomalyReport r = report_from_marginals(m, tree, marg, params);
  r.backend = backend;
  return r;
}

}  // namespace blesdn
