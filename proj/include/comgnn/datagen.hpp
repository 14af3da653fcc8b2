#pragma once
// Deterministic synthetic tasks with planted structure, desk-scale stand-ins
// for the ride-matching and road-traffic settings: a route/order ranking
// problem whose labels follow a known linear rule, and a diffusion process on
// a multi-relational road graph with attribute-driven daily periodicity.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "training.hpp"

namespace comgnn {

// ---------------------------------------------------------------------------
// Ranking task: drivers create routes, routes consider candidate orders.
// ---------------------------------------------------------------------------

struct SynthRankingSpec {
  std::size_t n_routes = 200;      // one ranking instance per target route
  std::size_t mu = 4;              // historical routes (and orders) per target
  std::size_t candidate_count = 20;
  std::size_t driver_attr_dim = 3;
  std::size_t route_attr_dim = 5;
  std::size_t order_attr_dim = 5;
  std::uint64_t seed = 1;
};

inline void validate_spec(const SynthRankingSpec& s) {
  if (s.n_routes == 0) throw std::invalid_argument("ranking spec: n_routes must be >= 1");
  if (s.candidate_count < 2)
    throw std::invalid_argument("ranking spec: candidate_count must be >= 2");
  if (s.route_attr_dim == 0 || s.order_attr_dim == 0 || s.driver_attr_dim == 0)
    throw std::invalid_argument("ranking spec: attribute dims must be >= 1");
}

// node types
inline constexpr std::size_t kDriver = 0, kRoute = 1, kOrder = 2;
// edge types, in insertion order
inline constexpr std::size_t kCreate = 0, kBeCreatedBy = 1, kHistoricalRouteOf = 2, kConsider = 3;
inline constexpr std::size_t kConsiderAttrDim = 2;  // detour distance, departure-time gap

struct RankingBundle {
  HeteroGraph graph;  // disjoint union of one neighborhood per target route
  std::vector<RankingInstance> train, valid;
  std::vector<double> rule_weights;       // over [route | order | consider-edge] attrs
  std::size_t positives_per_instance = 0;  // top scorers per candidate list
};

// Label rule: fixed linear score of the candidate edge's endpoints and its
// own attributes.
inline double planted_score(const HeteroGraph& g, std::size_t consider_edge,
                            const std::vector<double>& w) {
  if (g.edge_type_of(consider_edge) != kConsider)
    throw std::invalid_argument("planted_score: not a consider edge");
  const std::size_t route = g.edge_src(consider_edge);
  const std::size_t order = g.edge_dst(consider_edge);

  const std::size_t rd = g.node_type(kRoute).attr_dim, od = g.node_type(kOrder).attr_dim;
  if (w.size() != rd + od + kConsiderAttrDim)
    throw std::invalid_argument("planted_score: weight size mismatch");
  double s = 0.0;
  std::size_t k = 0;
  const double* r = g.node_attr_row(route);
  for (std::size_t i = 0; i < rd; ++i) s += w[k++] * r[i];
  const double* o = g.node_attr_row(order);
  for (std::size_t i = 0; i < od; ++i) s += w[k++] * o[i];
  const double* e = g.edge_attr_row(consider_edge);
  for (std::size_t i = 0; i < kConsiderAttrDim; ++i) s += w[k++] * e[i];
  return s;
}

inline RankingBundle gen_ranking_task(const SynthRankingSpec& spec) {
  validate_spec(spec);
  Rng rng(spec.seed);

  RankingBundle out;
  out.rule_weights.resize(spec.route_attr_dim + spec.order_attr_dim + kConsiderAttrDim);
  for (double& w : out.rule_weights) {
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    w = sign * rng.uniform(0.3, 1.0);  // bounded away from zero so every field matters
  }

  HeteroGraph& g = out.graph;
  g.add_node_type("driver", spec.driver_attr_dim);
  g.add_node_type("route", spec.route_attr_dim);
  g.add_node_type("order", spec.order_attr_dim);
  g.add_edge_type("create", kDriver, kRoute, 2, {"day_of_week", "hour"});
  g.add_edge_type("be_created_by", kRoute, kDriver, 2, {"day_of_week", "hour"});
  g.add_edge_type("historical_route_of", kRoute, kRoute, 1, {"create_gap"});
  g.add_edge_type("consider", kRoute, kOrder, kConsiderAttrDim, {"detour", "depart_gap"});

  auto rand_attrs = [&rng](std::size_t n) {
    std::vector<double> a(n);
    for (double& v : a) v = rng.uniform(-1, 1);
    return a;
  };
  auto create_time = [&rng]() {
    return std::vector<double>{static_cast<double>(rng.uniform_index(7)) / 6.0,
                               static_cast<double>(rng.uniform_index(24)) / 23.0};
  };

  // Nodes and edges must land grouped by type, so stage everything first and
  // refer to nodes as (type, index-within-type) until the graph is built.
  struct PlannedEdge {
    std::size_t src_type, src, dst_type, dst;
    std::vector<double> attrs;
  };
  std::vector<std::vector<std::vector<double>>> nodes(3);
  std::vector<std::vector<PlannedEdge>> planned(4);
  struct PlannedInstance {
    std::size_t target;                       // route-local index
    std::vector<std::size_t> consider_slots;  // indices into planned[kConsider]
  };
  std::vector<PlannedInstance> targets;

  auto stage_node = [&nodes, &rand_attrs](std::size_t type, std::size_t dim) {
    nodes[type].push_back(rand_attrs(dim));
    return nodes[type].size() - 1;
  };

  for (std::size_t i = 0; i < spec.n_routes; ++i) {
    const std::size_t driver = stage_node(kDriver, spec.driver_attr_dim);
    const std::size_t route = stage_node(kRoute, spec.route_attr_dim);
    const std::vector<double> stamp = create_time();
    planned[kCreate].push_back({kDriver, driver, kRoute, route, stamp});
    planned[kBeCreatedBy].push_back({kRoute, route, kDriver, driver, stamp});

    for (std::size_t k = 0; k < spec.mu; ++k) {
      const std::size_t hist = stage_node(kRoute, spec.route_attr_dim);
      const std::vector<double> hstamp = create_time();
      planned[kCreate].push_back({kDriver, driver, kRoute, hist, hstamp});
      planned[kBeCreatedBy].push_back({kRoute, hist, kDriver, driver, hstamp});
      planned[kHistoricalRouteOf].push_back({kRoute, hist, kRoute, route, {rng.uniform(0, 1)}});
      const std::size_t horder = stage_node(kOrder, spec.order_attr_dim);
      planned[kConsider].push_back({kRoute, hist, kOrder, horder, rand_attrs(kConsiderAttrDim)});
    }

    PlannedInstance inst;
    inst.target = route;
    for (std::size_t c = 0; c < spec.candidate_count; ++c) {
      const std::size_t order = stage_node(kOrder, spec.order_attr_dim);
      inst.consider_slots.push_back(planned[kConsider].size());
      planned[kConsider].push_back({kRoute, route, kOrder, order, rand_attrs(kConsiderAttrDim)});
    }
    targets.push_back(std::move(inst));
  }

  std::size_t offset[3] = {0, nodes[0].size(), nodes[0].size() + nodes[1].size()};
  for (std::size_t t = 0; t < 3; ++t)
    for (const auto& attrs : nodes[t]) g.add_node(t, attrs);
  std::vector<std::vector<std::size_t>> gid_of(4);
  for (std::size_t t = 0; t < 4; ++t)
    for (const PlannedEdge& e : planned[t])
      gid_of[t].push_back(
          g.add_edge(t, offset[e.src_type] + e.src, offset[e.dst_type] + e.dst, e.attrs));
  g.finalize();

  // Calibrate the label threshold within each candidate list so roughly one
  // in five candidates is a positive and every instance carries the same
  // class balance (a global cut would let instance-level attribute offsets
  // concentrate all positives in a few lists).
  out.positives_per_instance = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(static_cast<double>(spec.candidate_count) / 5.0)));

  const std::size_t n_train = spec.n_routes * 4 / 5;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    RankingInstance inst;
    inst.target = offset[kRoute] + targets[i].target;
    std::vector<double> scores;
    for (std::size_t slot : targets[i].consider_slots) {
      inst.candidates.push_back(gid_of[kConsider][slot]);
      scores.push_back(planted_score(g, gid_of[kConsider][slot], out.rule_weights));
    }
    std::vector<double> sorted = scores;
    const std::size_t cut = sorted.size() - out.positives_per_instance;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(cut),
                     sorted.end());
    const double thr = sorted[cut];  // k-th largest candidate score
    for (double v : scores) inst.labels.push_back(v >= thr ? 1 : 0);
    (i < n_train ? out.train : out.valid).push_back(std::move(inst));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Diffusion task: road segments exchange congestion over typed links while a
// per-node daily cycle, set by the node's static attributes, drives the mean.
// ---------------------------------------------------------------------------

struct SynthDiffusionSpec {
  std::size_t n_nodes = 60;
  std::size_t n_edges = 240;  // split across the three relations by fraction
  double frac_link = 0.18, frac_close = 0.52, frac_likely = 0.30;
  std::size_t t_len = 8064;  // four synthetic weeks of 5-minute steps
  long long step_minutes = 5;
  double rho = 0.3;    // diffusion strength toward the neighbor consensus
  double sigma = 0.05;  // noise, as a fraction of each node's cycle amplitude
  std::uint64_t seed = 1;
};

inline void validate_spec(const SynthDiffusionSpec& s) {
  if (s.n_nodes < 2) throw std::invalid_argument("diffusion spec: n_nodes must be >= 2");
  if (s.t_len < 2) throw std::invalid_argument("diffusion spec: t_len must be >= 2");
  if (s.step_minutes <= 0) throw std::invalid_argument("diffusion spec: step_minutes must be > 0");
  if (s.frac_link < 0 || s.frac_close < 0 || s.frac_likely < 0 ||
      std::abs(s.frac_link + s.frac_close + s.frac_likely - 1.0) > 1e-9)
    throw std::invalid_argument("diffusion spec: relation fractions must be >= 0 and sum to 1");
  if (s.rho < 0 || s.rho > 1) throw std::invalid_argument("diffusion spec: rho must be in [0,1]");
  if (s.sigma < 0) throw std::invalid_argument("diffusion spec: sigma must be >= 0");
  if (s.n_edges > s.n_nodes * (s.n_nodes - 1))
    throw std::invalid_argument("diffusion spec: more edges than ordered node pairs");
}

// How strongly each relation pulls a segment toward its upstream neighbors.
inline constexpr double kRelationPull[3] = {0.5, 0.3, 0.2};

struct DiffusionBundle {
  HeteroGraph graph;
  STSeries series;
  std::vector<long long> train_t0, valid_t0, test_t0;
};

namespace detail {

// Per-node daily cycle; attrs store the same quantities rescaled to [0,1].
struct NodeCycle {
  double base, amp, phase;
  double mean_at(long long minute) const {
    return base + amp * std::sin(2.0 * M_PI * static_cast<double>(minute % 1440) / 1440.0 + phase);
  }
};

inline std::vector<long long> t0_grid(long long lo, long long hi, long long stride,
                                      long long step) {
  std::vector<long long> out;
  long long t = ((lo + step - 1) / step) * step;  // first grid point at or after lo
  for (; t < hi; t += stride) out.push_back(t);
  return out;
}

// Smallest multiple of the sampling step at or above `target` minutes whose
// step count is nearly coprime with the day length, so consecutive anchors
// sweep distinct clock phases instead of revisiting a few times of day.
inline long long phase_stride(long long target, long long step, long long day_minutes) {
  const long long day_steps = std::max<long long>(1, day_minutes / step);
  for (long long m = ((target + step - 1) / step) * step;; m += step)
    if (std::gcd(m / step, day_steps) <= 2) return m;
}

}  // namespace detail

inline DiffusionBundle gen_diffusion_task(const SynthDiffusionSpec& spec) {
  validate_spec(spec);
  Rng rng(spec.seed);
  DiffusionBundle out;
  HeteroGraph& g = out.graph;

  std::vector<detail::NodeCycle> cycles(spec.n_nodes);
  g.add_node_type("segment", 3, {"free_flow", "cycle_amp", "cycle_phase"});
  for (std::size_t v = 0; v < spec.n_nodes; ++v) {
    detail::NodeCycle& c = cycles[v];
    c.base = rng.uniform(8, 12);
    c.amp = rng.uniform(1, 3);
    c.phase = rng.uniform(0, 2.0 * M_PI);
    g.add_node(0, {c.base / 12.0, c.amp / 3.0, c.phase / (2.0 * M_PI)});
  }

  const char* names[3] = {"link_to", "close_to", "likely_go_to"};
  std::size_t counts[3];
  counts[0] = static_cast<std::size_t>(std::llround(spec.frac_link * static_cast<double>(spec.n_edges)));
  counts[1] = static_cast<std::size_t>(std::llround(spec.frac_close * static_cast<double>(spec.n_edges)));
  counts[2] = spec.n_edges - std::min(spec.n_edges, counts[0] + counts[1]);

  // upstream[v] lists (neighbor, edge strength, relation) pairs feeding v
  struct Upstream {
    std::size_t u;
    double strength;
    std::size_t rel;
  };
  std::vector<std::vector<Upstream>> upstream(spec.n_nodes);
  for (std::size_t r = 0; r < 3; ++r) {
    g.add_edge_type(names[r], 0, 0, 1, {"strength"});
    std::set<std::pair<std::size_t, std::size_t>> seen;
    while (seen.size() < counts[r]) {
      const std::size_t u = rng.uniform_index(spec.n_nodes);
      const std::size_t v = rng.uniform_index(spec.n_nodes);
      if (u == v || !seen.insert({u, v}).second) continue;
      const double s = rng.uniform(0.5, 1.0);
      g.add_edge(r, u, v, {s});
      upstream[v].push_back({u, s, r});
    }
  }
  g.finalize();

  // x_{t+1} = (1-rho) x_t + rho * relation-weighted neighbor mean
  //           + daily-cycle increment + noise, clipped positive
  const std::size_t T = spec.t_len, N = spec.n_nodes;
  std::vector<double> signal(T * N);
  std::vector<double> x(N), nx(N);
  for (std::size_t v = 0; v < N; ++v) x[v] = cycles[v].mean_at(0);
  for (std::size_t v = 0; v < N; ++v) signal[v] = x[v];
  for (std::size_t t = 1; t < T; ++t) {
    const long long m_prev = static_cast<long long>(t - 1) * spec.step_minutes;
    const long long m_now = static_cast<long long>(t) * spec.step_minutes;
    for (std::size_t v = 0; v < N; ++v) {
      double pull = 0, wsum = 0;
      double acc[3] = {0, 0, 0}, den[3] = {0, 0, 0};
      for (const auto& up : upstream[v]) {
        acc[up.rel] += up.strength * x[up.u];
        den[up.rel] += up.strength;
      }
      for (std::size_t r = 0; r < 3; ++r)
        if (den[r] > 0) {
          pull += kRelationPull[r] * acc[r] / den[r];
          wsum += kRelationPull[r];
        }
      const double consensus = wsum > 0 ? pull / wsum : x[v];
      const double drift = cycles[v].mean_at(m_now) - cycles[v].mean_at(m_prev);
      const double noise = spec.sigma * cycles[v].amp * rng.normal();
      nx[v] = std::max(0.0, (1.0 - spec.rho) * x[v] + spec.rho * consensus + drift + noise);
    }
    x.swap(nx);
    for (std::size_t v = 0; v < N; ++v) signal[t * N + v] = x[v];
  }

  out.series.node_signal = Tensor::from({T, N, 1}, std::move(signal));
  for (std::size_t t = 0; t < T; ++t)
    out.series.timestamps.push_back(static_cast<long long>(t) * spec.step_minutes);
  out.series.edge_signal = edge_dynamic_features(out.series.node_signal, g);

  // Forecast windows: week 1 is history only, weeks 2/3/4 hold the train,
  // validation, and test anchors, with headroom for windows and horizons.
  const long long span = static_cast<long long>(T - 1) * spec.step_minutes;
  const long long week = 10080, day = 1440;
  if (span >= 2 * week) {
    const long long top = span - 120;
    const long long st = detail::phase_stride(250, spec.step_minutes, day);
    const long long sv = detail::phase_stride(845, spec.step_minutes, day);
    out.train_t0 = detail::t0_grid(week + 120, std::min(2 * week, top), st, spec.step_minutes);
    out.valid_t0 = detail::t0_grid(2 * week + 120, std::min(3 * week, top), sv, spec.step_minutes);
    out.test_t0 = detail::t0_grid(3 * week + 120, std::min(4 * week, top), sv, spec.step_minutes);
  } else if (span >= week + 2 * day) {
    // short series: still usable by daily/recent components in smoke tests
    const long long lo = week + 120, hi = span - 120;
    out.train_t0 = detail::t0_grid(lo, lo + (hi - lo) / 2, 120, spec.step_minutes);
    out.valid_t0 = detail::t0_grid(lo + (hi - lo) / 2, hi, 240, spec.step_minutes);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bundle directories: graph/ plus task files, deterministic byte-for-byte.
// ---------------------------------------------------------------------------

inline void save_ranking_bundle(const std::filesystem::path& dir, const RankingBundle& b,
                                const SynthRankingSpec& spec) {
  std::filesystem::create_directories(dir);
  save_graph(b.graph, dir / "graph");
  std::ofstream f(dir / "instances.csv");
  f << "split,target,edge,label\n";
  auto dump = [&f](const char* split, const std::vector<RankingInstance>& v) {
    for (const RankingInstance& inst : v)
      for (std::size_t i = 0; i < inst.candidates.size(); ++i)
        f << split << ',' << inst.target << ',' << inst.candidates[i] << ',' << inst.labels[i]
          << '\n';
  };
  dump("train", b.train);
  dump("valid", b.valid);
  std::ofstream s(dir / "genspec.txt");
  s << "task = ranking\n"
    << "n_routes = " << spec.n_routes << "\nmu = " << spec.mu
    << "\ncandidate_count = " << spec.candidate_count
    << "\ndriver_attr_dim = " << spec.driver_attr_dim
    << "\nroute_attr_dim = " << spec.route_attr_dim
    << "\norder_attr_dim = " << spec.order_attr_dim << "\nseed = " << spec.seed << "\n";
}

struct RankingData {
  std::shared_ptr<const HeteroGraph> graph;
  std::vector<RankingInstance> train, valid;
};

inline RankingData load_ranking_bundle(const std::filesystem::path& dir) {
  RankingData out;
  out.graph = std::make_shared<const HeteroGraph>(load_graph(dir / "graph"));
  std::ifstream f(dir / "instances.csv");
  if (!f) throw DataError("cannot open " + (dir / "instances.csv").string());
  std::string line;
  std::getline(f, line);
  if (line != "split,target,edge,label")
    throw DataError((dir / "instances.csv").string() + ":1: unexpected header '" + line + "'");
  std::size_t row = 1;
  while (std::getline(f, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string split, target, edge, label;
    if (!std::getline(ls, split, ',') || !std::getline(ls, target, ',') ||
        !std::getline(ls, edge, ',') || !std::getline(ls, label))
      throw DataError((dir / "instances.csv").string() + ":" + std::to_string(row) +
                      ": expected split,target,edge,label");
    if (split != "train" && split != "valid")
      throw DataError((dir / "instances.csv").string() + ":" + std::to_string(row) +
                      ": unknown split '" + split + "'");
    std::vector<RankingInstance>& dst = split == "train" ? out.train : out.valid;
    const std::size_t tgt = std::stoull(target), e = std::stoull(edge);
    const int lab = std::stoi(label);
    if (tgt >= out.graph->num_nodes() || e >= out.graph->num_edges() || lab < 0 || lab > 1)
      throw DataError((dir / "instances.csv").string() + ":" + std::to_string(row) +
                      ": id or label out of range");
    if (dst.empty() || dst.back().target != tgt) dst.push_back({tgt, {}, {}});
    dst.back().candidates.push_back(e);
    dst.back().labels.push_back(lab);
  }
  if (out.train.empty() || out.valid.empty())
    throw DataError((dir / "instances.csv").string() + ": needs train and valid instances");
  return out;
}

inline void save_forecast_bundle(const std::filesystem::path& dir, const DiffusionBundle& b,
                                 const SynthDiffusionSpec& spec) {
  std::filesystem::create_directories(dir);
  save_graph(b.graph, dir / "graph");
  save_series(dir, b.series);
  std::ofstream f(dir / "splits.csv");
  f << "split,t0\n";
  for (long long t : b.train_t0) f << "train," << t << '\n';
  for (long long t : b.valid_t0) f << "valid," << t << '\n';
  for (long long t : b.test_t0) f << "test," << t << '\n';
  std::ofstream s(dir / "genspec.txt");
  s.precision(17);
  s << "task = forecast\n"
    << "n_nodes = " << spec.n_nodes << "\nn_edges = " << spec.n_edges
    << "\nfrac_link = " << spec.frac_link << "\nfrac_close = " << spec.frac_close
    << "\nfrac_likely = " << spec.frac_likely << "\nt_len = " << spec.t_len
    << "\nstep_minutes = " << spec.step_minutes << "\nrho = " << spec.rho
    << "\nsigma = " << spec.sigma << "\nseed = " << spec.seed << "\n";
}

struct ForecastBundle {
  std::shared_ptr<const HeteroGraph> graph;
  ForecastData data;
};

inline ForecastBundle load_forecast_bundle(const std::filesystem::path& dir) {
  ForecastBundle out;
  out.graph = std::make_shared<const HeteroGraph>(load_graph(dir / "graph"));
  out.data.series = load_series(dir, *out.graph);
  std::ifstream f(dir / "splits.csv");
  if (!f) throw DataError("cannot open " + (dir / "splits.csv").string());
  std::string line;
  std::getline(f, line);
  if (line != "split,t0")
    throw DataError((dir / "splits.csv").string() + ":1: unexpected header '" + line + "'");
  std::size_t row = 1;
  while (std::getline(f, line)) {
    ++row;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string split, t0;
    if (!std::getline(ls, split, ',') || !std::getline(ls, t0))
      throw DataError((dir / "splits.csv").string() + ":" + std::to_string(row) +
                      ": expected split,t0");
    const long long t = std::stoll(t0);
    if (split == "train")
      out.data.train_t0.push_back(t);
    else if (split == "valid")
      out.data.valid_t0.push_back(t);
    else if (split == "test")
      out.data.test_t0.push_back(t);
    else
      throw DataError((dir / "splits.csv").string() + ":" + std::to_string(row) +
                      ": unknown split '" + split + "'");
  }
  if (out.data.train_t0.empty() || out.data.valid_t0.empty())
    throw DataError((dir / "splits.csv").string() + ": needs train and valid anchors");
  return out;
}

}  // namespace comgnn
