#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "comgnn/datagen.hpp"

using namespace comgnn;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

bool same_dir_bytes(const std::filesystem::path& a, const std::filesystem::path& b) {
  std::vector<std::filesystem::path> rels;
  for (const auto& e : std::filesystem::recursive_directory_iterator(a))
    if (e.is_regular_file()) rels.push_back(std::filesystem::relative(e.path(), a));
  std::sort(rels.begin(), rels.end());
  for (const auto& r : rels)
    if (!std::filesystem::exists(b / r) || slurp(a / r) != slurp(b / r)) return false;
  return true;
}

SynthRankingSpec small_ranking() {
  SynthRankingSpec s;
  s.n_routes = 30;
  s.mu = 2;
  s.candidate_count = 8;
  s.seed = 5;
  return s;
}

}  // namespace

TEST_CASE("ranking generator plants a recoverable linear rule", "[datagen]") {
  RankingBundle b = gen_ranking_task(small_ranking());
  REQUIRE(b.graph.num_nodes() == 30 * (2 + 2 * 2 + 8));
  REQUIRE(b.train.size() == 24);
  REQUIRE(b.valid.size() == 6);

  // scoring candidates by the planted rule ranks every positive first
  std::vector<ScoredList> lists;
  for (const auto& split : {b.train, b.valid})
    for (const RankingInstance& inst : split) {
      ScoredList l;
      for (std::size_t i = 0; i < inst.candidates.size(); ++i) {
        l.scores.push_back(planted_score(b.graph, inst.candidates[i], b.rule_weights));
        l.ids.push_back(inst.candidates[i]);
        l.labels.push_back(inst.labels[i]);
      }
      lists.push_back(std::move(l));
    }
  REQUIRE(map_metric(lists) == 1.0);

  // each list marks exactly its top scorers positive
  REQUIRE(b.positives_per_instance == 2);  // round(8 / 5)
  for (const auto& l : lists) {
    std::size_t pos = 0;
    double min_pos = 1e300, max_neg = -1e300;
    for (std::size_t i = 0; i < l.scores.size(); ++i) {
      if (l.labels[i]) {
        ++pos;
        min_pos = std::min(min_pos, l.scores[i]);
      } else {
        max_neg = std::max(max_neg, l.scores[i]);
      }
    }
    REQUIRE(pos == b.positives_per_instance);
    REQUIRE(min_pos > max_neg);
  }
}

TEST_CASE("ranking class balance stays near one in five across seeds", "[datagen]") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
    SynthRankingSpec s = small_ranking();
    s.n_routes = 60;
    s.seed = seed;
    RankingBundle b = gen_ranking_task(s);
    std::size_t pos = 0, total = 0;
    for (const auto& split : {b.train, b.valid})
      for (const RankingInstance& inst : split)
        for (int l : inst.labels) {
          pos += static_cast<std::size_t>(l);
          ++total;
        }
    const double frac = static_cast<double>(pos) / static_cast<double>(total);
    REQUIRE(frac >= 0.15);
    REQUIRE(frac <= 0.25);
  }
}

TEST_CASE("ranking graph shape follows the history depth", "[datagen]") {
  SynthRankingSpec s = small_ranking();
  s.mu = 0;
  s.n_routes = 4;
  RankingBundle b = gen_ranking_task(s);
  // only driver, target route, and candidate orders per neighborhood
  REQUIRE(b.graph.nodes_of_type(kDriver) == 4);
  REQUIRE(b.graph.nodes_of_type(kRoute) == 4);
  REQUIRE(b.graph.nodes_of_type(kOrder) == 4 * 8);
  REQUIRE(b.graph.edges_of_type(kHistoricalRouteOf) == 0);
  REQUIRE(b.graph.edges_of_type(kCreate) == 4);
  REQUIRE(b.graph.edges_of_type(kConsider) == 4 * 8);

  SynthRankingSpec bad = small_ranking();
  bad.candidate_count = 1;
  REQUIRE_THROWS_AS(gen_ranking_task(bad), std::invalid_argument);
}

TEST_CASE("ranking bundles round-trip and are byte-stable", "[datagen]") {
  const auto base = std::filesystem::temp_directory_path() / "comgnn_rank_bundle";
  std::filesystem::remove_all(base);
  RankingBundle b = gen_ranking_task(small_ranking());
  save_ranking_bundle(base / "a", b, small_ranking());
  save_ranking_bundle(base / "b", gen_ranking_task(small_ranking()), small_ranking());
  REQUIRE(same_dir_bytes(base / "a", base / "b"));

  RankingData loaded = load_ranking_bundle(base / "a");
  REQUIRE(loaded.graph->num_nodes() == b.graph.num_nodes());
  REQUIRE(loaded.train.size() == b.train.size());
  REQUIRE(loaded.valid.size() == b.valid.size());
  for (std::size_t i = 0; i < b.train.size(); ++i) {
    REQUIRE(loaded.train[i].target == b.train[i].target);
    REQUIRE(loaded.train[i].candidates == b.train[i].candidates);
    REQUIRE(loaded.train[i].labels == b.train[i].labels);
  }
  std::filesystem::remove_all(base);
}

TEST_CASE("diffusion with no coupling or noise is the pure daily cycle", "[datagen]") {
  SynthDiffusionSpec s;
  s.n_nodes = 6;
  s.n_edges = 12;
  s.t_len = 600;
  s.rho = 0;
  s.sigma = 0;
  s.seed = 3;
  DiffusionBundle b = gen_diffusion_task(s);
  REQUIRE(b.graph.num_nodes() == 6);
  REQUIRE(b.graph.num_edges() == 12);
  const Tensor& sig = b.series.node_signal;
  REQUIRE(sig.shape() == Shape{600, 6, 1});

  for (std::size_t v = 0; v < 6; ++v) {
    // recover the cycle from the stored node attributes
    const double* a = b.graph.node_attr_row(v);
    const double base = a[0] * 12.0, amp = a[1] * 3.0, phase = a[2] * 2.0 * M_PI;
    for (std::size_t t = 0; t < 600; t += 37) {
      const double want =
          base + amp * std::sin(2.0 * M_PI * static_cast<double>((t * 5) % 1440) / 1440.0 + phase);
      REQUIRE(std::abs(sig.value_at(t * 6 + v) - want) < 1e-9);
    }
  }
}

TEST_CASE("diffusion dynamics replayed from the rule reproduce the series", "[datagen]") {
  SynthDiffusionSpec s;
  s.n_nodes = 8;
  s.n_edges = 20;
  s.t_len = 400;
  s.sigma = 0;
  s.seed = 11;
  DiffusionBundle b = gen_diffusion_task(s);
  const HeteroGraph& g = b.graph;
  const Tensor& sig = b.series.node_signal;

  // independent replay straight from the generative description
  std::vector<double> x(8), nx(8);
  for (std::size_t v = 0; v < 8; ++v) x[v] = sig.value_at(v);
  auto mean_at = [&g](std::size_t v, long long minute) {
    const double* a = g.node_attr_row(v);
    return a[0] * 12.0 +
           a[1] * 3.0 * std::sin(2.0 * M_PI * static_cast<double>(minute % 1440) / 1440.0 +
                                 a[2] * 2.0 * M_PI);
  };
  for (std::size_t t = 1; t < 400; ++t) {
    for (std::size_t v = 0; v < 8; ++v) {
      double acc[3] = {0, 0, 0}, den[3] = {0, 0, 0};
      for (std::size_t e = 0; e < g.num_edges(); ++e)
        if (g.edge_dst(e) == v) {
          acc[g.edge_type_of(e)] += g.edge_attr_row(e)[0] * x[g.edge_src(e)];
          den[g.edge_type_of(e)] += g.edge_attr_row(e)[0];
        }
      double pull = 0, wsum = 0;
      for (std::size_t r = 0; r < 3; ++r)
        if (den[r] > 0) {
          pull += kRelationPull[r] * acc[r] / den[r];
          wsum += kRelationPull[r];
        }
      const double consensus = wsum > 0 ? pull / wsum : x[v];
      const double drift = mean_at(v, static_cast<long long>(t) * 5) -
                           mean_at(v, static_cast<long long>(t - 1) * 5);
      nx[v] = std::max(0.0, 0.7 * x[v] + 0.3 * consensus + drift);
    }
    x.swap(nx);
    for (std::size_t v = 0; v < 8; ++v) REQUIRE(std::abs(sig.value_at(t * 8 + v) - x[v]) < 1e-9);
  }
}

TEST_CASE("diffusion series is stationary in mean after burn-in", "[datagen]") {
  SynthDiffusionSpec s;
  s.n_nodes = 20;
  s.n_edges = 80;
  s.t_len = 2016;
  s.seed = 7;
  DiffusionBundle b = gen_diffusion_task(s);
  const Tensor& sig = b.series.node_signal;
  // daily averages after discarding the first 10% stay within a few percent
  auto day_mean = [&](std::size_t day) {
    double acc = 0;
    for (std::size_t t = day * 288; t < (day + 1) * 288; ++t)
      for (std::size_t v = 0; v < 20; ++v) acc += sig.value_at(t * 20 + v);
    return acc / (288.0 * 20.0);
  };
  const double d1 = day_mean(1), d6 = day_mean(6);
  REQUIRE(std::abs(d1 - d6) / d1 < 0.05);
  for (std::size_t i = 0; i < sig.numel(); ++i) REQUIRE(sig.value_at(i) >= 0.0);
}

TEST_CASE("diffusion bundles round-trip with their forecast anchors", "[datagen]") {
  SynthDiffusionSpec s;
  s.n_nodes = 10;
  s.n_edges = 30;
  s.t_len = 8064;
  s.seed = 2;
  DiffusionBundle b = gen_diffusion_task(s);
  REQUIRE(b.train_t0.size() >= 30);
  REQUIRE(b.valid_t0.size() >= 10);
  REQUIRE(b.test_t0.size() >= 10);
  // anchors leave room for weekly history below and horizons above
  REQUIRE(b.train_t0.front() >= 10080 + 60);
  REQUIRE(b.test_t0.back() <= (8064 - 1) * 5 - 120);

  const auto dir = std::filesystem::temp_directory_path() / "comgnn_diff_bundle";
  std::filesystem::remove_all(dir);
  save_forecast_bundle(dir, b, s);
  save_forecast_bundle(dir.string() + "_dup", b, s);
  REQUIRE(same_dir_bytes(dir, dir.string() + "_dup"));
  ForecastBundle loaded = load_forecast_bundle(dir);
  REQUIRE(loaded.graph->num_edges() == 30);
  REQUIRE(loaded.data.train_t0 == b.train_t0);
  REQUIRE(loaded.data.valid_t0 == b.valid_t0);
  REQUIRE(loaded.data.test_t0 == b.test_t0);
  REQUIRE(loaded.data.series.node_signal.shape() == b.series.node_signal.shape());
  for (std::size_t i = 0; i < 200; ++i)
    REQUIRE(loaded.data.series.node_signal.value_at(i) ==
            Catch::Approx(b.series.node_signal.value_at(i)).margin(0));
  REQUIRE(loaded.data.series.edge_signal.dim(2) == 2);
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(dir.string() + "_dup");

  SynthDiffusionSpec bad = s;
  bad.frac_link = 0.5;
  REQUIRE_THROWS_AS(gen_diffusion_task(bad), std::invalid_argument);
}
