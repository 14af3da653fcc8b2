#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "comgnn/hetgraph.hpp"

using namespace comgnn;
namespace fs = std::filesystem;

namespace {

// driver -> route "create", route -> order "consider" toy graph
HeteroGraph toy_graph() {
  HeteroGraph g;
  auto driver = g.add_node_type("driver", 2);
  auto route = g.add_node_type("route", 1);
  auto order = g.add_node_type("order", 3);
  auto create = g.add_edge_type("create", driver, route, 1);
  auto consider = g.add_edge_type("consider", route, order, 2);
  g.add_node(driver, {1.0, 2.0});           // gid 0
  g.add_node(route, {3.0});                 // gid 1
  g.add_node(route, {4.0});                 // gid 2
  g.add_node(order, {5.0, 6.0, 7.0});       // gid 3
  g.add_node(order, {8.0, 9.0, 10.0});      // gid 4
  g.add_edge(create, 0, 1, {0.5});          // eid 0
  g.add_edge(create, 0, 2, {0.25});         // eid 1
  g.add_edge(consider, 1, 3, {1.5, 2.5});   // eid 2
  g.add_edge(consider, 1, 4, {3.5, 4.5});   // eid 3
  g.finalize();
  return g;
}

bool same_structure(const HeteroGraph& a, const HeteroGraph& b) {
  if (a.num_nodes() != b.num_nodes() || a.num_edges() != b.num_edges() ||
      a.num_node_types() != b.num_node_types() || a.num_edge_types() != b.num_edge_types())
    return false;
  for (std::size_t t = 0; t < a.num_node_types(); ++t) {
    if (a.node_type(t).name != b.node_type(t).name) return false;
    if (a.node_attr_matrix(t) != b.node_attr_matrix(t)) return false;
  }
  for (std::size_t t = 0; t < a.num_edge_types(); ++t) {
    const auto &ea = a.edge_type(t), &eb = b.edge_type(t);
    if (ea.name != eb.name || ea.src_type != eb.src_type || ea.dst_type != eb.dst_type)
      return false;
    if (a.edge_attr_matrix(t) != b.edge_attr_matrix(t)) return false;
  }
  for (std::size_t e = 0; e < a.num_edges(); ++e)
    if (a.edge_src(e) != b.edge_src(e) || a.edge_dst(e) != b.edge_dst(e) ||
        a.edge_type_of(e) != b.edge_type_of(e))
      return false;
  return true;
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("ids are global and contiguous per type", "[hetgraph]") {
  HeteroGraph g = toy_graph();
  REQUIRE(g.num_nodes() == 5);
  REQUIRE(g.num_edges() == 4);
  REQUIRE(g.node_type_offset(1) == 1);
  REQUIRE(g.node_type_offset(2) == 3);
  REQUIRE(g.node_type_of(3) == 2);
  REQUIRE(g.node_local(4) == 1);
  REQUIRE(g.edge_type_offset(1) == 2);
  REQUIRE(g.edge_local(3) == 1);
}

TEST_CASE("incidence covers both directions, sorted by edge id", "[hetgraph]") {
  HeteroGraph g = toy_graph();
  const auto& at_route1 = g.incident_edges(1);
  REQUIRE(at_route1.size() == 3);
  REQUIRE(at_route1[0].edge == 0);
  REQUIRE_FALSE(at_route1[0].is_src);
  REQUIRE(at_route1[0].other == 0);
  REQUIRE(at_route1[1].edge == 2);
  REQUIRE(at_route1[1].is_src);
  REQUIRE(at_route1[2].edge == 3);

  std::size_t total = 0;
  for (std::size_t v = 0; v < g.num_nodes(); ++v) total += g.incident_edges(v).size();
  REQUIRE(total == 2 * g.num_edges());
  REQUIRE_THROWS(g.incident_edges(99));
}

TEST_CASE("self-loops are listed once with src flag", "[hetgraph]") {
  HeteroGraph g;
  auto n = g.add_node_type("n", 1);
  auto r = g.add_edge_type("r", n, n, 0);
  g.add_node(n, {1.0});
  g.add_node(n, {2.0});
  g.add_edge(r, 0, 0, {});
  g.add_edge(r, 0, 1, {});
  g.finalize();
  const auto& inc = g.incident_edges(0);
  REQUIRE(inc.size() == 2);
  REQUIRE(inc[0].edge == 0);
  REQUIRE(inc[0].is_src);
  REQUIRE(inc[0].other == 0);

  std::size_t total = 0;
  for (std::size_t v = 0; v < g.num_nodes(); ++v) total += g.incident_edges(v).size();
  REQUIRE(total == 2 * g.num_edges() - 1);  // one self-loop counted once
}

TEST_CASE("meta knowledge concatenates src, edge, dst attributes", "[hetgraph]") {
  HeteroGraph g;
  auto a = g.add_node_type("a", 1);
  auto b = g.add_node_type("b", 1);
  auto r = g.add_edge_type("r", a, b, 2);
  auto bare = g.add_edge_type("bare", a, b, 0);
  g.add_node(a, {1.0});
  g.add_node(b, {4.0});
  g.add_edge(r, 0, 1, {2.0, 3.0});
  g.add_edge(bare, 0, 1, {});
  g.finalize();
  REQUIRE(g.meta_knowledge(0) == std::vector<double>{1.0, 2.0, 3.0, 4.0});
  REQUIRE(g.meta_knowledge(1) == std::vector<double>{1.0, 4.0});
  REQUIRE(g.meta_knowledge(0) == g.meta_knowledge(0));
  REQUIRE(g.meta_knowledge_dim(r) == 4);
}

TEST_CASE("construction rejects malformed input", "[hetgraph]") {
  HeteroGraph g;
  auto a = g.add_node_type("a", 1);
  REQUIRE_THROWS_AS(g.add_node_type("a", 2), DataError);
  auto b = g.add_node_type("b", 0);
  auto r = g.add_edge_type("r", a, b, 1);
  REQUIRE_THROWS_AS(g.add_edge_type("r", a, b, 1), DataError);
  g.add_node(a, {1.0});
  REQUIRE_THROWS_AS(g.add_node(a, {1.0, 2.0}), DataError);
  g.add_node(b, {});
  REQUIRE_THROWS_AS(g.add_node(a, {2.0}), DataError);  // type order violated
  REQUIRE_THROWS_AS(g.add_edge(r, 0, 7, {0.0}), DataError);
  REQUIRE_THROWS_AS(g.add_edge(r, 1, 0, {0.0}), DataError);  // endpoint types swapped
  REQUIRE_THROWS_AS(g.add_edge(r, 0, 1, {}), DataError);
}

TEST_CASE("reverse relations mirror edges and preserve ids", "[hetgraph]") {
  HeteroGraph g = toy_graph();
  HeteroGraph r = add_reverse_relations(g);
  REQUIRE(r.num_edges() == 2 * g.num_edges());
  REQUIRE(r.num_edge_types() == 4);
  REQUIRE(r.edge_type(2).name == "create_rev");
  REQUIRE(r.edge_type(3).name == "consider_rev");
  REQUIRE(r.edge_type(2).src_type == g.edge_type(0).dst_type);
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    REQUIRE(r.edge_src(e) == g.edge_src(e));
    REQUIRE(r.edge_dst(e) == g.edge_dst(e));
  }
  // mirrored copies carry the same attributes with swapped endpoints
  REQUIRE(r.edge_src(4) == g.edge_dst(0));
  REQUIRE(r.edge_dst(4) == g.edge_src(0));
  REQUIRE(r.edge_attr_matrix(2) == g.edge_attr_matrix(0));

  HeteroGraph rr = add_reverse_relations(r);
  REQUIRE(same_structure(rr, r));

  HeteroGraph empty;
  empty.finalize();
  REQUIRE(add_reverse_relations(empty).num_edges() == 0);
}

TEST_CASE("collapse_types erases heterogeneity and zero-pads", "[hetgraph]") {
  HeteroGraph g = toy_graph();
  HeteroGraph c = collapse_types(g);
  REQUIRE(c.num_node_types() == 1);
  REQUIRE(c.num_edge_types() == 1);
  REQUIRE(c.num_nodes() == g.num_nodes());
  REQUIRE(c.num_edges() == g.num_edges());
  REQUIRE(c.node_type(0).attr_dim == 3);
  REQUIRE(c.edge_type(0).attr_dim == 2);
  // route gid 1 had attrs [3]; padded to [3,0,0]
  const double* row = c.node_attr_row(1);
  REQUIRE(row[0] == 3.0);
  REQUIRE(row[1] == 0.0);
  REQUIRE(row[2] == 0.0);
  for (std::size_t e = 0; e < g.num_edges(); ++e) {
    REQUIRE(c.edge_src(e) == g.edge_src(e));
    REQUIRE(c.edge_dst(e) == g.edge_dst(e));
  }
}

TEST_CASE("layer zero states mirror the raw attributes", "[hetgraph]") {
  HeteroGraph g = toy_graph();
  StateSet s = init_states(g);
  REQUIRE(s.layer == 0);
  REQUIRE(s.node_states.size() == 3);
  REQUIRE(s.node_states[2].shape() == Shape{2, 3});
  REQUIRE(s.node_states[2].values() == g.node_attr_matrix(2));
  REQUIRE(s.edge_states[1].shape() == Shape{2, 2});
  REQUIRE(s.edge_states[1].values() == g.edge_attr_matrix(1));
}

TEST_CASE("bundle save and load round-trips", "[hetgraph]") {
  HeteroGraph g = toy_graph();
  fs::path dir = fresh_dir("comgnn_bundle_rt");
  save_graph(g, dir);
  HeteroGraph back = load_graph(dir);
  REQUIRE(same_structure(g, back));
  // and the copy loads identically again after a second save
  fs::path dir2 = fresh_dir("comgnn_bundle_rt2");
  save_graph(back, dir2);
  REQUIRE(same_structure(load_graph(dir2), g));
}

TEST_CASE("loader reports corrupt bundles with location", "[hetgraph]") {
  HeteroGraph g = toy_graph();

  SECTION("missing schema") {
    fs::path dir = fresh_dir("comgnn_bundle_bad0");
    REQUIRE_THROWS_AS(load_graph(dir), DataError);
  }
  SECTION("dangling endpoint") {
    fs::path dir = fresh_dir("comgnn_bundle_bad1");
    save_graph(g, dir);
    std::ofstream f(dir / "edges_create.csv");
    f << "edge_id,src,dst,a0\n0,0,99,0.5\n1,0,2,0.25\n";
    f.close();
    try {
      load_graph(dir);
      FAIL("expected DataError");
    } catch (const DataError& ex) {
      REQUIRE(std::string(ex.what()).find("edges_create.csv:2") != std::string::npos);
    }
  }
  SECTION("id gap") {
    fs::path dir = fresh_dir("comgnn_bundle_bad2");
    save_graph(g, dir);
    std::ofstream f(dir / "nodes_driver.csv");
    f << "global_id,a0,a1\n5,1,2\n";
    f.close();
    REQUIRE_THROWS_AS(load_graph(dir), DataError);
  }
  SECTION("missing attribute column") {
    fs::path dir = fresh_dir("comgnn_bundle_bad3");
    save_graph(g, dir);
    std::ofstream f(dir / "nodes_driver.csv");
    f << "global_id,a0\n0,1\n";
    f.close();
    REQUIRE_THROWS_AS(load_graph(dir), DataError);
  }
  SECTION("non-numeric field") {
    fs::path dir = fresh_dir("comgnn_bundle_bad4");
    save_graph(g, dir);
    std::ofstream f(dir / "nodes_route.csv");
    f << "global_id,a0\n1,3\n2,oops\n";
    f.close();
    REQUIRE_THROWS_AS(load_graph(dir), DataError);
  }
  SECTION("endpoint of wrong type") {
    fs::path dir = fresh_dir("comgnn_bundle_bad5");
    save_graph(g, dir);
    std::ofstream f(dir / "edges_create.csv");
    f << "edge_id,src,dst,a0\n0,3,1,0.5\n1,0,2,0.25\n";
    f.close();
    REQUIRE_THROWS_AS(load_graph(dir), DataError);
  }
}
