// Licensed under the Apache License, Version 2.0 (the "License"); you may not use this file except in compliance
// with the License. You may obtain a copy of the License at
//
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software distributed under the License
// is distributed on an "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express
// or implied. See the License for the specific language governing permissions and limitations under the License.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "starseg/dataset.hpp"
#include "starseg/types.hpp"

namespace starseg {

/* Directed bounded-degree proximity graph. Adjacency lists never contain
 * self-loops or duplicates and every list is capped at max_degree. */
struct NeighborGraph {
    uint32_t max_degree = 0;
    vertex_id entry = 0;  // medoid used as the search entry point
    std::vector<std::vector<vertex_id>> adjacency;

    size_t size() const { return adjacency.size(); }
};

struct BuildParams {
    uint32_t max_degree = 48;   // per-vertex out-degree cap
    uint32_t build_list = 128;  // search list size during insertion, >= max_degree
    float alpha = 1.2f;         // second-pass pruning slack, >= 1
    uint64_t seed = 42;
    uint32_t threads = 1;       // 1 = fully deterministic build
};

struct SearchResult {
    std::vector<Neighbor> nearest;  // k best visited, ascending (dist, id)
    std::vector<Neighbor> visited;  // every expanded vertex with its distance
};

/* Beam search over the in-memory graph with list size L. Starts from the
 * given seeds (entry point when empty), repeatedly expands the closest
 * unexpanded candidate, and returns the k nearest expanded vertices plus the
 * full expansion trace. Ties break toward the lower id. */
SearchResult greedy_vertex_search(const NeighborGraph& graph, const VectorDataset& data,
                                  const float* query, uint32_t list_size, uint32_t k,
                                  const std::vector<vertex_id>& seeds = {});

/* Distance-diverse pruning: repeatedly keep the closest remaining candidate c
 * and discard every other d with alpha * dist(c, d) <= dist(p, d), until
 * max_degree survivors. Candidates must not contain p itself. An alpha of
 * +infinity keeps the nearest max_degree candidates unchanged. */
std::vector<vertex_id> robust_prune(const VectorDataset& data, vertex_id p,
                                    std::vector<Neighbor> candidates, uint32_t max_degree,
                                    float alpha);

/* Two-pass incremental graph construction: pass one inserts every vertex in a
 * seeded random order with alpha = 1.0, pass two re-inserts with the
 * requested alpha. Each insertion searches for the vertex, prunes the visited
 * set, then adds reverse edges (re-pruning any neighbor that overflows). The
 * entry point is the medoid of a fixed-seed sample of up to 1,000 vectors.
 * Finishes by patching any vertex unreachable from the entry. */
NeighborGraph build_vamana(const VectorDataset& data, const BuildParams& params);

// Medoid of the sample: the dataset vector minimizing total distance to it.
vertex_id find_medoid(const VectorDataset& data, uint64_t seed);

double avg_out_degree(const NeighborGraph& graph);

// True when every vertex is reachable from graph.entry.
bool entry_reaches_all(const NeighborGraph& graph);

/* In-memory navigation graph over a sampled subset. ids maps sampled vertex
 * -> base vertex; data holds the sampled vectors so searches run without
 * touching the disk segment. */
struct NavigationGraph {
    NeighborGraph graph;
    std::vector<vertex_id> ids;
    VectorDataset data;
    double mu = 0.0;
};

NavigationGraph build_navigation(const VectorDataset& data, double mu, const BuildParams& params);

/* Graph cache file: u32 |V|, u32 max_degree, u32 entry, then per vertex a
 * u32 neighbor count followed by that many u32 ids. Little-endian. */
void save_graph(const std::string& path, const NeighborGraph& graph);
NeighborGraph load_graph(const std::string& path);

/* Navigation file: the graph section as above, then per sampled vertex its
 * base id (u32), then a vector section (u32 dim, u8 elem, u8 metric, f64 mu,
 * raw row-major payload). */
void save_navigation(const std::string& path, const NavigationGraph& nav);
NavigationGraph load_navigation(const std::string& path);

}  // namespace starseg
