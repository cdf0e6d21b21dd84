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

#include "starseg/graph.hpp"
#include "starseg/types.hpp"

namespace starseg {

/* Fixed block geometry of a disk segment. A vertex record holds the vector,
 * a neighbor count and max_degree neighbor slots, so
 *   record_bytes = dim * elem_size + 4 + 4 * max_degree,
 * slots_per_block = block_bytes / record_bytes (records never straddle a
 * block boundary) and num_blocks = ceil(n / slots_per_block). */
struct LayoutGeometry {
    uint64_t block_bytes = 0;     // eta
    uint64_t record_bytes = 0;    // gamma
    uint32_t slots_per_block = 0; // epsilon
    uint64_t num_blocks = 0;      // rho
    uint64_t num_vertices = 0;
};

LayoutGeometry layout_geometry(uint64_t n, size_t dim, ElemType elem, uint32_t max_degree,
                               uint64_t block_bytes);

/* Assignment of every vertex to a (block, slot) pair. blocks[b][s] is the
 * vertex at slot s; block_of/slot_of are the inverse. The assignment is a
 * bijection onto the occupied slots: exactly num_blocks blocks, none holding
 * more than slots_per_block vertices. */
struct BlockLayout {
    LayoutGeometry geom;
    std::vector<uint32_t> block_of;
    std::vector<uint32_t> slot_of;
    std::vector<std::vector<vertex_id>> blocks;
};

// Throws if the layout breaks any structural invariant.
void validate_layout(const BlockLayout& layout);

// Identity order: vertex v sits in block v / epsilon, slot v % epsilon.
BlockLayout sequential_layout(const LayoutGeometry& geom);

/* Overlap ratio of one vertex: the fraction of its block's other slots
 * occupied by its out-neighbors, |B(u) cap N(u)| / (|B(u)| - 1), and 0 for a
 * vertex alone in its block. or_graph averages over all vertices. */
double or_vertex(const NeighborGraph& graph, const BlockLayout& layout, vertex_id u);
double or_graph(const NeighborGraph& graph, const BlockLayout& layout);

// Mean vertex overlap ratio inside one block.
double or_block(const NeighborGraph& graph, const BlockLayout& layout, uint32_t block);

struct ShuffleParams {
    uint32_t beta = 8;    // iteration cap
    double tau = 0.01;    // minimum OR(G) gain to keep iterating
    uint32_t threads = 1; // BNF only; 1 is deterministic
};

struct ShuffleResult {
    BlockLayout layout;
    std::vector<double> or_trace;  // OR(G) of the input layout, then after each iteration
    uint32_t iterations = 0;
    double seconds = 0.0;
    std::string algorithm;
};

/* Greedy padding: scan vertices in ascending id; an unassigned vertex is
 * appended to the current block followed by its still-unassigned neighbors in
 * adjacency order, opening the next block whenever the current one fills. */
ShuffleResult shuffle_bnp(const NeighborGraph& graph, const LayoutGeometry& geom);

/* Block neighbor frequency: each iteration snapshots the previous
 * vertex-to-block map, empties the blocks, then reassigns every vertex in
 * ascending id to the non-full block holding most of its neighbors under the
 * snapshot (ties toward the lower block id; fallback is the lowest-indexed
 * non-full block). Stops after beta iterations or when the OR(G) gain drops
 * below tau. */
ShuffleResult shuffle_bnf(const NeighborGraph& graph, const BlockLayout& initial,
                          const ShuffleParams& params);

/* Block neighbor swap: for every vertex u and unordered pair (a, e) of its
 * neighbors living in different blocks, take the lowest-OR occupant of each
 * block (ties toward the lower id) and swap them iff the overlap mass of the
 * two blocks strictly increases. OR(G) never decreases across iterations. */
ShuffleResult shuffle_bns(const NeighborGraph& graph, const BlockLayout& initial,
                          const ShuffleParams& params);

/* Layout cache file: u64 n, u64 block_bytes, u64 num_blocks, u32
 * slots_per_block, then per vertex u32 block and u32 slot. Little-endian. */
void save_layout(const std::string& path, const BlockLayout& layout);
BlockLayout load_layout(const std::string& path);

}  // namespace starseg
