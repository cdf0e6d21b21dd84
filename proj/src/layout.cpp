// Licensed under the Apache License, Version 2.0 (the "License"); you may not use this file except in compliance
// with the License. You may obtain a copy of the License at
//
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software distributed under the License
// is distributed on an "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express
// or implied. See the License for the specific language governing permissions and limitations under the License.

#include "starseg/layout.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstring>
#include <fstream>
#include <numeric>
#include <thread>

namespace starseg {

LayoutGeometry layout_geometry(uint64_t n, size_t dim, ElemType elem, uint32_t max_degree,
                               uint64_t block_bytes) {
    if (n == 0) throw std::invalid_argument("geometry needs at least one vertex");
    if (dim == 0) throw std::invalid_argument("geometry needs a positive dimension");
    LayoutGeometry g;
    g.block_bytes = block_bytes;
    g.record_bytes = static_cast<uint64_t>(dim) * elem_size(elem) + 4 + 4ull * max_degree;
    if (g.record_bytes > block_bytes)
        throw std::invalid_argument("vertex record does not fit in one block");
    g.slots_per_block = static_cast<uint32_t>(block_bytes / g.record_bytes);
    g.num_blocks = (n + g.slots_per_block - 1) / g.slots_per_block;
    g.num_vertices = n;
    return g;
}

void validate_layout(const BlockLayout& layout) {
    const LayoutGeometry& g = layout.geom;
    uint64_t n = g.num_vertices;
    if (layout.block_of.size() != n || layout.slot_of.size() != n)
        throw std::runtime_error("layout maps do not cover every vertex");
    if (layout.blocks.size() != g.num_blocks)
        throw std::runtime_error("layout block count != geometry num_blocks");
    uint64_t assigned = 0;
    for (size_t b = 0; b < layout.blocks.size(); ++b) {
        const auto& occ = layout.blocks[b];
        if (occ.size() > g.slots_per_block) throw std::runtime_error("block over capacity");
        for (size_t s = 0; s < occ.size(); ++s) {
            vertex_id v = occ[s];
            if (v >= n) throw std::runtime_error("occupant id out of range");
            if (layout.block_of[v] != b || layout.slot_of[v] != s)
                throw std::runtime_error("occupant maps disagree with block lists");
        }
        assigned += occ.size();
    }
    if (assigned != n) throw std::runtime_error("layout does not assign every vertex exactly once");
}

BlockLayout sequential_layout(const LayoutGeometry& geom) {
    BlockLayout layout;
    layout.geom = geom;
    uint64_t n = geom.num_vertices;
    layout.block_of.resize(n);
    layout.slot_of.resize(n);
    layout.blocks.resize(geom.num_blocks);
    for (uint64_t v = 0; v < n; ++v) {
        uint32_t b = static_cast<uint32_t>(v / geom.slots_per_block);
        layout.block_of[v] = b;
        layout.slot_of[v] = static_cast<uint32_t>(v % geom.slots_per_block);
        layout.blocks[b].push_back(static_cast<vertex_id>(v));
    }
    return layout;
}

namespace {

// stamp[v] == epoch marks v as a member of the block under inspection
struct StampSet {
    std::vector<uint32_t> stamp;
    uint32_t epoch = 0;
    explicit StampSet(size_t n) : stamp(n, 0) {}
    void begin() { ++epoch; }
    void add(vertex_id v) { stamp[v] = epoch; }
    bool has(vertex_id v) const { return stamp[v] == epoch; }
};

size_t neighbors_in_block(const NeighborGraph& graph, const StampSet& members, vertex_id u) {
    size_t cnt = 0;
    for (vertex_id w : graph.adjacency[u])
        if (members.has(w)) ++cnt;
    return cnt;
}

}  // namespace

double or_vertex(const NeighborGraph& graph, const BlockLayout& layout, vertex_id u) {
    const auto& occ = layout.blocks[layout.block_of[u]];
    if (occ.size() <= 1) return 0.0;
    size_t cnt = 0;
    for (vertex_id v : occ) {
        if (v == u) continue;
        const auto& adj = graph.adjacency[u];
        if (std::find(adj.begin(), adj.end(), v) != adj.end()) ++cnt;
    }
    return static_cast<double>(cnt) / static_cast<double>(occ.size() - 1);
}

double or_block(const NeighborGraph& graph, const BlockLayout& layout, uint32_t block) {
    const auto& occ = layout.blocks[block];
    if (occ.empty()) return 0.0;
    double total = 0.0;
    for (vertex_id v : occ) total += or_vertex(graph, layout, v);
    return total / static_cast<double>(occ.size());
}

double or_graph(const NeighborGraph& graph, const BlockLayout& layout) {
    uint64_t n = layout.geom.num_vertices;
    StampSet members(n);
    double total = 0.0;
    for (const auto& occ : layout.blocks) {
        if (occ.size() <= 1) continue;  // lone occupants contribute 0
        members.begin();
        for (vertex_id v : occ) members.add(v);
        double denom = static_cast<double>(occ.size() - 1);
        for (vertex_id v : occ) {
            size_t cnt = neighbors_in_block(graph, members, v);
            // v itself is stamped but never in its own adjacency list
            total += static_cast<double>(cnt) / denom;
        }
    }
    return total / static_cast<double>(n);
}

ShuffleResult shuffle_bnp(const NeighborGraph& graph, const LayoutGeometry& geom) {
    auto t0 = std::chrono::steady_clock::now();
    uint64_t n = geom.num_vertices;
    if (graph.size() != n) throw std::invalid_argument("graph size != geometry vertex count");

    BlockLayout layout;
    layout.geom = geom;
    layout.block_of.assign(n, UINT32_MAX);
    layout.slot_of.assign(n, 0);
    layout.blocks.resize(geom.num_blocks);

    uint32_t cur = 0;
    auto place = [&](vertex_id v) {
        if (layout.blocks[cur].size() == geom.slots_per_block) ++cur;
        layout.block_of[v] = cur;
        layout.slot_of[v] = static_cast<uint32_t>(layout.blocks[cur].size());
        layout.blocks[cur].push_back(v);
    };

    for (uint64_t u = 0; u < n; ++u) {
        if (layout.block_of[u] != UINT32_MAX) continue;
        place(static_cast<vertex_id>(u));
        for (vertex_id w : graph.adjacency[u])
            if (layout.block_of[w] == UINT32_MAX) place(w);
    }

    ShuffleResult res;
    res.layout = std::move(layout);
    res.or_trace = {or_graph(graph, res.layout)};
    res.iterations = 1;
    res.algorithm = "bnp";
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

namespace {

/* One BNF reassignment pass. prev_block is the immutable snapshot; the new
 * occupancy counters are the only shared state, so the vertex range can be
 * sharded across threads. Returns the new vertex-to-block map. */
std::vector<uint32_t> bnf_pass(const NeighborGraph& graph, const std::vector<uint32_t>& prev_block,
                               const LayoutGeometry& geom, uint32_t threads) {
    uint64_t n = geom.num_vertices;
    uint64_t rho = geom.num_blocks;
    uint32_t eps = geom.slots_per_block;
    std::vector<uint32_t> next_block(n);

    if (threads <= 1) {
        std::vector<uint32_t> count(rho, 0), stamp(rho, 0);
        std::vector<uint32_t> occupancy(rho, 0);
        std::vector<uint32_t> touched;
        uint32_t epoch = 0;
        uint64_t cursor = 0;  // lowest possibly non-full block
        for (uint64_t u = 0; u < n; ++u) {
            ++epoch;
            touched.clear();
            for (vertex_id w : graph.adjacency[u]) {
                uint32_t b = prev_block[w];
                if (stamp[b] != epoch) {
                    stamp[b] = epoch;
                    count[b] = 0;
                    touched.push_back(b);
                }
                ++count[b];
            }
            uint32_t best = UINT32_MAX;
            uint32_t best_count = 0;
            for (uint32_t b : touched) {
                if (occupancy[b] >= eps) continue;
                if (count[b] > best_count || (count[b] == best_count && b < best)) {
                    best = b;
                    best_count = count[b];
                }
            }
            if (best == UINT32_MAX) {
                while (occupancy[cursor] >= eps) ++cursor;
                best = static_cast<uint32_t>(cursor);
            }
            next_block[u] = best;
            ++occupancy[best];
        }
        return next_block;
    }

    std::vector<std::atomic<uint32_t>> occupancy(rho);
    for (auto& o : occupancy) o.store(0, std::memory_order_relaxed);
    std::atomic<uint64_t> cursor{0};
    auto try_reserve = [&](uint32_t b) {
        if (occupancy[b].fetch_add(1, std::memory_order_relaxed) < eps) return true;
        occupancy[b].fetch_sub(1, std::memory_order_relaxed);
        return false;
    };

    std::atomic<uint64_t> next_u{0};
    auto worker = [&]() {
        std::vector<uint32_t> count(rho, 0), stamp(rho, 0);
        std::vector<uint32_t> touched;
        uint32_t epoch = 0;
        uint64_t u;
        while ((u = next_u.fetch_add(1)) < n) {
            ++epoch;
            touched.clear();
            for (vertex_id w : graph.adjacency[u]) {
                uint32_t b = prev_block[w];
                if (stamp[b] != epoch) {
                    stamp[b] = epoch;
                    count[b] = 0;
                    touched.push_back(b);
                }
                ++count[b];
            }
            std::sort(touched.begin(), touched.end(), [&](uint32_t a, uint32_t b) {
                return count[a] != count[b] ? count[a] > count[b] : a < b;
            });
            uint32_t chosen = UINT32_MAX;
            for (uint32_t b : touched) {
                if (try_reserve(b)) {
                    chosen = b;
                    break;
                }
            }
            while (chosen == UINT32_MAX) {
                uint64_t c = cursor.load(std::memory_order_relaxed);
                if (try_reserve(static_cast<uint32_t>(c))) {
                    chosen = static_cast<uint32_t>(c);
                } else {
                    cursor.compare_exchange_weak(c, c + 1, std::memory_order_relaxed);
                }
            }
            next_block[u] = chosen;
        }
    };
    std::vector<std::thread> pool;
    for (uint32_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    return next_block;
}

BlockLayout layout_from_map(const LayoutGeometry& geom, const std::vector<uint32_t>& block_of) {
    BlockLayout layout;
    layout.geom = geom;
    layout.block_of = block_of;
    layout.slot_of.resize(block_of.size());
    layout.blocks.resize(geom.num_blocks);
    for (uint64_t v = 0; v < block_of.size(); ++v) {
        uint32_t b = block_of[v];
        layout.slot_of[v] = static_cast<uint32_t>(layout.blocks[b].size());
        layout.blocks[b].push_back(static_cast<vertex_id>(v));
    }
    return layout;
}

}  // namespace

ShuffleResult shuffle_bnf(const NeighborGraph& graph, const BlockLayout& initial,
                          const ShuffleParams& params) {
    auto t0 = std::chrono::steady_clock::now();
    if (graph.size() != initial.geom.num_vertices)
        throw std::invalid_argument("graph size != layout vertex count");

    ShuffleResult res;
    res.algorithm = "bnf";
    res.or_trace.push_back(or_graph(graph, initial));

    std::vector<uint32_t> block_of = initial.block_of;
    BlockLayout current;
    for (uint32_t it = 0; it < params.beta; ++it) {
        block_of = bnf_pass(graph, block_of, initial.geom, params.threads);
        current = layout_from_map(initial.geom, block_of);
        res.or_trace.push_back(or_graph(graph, current));
        ++res.iterations;
        double gain = res.or_trace[res.iterations] - res.or_trace[res.iterations - 1];
        if (gain < params.tau) break;
    }
    res.layout = res.iterations ? std::move(current) : initial;
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

namespace {

/* Incremental BNS state. in_block_count[v] is the number of v's out-neighbors
 * sharing v's block; block_mass[b] is its per-block sum. All overlap
 * comparisons reduce to integer arithmetic on these counters, which keeps the
 * accept test exact. */
struct BnsState {
    const NeighborGraph& graph;
    BlockLayout layout;
    std::vector<uint32_t> in_block_count;
    std::vector<int64_t> block_mass;
    std::vector<std::vector<vertex_id>> sorted_adj;
    StampSet members;

    BnsState(const NeighborGraph& g, const BlockLayout& init)
        : graph(g), layout(init), members(g.size()) {
        sorted_adj.resize(g.size());
        for (size_t v = 0; v < g.size(); ++v) {
            sorted_adj[v] = g.adjacency[v];
            std::sort(sorted_adj[v].begin(), sorted_adj[v].end());
        }
        in_block_count.assign(g.size(), 0);
        block_mass.assign(layout.blocks.size(), 0);
        for (size_t b = 0; b < layout.blocks.size(); ++b) recount_block(static_cast<uint32_t>(b));
    }

    bool is_neighbor(vertex_id v, vertex_id w) const {
        return std::binary_search(sorted_adj[v].begin(), sorted_adj[v].end(), w);
    }

    void recount_block(uint32_t b) {
        const auto& occ = layout.blocks[b];
        members.begin();
        for (vertex_id v : occ) members.add(v);
        int64_t mass = 0;
        for (vertex_id v : occ) {
            uint32_t cnt = 0;
            for (vertex_id w : graph.adjacency[v])
                if (members.has(w)) ++cnt;
            in_block_count[v] = cnt;
            mass += cnt;
        }
        block_mass[b] = mass;
    }

    // lowest-OR occupant; equal counts resolve to the lower vertex id
    vertex_id argmin_occupant(uint32_t b) const {
        const auto& occ = layout.blocks[b];
        vertex_id best = occ[0];
        uint32_t best_cnt = in_block_count[best];
        for (vertex_id v : occ) {
            uint32_t c = in_block_count[v];
            if (c < best_cnt || (c == best_cnt && v < best)) {
                best = v;
                best_cnt = c;
            }
        }
        return best;
    }

    /* Overlap-mass delta of moving x out of A and y in (and vice versa for
     * E), as integer counter changes. */
    int64_t count_delta(uint32_t block, vertex_id out_v, vertex_id in_v) const {
        const auto& occ = layout.blocks[block];
        int64_t delta = 0;
        int64_t incoming = 0;
        for (vertex_id v : occ) {
            if (v == out_v) continue;
            if (is_neighbor(v, in_v)) ++delta;
            if (is_neighbor(v, out_v)) --delta;
            if (is_neighbor(in_v, v)) ++incoming;
        }
        delta += incoming - static_cast<int64_t>(in_block_count[out_v]);
        return delta;
    }

    bool swap_improves(uint32_t a_blk, uint32_t e_blk, vertex_id x, vertex_id y) const {
        int64_t da = count_delta(a_blk, x, y);
        int64_t de = count_delta(e_blk, y, x);
        size_t sa = layout.blocks[a_blk].size();
        size_t se = layout.blocks[e_blk].size();
        // per-vertex OR inside a block shares the denominator |B| - 1; a
        // single-occupant block contributes zero mass regardless
        int64_t za = sa > 1 ? da : 0;
        int64_t ze = se > 1 ? de : 0;
        int64_t denom_a = sa > 1 ? static_cast<int64_t>(sa - 1) : 1;
        int64_t denom_e = se > 1 ? static_cast<int64_t>(se - 1) : 1;
        return za * denom_e + ze * denom_a > 0;
    }

    void apply_swap(uint32_t a_blk, uint32_t e_blk, vertex_id x, vertex_id y) {
        uint32_t xs = layout.slot_of[x];
        uint32_t ys = layout.slot_of[y];
        layout.blocks[a_blk][xs] = y;
        layout.blocks[e_blk][ys] = x;
        layout.block_of[x] = e_blk;
        layout.block_of[y] = a_blk;
        layout.slot_of[x] = ys;
        layout.slot_of[y] = xs;
        recount_block(a_blk);
        recount_block(e_blk);
    }

    double or_value() const {
        double total = 0.0;
        for (size_t b = 0; b < layout.blocks.size(); ++b) {
            size_t sz = layout.blocks[b].size();
            if (sz > 1) total += static_cast<double>(block_mass[b]) / static_cast<double>(sz - 1);
        }
        return total / static_cast<double>(graph.size());
    }
};

}  // namespace

ShuffleResult shuffle_bns(const NeighborGraph& graph, const BlockLayout& initial,
                          const ShuffleParams& params) {
    auto t0 = std::chrono::steady_clock::now();
    if (graph.size() != initial.geom.num_vertices)
        throw std::invalid_argument("graph size != layout vertex count");

    BnsState st(graph, initial);
    ShuffleResult res;
    res.algorithm = "bns";
    res.or_trace.push_back(st.or_value());

    for (uint32_t it = 0; it < params.beta; ++it) {
        for (size_t u = 0; u < graph.size(); ++u) {
            const auto& nbrs = graph.adjacency[u];
            for (size_t i = 0; i < nbrs.size(); ++i) {
                for (size_t j = i + 1; j < nbrs.size(); ++j) {
                    uint32_t a_blk = st.layout.block_of[nbrs[i]];
                    uint32_t e_blk = st.layout.block_of[nbrs[j]];
                    if (a_blk == e_blk) continue;
                    vertex_id x = st.argmin_occupant(a_blk);
                    vertex_id y = st.argmin_occupant(e_blk);
                    if (st.swap_improves(a_blk, e_blk, x, y)) st.apply_swap(a_blk, e_blk, x, y);
                }
            }
        }
        res.or_trace.push_back(st.or_value());
        ++res.iterations;
        double gain = res.or_trace[res.iterations] - res.or_trace[res.iterations - 1];
        if (gain < params.tau) break;
    }

    res.layout = std::move(st.layout);
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

void save_layout(const std::string& path, const BlockLayout& layout) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot create " + path);
    uint64_t n = layout.geom.num_vertices;
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(reinterpret_cast<const char*>(&layout.geom.block_bytes), sizeof(uint64_t));
    out.write(reinterpret_cast<const char*>(&layout.geom.num_blocks), sizeof(uint64_t));
    out.write(reinterpret_cast<const char*>(&layout.geom.slots_per_block), sizeof(uint32_t));
    for (uint64_t v = 0; v < n; ++v) {
        out.write(reinterpret_cast<const char*>(&layout.block_of[v]), sizeof(uint32_t));
        out.write(reinterpret_cast<const char*>(&layout.slot_of[v]), sizeof(uint32_t));
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

BlockLayout load_layout(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    BlockLayout layout;
    uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    in.read(reinterpret_cast<char*>(&layout.geom.block_bytes), sizeof(uint64_t));
    in.read(reinterpret_cast<char*>(&layout.geom.num_blocks), sizeof(uint64_t));
    in.read(reinterpret_cast<char*>(&layout.geom.slots_per_block), sizeof(uint32_t));
    if (!in) throw std::runtime_error(path + ": truncated header");
    layout.geom.num_vertices = n;
    layout.block_of.resize(n);
    layout.slot_of.resize(n);
    layout.blocks.resize(layout.geom.num_blocks);
    std::vector<std::pair<uint32_t, uint32_t>> pos(n);
    for (uint64_t v = 0; v < n; ++v) {
        in.read(reinterpret_cast<char*>(&pos[v].first), sizeof(uint32_t));
        in.read(reinterpret_cast<char*>(&pos[v].second), sizeof(uint32_t));
        if (!in) throw std::runtime_error(path + ": truncated entries");
        layout.block_of[v] = pos[v].first;
        layout.slot_of[v] = pos[v].second;
    }
    for (auto& blk : layout.blocks) blk.clear();
    for (uint64_t v = 0; v < n; ++v) {
        uint32_t b = pos[v].first;
        if (b >= layout.blocks.size()) throw std::runtime_error(path + ": block id out of range");
        layout.blocks[b].resize(std::max<size_t>(layout.blocks[b].size(), pos[v].second + 1));
        layout.blocks[b][pos[v].second] = static_cast<vertex_id>(v);
    }
    validate_layout(layout);
    return layout;
}

}  // namespace starseg
