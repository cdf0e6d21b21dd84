// Licensed under the Apache License, Version 2.0 (the "License"); you may not use this file except in compliance
// with the License. You may obtain a copy of the License at
//
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software distributed under the License
// is distributed on an "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express
// or implied. See the License for the specific language governing permissions and limitations under the License.

#include "starseg/graph.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

namespace starseg {

namespace {

constexpr uint64_t kMedoidSampleSeed = 0x5a17;
constexpr size_t kMedoidSampleSize = 1000;

/* Epoch-stamped membership set: O(1) insert/test, O(1) reset between
 * searches. Avoids hashing in the hot search loop. */
struct VisitStamps {
    std::vector<uint32_t> stamp;
    uint32_t epoch = 0;

    explicit VisitStamps(size_t n) : stamp(n, 0) {}

    void reset() { ++epoch; }
    bool test_and_set(vertex_id v) {
        if (stamp[v] == epoch) return true;
        stamp[v] = epoch;
        return false;
    }
};

struct BeamEntry {
    float dist;
    vertex_id id;
    bool expanded;
};

inline bool beam_less(const BeamEntry& a, const BeamEntry& b) {
    return a.dist != b.dist ? a.dist < b.dist : a.id < b.id;
}

/* Fixed-capacity list sorted by (dist, id). Inserting past capacity drops the
 * current worst entry. cur_ tracks the best unexpanded slot. */
class BeamQueue {
public:
    explicit BeamQueue(size_t capacity) : cap_(capacity) { items_.reserve(capacity + 1); }

    bool insert(float dist, vertex_id id) {
        BeamEntry e{dist, id, false};
        if (items_.size() == cap_ && !beam_less(e, items_.back())) return false;
        auto pos = std::lower_bound(items_.begin(), items_.end(), e, beam_less);
        size_t idx = static_cast<size_t>(pos - items_.begin());
        items_.insert(pos, e);
        if (items_.size() > cap_) items_.pop_back();
        if (idx < cur_) cur_ = idx;
        return true;
    }

    bool has_unexpanded() {
        while (cur_ < items_.size() && items_[cur_].expanded) ++cur_;
        return cur_ < items_.size();
    }

    BeamEntry& next_unexpanded() { return items_[cur_]; }

    const std::vector<BeamEntry>& items() const { return items_; }

private:
    size_t cap_;
    size_t cur_ = 0;
    std::vector<BeamEntry> items_;
};

SearchResult greedy_search_impl(const NeighborGraph& graph, const VectorDataset& data,
                                const float* query, uint32_t list_size, uint32_t k,
                                const std::vector<vertex_id>& seeds, VisitStamps& seen) {
    seen.reset();
    BeamQueue beam(list_size);
    SearchResult out;

    auto push = [&](vertex_id v) {
        if (!seen.test_and_set(v)) beam.insert(distance_to(data, v, query), v);
    };
    if (seeds.empty()) {
        push(graph.entry);
    } else {
        for (vertex_id s : seeds) push(s);
    }

    while (beam.has_unexpanded()) {
        BeamEntry& e = beam.next_unexpanded();
        e.expanded = true;
        out.visited.push_back({e.id, e.dist});
        for (vertex_id w : graph.adjacency[e.id]) push(w);
    }

    std::sort(out.visited.begin(), out.visited.end(), [](const Neighbor& a, const Neighbor& b) {
        return a.dist != b.dist ? a.dist < b.dist : a.id < b.id;
    });
    size_t keep = std::min<size_t>(k, out.visited.size());
    out.nearest.assign(out.visited.begin(), out.visited.begin() + keep);
    return out;
}

}  // namespace

SearchResult greedy_vertex_search(const NeighborGraph& graph, const VectorDataset& data,
                                  const float* query, uint32_t list_size, uint32_t k,
                                  const std::vector<vertex_id>& seeds) {
    if (graph.size() != data.size()) throw std::invalid_argument("graph/dataset size mismatch");
    if (list_size == 0) throw std::invalid_argument("search list size must be positive");
    VisitStamps seen(data.size());
    return greedy_search_impl(graph, data, query, list_size, k, seeds, seen);
}

std::vector<vertex_id> robust_prune(const VectorDataset& data, vertex_id p,
                                    std::vector<Neighbor> candidates, uint32_t max_degree,
                                    float alpha) {
    if (alpha < 1.0f) throw std::invalid_argument("alpha must be >= 1");
    std::sort(candidates.begin(), candidates.end(), [](const Neighbor& a, const Neighbor& b) {
        return a.dist != b.dist ? a.dist < b.dist : a.id < b.id;
    });
    {
        std::vector<vertex_id> seen_ids;
        seen_ids.reserve(candidates.size());
        auto keep_end = std::remove_if(candidates.begin(), candidates.end(), [&](const Neighbor& c) {
            if (c.id == p) return true;
            if (std::find(seen_ids.begin(), seen_ids.end(), c.id) != seen_ids.end()) return true;
            seen_ids.push_back(c.id);
            return false;
        });
        candidates.erase(keep_end, candidates.end());
    }

    std::vector<vertex_id> result;
    result.reserve(max_degree);
    std::vector<Neighbor> alive = std::move(candidates);
    bool truncate_only = std::isinf(alpha);

    while (!alive.empty() && result.size() < max_degree) {
        Neighbor c = alive.front();
        result.push_back(c.id);
        if (result.size() == max_degree) break;
        if (truncate_only) {
            alive.erase(alive.begin());
            continue;
        }
        std::vector<Neighbor> next;
        next.reserve(alive.size());
        for (size_t i = 1; i < alive.size(); ++i) {
            const Neighbor& d = alive[i];
            if (alpha * distance(data, c.id, d.id) > d.dist) next.push_back(d);
        }
        alive = std::move(next);
    }
    return result;
}

namespace {

std::vector<vertex_id> fixed_sample(size_t n, size_t m, uint64_t seed) {
    std::vector<vertex_id> pool(n);
    std::iota(pool.begin(), pool.end(), 0u);
    if (m >= n) return pool;
    std::mt19937_64 rng(seed);
    for (size_t i = 0; i < m; ++i) {
        std::uniform_int_distribution<size_t> pick(i, n - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(m);
    return pool;
}

}  // namespace

vertex_id find_medoid(const VectorDataset& data, uint64_t seed) {
    std::vector<vertex_id> sample = fixed_sample(data.size(), kMedoidSampleSize, seed);
    double best = std::numeric_limits<double>::infinity();
    vertex_id best_id = 0;
    for (size_t v = 0; v < data.size(); ++v) {
        double total = 0.0;
        for (vertex_id s : sample) total += distance(data, v, s);
        if (total < best) {
            best = total;
            best_id = static_cast<vertex_id>(v);
        }
    }
    return best_id;
}

namespace {

struct BuildState {
    const VectorDataset& data;
    const BuildParams& params;
    NeighborGraph& graph;
    std::vector<std::mutex> locks;

    BuildState(const VectorDataset& d, const BuildParams& p, NeighborGraph& g)
        : data(d), params(p), graph(g), locks(p.threads > 1 ? d.size() : 0) {}

    std::vector<vertex_id> neighbors_of(vertex_id v) {
        if (locks.empty()) return graph.adjacency[v];
        std::lock_guard<std::mutex> hold(locks[v]);
        return graph.adjacency[v];
    }

    template <typename Fn>
    void update(vertex_id v, Fn&& fn) {
        if (locks.empty()) {
            fn(graph.adjacency[v]);
        } else {
            std::lock_guard<std::mutex> hold(locks[v]);
            fn(graph.adjacency[v]);
        }
    }
};

void insert_vertex(BuildState& st, vertex_id u, float alpha, VisitStamps& seen,
                   std::vector<float>& qbuf) {
    const VectorDataset& data = st.data;
    data.decode(u, qbuf.data());
    SearchResult found = greedy_search_impl(st.graph, data, qbuf.data(), st.params.build_list, 1,
                                            {st.graph.entry}, seen);

    std::vector<Neighbor> cands;
    cands.reserve(found.visited.size() + st.params.max_degree);
    for (const Neighbor& nb : found.visited)
        if (nb.id != u) cands.push_back(nb);
    for (vertex_id w : st.neighbors_of(u))
        cands.push_back({w, distance(data, u, w)});

    std::vector<vertex_id> pruned = robust_prune(data, u, std::move(cands), st.params.max_degree, alpha);
    st.update(u, [&](std::vector<vertex_id>& adj) { adj = pruned; });

    for (vertex_id w : pruned) {
        st.update(w, [&](std::vector<vertex_id>& adj) {
            if (std::find(adj.begin(), adj.end(), u) != adj.end()) return;
            if (adj.size() < st.params.max_degree) {
                adj.push_back(u);
                return;
            }
            std::vector<Neighbor> pool;
            pool.reserve(adj.size() + 1);
            for (vertex_id x : adj) pool.push_back({x, distance(data, w, x)});
            pool.push_back({u, distance(data, w, u)});
            adj = robust_prune(data, w, std::move(pool), st.params.max_degree, alpha);
        });
    }
}

std::vector<bool> reachable_set(const NeighborGraph& graph) {
    std::vector<bool> reached(graph.size(), false);
    std::deque<vertex_id> frontier{graph.entry};
    reached[graph.entry] = true;
    while (!frontier.empty()) {
        vertex_id v = frontier.front();
        frontier.pop_front();
        for (vertex_id w : graph.adjacency[v]) {
            if (!reached[w]) {
                reached[w] = true;
                frontier.push_back(w);
            }
        }
    }
    return reached;
}

/* Attach vertices the entry cannot reach. Each orphan gets an in-edge from
 * the closest reachable vertex, evicting that vertex's farthest neighbor if
 * its list is full. Re-checks from scratch each round because an eviction can
 * orphan somebody else. */
void repair_connectivity(const VectorDataset& data, NeighborGraph& graph, uint32_t list_size) {
    VisitStamps seen(data.size());
    std::vector<float> qbuf(data.dim());
    for (int round = 0; round < 16; ++round) {
        std::vector<bool> reached = reachable_set(graph);
        bool all = std::all_of(reached.begin(), reached.end(), [](bool b) { return b; });
        if (all) return;
        for (size_t u = 0; u < graph.size(); ++u) {
            if (reached[u]) continue;
            data.decode(u, qbuf.data());
            SearchResult found =
                greedy_search_impl(graph, data, qbuf.data(), list_size, list_size, {graph.entry}, seen);
            vertex_id host = graph.entry;
            bool host_has_room = false;
            for (const Neighbor& nb : found.visited) {
                if (nb.id == u) continue;
                if (graph.adjacency[nb.id].size() < graph.max_degree) {
                    host = nb.id;
                    host_has_room = true;
                    break;
                }
                if (!host_has_room && host == graph.entry) host = nb.id;
            }
            std::vector<vertex_id>& adj = graph.adjacency[host];
            if (std::find(adj.begin(), adj.end(), u) != adj.end()) continue;
            if (adj.size() < graph.max_degree) {
                adj.push_back(static_cast<vertex_id>(u));
            } else {
                size_t worst = 0;
                float worst_d = -std::numeric_limits<float>::infinity();
                for (size_t i = 0; i < adj.size(); ++i) {
                    float d = distance(data, host, adj[i]);
                    if (d > worst_d) {
                        worst_d = d;
                        worst = i;
                    }
                }
                adj[worst] = static_cast<vertex_id>(u);
            }
            reached[u] = true;  // reachable via host from now on
        }
    }
    if (!entry_reaches_all(graph)) throw std::runtime_error("connectivity repair did not converge");
}

}  // namespace

NeighborGraph build_vamana(const VectorDataset& data, const BuildParams& params) {
    if (data.size() == 0) throw std::invalid_argument("cannot build over an empty dataset");
    if (params.max_degree == 0) throw std::invalid_argument("max_degree must be positive");
    if (params.build_list < params.max_degree)
        throw std::invalid_argument("build_list must be >= max_degree");
    if (params.alpha < 1.0f) throw std::invalid_argument("alpha must be >= 1");

    NeighborGraph graph;
    graph.max_degree = params.max_degree;
    graph.adjacency.assign(data.size(), {});
    graph.entry = find_medoid(data, kMedoidSampleSeed);

    std::vector<vertex_id> order(data.size());
    std::iota(order.begin(), order.end(), 0u);
    std::mt19937_64 rng(params.seed);
    std::shuffle(order.begin(), order.end(), rng);

    BuildState st(data, params, graph);
    const float pass_alpha[2] = {1.0f, params.alpha};
    for (float alpha : pass_alpha) {
        if (params.threads <= 1) {
            VisitStamps seen(data.size());
            std::vector<float> qbuf(data.dim());
            for (vertex_id u : order) insert_vertex(st, u, alpha, seen, qbuf);
        } else {
            std::vector<std::thread> workers;
            std::atomic<size_t> cursor{0};
            for (uint32_t t = 0; t < params.threads; ++t) {
                workers.emplace_back([&]() {
                    VisitStamps seen(data.size());
                    std::vector<float> qbuf(data.dim());
                    size_t i;
                    while ((i = cursor.fetch_add(1)) < order.size())
                        insert_vertex(st, order[i], alpha, seen, qbuf);
                });
            }
            for (auto& w : workers) w.join();
        }
    }

    repair_connectivity(data, graph, params.build_list);
    return graph;
}

double avg_out_degree(const NeighborGraph& graph) {
    if (graph.size() == 0) return 0.0;
    size_t total = 0;
    for (const auto& adj : graph.adjacency) total += adj.size();
    return static_cast<double>(total) / static_cast<double>(graph.size());
}

bool entry_reaches_all(const NeighborGraph& graph) {
    std::vector<bool> reached = reachable_set(graph);
    return std::all_of(reached.begin(), reached.end(), [](bool b) { return b; });
}

NavigationGraph build_navigation(const VectorDataset& data, double mu, const BuildParams& params) {
    NavigationGraph nav;
    SampledSubset sub = sample_subset(data, mu, params.seed);
    nav.data = std::move(sub.data);
    nav.ids = std::move(sub.ids);
    nav.mu = mu;
    nav.graph = build_vamana(nav.data, params);
    return nav;
}

namespace {

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("truncated graph file");
    return v;
}

}  // namespace

void save_graph(const std::string& path, const NeighborGraph& graph) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot create " + path);
    write_pod(out, static_cast<uint32_t>(graph.size()));
    write_pod(out, graph.max_degree);
    write_pod(out, graph.entry);
    for (const auto& adj : graph.adjacency) {
        write_pod(out, static_cast<uint32_t>(adj.size()));
        out.write(reinterpret_cast<const char*>(adj.data()),
                  static_cast<std::streamsize>(adj.size() * sizeof(vertex_id)));
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

NeighborGraph load_graph(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    NeighborGraph graph;
    uint32_t n = read_pod<uint32_t>(in);
    graph.max_degree = read_pod<uint32_t>(in);
    graph.entry = read_pod<vertex_id>(in);
    if (graph.entry >= n) throw std::runtime_error(path + ": entry id out of range");
    graph.adjacency.resize(n);
    for (uint32_t v = 0; v < n; ++v) {
        uint32_t deg = read_pod<uint32_t>(in);
        if (deg > graph.max_degree) throw std::runtime_error(path + ": degree above cap");
        graph.adjacency[v].resize(deg);
        in.read(reinterpret_cast<char*>(graph.adjacency[v].data()),
                static_cast<std::streamsize>(deg * sizeof(vertex_id)));
        if (!in) throw std::runtime_error(path + ": truncated adjacency");
        for (vertex_id w : graph.adjacency[v])
            if (w >= n || w == v) throw std::runtime_error(path + ": invalid neighbor id");
    }
    return graph;
}

void save_navigation(const std::string& path, const NavigationGraph& nav) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot create " + path);
    write_pod(out, static_cast<uint32_t>(nav.graph.size()));
    write_pod(out, nav.graph.max_degree);
    write_pod(out, nav.graph.entry);
    for (const auto& adj : nav.graph.adjacency) {
        write_pod(out, static_cast<uint32_t>(adj.size()));
        out.write(reinterpret_cast<const char*>(adj.data()),
                  static_cast<std::streamsize>(adj.size() * sizeof(vertex_id)));
    }
    out.write(reinterpret_cast<const char*>(nav.ids.data()),
              static_cast<std::streamsize>(nav.ids.size() * sizeof(vertex_id)));
    write_pod(out, static_cast<uint32_t>(nav.data.dim()));
    write_pod(out, static_cast<uint8_t>(nav.data.elem()));
    write_pod(out, static_cast<uint8_t>(nav.data.metric()));
    write_pod(out, nav.mu);
    for (size_t i = 0; i < nav.data.size(); ++i)
        out.write(reinterpret_cast<const char*>(nav.data.raw(i)),
                  static_cast<std::streamsize>(nav.data.record_bytes()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

NavigationGraph load_navigation(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    NavigationGraph nav;
    uint32_t n = read_pod<uint32_t>(in);
    nav.graph.max_degree = read_pod<uint32_t>(in);
    nav.graph.entry = read_pod<vertex_id>(in);
    nav.graph.adjacency.resize(n);
    for (uint32_t v = 0; v < n; ++v) {
        uint32_t deg = read_pod<uint32_t>(in);
        if (deg > nav.graph.max_degree) throw std::runtime_error(path + ": degree above cap");
        nav.graph.adjacency[v].resize(deg);
        in.read(reinterpret_cast<char*>(nav.graph.adjacency[v].data()),
                static_cast<std::streamsize>(deg * sizeof(vertex_id)));
        if (!in) throw std::runtime_error(path + ": truncated adjacency");
    }
    nav.ids.resize(n);
    in.read(reinterpret_cast<char*>(nav.ids.data()),
            static_cast<std::streamsize>(n * sizeof(vertex_id)));
    uint32_t dim = read_pod<uint32_t>(in);
    ElemType elem = elem_type_from_code(read_pod<uint8_t>(in));
    Metric metric = metric_from_code(read_pod<uint8_t>(in));
    nav.mu = read_pod<double>(in);
    nav.data = VectorDataset(n, dim, elem, metric);
    for (uint32_t i = 0; i < n; ++i) {
        in.read(reinterpret_cast<char*>(nav.data.raw_mut(i)),
                static_cast<std::streamsize>(nav.data.record_bytes()));
        if (!in) throw std::runtime_error(path + ": truncated vectors");
    }
    return nav;
}

}  // namespace starseg
