// Licensed under the Apache License, Version 2.0 (the "License"); you may not use this file except in compliance
// with the License. You may obtain a copy of the License at
//
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software distributed under the License
// is distributed on an "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express
// or implied. See the License for the specific language governing permissions and limitations under the License.

#include "starseg/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <queue>
#include <thread>
#include <unordered_map>
#include <unordered_set>

namespace starseg {

void SearchStats::add(const SearchStats& other) {
    io_count += other.io_count;
    hops += other.hops;
    exact_distances += other.exact_distances;
    approx_distances += other.approx_distances;
    xi_numer += other.xi_numer;
    xi_blocks += other.xi_blocks;
    slots_per_block = other.slots_per_block;
    doublings += other.doublings;
    t_io += other.t_io;
    t_comp += other.t_comp;
    t_other += other.t_other;
    t_total += other.t_total;
    direct_io = other.direct_io;
}

namespace {

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
    return std::chrono::duration<double>(clock_type::now() - t0).count();
}

struct CandEntry {
    float approx;
    vertex_id id;
    bool visited;
};

inline bool cand_less(const CandEntry& a, const CandEntry& b) {
    return a.approx != b.approx ? a.approx < b.approx : a.id < b.id;
}

struct KickedEntry {
    float approx;
    vertex_id id;
};

struct KickedOrder {
    bool operator()(const KickedEntry& a, const KickedEntry& b) const {
        // priority_queue keeps the largest on top; invert for a min-heap
        return a.approx != b.approx ? a.approx > b.approx : a.id > b.id;
    }
};

using KickedPool = std::priority_queue<KickedEntry, std::vector<KickedEntry>, KickedOrder>;

/* Bounded candidate list ordered by (approximate distance, id). Overflow
 * drops the worst entry; unvisited drops land in the kicked pool when one is
 * attached (range mode). */
class CandidateSet {
public:
    explicit CandidateSet(size_t capacity) : cap_(capacity) {}

    size_t capacity() const { return cap_; }
    size_t size() const { return items_.size(); }
    void grow(size_t capacity) { cap_ = std::max(cap_, capacity); }

    bool contains(vertex_id id) const { return present_.count(id) != 0; }

    void push(float approx, vertex_id id, KickedPool* kicked) {
        CandEntry e{approx, id, false};
        if (items_.size() == cap_ && !cand_less(e, items_.back())) {
            if (kicked) kicked->push({approx, id});
            return;
        }
        auto pos = std::lower_bound(items_.begin(), items_.end(), e, cand_less);
        size_t idx = static_cast<size_t>(pos - items_.begin());
        items_.insert(pos, e);
        present_.insert(id);
        if (idx < cur_) cur_ = idx;
        if (items_.size() > cap_) {
            const CandEntry& victim = items_.back();
            if (kicked && !victim.visited) kicked->push({victim.approx, victim.id});
            present_.erase(victim.id);
            items_.pop_back();
        }
    }

    // best unvisited entry, marked visited inside the set; false when none
    bool pop_best_unvisited(CandEntry& out) {
        while (cur_ < items_.size() && items_[cur_].visited) ++cur_;
        if (cur_ == items_.size()) return false;
        items_[cur_].visited = true;
        out = items_[cur_];
        return true;
    }

private:
    size_t cap_;
    size_t cur_ = 0;
    std::vector<CandEntry> items_;
    std::unordered_set<vertex_id> present_;
};

/* Single helper thread that serves block reads in submission order so the
 * query thread can overlap candidate processing with the I/O. */
class AsyncBlockReader {
public:
    explicit AsyncBlockReader(const DiskIndexReader& reader) : reader_(reader) {
        worker_ = std::thread([this]() { run(); });
    }

    ~AsyncBlockReader() {
        {
            std::lock_guard<std::mutex> hold(m_);
            stop_ = true;
        }
        cv_.notify_all();
        worker_.join();
    }

    void submit(uint32_t block_id) {
        {
            std::lock_guard<std::mutex> hold(m_);
            pending_.push_back(block_id);
        }
        cv_.notify_all();
    }

    BlockData fetch() {
        std::unique_lock<std::mutex> hold(m_);
        cv_.wait(hold, [this]() { return !done_.empty() || !error_.empty(); });
        if (!error_.empty()) throw std::runtime_error(error_);
        BlockData out = std::move(done_.front());
        done_.pop_front();
        return out;
    }

private:
    void run() {
        std::unique_lock<std::mutex> hold(m_);
        while (true) {
            cv_.wait(hold, [this]() { return stop_ || !pending_.empty(); });
            if (stop_ && pending_.empty()) return;
            uint32_t block = pending_.front();
            pending_.pop_front();
            hold.unlock();
            BlockData data;
            std::string err;
            try {
                reader_.read_block(block, data);
            } catch (const std::exception& e) {
                err = e.what();
            }
            hold.lock();
            if (err.empty()) {
                done_.push_back(std::move(data));
            } else {
                error_ = err;
            }
            cv_.notify_all();
        }
    }

    const DiskIndexReader& reader_;
    std::thread worker_;
    std::mutex m_;
    std::condition_variable cv_;
    std::deque<uint32_t> pending_;
    std::deque<BlockData> done_;
    std::string error_;
    bool stop_ = false;
};

struct PendingExpansion {
    vertex_id id;
    uint32_t block;
    uint32_t record;  // index into the cached block's record list
};

/* Shared machinery of the two search modes. Block reads are decided before
 * deferred candidate pushes are applied, which keeps the pipelined and the
 * sequential schedule on the same trajectory. */
struct QueryRun {
    const DiskIndexReader& reader;
    const PQCodebook& book;
    const PQCodes& codes;
    const NavigationGraph* nav;
    const SearchParams& params;
    SearchStats& stats;
    const float* query;

    DistanceTable table;
    CandidateSet cand;
    KickedPool kicked;
    std::unordered_set<vertex_id> visited;
    std::unordered_map<vertex_id, float> result;
    std::unordered_map<uint32_t, BlockData> cache;
    std::vector<PendingExpansion> pending;
    std::unique_ptr<AsyncBlockReader> async_io;

    bool range_mode = false;
    uint32_t prune_count = 0;  // occupants explored per block beyond the target

    QueryRun(const DiskIndexReader& rd, const PQCodebook& bk, const PQCodes& cd,
             const NavigationGraph* nv, const SearchParams& p, SearchStats& st, const float* q,
             size_t capacity)
        : reader(rd), book(bk), codes(cd), nav(nv), params(p), stats(st), query(q),
          cand(capacity) {
        const DiskIndexHeader& h = reader.header();
        stats.slots_per_block = h.slots_per_block;
        stats.direct_io = reader.direct_io();
        double width = static_cast<double>(h.slots_per_block - 1) * params.sigma;
        prune_count = static_cast<uint32_t>(std::ceil(width));
        if (params.pipeline) async_io = std::make_unique<AsyncBlockReader>(reader);
    }

    float exact_distance(const std::byte* vec) {
        ++stats.exact_distances;
        const DiskIndexHeader& h = reader.header();
        if (h.elem == ElemType::kUint8) {
            const uint8_t* p = reinterpret_cast<const uint8_t*>(vec);
            float acc = 0.0f;
            if (h.metric == Metric::kL2) {
                for (uint32_t i = 0; i < h.dim; ++i) {
                    float diff = static_cast<float>(p[i]) - query[i];
                    acc += diff * diff;
                }
                return acc;
            }
            for (uint32_t i = 0; i < h.dim; ++i) acc += static_cast<float>(p[i]) * query[i];
            return -acc;
        }
        const float* p = reinterpret_cast<const float*>(vec);
        return h.metric == Metric::kL2 ? l2_sq(p, query, h.dim) : neg_ip(p, query, h.dim);
    }

    void push_candidate(vertex_id id) {
        if (visited.count(id) || cand.contains(id)) return;
        ++stats.approx_distances;
        float approx = approx_distance(table, codes.of(id));
        cand.push(approx, id, range_mode ? &kicked : nullptr);
    }

    void admit_result(vertex_id id, float exact) {
        if (range_mode && exact > params.radius) return;
        result.emplace(id, exact);
    }

    const BlockData& load_block(uint32_t block_id, bool target_phase) {
        auto it = cache.find(block_id);
        if (it != cache.end()) return it->second;
        auto t0 = clock_type::now();
        BlockData data = reader.read_block(block_id);
        stats.t_io += seconds_since(t0);
        ++stats.io_count;
        if (target_phase) ++stats.hops;
        return cache.emplace(block_id, std::move(data)).first->second;
    }

    void flush_pending() {
        auto t0 = clock_type::now();
        for (const PendingExpansion& w : pending) {
            const BlockData& bd = cache.at(w.block);
            const BlockData::Record& rec = bd.records[w.record];
            const uint32_t* nbrs = bd.neighbors_of(rec);
            for (uint32_t j = 0; j < rec.degree; ++j) push_candidate(nbrs[j]);
        }
        pending.clear();
        stats.t_comp += seconds_since(t0);
    }

    /* Target processing: exact distance and neighbor pushes for the target,
     * then exact ranking of the block's other unvisited occupants, of which
     * the closest prune_count become deferred expansions. */
    void explore_block(vertex_id target, const BlockData& bd) {
        auto t0 = clock_type::now();
        const BlockData::Record* target_rec = nullptr;
        for (const auto& rec : bd.records) {
            if (rec.id == target) {
                target_rec = &rec;
                break;
            }
        }
        if (!target_rec) throw std::runtime_error("target record missing from its mapped block");

        float d = exact_distance(bd.vector_of(*target_rec));
        admit_result(target, d);
        const uint32_t* nbrs = bd.neighbors_of(*target_rec);
        for (uint32_t j = 0; j < target_rec->degree; ++j) push_candidate(nbrs[j]);

        uint32_t processed = 0;
        if (prune_count > 0) {
            std::vector<std::pair<float, uint32_t>> ranked;  // (exact, record index)
            ranked.reserve(bd.records.size());
            for (uint32_t r = 0; r < bd.records.size(); ++r) {
                const auto& rec = bd.records[r];
                if (rec.id == target || visited.count(rec.id)) continue;
                ranked.emplace_back(exact_distance(bd.vector_of(rec)), r);
            }
            uint32_t take = std::min<uint32_t>(prune_count, static_cast<uint32_t>(ranked.size()));
            std::partial_sort(ranked.begin(), ranked.begin() + take, ranked.end(),
                              [&](const auto& a, const auto& b) {
                                  if (a.first != b.first) return a.first < b.first;
                                  return bd.records[a.second].id < bd.records[b.second].id;
                              });
            for (uint32_t i = 0; i < take; ++i) {
                const auto& rec = bd.records[ranked[i].second];
                visited.insert(rec.id);
                admit_result(rec.id, ranked[i].first);
                pending.push_back({rec.id, bd.block_id, ranked[i].second});
            }
            processed = take;
        }
        stats.xi_numer += 1 + processed;
        ++stats.xi_blocks;
        stats.t_comp += seconds_since(t0);
    }

    void seed_entries() {
        std::vector<vertex_id> entries;
        if (nav) {
            auto t0 = clock_type::now();
            SearchResult found = greedy_vertex_search(nav->graph, nav->data, query,
                                                      params.nav_list_size, params.entry_count);
            for (const Neighbor& nb : found.nearest) entries.push_back(nav->ids[nb.id]);
            stats.t_comp += seconds_since(t0);
        } else {
            entries.push_back(reader.header().entry);
        }
        // duplicates cannot appear (injective sample map), but stay defensive
        std::vector<vertex_id> uniq;
        for (vertex_id e : entries)
            if (std::find(uniq.begin(), uniq.end(), e) == uniq.end()) uniq.push_back(e);

        auto t0 = clock_type::now();
        for (vertex_id e : uniq) push_candidate(e);
        stats.t_comp += seconds_since(t0);

        for (vertex_id e : uniq) {
            uint32_t block = reader.locate(e).first;
            const BlockData& bd = load_block(block, false);
            auto t1 = clock_type::now();
            for (const auto& rec : bd.records) {
                if (rec.id != e) continue;
                admit_result(e, exact_distance(bd.vector_of(rec)));
                break;
            }
            stats.t_comp += seconds_since(t1);
        }
    }

    /* One exploration wave: drains the candidate set. Targets are popped
     * before the previous batch's deferred pushes land, matching the
     * pipelined schedule exactly even in sequential mode. */
    void run_wave() {
        std::vector<vertex_id> targets;
        while (true) {
            targets.clear();
            CandEntry e;
            while (targets.size() < params.beam_width && cand.pop_best_unvisited(e)) {
                visited.insert(e.id);
                targets.push_back(e.id);
            }
            if (targets.empty()) {
                if (pending.empty()) return;
                flush_pending();
                continue;
            }

            // distinct uncached blocks, in target order
            std::vector<uint32_t> to_read;
            for (vertex_id t : targets) {
                uint32_t block = reader.locate(t).first;
                if (cache.count(block)) continue;
                if (std::find(to_read.begin(), to_read.end(), block) == to_read.end())
                    to_read.push_back(block);
            }

            if (params.pipeline) {
                for (uint32_t b : to_read) async_io->submit(b);
                flush_pending();
                for (uint32_t b : to_read) {
                    auto t0 = clock_type::now();
                    BlockData data = async_io->fetch();
                    stats.t_io += seconds_since(t0);
                    ++stats.io_count;
                    ++stats.hops;
                    cache.emplace(b, std::move(data));
                }
            } else {
                flush_pending();
                for (uint32_t b : to_read) load_block(b, true);
            }

            for (vertex_id t : targets) {
                uint32_t block = reader.locate(t).first;
                explore_block(t, cache.at(block));
            }
        }
    }

    std::vector<Neighbor> collect_sorted() const {
        std::vector<Neighbor> out;
        out.reserve(result.size());
        for (const auto& [id, dist] : result) out.push_back({id, dist});
        std::sort(out.begin(), out.end(), [](const Neighbor& a, const Neighbor& b) {
            return a.dist != b.dist ? a.dist < b.dist : a.id < b.id;
        });
        return out;
    }
};

}  // namespace

BlockSearcher::BlockSearcher(const DiskIndexReader& reader, const PQCodebook& book,
                             const PQCodes& codes, const NavigationGraph* nav)
    : reader_(reader), book_(book), codes_(codes), nav_(nav) {
    if (codes_.n != reader_.header().n)
        throw std::invalid_argument("quantizer codes do not cover the segment");
    if (book_.dim != reader_.header().dim)
        throw std::invalid_argument("quantizer dimension does not match the segment");
}

std::vector<vertex_id> BlockSearcher::nav_entry_points(const float* query, uint32_t count,
                                                       uint32_t list_size) const {
    if (!nav_) return {reader_.header().entry};
    SearchResult found = greedy_vertex_search(nav_->graph, nav_->data, query, list_size, count);
    std::vector<vertex_id> out;
    out.reserve(found.nearest.size());
    for (const Neighbor& nb : found.nearest) out.push_back(nav_->ids[nb.id]);
    return out;
}

std::vector<Neighbor> BlockSearcher::search_ann(const float* query, const SearchParams& params,
                                                SearchStats& stats) const {
    if (params.k == 0) throw std::invalid_argument("k must be positive");
    if (params.candidate_capacity < params.k)
        throw std::invalid_argument("candidate capacity must be >= k");
    if (params.sigma < 0.0 || params.sigma > 1.0)
        throw std::invalid_argument("sigma must lie in [0, 1]");
    if (params.beam_width == 0) throw std::invalid_argument("beam width must be positive");

    auto t_start = clock_type::now();
    QueryRun run(reader_, book_, codes_, nav_, params, stats, query, params.candidate_capacity);
    {
        auto t0 = clock_type::now();
        run.table = build_distance_table(book_, query);
        stats.t_comp += seconds_since(t0);
    }
    run.seed_entries();
    run.run_wave();

    std::vector<Neighbor> all = run.collect_sorted();
    if (all.size() > params.k) all.resize(params.k);
    stats.t_total = seconds_since(t_start);
    stats.t_other = std::max(0.0, stats.t_total - stats.t_io - stats.t_comp);
    return all;
}

std::vector<Neighbor> BlockSearcher::search_range(const float* query, const SearchParams& params,
                                                  SearchStats& stats) const {
    if (params.phi <= 0.0 || params.phi > 1.0)
        throw std::invalid_argument("phi must lie in (0, 1]");
    if (params.initial_capacity == 0)
        throw std::invalid_argument("initial capacity must be positive");
    if (params.sigma < 0.0 || params.sigma > 1.0)
        throw std::invalid_argument("sigma must lie in [0, 1]");
    if (reader_.header().metric == Metric::kL2 && params.radius < 0.0f)
        throw std::invalid_argument("radius must be non-negative for L2");

    auto t_start = clock_type::now();
    QueryRun run(reader_, book_, codes_, nav_, params, stats, query, params.initial_capacity);
    run.range_mode = true;
    {
        auto t0 = clock_type::now();
        run.table = build_distance_table(book_, query);
        stats.t_comp += seconds_since(t0);
    }
    run.seed_entries();

    while (true) {
        run.run_wave();
        double ratio = static_cast<double>(run.result.size()) /
                       static_cast<double>(run.cand.capacity());
        if (ratio < params.phi || stats.doublings >= params.max_doublings) break;
        run.cand.grow(run.cand.capacity() * 2);
        ++stats.doublings;
        // refill with the nearest kicked candidates that are still unexplored
        size_t added = 0;
        while (run.cand.size() < run.cand.capacity() && !run.kicked.empty()) {
            KickedEntry e = run.kicked.top();
            run.kicked.pop();
            if (run.visited.count(e.id) || run.cand.contains(e.id)) continue;
            run.cand.push(e.approx, e.id, nullptr);
            ++added;
        }
        if (added == 0) break;
    }

    std::vector<Neighbor> hits = run.collect_sorted();
    stats.t_total = seconds_since(t_start);
    stats.t_other = std::max(0.0, stats.t_total - stats.t_io - stats.t_comp);
    return hits;
}

}  // namespace starseg
