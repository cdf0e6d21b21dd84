// Licensed under the Apache License, Version 2.0 (the "License"); you may not use this file except in compliance
// with the License. You may obtain a copy of the License at
//
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software distributed under the License
// is distributed on an "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express
// or implied. See the License for the specific language governing permissions and limitations under the License.

#include "starseg/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>
#include <unordered_set>

#include "json.hpp"

namespace starseg {

double eval_recall(const std::vector<std::vector<vertex_id>>& results, const GroundTruth& gt,
                   uint32_t k) {
    if (results.size() != gt.num_queries())
        throw std::invalid_argument("result/ground-truth query count mismatch");
    if (k == 0) throw std::invalid_argument("k must be positive");
    double total = 0.0;
    for (size_t q = 0; q < results.size(); ++q) {
        if (gt.ids[q].size() < k)
            throw std::invalid_argument("ground truth holds fewer than k ids at query " +
                                        std::to_string(q));
        std::unordered_set<vertex_id> truth(gt.ids[q].begin(), gt.ids[q].begin() + k);
        size_t hit = 0;
        size_t upto = std::min<size_t>(k, results[q].size());
        for (size_t i = 0; i < upto; ++i)
            if (truth.count(results[q][i])) ++hit;
        total += static_cast<double>(hit) / static_cast<double>(k);
    }
    return total / static_cast<double>(results.size());
}

double eval_recall(const std::vector<std::vector<Neighbor>>& results, const GroundTruth& gt,
                   uint32_t k) {
    std::vector<std::vector<vertex_id>> ids(results.size());
    for (size_t q = 0; q < results.size(); ++q) {
        ids[q].reserve(results[q].size());
        for (const Neighbor& nb : results[q]) ids[q].push_back(nb.id);
    }
    return eval_recall(ids, gt, k);
}

ApScore eval_ap(const std::vector<std::vector<Neighbor>>& results, const GroundTruth& gt,
                float radius) {
    if (results.size() != gt.num_queries())
        throw std::invalid_argument("result/ground-truth query count mismatch");
    ApScore score;
    double total = 0.0;
    size_t scored = 0;
    for (size_t q = 0; q < results.size(); ++q) {
        for (const Neighbor& nb : results[q])
            if (nb.dist > radius)
                throw std::runtime_error("unsound range result: query " + std::to_string(q) +
                                         " returned id " + std::to_string(nb.id) +
                                         " beyond the radius");
        if (gt.ids[q].empty()) {
            if (results[q].empty()) {
                total += 1.0;
                ++scored;
            } else {
                ++score.excluded;
            }
            continue;
        }
        std::unordered_set<vertex_id> truth(gt.ids[q].begin(), gt.ids[q].end());
        size_t hit = 0;
        for (const Neighbor& nb : results[q])
            if (truth.count(nb.id)) ++hit;
        total += static_cast<double>(hit) / static_cast<double>(truth.size());
        ++scored;
    }
    score.ap = scored ? total / static_cast<double>(scored) : 0.0;
    return score;
}

BenchReport run_benchmark(const BlockSearcher& searcher, const QuerySet& queries,
                          const SearchParams& params, const BenchOptions& options) {
    if (options.repetitions == 0) throw std::invalid_argument("need at least one repetition");
    if (options.threads == 0) throw std::invalid_argument("need at least one worker");
    size_t nq = queries.size();

    BenchReport report;
    report.num_queries = nq;
    report.results.resize(nq);
    std::vector<SearchStats> per_query(nq);

    for (uint32_t rep = 0; rep < options.repetitions; ++rep) {
        std::vector<size_t> order(nq);
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(options.seed + rep);
        std::shuffle(order.begin(), order.end(), rng);

        std::atomic<size_t> cursor{0};
        auto worker = [&]() {
            std::vector<float> qbuf(queries.dim());
            size_t i;
            while ((i = cursor.fetch_add(1)) < nq) {
                size_t q = order[i];
                queries.decode(q, qbuf.data());
                SearchStats stats;
                std::vector<Neighbor> res = options.range_mode
                                                ? searcher.search_range(qbuf.data(), params, stats)
                                                : searcher.search_ann(qbuf.data(), params, stats);
                if (rep == 0) {
                    report.results[q] = std::move(res);
                    per_query[q] = stats;
                }
            }
        };

        auto t0 = std::chrono::steady_clock::now();
        if (options.threads == 1) {
            worker();
        } else {
            std::vector<std::thread> pool;
            for (uint32_t t = 0; t < options.threads; ++t) pool.emplace_back(worker);
            for (auto& t : pool) t.join();
        }
        double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        report.rep_qps.push_back(static_cast<double>(nq) / wall);
    }

    for (const SearchStats& s : per_query) report.aggregate.add(s);
    double lat = 0.0;
    for (const SearchStats& s : per_query) lat += s.t_total;
    report.mean_latency_ms = nq ? 1000.0 * lat / static_cast<double>(nq) : 0.0;

    std::vector<double> sorted_qps = report.rep_qps;
    std::sort(sorted_qps.begin(), sorted_qps.end());
    report.qps_median = sorted_qps[sorted_qps.size() / 2];
    if (sorted_qps.size() % 2 == 0)
        report.qps_median = 0.5 * (sorted_qps[sorted_qps.size() / 2 - 1] + report.qps_median);
    report.qps_mean = std::accumulate(sorted_qps.begin(), sorted_qps.end(), 0.0) /
                      static_cast<double>(sorted_qps.size());
    return report;
}

std::string stats_json(const BenchReport& report, const std::string& metric_name,
                       double metric_value) {
    double n = static_cast<double>(report.num_queries);
    const SearchStats& agg = report.aggregate;
    double t_sum = agg.t_io + agg.t_comp + agg.t_other;
    nlohmann::ordered_json j;
    j[metric_name] = metric_value;
    j["mean_latency_ms"] = report.mean_latency_ms;
    j["qps"] = report.qps_median;
    j["mean_ios"] = n ? static_cast<double>(agg.io_count) / n : 0.0;
    j["mean_hops"] = n ? static_cast<double>(agg.hops) / n : 0.0;
    j["mean_xi"] = agg.mean_xi();
    j["t_io_frac"] = t_sum > 0.0 ? agg.t_io / t_sum : 0.0;
    j["t_comp_frac"] = t_sum > 0.0 ? agg.t_comp / t_sum : 0.0;
    return j.dump(2);
}

std::string index_cost_json(const IndexCostReport& report) {
    nlohmann::ordered_json j;
    j["t_disk_graph_s"] = report.t_disk_graph_s;
    j["t_shuffle_s"] = report.t_shuffle_s;
    j["t_nav_s"] = report.t_nav_s;
    j["t_pq_s"] = report.t_pq_s;
    j["t_total_s"] = report.total_s();
    j["nav_bytes"] = report.nav_bytes;
    j["pq_bytes"] = report.pq_bytes;
    j["map_bytes"] = report.map_bytes;
    j["memory_bytes"] = report.memory_bytes();
    return j.dump(2);
}

}  // namespace starseg
