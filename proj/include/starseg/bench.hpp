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
#include "starseg/engine.hpp"

namespace starseg {

/* Mean fraction of the true top-k ids recovered per query. Result lists may
 * be shorter than k; ground truth must hold at least k ids per query. */
double eval_recall(const std::vector<std::vector<vertex_id>>& results, const GroundTruth& gt,
                   uint32_t k);
double eval_recall(const std::vector<std::vector<Neighbor>>& results, const GroundTruth& gt,
                   uint32_t k);

struct ApScore {
    double ap = 0.0;
    size_t excluded = 0;  // empty-truth queries answered non-empty
};

/* Mean |returned ∩ truth| / |truth| over queries. A query with empty truth
 * counts as 1.0 when the result is empty too, otherwise it is excluded and
 * counted. Any returned distance beyond the radius is an error: range results
 * must be sound. */
ApScore eval_ap(const std::vector<std::vector<Neighbor>>& results, const GroundTruth& gt,
                float radius);

struct BenchOptions {
    uint32_t threads = 1;
    uint32_t repetitions = 3;
    uint64_t seed = 123;  // query order shuffling
    bool range_mode = false;
};

struct BenchReport {
    std::vector<std::vector<Neighbor>> results;  // first repetition
    SearchStats aggregate;                       // summed over first-repetition queries
    size_t num_queries = 0;
    double mean_latency_ms = 0.0;
    std::vector<double> rep_qps;                 // one per repetition
    double qps_median = 0.0;
    double qps_mean = 0.0;
};

/* Runs every query once per repetition in a fresh seeded random order, spread
 * over a pool of worker threads. Per-query results and counters come from the
 * first repetition (the engine is deterministic); throughput is measured per
 * repetition and reported as median and mean. */
BenchReport run_benchmark(const BlockSearcher& searcher, const QuerySet& queries,
                          const SearchParams& params, const BenchOptions& options);

// JSON object with the fixed reporting keys; metric_name is "recall" or "ap".
std::string stats_json(const BenchReport& report, const std::string& metric_name,
                       double metric_value);

struct IndexCostReport {
    double t_disk_graph_s = 0.0;
    double t_shuffle_s = 0.0;
    double t_nav_s = 0.0;
    double t_pq_s = 0.0;
    uint64_t nav_bytes = 0;
    uint64_t pq_bytes = 0;
    uint64_t map_bytes = 0;

    double total_s() const { return t_disk_graph_s + t_shuffle_s + t_nav_s + t_pq_s; }
    uint64_t memory_bytes() const { return nav_bytes + pq_bytes + map_bytes; }
};

std::string index_cost_json(const IndexCostReport& report);

}  // namespace starseg
