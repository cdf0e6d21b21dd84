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
#include "starseg/diskindex.hpp"
#include "starseg/graph.hpp"
#include "starseg/pq.hpp"
#include "starseg/types.hpp"

namespace starseg {

struct SearchParams {
    uint32_t k = 10;
    uint32_t candidate_capacity = 128;  // bounded candidate set size, >= k
    double sigma = 0.3;                 // share of non-target occupants explored per block;
                                        // 0 degrades to plain vertex search
    uint32_t entry_count = 8;           // navigation entry points per query
    uint32_t nav_list_size = 32;        // navigation search list
    uint32_t beam_width = 1;            // target block reads in flight
    bool pipeline = true;               // overlap reads with candidate processing

    // range search
    float radius = 0.0f;
    double phi = 0.5;                   // result/capacity ratio needed to keep going
    uint32_t initial_capacity = 100;    // starting candidate capacity for range mode
    uint32_t max_doublings = 10;
};

/* Per-query counters. Block utilization is kept as an exact fraction: each
 * explored block contributes (1 + processed non-targets) to xi_numer and one
 * to xi_blocks; the mean is xi_numer / (xi_blocks * slots_per_block). */
struct SearchStats {
    uint64_t io_count = 0;          // block reads, entry seeding included
    uint64_t hops = 0;              // block reads issued for search targets
    uint64_t exact_distances = 0;
    uint64_t approx_distances = 0;
    uint64_t xi_numer = 0;
    uint64_t xi_blocks = 0;
    uint32_t slots_per_block = 0;
    uint32_t doublings = 0;         // range mode capacity doublings
    double t_io = 0.0;              // seconds the query thread spent blocked on reads
    double t_comp = 0.0;            // distance/table computation seconds
    double t_other = 0.0;
    double t_total = 0.0;
    bool direct_io = false;

    double mean_xi() const {
        if (xi_blocks == 0 || slots_per_block == 0) return 0.0;
        return static_cast<double>(xi_numer) /
               (static_cast<double>(xi_blocks) * static_cast<double>(slots_per_block));
    }

    void add(const SearchStats& other);
};

/* Block-granular searcher over one disk segment. Routing distances come from
 * the product quantizer; exact distances only ever touch records of blocks
 * that were actually read. With a navigation graph the query enters at its
 * nearest sampled vertices, otherwise at the stored medoid. */
class BlockSearcher {
public:
    BlockSearcher(const DiskIndexReader& reader, const PQCodebook& book, const PQCodes& codes,
                  const NavigationGraph* nav = nullptr);

    // Exact top-k by ascending (distance, id).
    std::vector<Neighbor> search_ann(const float* query, const SearchParams& params,
                                     SearchStats& stats) const;

    // Every returned id has exact distance <= radius, ascending (distance, id).
    std::vector<Neighbor> search_range(const float* query, const SearchParams& params,
                                       SearchStats& stats) const;

    // Base-space ids of the entry points the navigation graph proposes.
    std::vector<vertex_id> nav_entry_points(const float* query, uint32_t count,
                                            uint32_t list_size) const;

    const DiskIndexReader& reader() const { return reader_; }
    bool has_navigation() const { return nav_ != nullptr; }

private:
    const DiskIndexReader& reader_;
    const PQCodebook& book_;
    const PQCodes& codes_;
    const NavigationGraph* nav_;
};

}  // namespace starseg
