// Licensed under the Apache License, Version 2.0 (the "License"); you may not use this file except in compliance
// with the License. You may obtain a copy of the License at
//
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software distributed under the License
// is distributed on an "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express
// or implied. See the License for the specific language governing permissions and limitations under the License.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "starseg/types.hpp"

namespace starseg {

/* Dense row-major vector collection. Element payload is kept in its native
 * width (uint8 or float32) so that packing a disk segment round-trips the
 * original bytes. Distances are always returned as float: squared L2, or
 * negated inner product so that smaller is more similar for both metrics. */
class VectorDataset {
public:
    VectorDataset() = default;
    VectorDataset(size_t n, size_t dim, ElemType elem, Metric metric);

    size_t size() const { return n_; }
    size_t dim() const { return dim_; }
    ElemType elem() const { return elem_; }
    Metric metric() const { return metric_; }
    size_t record_bytes() const { return dim_ * elem_size(elem_); }

    const std::byte* raw(size_t i) const { return values_.data() + i * record_bytes(); }
    std::byte* raw_mut(size_t i) { return values_.data() + i * record_bytes(); }

    const uint8_t* u8(size_t i) const;
    const float* f32(size_t i) const;

    // Widen record i into out[0..dim). uint8 values convert exactly.
    void decode(size_t i, float* out) const;
    std::vector<float> decode(size_t i) const;

private:
    size_t n_ = 0;
    size_t dim_ = 0;
    ElemType elem_ = ElemType::kFloat32;
    Metric metric_ = Metric::kL2;
    std::vector<std::byte> values_;
};

// Queries share the dataset layout.
using QuerySet = VectorDataset;

/* Exact distance kernels. uint8 inputs accumulate in int32; float inputs
 * accumulate in float32. L2 is squared (no square root anywhere). */
float l2_sq(const uint8_t* a, const uint8_t* b, size_t d);
float l2_sq(const float* a, const float* b, size_t d);
float neg_ip(const uint8_t* a, const uint8_t* b, size_t d);
float neg_ip(const float* a, const float* b, size_t d);

// Distance between two records of the same dataset.
float distance(const VectorDataset& data, size_t a, size_t b);

// Distance between record i and a float query (uint8 records are widened).
float distance_to(const VectorDataset& data, size_t i, const float* query);

// Distance between two raw records outside any dataset.
float distance_raw(const std::byte* a, const std::byte* b, size_t dim, ElemType elem, Metric metric);

struct Neighbor {
    vertex_id id;
    float dist;
};

/* Exhaustive k nearest neighbors, ascending by (distance, id). Requires
 * 0 < k <= n. Used as the ground-truth oracle throughout the tests. */
std::vector<Neighbor> brute_force_knn(const VectorDataset& data, const float* query, size_t k);

/* Exhaustive range scan: every id with distance <= r, ascending by
 * (distance, id). r must be non-negative for L2. */
std::vector<Neighbor> brute_force_range(const VectorDataset& data, const float* query, float r);

struct SampledSubset {
    VectorDataset data;            // copied rows, same elem/metric
    std::vector<vertex_id> ids;    // subset row -> source row, strictly increasing
};

/* Uniform sample without replacement of floor(mu * n) rows (at least one).
 * Deterministic for a fixed seed; ids are strictly increasing, so the map is
 * injective by construction. */
SampledSubset sample_subset(const VectorDataset& data, double mu, uint64_t seed);

/* fvecs / bvecs readers and writers. Each record is an int32 dimension
 * followed by dim float32 (fvecs) or uint8 (bvecs) values, little-endian.
 * Loading fails on inconsistent dimensions, trailing bytes, or empty files. */
VectorDataset load_vectors(const std::string& path, ElemType elem, Metric metric = Metric::kL2);
void save_vectors(const std::string& path, const VectorDataset& data);

struct GroundTruth {
    std::vector<std::vector<vertex_id>> ids;
    std::vector<std::vector<float>> dists;

    size_t num_queries() const { return ids.size(); }
};

/* Ground-truth files: ivecs for ids (int32 count then count int32 ids per
 * query) and an fvecs sidecar with the matching distances. */
void save_ground_truth(const std::string& ivecs_path, const std::string& dists_path,
                       const GroundTruth& gt);
GroundTruth load_ground_truth(const std::string& ivecs_path, const std::string& dists_path);
std::vector<std::vector<vertex_id>> load_ivecs(const std::string& path);

}  // namespace starseg
