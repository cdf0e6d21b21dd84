// Licensed under the Apache License, Version 2.0 (the "License"); you may not use this file except in compliance
// with the License. You may obtain a copy of the License at
//
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software distributed under the License
// is distributed on an "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express
// or implied. See the License for the specific language governing permissions and limitations under the License.

#include "starseg/dataset.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

namespace starseg {

VectorDataset::VectorDataset(size_t n, size_t dim, ElemType elem, Metric metric)
    : n_(n), dim_(dim), elem_(elem), metric_(metric), values_(n * dim * starseg::elem_size(elem)) {
    if (dim == 0) throw std::invalid_argument("dataset dimension must be positive");
}

const uint8_t* VectorDataset::u8(size_t i) const {
    if (elem_ != ElemType::kUint8) throw std::logic_error("dataset is not uint8");
    return reinterpret_cast<const uint8_t*>(raw(i));
}

const float* VectorDataset::f32(size_t i) const {
    if (elem_ != ElemType::kFloat32) throw std::logic_error("dataset is not float32");
    return reinterpret_cast<const float*>(raw(i));
}

void VectorDataset::decode(size_t i, float* out) const {
    if (elem_ == ElemType::kFloat32) {
        std::memcpy(out, raw(i), dim_ * sizeof(float));
    } else {
        const uint8_t* p = reinterpret_cast<const uint8_t*>(raw(i));
        for (size_t j = 0; j < dim_; ++j) out[j] = static_cast<float>(p[j]);
    }
}

std::vector<float> VectorDataset::decode(size_t i) const {
    std::vector<float> out(dim_);
    decode(i, out.data());
    return out;
}

float l2_sq(const uint8_t* a, const uint8_t* b, size_t d) {
    int32_t acc = 0;
    for (size_t i = 0; i < d; ++i) {
        int32_t diff = static_cast<int32_t>(a[i]) - static_cast<int32_t>(b[i]);
        acc += diff * diff;
    }
    return static_cast<float>(acc);
}

float l2_sq(const float* a, const float* b, size_t d) {
    float acc = 0.0f;
    for (size_t i = 0; i < d; ++i) {
        float diff = a[i] - b[i];
        acc += diff * diff;
    }
    return acc;
}

float neg_ip(const uint8_t* a, const uint8_t* b, size_t d) {
    int32_t acc = 0;
    for (size_t i = 0; i < d; ++i) acc += static_cast<int32_t>(a[i]) * static_cast<int32_t>(b[i]);
    return -static_cast<float>(acc);
}

float neg_ip(const float* a, const float* b, size_t d) {
    float acc = 0.0f;
    for (size_t i = 0; i < d; ++i) acc += a[i] * b[i];
    return -acc;
}

namespace {

float l2_sq_u8_f32(const uint8_t* a, const float* b, size_t d) {
    float acc = 0.0f;
    for (size_t i = 0; i < d; ++i) {
        float diff = static_cast<float>(a[i]) - b[i];
        acc += diff * diff;
    }
    return acc;
}

float neg_ip_u8_f32(const uint8_t* a, const float* b, size_t d) {
    float acc = 0.0f;
    for (size_t i = 0; i < d; ++i) acc += static_cast<float>(a[i]) * b[i];
    return -acc;
}

}  // namespace

float distance(const VectorDataset& data, size_t a, size_t b) {
    return distance_raw(data.raw(a), data.raw(b), data.dim(), data.elem(), data.metric());
}

float distance_to(const VectorDataset& data, size_t i, const float* query) {
    size_t d = data.dim();
    if (data.elem() == ElemType::kUint8) {
        const uint8_t* rec = reinterpret_cast<const uint8_t*>(data.raw(i));
        return data.metric() == Metric::kL2 ? l2_sq_u8_f32(rec, query, d)
                                            : neg_ip_u8_f32(rec, query, d);
    }
    const float* rec = reinterpret_cast<const float*>(data.raw(i));
    return data.metric() == Metric::kL2 ? l2_sq(rec, query, d) : neg_ip(rec, query, d);
}

float distance_raw(const std::byte* a, const std::byte* b, size_t dim, ElemType elem, Metric metric) {
    if (elem == ElemType::kUint8) {
        const uint8_t* pa = reinterpret_cast<const uint8_t*>(a);
        const uint8_t* pb = reinterpret_cast<const uint8_t*>(b);
        return metric == Metric::kL2 ? l2_sq(pa, pb, dim) : neg_ip(pa, pb, dim);
    }
    const float* pa = reinterpret_cast<const float*>(a);
    const float* pb = reinterpret_cast<const float*>(b);
    return metric == Metric::kL2 ? l2_sq(pa, pb, dim) : neg_ip(pa, pb, dim);
}

std::vector<Neighbor> brute_force_knn(const VectorDataset& data, const float* query, size_t k) {
    if (k == 0 || k > data.size()) throw std::invalid_argument("k must satisfy 0 < k <= n");
    std::vector<Neighbor> all(data.size());
    for (size_t i = 0; i < data.size(); ++i) {
        all[i] = {static_cast<vertex_id>(i), distance_to(data, i, query)};
    }
    auto cmp = [](const Neighbor& a, const Neighbor& b) {
        return a.dist != b.dist ? a.dist < b.dist : a.id < b.id;
    };
    std::partial_sort(all.begin(), all.begin() + k, all.end(), cmp);
    all.resize(k);
    return all;
}

std::vector<Neighbor> brute_force_range(const VectorDataset& data, const float* query, float r) {
    if (data.metric() == Metric::kL2 && r < 0.0f)
        throw std::invalid_argument("range radius must be non-negative for L2");
    std::vector<Neighbor> hits;
    for (size_t i = 0; i < data.size(); ++i) {
        float d = distance_to(data, i, query);
        if (d <= r) hits.push_back({static_cast<vertex_id>(i), d});
    }
    std::sort(hits.begin(), hits.end(), [](const Neighbor& a, const Neighbor& b) {
        return a.dist != b.dist ? a.dist < b.dist : a.id < b.id;
    });
    return hits;
}

SampledSubset sample_subset(const VectorDataset& data, double mu, uint64_t seed) {
    if (!(mu > 0.0) || mu > 1.0) throw std::invalid_argument("sampling ratio must be in (0, 1]");
    size_t n = data.size();
    size_t m = std::max<size_t>(1, static_cast<size_t>(mu * static_cast<double>(n)));

    std::vector<vertex_id> pool(n);
    std::iota(pool.begin(), pool.end(), 0u);
    std::mt19937_64 rng(seed);
    for (size_t i = 0; i < m; ++i) {
        // partial Fisher-Yates, fixed draw order for determinism
        std::uniform_int_distribution<size_t> pick(i, n - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(m);
    std::sort(pool.begin(), pool.end());

    SampledSubset out;
    out.data = VectorDataset(m, data.dim(), data.elem(), data.metric());
    out.ids = std::move(pool);
    size_t rec = data.record_bytes();
    for (size_t i = 0; i < m; ++i) {
        std::memcpy(out.data.raw_mut(i), data.raw(out.ids[i]), rec);
    }
    return out;
}

namespace {

std::ifstream open_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return in;
}

std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot create " + path);
    return out;
}

size_t file_size_of(std::ifstream& in) {
    in.seekg(0, std::ios::end);
    size_t sz = static_cast<size_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    return sz;
}

}  // namespace

VectorDataset load_vectors(const std::string& path, ElemType elem, Metric metric) {
    std::ifstream in = open_input(path);
    size_t total = file_size_of(in);

    int32_t dim = 0;
    if (total < sizeof(dim)) throw std::runtime_error(path + ": file too small for a record header");
    in.read(reinterpret_cast<char*>(&dim), sizeof(dim));
    if (dim <= 0) throw std::runtime_error(path + ": non-positive dimension in record 0");

    size_t rec_bytes = sizeof(int32_t) + static_cast<size_t>(dim) * elem_size(elem);
    if (total % rec_bytes != 0)
        throw std::runtime_error(path + ": size is not a whole number of records (trailing bytes)");
    size_t n = total / rec_bytes;
    if (n == 0) throw std::runtime_error(path + ": no records");

    VectorDataset data(n, static_cast<size_t>(dim), elem, metric);
    size_t payload = data.record_bytes();
    for (size_t i = 0; i < n; ++i) {
        if (i > 0) {
            int32_t d = 0;
            in.read(reinterpret_cast<char*>(&d), sizeof(d));
            if (d != dim)
                throw std::runtime_error(path + ": record " + std::to_string(i) +
                                         " dimension " + std::to_string(d) + " != " + std::to_string(dim));
        }
        in.read(reinterpret_cast<char*>(data.raw_mut(i)), static_cast<std::streamsize>(payload));
        if (!in) throw std::runtime_error(path + ": truncated read at record " + std::to_string(i));
    }
    return data;
}

void save_vectors(const std::string& path, const VectorDataset& data) {
    std::ofstream out = open_output(path);
    int32_t dim = static_cast<int32_t>(data.dim());
    for (size_t i = 0; i < data.size(); ++i) {
        out.write(reinterpret_cast<const char*>(&dim), sizeof(dim));
        out.write(reinterpret_cast<const char*>(data.raw(i)),
                  static_cast<std::streamsize>(data.record_bytes()));
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

void save_ground_truth(const std::string& ivecs_path, const std::string& dists_path,
                       const GroundTruth& gt) {
    if (gt.ids.size() != gt.dists.size())
        throw std::invalid_argument("ground truth id/distance list count mismatch");
    std::ofstream iv = open_output(ivecs_path);
    std::ofstream dv = open_output(dists_path);
    for (size_t q = 0; q < gt.ids.size(); ++q) {
        if (gt.ids[q].size() != gt.dists[q].size())
            throw std::invalid_argument("ground truth id/distance length mismatch at query " +
                                        std::to_string(q));
        int32_t cnt = static_cast<int32_t>(gt.ids[q].size());
        iv.write(reinterpret_cast<const char*>(&cnt), sizeof(cnt));
        iv.write(reinterpret_cast<const char*>(gt.ids[q].data()),
                 static_cast<std::streamsize>(sizeof(int32_t) * gt.ids[q].size()));
        dv.write(reinterpret_cast<const char*>(&cnt), sizeof(cnt));
        dv.write(reinterpret_cast<const char*>(gt.dists[q].data()),
                 static_cast<std::streamsize>(sizeof(float) * gt.dists[q].size()));
    }
    if (!iv || !dv) throw std::runtime_error("ground truth write failed");
}

std::vector<std::vector<vertex_id>> load_ivecs(const std::string& path) {
    std::ifstream in = open_input(path);
    size_t total = file_size_of(in);
    std::vector<std::vector<vertex_id>> lists;
    size_t consumed = 0;
    while (consumed < total) {
        int32_t cnt = 0;
        in.read(reinterpret_cast<char*>(&cnt), sizeof(cnt));
        if (!in || cnt < 0) throw std::runtime_error(path + ": bad record count");
        std::vector<vertex_id> ids(static_cast<size_t>(cnt));
        in.read(reinterpret_cast<char*>(ids.data()),
                static_cast<std::streamsize>(sizeof(int32_t) * ids.size()));
        if (!in) throw std::runtime_error(path + ": truncated record");
        consumed += sizeof(int32_t) * (1 + ids.size());
        lists.push_back(std::move(ids));
    }
    return lists;
}

GroundTruth load_ground_truth(const std::string& ivecs_path, const std::string& dists_path) {
    GroundTruth gt;
    gt.ids = load_ivecs(ivecs_path);

    std::ifstream in = open_input(dists_path);
    size_t total = file_size_of(in);
    size_t consumed = 0;
    while (consumed < total) {
        int32_t cnt = 0;
        in.read(reinterpret_cast<char*>(&cnt), sizeof(cnt));
        if (!in || cnt < 0) throw std::runtime_error(dists_path + ": bad record count");
        std::vector<float> d(static_cast<size_t>(cnt));
        in.read(reinterpret_cast<char*>(d.data()),
                static_cast<std::streamsize>(sizeof(float) * d.size()));
        if (!in) throw std::runtime_error(dists_path + ": truncated record");
        consumed += sizeof(int32_t) + sizeof(float) * d.size();
        gt.dists.push_back(std::move(d));
    }
    if (gt.ids.size() != gt.dists.size())
        throw std::runtime_error("ground truth sidecar query count mismatch");
    return gt;
}

}  // namespace starseg
