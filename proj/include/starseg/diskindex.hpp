// Licensed under the Apache License, Version 2.0 (the "License"); you may not use this file except in compliance
// with the License. You may obtain a copy of the License at
//
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software distributed under the License
// is distributed on an "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express
// or implied. See the License for the specific language governing permissions and limitations under the License.

#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "starseg/dataset.hpp"
#include "starseg/graph.hpp"
#include "starseg/layout.hpp"
#include "starseg/types.hpp"

namespace starseg {

constexpr char kSegmentMagic[8] = {'S', 'T', 'A', 'R', 'S', 'E', 'G', '1'};
constexpr uint32_t kSegmentVersion = 1;

/* Segment file layout: the header occupies block 0 (padded to block_bytes),
 * data block i starts at byte offset (i + 1) * block_bytes. Every vertex
 * record is record_bytes long and sits at slot * record_bytes inside its
 * block: vector payload, then u32 neighbor count, then max_degree u32
 * neighbor slots with the unused tail zero-filled. All fields little-endian.
 *
 * Serialized header fields, from offset 0:
 *   magic[8], u32 version, u32 n, u32 dim, u32 max_degree,
 *   u32 slots_per_block, u64 num_blocks, u64 block_bytes,
 *   u8 elem, u8 metric, u16 zero pad, u32 entry. */
struct DiskIndexHeader {
    uint32_t n = 0;
    uint32_t dim = 0;
    uint32_t max_degree = 0;
    uint32_t slots_per_block = 0;
    uint64_t num_blocks = 0;
    uint64_t block_bytes = 0;
    ElemType elem = ElemType::kFloat32;
    Metric metric = Metric::kL2;
    vertex_id entry = 0;

    uint64_t record_bytes() const {
        return static_cast<uint64_t>(dim) * elem_size(elem) + 4 + 4ull * max_degree;
    }
    uint64_t vector_bytes() const { return static_cast<uint64_t>(dim) * elem_size(elem); }
    LayoutGeometry geometry() const;
};

/* Location map sidecar: one u64 per vertex, block_id * 256 + slot. The slot
 * field is a single byte, so packing requires slots_per_block <= 256. */
uint64_t pack_location(uint32_t block, uint32_t slot);
std::pair<uint32_t, uint32_t> unpack_location(uint64_t packed);

void write_index(const std::string& idx_path, const std::string& map_path,
                 const VectorDataset& data, const NeighborGraph& graph,
                 const BlockLayout& layout);

struct VerifyReport {
    bool ok = true;
    std::string first_violation;  // empty when ok
};

// Offline structural check of a segment and its map; never throws on content
// problems, only on unreadable files.
VerifyReport verify_index(const std::string& idx_path, const std::string& map_path);

/* One decoded data block. Raw block bytes stay resident so vector payloads
 * can be used without copying; records lists the occupied slots in slot
 * order. */
class BlockData {
public:
    struct Record {
        vertex_id id;
        uint32_t slot;
        uint32_t degree;
    };

    uint32_t block_id = UINT32_MAX;
    std::vector<Record> records;

    const std::byte* vector_of(const Record& r) const {
        return bytes_.get() + r.slot * record_bytes_ ;
    }
    const uint32_t* neighbors_of(const Record& r) const {
        return reinterpret_cast<const uint32_t*>(bytes_.get() + r.slot * record_bytes_ +
                                                 vector_bytes_ + sizeof(uint32_t));
    }

private:
    friend class DiskIndexReader;
    std::unique_ptr<std::byte[], void (*)(void*)> bytes_{nullptr, ::free};
    uint64_t record_bytes_ = 0;
    uint64_t vector_bytes_ = 0;
    uint64_t capacity_ = 0;
};

/* Read-only segment handle. read_block issues exactly one block-aligned,
 * block-sized pread per call and bumps the io counter once. Opens with
 * O_DIRECT when the block size allows it, silently falling back to buffered
 * reads (the direct_io flag records which one is active). Thread-safe. */
class DiskIndexReader {
public:
    DiskIndexReader(const std::string& idx_path, const std::string& map_path,
                    bool try_direct = true);
    ~DiskIndexReader();

    DiskIndexReader(const DiskIndexReader&) = delete;
    DiskIndexReader& operator=(const DiskIndexReader&) = delete;

    const DiskIndexHeader& header() const { return header_; }
    bool direct_io() const { return direct_io_; }
    uint64_t io_count() const { return io_count_.load(std::memory_order_relaxed); }

    std::pair<uint32_t, uint32_t> locate(vertex_id v) const;
    const std::vector<uint64_t>& location_map() const { return map_; }

    void read_block(uint32_t block_id, BlockData& out) const;
    BlockData read_block(uint32_t block_id) const;

private:
    int fd_ = -1;
    bool direct_io_ = false;
    DiskIndexHeader header_;
    std::vector<uint64_t> map_;
    // occupants per block in slot order, CSR encoded
    std::vector<uint64_t> block_start_;
    std::vector<std::pair<uint32_t, vertex_id>> slot_vertex_;
    mutable std::atomic<uint64_t> io_count_{0};
};

}  // namespace starseg
