// Licensed under the Apache License, Version 2.0 (the "License"); you may not use this file except in compliance
// with the License. You may obtain a copy of the License at
//
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software distributed under the License
// is distributed on an "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express
// or implied. See the License for the specific language governing permissions and limitations under the License.

#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace starseg {

// All on-disk formats are little-endian; we serialize by memcpy of native
// scalars, so a little-endian host is required.
static_assert(std::endian::native == std::endian::little,
              "starseg file formats require a little-endian host");

using vertex_id = uint32_t;

enum class ElemType : uint8_t { kUint8 = 0, kFloat32 = 1 };
enum class Metric : uint8_t { kL2 = 0, kIP = 1 };

inline size_t elem_size(ElemType t) {
    return t == ElemType::kUint8 ? 1 : 4;
}

inline std::string to_string(ElemType t) {
    return t == ElemType::kUint8 ? "uint8" : "float32";
}

inline std::string to_string(Metric m) {
    return m == Metric::kL2 ? "l2" : "ip";
}

inline ElemType elem_type_from_code(uint8_t code) {
    if (code > 1) throw std::runtime_error("bad element type code " + std::to_string(code));
    return static_cast<ElemType>(code);
}

inline Metric metric_from_code(uint8_t code) {
    if (code > 1) throw std::runtime_error("bad metric code " + std::to_string(code));
    return static_cast<Metric>(code);
}

}  // namespace starseg
