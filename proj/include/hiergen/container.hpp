#pragma once

// Binary tensor container.
//
// Layout (all integers little-endian):
//   magic   4 bytes  "MNDH"
//   version u32      currently 1
//   count   u32      number of tensors
//   then per tensor:
//     name_len u16, name bytes (UTF-8)
//     dtype    u8   0 = f32, 1 = i32
//     rank     u8
//     extents  rank * u32
//     payload  product(extents) elements, row-major
//
// Tensor names are unique within a file. Malformed input raises format_error
// with the byte offset where parsing failed.

#include <cstdint>
#include <string>
#include <vector>

#include "hiergen/tensor.hpp"

namespace hiergen {

enum class dtype_tag : uint8_t { f32 = 0, i32 = 1 };

struct container_entry {
    std::string name;
    dtype_tag dtype = dtype_tag::f32;
    std::vector<int> shape;
    std::vector<float> f;    // used when dtype == f32
    std::vector<int32_t> i;  // used when dtype == i32
};

struct container {
    std::vector<container_entry> entries;

    container_entry& add_f32(const std::string& name, std::vector<int> shape,
                             const std::vector<real>& values);
    container_entry& add_i32(const std::string& name, std::vector<int> shape,
                             std::vector<int32_t> values);
    const container_entry* find(const std::string& name) const;
    // find or throw key_error
    const container_entry& at(const std::string& name) const;

    // f32 entry as a tensor (casts to real)
    tptr tensor_at(const std::string& name) const;
};

void save_container(const std::string& path, const container& c);
container load_container(const std::string& path);

// FNV-1a over a byte range / a file; used for artifact hashes
uint64_t fnv1a64(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ull);
uint64_t hash_file(const std::string& path);

} // namespace hiergen
