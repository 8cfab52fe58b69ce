#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "edmae/tensor.hpp"

namespace edmae {

// .t32 tensor file: magic "T32\0", u32 LE rank, rank x u32 LE dims, then raw
// little-endian float32 values, row-major.
void save_t32(const std::filesystem::path& path, const Tensor& t);
Tensor load_t32(const std::filesystem::path& path);

// Named-tensor archive with training metadata (.edmk):
//   magic "EDMK", u32 version=1, u32 tensor count,
//   per tensor: u16 name length, name bytes, embedded .t32 payload,
//   trailing metadata: u32 length, then that many bytes of key=value lines.
// Tensor names are namespaced "t/" (teacher), "s/" (student), "d/" (decoder);
// fine-tuned task heads use "h/".
struct Checkpoint {
    std::vector<std::pair<std::string, Tensor>> tensors;  // in archive order
    std::map<std::string, std::string> meta;

    const Tensor* find(const std::string& name) const;
    // all tensors under a prefix, prefix stripped, archive order preserved
    std::vector<std::pair<std::string, Tensor>> with_prefix(const std::string& prefix) const;

    std::string meta_or(const std::string& key, const std::string& fallback) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace edmae
