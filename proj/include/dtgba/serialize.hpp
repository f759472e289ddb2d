#pragma once

// Versioned single-file checkpoints: an 8-byte magic, a format version, a JSON
// header and a sequence of named dense matrices (row-major doubles).

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace dtgba {

struct Checkpoint {
  std::string magic;  // exactly 8 characters
  std::uint32_t version = 1;
  nlohmann::json header;
  std::map<std::string, Eigen::MatrixXd> tensors;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

/// Throws ValidationError when the magic differs or the version is newer
/// than `max_version`.
Checkpoint read_checkpoint(const std::filesystem::path& path, const std::string& magic,
                           std::uint32_t max_version);

/// FNV-1a over the raw bytes of every matrix in order, including shapes.
std::uint64_t checksum_matrices(std::initializer_list<const Eigen::MatrixXd*> matrices);

std::string hex64(std::uint64_t v);

}  // namespace dtgba
