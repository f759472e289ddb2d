#include "dtgba/serialize.hpp"

#include "dtgba/errors.hpp"
#include "dtgba/rng.hpp"

#include <cstdio>
#include <fstream>

namespace dtgba {

namespace {

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ValidationError("checkpoint: truncated file " + path.string());
  return v;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (ckpt.magic.size() != 8) throw ValidationError("checkpoint: magic must be 8 bytes");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LookupError("checkpoint: cannot write " + path.string());
  out.write(ckpt.magic.data(), 8);
  put(out, ckpt.version);
  const std::string header = ckpt.header.dump();
  put(out, static_cast<std::uint64_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  put(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, m] : ckpt.tensors) {
    put(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(out, static_cast<std::uint64_t>(m.rows()));
    put(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) put(out, m(r, c));
    }
  }
  if (!out) throw LookupError("checkpoint: write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path, const std::string& magic,
                           std::uint32_t max_version) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LookupError("checkpoint: cannot open " + path.string());
  Checkpoint ckpt;
  ckpt.magic.resize(8);
  in.read(ckpt.magic.data(), 8);
  if (!in || ckpt.magic != magic) throw ValidationError("checkpoint: " + path.string() + " is not a " + magic + " file");
  ckpt.version = get<std::uint32_t>(in, path);
  if (ckpt.version > max_version) {
    throw ValidationError("checkpoint: format version " + std::to_string(ckpt.version) + " is newer than supported " +
                          std::to_string(max_version));
  }
  const auto header_len = get<std::uint64_t>(in, path);
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw ValidationError("checkpoint: truncated header in " + path.string());
  ckpt.header = nlohmann::json::parse(header);
  const auto count = get<std::uint32_t>(in, path);
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = get<std::uint32_t>(in, path);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rows = get<std::uint64_t>(in, path);
    const auto cols = get<std::uint64_t>(in, path);
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = get<double>(in, path);
    }
    ckpt.tensors.emplace(std::move(name), std::move(m));
  }
  return ckpt;
}

std::uint64_t checksum_matrices(std::initializer_list<const Eigen::MatrixXd*> matrices) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Eigen::MatrixXd* m : matrices) {
    const std::int64_t shape[2] = {m->rows(), m->cols()};
    h = fnv1a64(shape, sizeof(shape), h);
    for (Eigen::Index r = 0; r < m->rows(); ++r) {
      for (Eigen::Index c = 0; c < m->cols(); ++c) {
        const double v = (*m)(r, c);
        h = fnv1a64(&v, sizeof(v), h);
      }
    }
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace dtgba
