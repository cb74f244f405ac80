#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace entangle::diffcore {

using Matrix = Eigen::MatrixXd;

/// Ordered name → array map shared by parameters and gradients.
class NamedArrays {
 public:
  using Storage = std::map<std::string, Matrix>;

  Matrix& add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    auto [it, inserted] = arrays_.emplace(name, Matrix::Zero(rows, cols));
    if (!inserted) throw std::invalid_argument("duplicate array name '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return arrays_.count(name) != 0; }

  Matrix& at(const std::string& name) {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw std::out_of_range("no array named '" + name + "'");
    return it->second;
  }
  const Matrix& at(const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw std::out_of_range("no array named '" + name + "'");
    return it->second;
  }

  std::size_t size() const { return arrays_.size(); }
  bool empty() const { return arrays_.empty(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, m] : arrays_) n += static_cast<std::size_t>(m.size());
    return n;
  }

  bool all_finite() const {
    for (const auto& [_, m] : arrays_)
      if (!m.allFinite()) return false;
    return true;
  }

  auto begin() { return arrays_.begin(); }
  auto end() { return arrays_.end(); }
  auto begin() const { return arrays_.begin(); }
  auto end() const { return arrays_.end(); }

  friend bool operator==(const NamedArrays& a, const NamedArrays& b) {
    if (a.arrays_.size() != b.arrays_.size()) return false;
    for (auto ia = a.arrays_.begin(), ib = b.arrays_.begin(); ia != a.arrays_.end(); ++ia, ++ib) {
      if (ia->first != ib->first) return false;
      if (ia->second.rows() != ib->second.rows() || ia->second.cols() != ib->second.cols())
        return false;
      // bitwise: distinguishes -0.0 from 0.0 and compares NaN payloads
      if (std::memcmp(ia->second.data(), ib->second.data(),
                      sizeof(double) * static_cast<std::size_t>(ia->second.size())) != 0)
        return false;
    }
    return true;
  }

 protected:
  Storage arrays_;
};

class GradientMap;

/// Named trainable arrays. Shapes are fixed once added.
class ParameterSet : public NamedArrays {
 public:
  GradientMap zeros_like() const;
};

/// One array per parameter, congruent in shape.
class GradientMap : public NamedArrays {
 public:
  /// Adds `g` into the named slot, creating it on first use.
  void accumulate(const std::string& name, const Matrix& g) {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) {
      arrays_.emplace(name, g);
      return;
    }
    if (it->second.rows() != g.rows() || it->second.cols() != g.cols())
      throw std::invalid_argument("gradient shape mismatch for '" + name + "'");
    it->second += g;
  }

  bool congruent_with(const ParameterSet& params) const {
    for (const auto& [name, g] : *this) {
      if (!params.contains(name)) return false;
      const auto& p = params.at(name);
      if (p.rows() != g.rows() || p.cols() != g.cols()) return false;
    }
    return true;
  }
};

inline GradientMap ParameterSet::zeros_like() const {
  GradientMap g;
  for (const auto& [name, m] : arrays_) g.add(name, m.rows(), m.cols());
  return g;
}

// Checkpoint layout (all integers and floats little-endian):
//   8-byte magic "ENTCKPT1", u64 array count, then per array:
//   u32 name length, name bytes, u64 rows, u64 cols, rows*cols f64 row-major.
namespace checkpoint_detail {

inline constexpr char kMagic[8] = {'E', 'N', 'T', 'C', 'K', 'P', 'T', '1'};

template <class T>
void put_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get_le(std::istream& is) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T)))
    throw std::runtime_error("checkpoint: truncated file");
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace checkpoint_detail

inline void write_checkpoint(std::ostream& os, const NamedArrays& arrays) {
  using namespace checkpoint_detail;
  os.write(kMagic, sizeof(kMagic));
  put_le<std::uint64_t>(os, arrays.size());
  for (const auto& [name, m] : arrays) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint64_t>(os, static_cast<std::uint64_t>(m.rows()));
    put_le<std::uint64_t>(os, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) put_le<double>(os, m(r, c));
  }
}

inline ParameterSet read_checkpoint(std::istream& is) {
  using namespace checkpoint_detail;
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  const auto count = get_le<std::uint64_t>(is);
  ParameterSet params;
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto len = get_le<std::uint32_t>(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw std::runtime_error("checkpoint: truncated name");
    const auto rows = static_cast<Eigen::Index>(get_le<std::uint64_t>(is));
    const auto cols = static_cast<Eigen::Index>(get_le<std::uint64_t>(is));
    Matrix& m = params.add(name, rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = get_le<double>(is);
  }
  return params;
}

inline void save_checkpoint(const std::string& path, const NamedArrays& arrays) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  write_checkpoint(os, arrays);
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path);
}

inline ParameterSet load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  return read_checkpoint(is);
}

}  // namespace entangle::diffcore
