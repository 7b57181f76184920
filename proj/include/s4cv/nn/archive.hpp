#pragma once

// Parameter archive: one file per network.
//
//   magic   "S4CVARC1"                      8 bytes
//   count   u32                             number of entries
//   entry*  name_len u32, name bytes,
//           kind u8 (0 parameter, 1 buffer),
//           dtype u8 (1 float32, 2 float64),
//           rank u32, dims i64[rank],
//           data (little-endian, row-major)
//
// Entries appear in registration order, parameters before buffers.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "s4cv/nn/params.hpp"

namespace s4cv {

namespace archive_detail {

inline constexpr char kMagic[8] = {'S', '4', 'C', 'V', 'A', 'R', 'C', '1'};

template <typename U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& is, const std::string& path) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(U))) throw DataError("truncated archive " + path);
  return v;
}

template <typename T>
constexpr std::uint8_t dtype_code() {
  return sizeof(T) == 4 ? 1 : 2;
}

template <typename T>
void write_entry(std::ostream& os, const std::string& name, std::uint8_t kind, const Tensor<T>& t) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint8_t>(os, kind);
  put<std::uint8_t>(os, dtype_code<T>());
  put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put<std::int64_t>(os, d);
  os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(T)));
}

}  // namespace archive_detail

template <typename T>
void save_archive(const std::string& path, const ParamSnapshot<T>& snap, const std::vector<std::string>& param_order,
                  const std::vector<std::string>& buffer_order) {
  using namespace archive_detail;
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write archive " + path);
  os.write(kMagic, 8);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(param_order.size() + buffer_order.size()));
  for (const auto& n : param_order) write_entry(os, n, 0, snap.params.at(n));
  for (const auto& n : buffer_order) write_entry(os, n, 1, snap.buffers.at(n));
  if (!os) throw DataError("failed writing archive " + path);
}

template <typename T>
void save_archive(const std::string& path, const ParamStore<T>& store) {
  save_archive(path, snapshot(store), store.param_names(), store.buffer_names());
}

// Reads any archive; values are converted to T.
template <typename T>
ParamSnapshot<T> load_archive(const std::string& path) {
  using namespace archive_detail;
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open archive " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw DataError("not a parameter archive: " + path);
  const auto count = get<std::uint32_t>(is, path);
  ParamSnapshot<T> snap;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = get<std::uint32_t>(is, path);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw DataError("truncated archive " + path);
    const auto kind = get<std::uint8_t>(is, path);
    const auto dtype = get<std::uint8_t>(is, path);
    const auto rank = get<std::uint32_t>(is, path);
    Shape shape(rank);
    for (auto& d : shape) d = get<std::int64_t>(is, path);
    Tensor<T> t(shape);
    if (dtype == 1 || dtype == 2) {
      const std::size_t width = dtype == 1 ? 4 : 8;
      std::vector<char> raw(static_cast<std::size_t>(t.numel()) * width);
      if (!is.read(raw.data(), static_cast<std::streamsize>(raw.size()))) throw DataError("truncated archive " + path);
      for (std::int64_t i = 0; i < t.numel(); ++i) {
        if (dtype == 1) {
          float f;
          std::memcpy(&f, raw.data() + i * 4, 4);
          t[i] = static_cast<T>(f);
        } else {
          double f;
          std::memcpy(&f, raw.data() + i * 8, 8);
          t[i] = static_cast<T>(f);
        }
      }
    } else {
      throw DataError("unknown dtype code " + std::to_string(dtype) + " in " + path);
    }
    (kind == 0 ? snap.params : snap.buffers).emplace(std::move(name), std::move(t));
  }
  return snap;
}

}  // namespace s4cv
