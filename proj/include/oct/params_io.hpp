#pragma once

// Flat binary container for named arrays (parameters, optimizer slots):
//   "OCTP" | u32 version | u32 array count
//   per array: u16 name length | name bytes | u8 dtype (0=f32, 1=f64)
//              | u8 ndim | u32 dims... | raw little-endian data
// Writing the same arrays twice produces identical bytes, so checkpoints
// can be compared with cmp/sha256.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "oct/errors.hpp"
#include "oct/jsonutil.hpp"
#include "oct/nn.hpp"

namespace oct {

namespace detail {

constexpr char kParamMagic[4] = {'O', 'C', 'T', 'P'};
constexpr uint32_t kParamVersion = 1;

template <typename T>
constexpr uint8_t dtype_code() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? 0 : 1;
}

template <typename V>
void put(std::ostream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V take(std::istream& in, const std::string& path) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw IoError("truncated array file: " + path);
  return v;
}

}  // namespace detail

template <typename T>
struct ArrayRef {
  std::string name;
  const Shape* shape;
  const std::vector<T>* data;
};

template <typename T>
struct ArrayMut {
  std::string name;
  const Shape* shape;
  std::vector<T>* data;
};

template <typename T>
void save_arrays(const std::vector<ArrayRef<T>>& arrays,
                 const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot create " + path);
  out.write(detail::kParamMagic, 4);
  detail::put(out, detail::kParamVersion);
  detail::put(out, uint32_t(arrays.size()));
  for (const auto& a : arrays) {
    contract(a.name.size() < 65536, "array name too long");
    contract(long(a.data->size()) == shape_numel(*a.shape),
             "array data does not match its shape: " + a.name);
    detail::put(out, uint16_t(a.name.size()));
    out.write(a.name.data(), long(a.name.size()));
    detail::put(out, detail::dtype_code<T>());
    detail::put(out, uint8_t(a.shape->size()));
    for (int d : *a.shape) detail::put(out, uint32_t(d));
    out.write(reinterpret_cast<const char*>(a.data->data()),
              long(a.data->size() * sizeof(T)));
  }
  if (!out) throw IoError("write failed: " + path);
}

// Strict load: the file must contain exactly the requested names (any order),
// with matching dtype and shape.
template <typename T>
void load_arrays(const std::vector<ArrayMut<T>>& arrays,
                 const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, detail::kParamMagic, 4) != 0)
    throw IoError("not a parameter file: " + path);
  const auto version = detail::take<uint32_t>(in, path);
  if (version != detail::kParamVersion)
    throw IoError("unsupported parameter file version in " + path);
  const auto count = detail::take<uint32_t>(in, path);
  if (count != arrays.size())
    throw IoError(path + ": holds " + std::to_string(count) + " arrays, need " +
                  std::to_string(arrays.size()));
  std::vector<bool> filled(arrays.size(), false);
  for (uint32_t i = 0; i < count; ++i) {
    const auto nlen = detail::take<uint16_t>(in, path);
    std::string name(nlen, '\0');
    in.read(name.data(), nlen);
    const auto dtype = detail::take<uint8_t>(in, path);
    const auto ndim = detail::take<uint8_t>(in, path);
    Shape shape(ndim);
    for (int d = 0; d < ndim; ++d)
      shape[size_t(d)] = int(detail::take<uint32_t>(in, path));
    size_t slot = arrays.size();
    for (size_t j = 0; j < arrays.size(); ++j)
      if (!filled[j] && arrays[j].name == name) {
        slot = j;
        break;
      }
    if (slot == arrays.size())
      throw IoError(path + ": unexpected array \"" + name + "\"");
    if (dtype != detail::dtype_code<T>())
      throw IoError(path + ": dtype mismatch for \"" + name + "\"");
    if (shape != *arrays[slot].shape)
      throw IoError(path + ": shape mismatch for \"" + name + "\"");
    auto& dst = *arrays[slot].data;
    dst.resize(size_t(shape_numel(shape)));
    in.read(reinterpret_cast<char*>(dst.data()), long(dst.size() * sizeof(T)));
    if (!in) throw IoError("truncated array file: " + path);
    filled[slot] = true;
  }
  for (size_t j = 0; j < arrays.size(); ++j)
    if (!filled[j])
      throw IoError(path + ": missing array \"" + arrays[j].name + "\"");
}

template <typename T>
void save_params(const ParamGroup<T>& group, const std::string& path) {
  std::vector<ArrayRef<T>> refs;
  refs.reserve(group.items.size());
  for (const Parameter<T>* p : group.items)
    refs.push_back({p->name, &p->shape, &p->value});
  save_arrays(refs, path);
}

template <typename T>
void load_params(ParamGroup<T>& group, const std::string& path) {
  std::vector<ArrayMut<T>> muts;
  muts.reserve(group.items.size());
  for (Parameter<T>* p : group.items)
    muts.push_back({p->name, &p->shape, &p->value});
  load_arrays(muts, path);
}

template <typename T>
Json params_manifest(const ParamGroup<T>& group) {
  Json arrays = Json::array();
  for (const Parameter<T>* p : group.items) {
    Json e;
    e["name"] = p->name;
    e["dtype"] = detail::dtype_code<T>() == 0 ? "f32" : "f64";
    e["shape"] = p->shape;
    e["count"] = p->count();
    arrays.push_back(e);
  }
  Json m;
  m["arrays"] = arrays;
  m["total"] = group.scalar_count();
  return m;
}

}  // namespace oct
