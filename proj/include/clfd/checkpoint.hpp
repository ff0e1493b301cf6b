#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "clfd/dataset.hpp"
#include "clfd/error.hpp"
#include "clfd/optim.hpp"
#include "clfd/tensor.hpp"

namespace clfd {

// Checkpoint container: named parameters, optional Adam state, and a
// free-form JSON meta block (config echo, epoch counters, rng stream states,
// metrics history). Binary layout, little-endian:
//   magic "CLFDCKP1" | u32 header_len | header JSON | raw tensor data
// Raw data order: every parameter tensor in manifest order, then (if present)
// all Adam first moments, then all second moments.
template <class S>
struct Checkpoint {
  ParameterSet<S> params;
  bool has_adam = false;
  std::vector<Tensor<S>> adam_m, adam_v;
  std::uint64_t adam_step = 0;
  nlohmann::json meta = nlohmann::json::object();
};

namespace detail {

inline constexpr char kCkptMagic[9] = "CLFDCKP1";

template <class S>
const char* precision_tag() {
  if constexpr (std::is_same_v<S, float>) return "f32";
  else {
    static_assert(std::is_same_v<S, double>, "unsupported scalar type");
    return "f64";
  }
}

template <class S>
void append_tensor(std::string& out, const Tensor<S>& t) {
  const std::size_t bytes = t.numel() * sizeof(S);
  const std::size_t off = out.size();
  out.resize(off + bytes);
  std::memcpy(out.data() + off, t.data.data(), bytes);
}

template <class S>
Tensor<S> read_tensor(const std::string& in, std::size_t& off, const Shape& shape,
                      const std::string& what) {
  Tensor<S> t(shape);
  const std::size_t bytes = t.numel() * sizeof(S);
  check(off + bytes <= in.size(), ErrorCategory::data,
        "checkpoint: truncated while reading ", what);
  std::memcpy(t.data.data(), in.data() + off, bytes);
  off += bytes;
  return t;
}

}  // namespace detail

template <class S>
std::string encode_checkpoint(const Checkpoint<S>& ck) {
  nlohmann::json header;
  header["version"] = 1;
  header["precision"] = detail::precision_tag<S>();
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& p : ck.params)
    manifest.push_back({{"name", p.name}, {"shape", p.value.shape}});
  header["params"] = manifest;
  header["adam"] = {{"present", ck.has_adam}, {"step", ck.adam_step}};
  header["meta"] = ck.meta;
  if (ck.has_adam) {
    check(ck.adam_m.size() == ck.params.size() &&
              ck.adam_v.size() == ck.params.size(),
          ErrorCategory::internal, "checkpoint: adam state count mismatch");
    for (std::size_t i = 0; i < ck.params.size(); ++i)
      check(ck.adam_m[i].shape == ck.params[i].value.shape &&
                ck.adam_v[i].shape == ck.params[i].value.shape,
            ErrorCategory::internal, "checkpoint: adam state shape mismatch");
  }

  const std::string hj = header.dump();
  std::string out(detail::kCkptMagic, 8);
  detail::put_u32(out, std::uint32_t(hj.size()));
  out += hj;
  for (const auto& p : ck.params) detail::append_tensor(out, p.value);
  if (ck.has_adam) {
    for (const auto& t : ck.adam_m) detail::append_tensor(out, t);
    for (const auto& t : ck.adam_v) detail::append_tensor(out, t);
  }
  return out;
}

template <class S>
Checkpoint<S> decode_checkpoint(const std::string& bytes,
                                const std::string& origin) {
  check(bytes.size() >= 12, ErrorCategory::data, origin,
        ": too short to be a checkpoint");
  check(bytes.compare(0, 8, detail::kCkptMagic, 8) == 0, ErrorCategory::data,
        origin, ": bad checkpoint magic");
  const std::uint32_t hl = detail::get_u32(bytes, 8);
  check(12 + std::size_t(hl) <= bytes.size(), ErrorCategory::data, origin,
        ": truncated header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(12, hl));
  } catch (const std::exception& e) {
    fail(ErrorCategory::data, origin, ": corrupt header JSON: ", e.what());
  }
  Checkpoint<S> ck;
  try {
    check(header.at("version").get<int>() == 1, ErrorCategory::data, origin,
          ": unsupported checkpoint version");
    const std::string prec = header.at("precision").get<std::string>();
    check(prec == detail::precision_tag<S>(), ErrorCategory::data, origin,
          ": checkpoint precision is ", prec, ", expected ",
          detail::precision_tag<S>());
    std::size_t off = 12 + hl;
    for (const auto& p : header.at("params")) {
      const std::string name = p.at("name").get<std::string>();
      const Shape shape = p.at("shape").get<Shape>();
      ck.params.add(name,
                    detail::read_tensor<S>(bytes, off, shape, "param " + name));
    }
    ck.has_adam = header.at("adam").at("present").get<bool>();
    ck.adam_step = header.at("adam").at("step").get<std::uint64_t>();
    if (ck.has_adam) {
      for (std::size_t i = 0; i < ck.params.size(); ++i)
        ck.adam_m.push_back(detail::read_tensor<S>(
            bytes, off, ck.params[i].value.shape, "adam m"));
      for (std::size_t i = 0; i < ck.params.size(); ++i)
        ck.adam_v.push_back(detail::read_tensor<S>(
            bytes, off, ck.params[i].value.shape, "adam v"));
    }
    check(off == bytes.size(), ErrorCategory::data, origin,
          ": trailing bytes after checkpoint payload");
    ck.meta = header.at("meta");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCategory::data, origin, ": corrupt header: ", e.what());
  }
  return ck;
}

template <class S>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<S>& ck) {
  std::filesystem::create_directories(path.parent_path().empty()
                                          ? "."
                                          : path.parent_path());
  detail::write_file(path, encode_checkpoint(ck));
}

template <class S>
Checkpoint<S> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint<S>(detail::read_file(path), path.string());
}

}  // namespace clfd
