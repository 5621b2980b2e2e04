#pragma once

// Checkpoint container: a directory holding manifest.json (config, names,
// shapes, scalar training state) and blob.bin (little-endian float64 values
// of parameters, then first moments, then second moments, in manifest order).

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "jiadf/autodiff.hpp"
#include "jiadf/config.hpp"
#include "jiadf/error.hpp"
#include "jiadf/optim.hpp"
#include "jiadf/serialize.hpp"

namespace jiadf {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  ParamStore params;
  AdamW optimizer;
  PlateauScheduler scheduler;
  std::optional<double> best_val_macro_f1;
  std::size_t epoch = 0;  // epochs completed
};

namespace detail {

inline void put_f64(std::ofstream& os, double x) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(x);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

inline json tensor_entries(const std::vector<std::string>& names, const std::vector<Tensor>& ts) {
  json a = json::array();
  for (std::size_t i = 0; i < ts.size(); ++i) a.push_back({{"name", names[i]}, {"shape", ts[i].shape()}});
  return a;
}

inline json opt_double(std::optional<double> v) {
  return v && std::isfinite(*v) ? json(*v) : json(nullptr);
}

}  // namespace detail

// Writes to a sibling temp directory and swaps it in, so an interrupted save
// leaves the previous checkpoint intact.
inline void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ck) {
  namespace fs = std::filesystem;
  std::vector<std::string> names;
  std::vector<Tensor> values;
  for (const auto& e : ck.params.entries()) {
    names.push_back(e.name);
    values.push_back(e.value);
  }
  std::vector<std::string> m_names, v_names;
  for (const auto& n : names) {
    m_names.push_back("adam.m/" + n);
    v_names.push_back("adam.v/" + n);
  }
  const auto& m = ck.optimizer.first_moments();
  const auto& v = ck.optimizer.second_moments();
  if (m.size() != values.size() || v.size() != values.size()) {
    throw CheckpointError("optimizer state does not match parameter store");
  }

  const auto& oc = ck.optimizer.config();
  const auto& pc = ck.scheduler.config();
  json manifest = {
      {"format_version", kCheckpointVersion},
      {"config", to_json(ck.config)},
      {"params", detail::tensor_entries(names, values)},
      {"optimizer_state", json::array()},
      {"optimizer",
       {{"steps", ck.optimizer.steps()},
        {"lr", oc.lr},
        {"beta1", oc.beta1},
        {"beta2", oc.beta2},
        {"eps", oc.eps},
        {"weight_decay", oc.weight_decay}}},
      {"scheduler",
       {{"lr", ck.scheduler.lr()},
        {"best", detail::opt_double(ck.scheduler.best())},
        {"bad_epochs", ck.scheduler.bad_epochs()},
        {"factor", pc.factor},
        {"patience", pc.patience},
        {"min_lr", pc.min_lr}}},
      {"best_val_macro_f1", detail::opt_double(ck.best_val_macro_f1)},
      {"epoch", ck.epoch}};
  for (const auto& e : detail::tensor_entries(m_names, m)) manifest["optimizer_state"].push_back(e);
  for (const auto& e : detail::tensor_entries(v_names, v)) manifest["optimizer_state"].push_back(e);

  fs::path tmp = dir;
  tmp += ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  {
    std::ofstream os(tmp / "blob.bin", std::ios::binary);
    if (!os) throw CheckpointError("cannot write checkpoint blob in '" + tmp.string() + "'");
    for (const std::vector<Tensor>* group : std::array<const std::vector<Tensor>*, 3>{&values, &m, &v})
      for (const auto& t : *group)
        for (double x : t.data()) detail::put_f64(os, x);
    if (!os.flush()) throw CheckpointError("failed writing checkpoint blob");
  }
  {
    std::ofstream os(tmp / "manifest.json", std::ios::binary);
    if (!os) throw CheckpointError("cannot write checkpoint manifest in '" + tmp.string() + "'");
    os << manifest.dump(2) << '\n';
    if (!os.flush()) throw CheckpointError("failed writing checkpoint manifest");
  }
  fs::path old = dir;
  old += ".old";
  fs::remove_all(old);
  if (fs::exists(dir)) fs::rename(dir, old);
  fs::rename(tmp, dir);
  fs::remove_all(old);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::ifstream ms(dir / "manifest.json", std::ios::binary);
  if (!ms) throw CheckpointError("missing manifest in checkpoint '" + dir.string() + "'");
  json manifest;
  try {
    manifest = json::parse(ms);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("unreadable checkpoint manifest: ") + e.what());
  }
  if (manifest.value("format_version", -1) != kCheckpointVersion) {
    throw CheckpointError("checkpoint format version " + manifest.value("format_version", json(-1)).dump() +
                          " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }

  std::ifstream bs(dir / "blob.bin", std::ios::binary);
  if (!bs) throw CheckpointError("missing blob in checkpoint '" + dir.string() + "'");
  std::vector<unsigned char> blob((std::istreambuf_iterator<char>(bs)), std::istreambuf_iterator<char>());

  Checkpoint ck;
  try {
    ck.config = config_from_json(manifest.at("config"));
    std::size_t total = 0;
    auto shapes_of = [&](const json& arr) {
      std::vector<std::pair<std::string, Shape>> out;
      for (const auto& e : arr) {
        Shape s = e.at("shape").get<Shape>();
        total += shape_numel(s);
        out.emplace_back(e.at("name").get<std::string>(), std::move(s));
      }
      return out;
    };
    const auto params = shapes_of(manifest.at("params"));
    const auto state = shapes_of(manifest.at("optimizer_state"));
    if (blob.size() != 8 * total) {
      throw CheckpointError("checkpoint blob is " + std::to_string(blob.size()) + " bytes, manifest describes " +
                            std::to_string(8 * total) + " (truncated or corrupt)");
    }
    if (state.size() != 2 * params.size()) throw CheckpointError("optimizer state count does not match params");

    std::size_t off = 0;
    auto read = [&](const Shape& s) {
      Tensor t(s);
      for (double& x : t.raw()) {
        x = detail::get_f64(blob.data() + off);
        off += 8;
      }
      return t;
    };
    for (const auto& [name, shape] : params) ck.params.add(name, read(shape));

    const json& o = manifest.at("optimizer");
    AdamWConfig oc{o.at("lr").get<double>(), o.at("beta1").get<double>(), o.at("beta2").get<double>(),
                   o.at("eps").get<double>(), o.at("weight_decay").get<double>()};
    ck.optimizer = AdamW(ck.params, oc);
    ck.optimizer.set_steps(o.at("steps").get<std::uint64_t>());
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (state[i].second != params[i].second) throw CheckpointError("moment shape mismatch for " + params[i].first);
      ck.optimizer.first_moments()[i] = read(state[i].second);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& s = state[params.size() + i].second;
      if (s != params[i].second) throw CheckpointError("moment shape mismatch for " + params[i].first);
      ck.optimizer.second_moments()[i] = read(s);
    }

    const json& sc = manifest.at("scheduler");
    PlateauConfig pc{sc.at("factor").get<double>(), sc.at("patience").get<std::size_t>(),
                     sc.at("min_lr").get<double>()};
    ck.scheduler = PlateauScheduler(sc.at("lr").get<double>(), pc);
    ck.scheduler.restore(sc.at("lr").get<double>(),
                         sc.at("best").is_null() ? -std::numeric_limits<double>::infinity()
                                                 : sc.at("best").get<double>(),
                         sc.at("bad_epochs").get<std::size_t>());
    if (!manifest.at("best_val_macro_f1").is_null()) {
      ck.best_val_macro_f1 = manifest.at("best_val_macro_f1").get<double>();
    }
    ck.epoch = manifest.at("epoch").get<std::size_t>();
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint manifest: ") + e.what());
  }
  return ck;
}

// Fails with the first parameter whose name or shape differs from the
// layout the given config produces.
inline void require_compatible(const ParamStore& loaded, const ParamStore& expected) {
  if (loaded.size() != expected.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(loaded.size()) + " parameters, config expects " +
                          std::to_string(expected.size()));
  }
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    const auto& a = loaded.entry(i);
    const auto& b = expected.entry(i);
    if (a.name != b.name) throw CheckpointError("parameter '" + a.name + "' where config expects '" + b.name + "'");
    if (a.value.shape() != b.value.shape()) {
      throw CheckpointError("width mismatch for parameter '" + a.name + "': checkpoint " + shape_str(a.value.shape()) +
                            ", config " + shape_str(b.value.shape()));
    }
  }
}

}  // namespace jiadf
