#pragma once
// Checkpoints: a manifest.json describing the run plus a flat tensors.bin
// holding every tensor's raw values in census order (parameters first,
// then optimizer moments). Values are written in the native little-endian
// IEEE-754 layout, so a load/save round trip reproduces both files byte
// for byte.

#include <bit>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "avey/common.hpp"
#include "avey/config.hpp"
#include "avey/model.hpp"
#include "avey/trainer.hpp"

namespace avey {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs assume a little-endian host");

template <typename Real>
struct Checkpoint {
  Config config;
  ModelParams<Real> params;
  AdamState<Real> adam;
  bool has_adam = false;
  long step = 0;
  std::string rng;
};

namespace detail {

template <typename Real>
constexpr const char* dtype_name() {
  if constexpr (sizeof(Real) == 4) return "f32";
  else return "f64";
}

inline void write_blob(std::ofstream& os, const void* p, std::size_t bytes) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(bytes));
}

}  // namespace detail

// Writes manifest.json and tensors.bin into dir, creating it if needed.
template <typename Real>
void save_checkpoint(const std::string& dir, ModelParams<Real>& params,
                     const AdamState<Real>* adam, long step,
                     const std::string& rng_state,
                     const TrainConfig& train_cfg = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  nlohmann::ordered_json manifest;
  manifest["format_version"] = 1;
  manifest["dtype"] = detail::dtype_name<Real>();
  manifest["step"] = step;
  manifest["rng"] = rng_state;
  Config cfg;
  cfg.model = params.cfg;
  cfg.train = train_cfg;
  manifest["config"] = config_to_json(cfg);
  manifest["has_adam"] = adam != nullptr;

  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  std::ofstream blob(fs::path(dir) / "tensors.bin", std::ios::binary);
  require(blob.good(), "save_checkpoint: cannot open " + dir +
                           "/tensors.bin for writing");
  std::size_t offset = 0;
  auto emit = [&](const std::string& name, std::size_t rows, std::size_t cols,
                  const Real* data) {
    nlohmann::ordered_json t;
    t["name"] = name;
    t["rows"] = rows;
    t["cols"] = cols;
    t["offset"] = offset;  // in elements
    t["count"] = rows * cols;
    tensors.push_back(t);
    detail::write_blob(blob, data, rows * cols * sizeof(Real));
    offset += rows * cols;
  };
  params.for_each_param([&](const std::string& name, DualTensor<Real>& t) {
    emit(name, t.rows(), t.cols(), t.data());
  });
  if (adam) {
    for (const auto& s : adam->slots)
      emit("adam.m." + s.name, 1, s.m.size(), s.m.data());
    for (const auto& s : adam->slots)
      emit("adam.v." + s.name, 1, s.v.size(), s.v.data());
    manifest["adam_step"] = adam->step;
  }
  blob.close();
  require(blob.good(), "save_checkpoint: write to " + dir +
                           "/tensors.bin failed");

  manifest["tensors"] = tensors;
  std::ofstream mf(fs::path(dir) / "manifest.json");
  require(mf.good(), "save_checkpoint: cannot open " + dir +
                         "/manifest.json for writing");
  mf << manifest.dump(2) << "\n";
  mf.close();
  require(mf.good(), "save_checkpoint: write to " + dir +
                         "/manifest.json failed");
}

// Reads a checkpoint directory back. The tensor census in the manifest
// must match the one implied by the stored config exactly (names, shapes,
// order), and the blob must hold exactly the promised bytes.
template <typename Real>
Checkpoint<Real> load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "manifest.json");
  require(mf.good(), "load_checkpoint: cannot read " + dir +
                         "/manifest.json");
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw ContractViolation("load_checkpoint: bad manifest JSON: " +
                            std::string(e.what()));
  }
  require(manifest.value("format_version", 0) == 1,
          "load_checkpoint: unsupported format version");
  require(manifest.value("dtype", "") == detail::dtype_name<Real>(),
          "load_checkpoint: dtype " + manifest.value("dtype", "?") +
              " does not match this build's element type");

  Checkpoint<Real> ck;
  ck.step = manifest.value("step", 0L);
  ck.rng = manifest.value("rng", "");
  config_from_json(ck.config, manifest.at("config"));
  ck.has_adam = manifest.value("has_adam", false);

  ck.params = init_params<Real>(ck.config.model, 0);
  if (ck.has_adam) {
    ck.adam = AdamState<Real>::make(ck.params);
    ck.adam.step = manifest.value("adam_step", 0L);
  }

  // Expected census, in file order.
  struct Entry {
    std::string name;
    std::size_t rows, cols;
    Real* dst;
  };
  std::vector<Entry> expect;
  ck.params.for_each_param([&](const std::string& name, DualTensor<Real>& t) {
    expect.push_back({name, t.rows(), t.cols(), t.data()});
  });
  if (ck.has_adam) {
    for (auto& s : ck.adam.slots)
      expect.push_back({"adam.m." + s.name, 1, s.m.size(), s.m.data()});
    for (auto& s : ck.adam.slots)
      expect.push_back({"adam.v." + s.name, 1, s.v.size(), s.v.data()});
  }

  const auto& tensors = manifest.at("tensors");
  require(tensors.size() == expect.size(),
          "load_checkpoint: manifest lists " + std::to_string(tensors.size()) +
              " tensors, config implies " + std::to_string(expect.size()));
  std::size_t total = 0;
  for (std::size_t i = 0; i < expect.size(); ++i) {
    const auto& t = tensors.at(i);
    require(t.value("name", "") == expect[i].name &&
                t.value("rows", std::size_t(0)) == expect[i].rows &&
                t.value("cols", std::size_t(0)) == expect[i].cols &&
                t.value("offset", std::size_t(1)) == total,
            "load_checkpoint: tensor census mismatch at entry " +
                std::to_string(i) + " (" + t.value("name", "?") + " vs " +
                expect[i].name + ")");
    total += expect[i].rows * expect[i].cols;
  }

  std::ifstream blob(fs::path(dir) / "tensors.bin", std::ios::binary);
  require(blob.good(), "load_checkpoint: cannot read " + dir +
                           "/tensors.bin");
  blob.seekg(0, std::ios::end);
  std::size_t bytes = static_cast<std::size_t>(blob.tellg());
  require(bytes == total * sizeof(Real),
          "load_checkpoint: tensors.bin holds " + std::to_string(bytes) +
              " bytes, manifest promises " +
              std::to_string(total * sizeof(Real)));
  blob.seekg(0);
  for (auto& e : expect) {
    blob.read(reinterpret_cast<char*>(e.dst),
              static_cast<std::streamsize>(e.rows * e.cols * sizeof(Real)));
    require(blob.good(), "load_checkpoint: short read at " + e.name);
  }
  return ck;
}

}  // namespace avey
