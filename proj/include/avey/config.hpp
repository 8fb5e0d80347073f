#pragma once
// Model and training configuration, with flat dotted-key JSON round-trip.

#include <cstdint>
#include <string>

#include <json.hpp>

#include "avey/common.hpp"

namespace avey {

// Architecture toggles. Each one disables a single mechanism while keeping
// the rest of the forward pass identical.
struct Ablations {
  bool no_ranker = false;     // window is the current split only
  bool no_weighting = false;  // selected-split weights forced to 1.0
  bool no_bypass = false;     // Z_h zeroed before fusing (width kept)
  bool static_parameterization = false;  // similarity replaced by all-ones
  bool no_expansion = false;  // enricher width m = d

  bool any() const {
    return no_ranker || no_weighting || no_bypass || static_parameterization ||
           no_expansion;
  }
};

struct ModelConfig {
  int d = 64;          // embedding width
  int layers = 4;      // stacked processor layers
  int expansion = 4;   // enricher width multiplier (m = expansion * d)
  double tail_fraction = 0.5;  // fraction of m routed to the contextualizer
  int split = 64;      // tokens per split (S)
  int k = 7;           // splits selected per current split
  int context = 512;   // training sequence length (N)
  int vocab = 320;     // output classes (byte vocab padded to 64 multiple)
  bool tied = true;    // share embedding matrix with the output head
  bool causal_rank = false;  // re-rank per token during training too
  Ablations ablate;

  int m() const { return ablate.no_expansion ? d : expansion * d; }
  // Tail width, rounded to the nearest even count so it halves cleanly.
  int m_t() const {
    int mt = 2 * static_cast<int>(std::lround(tail_fraction * m() / 2.0));
    return mt;
  }
  int m_h() const { return m() - m_t(); }
  int half_t() const { return m_t() / 2; }
  // Window row capacity C = S * (k + 1): k selected splits plus the
  // current one.
  int window_rows() const { return split * (k + 1); }
  // Actual contextualizer buffer: the current split alone when the ranker
  // is disabled, the full window capacity otherwise. Also the side length
  // of each layer's mixing matrix.
  int buffer_rows() const { return ablate.no_ranker ? split : window_rows(); }

  void validate() const {
    require(d > 0, "ModelConfig: d must be positive");
    require(layers > 0, "ModelConfig: layers must be positive");
    require(expansion > 0, "ModelConfig: expansion must be positive");
    require(tail_fraction > 0.0 && tail_fraction <= 1.0,
            "ModelConfig: tail_fraction must lie in (0, 1]");
    require(split > 0, "ModelConfig: split must be positive");
    require(k >= 0, "ModelConfig: k must be non-negative");
    require(context > 0, "ModelConfig: context must be positive");
    require(context % split == 0,
            "ModelConfig: context must be divisible by split");
    require(vocab > 1, "ModelConfig: vocab must exceed 1");
    require(m_t() >= 2, "ModelConfig: tail width must be at least 2");
    require(m_h() >= 0, "ModelConfig: head width must be non-negative");
  }
};

struct TrainConfig {
  int steps = 3000;
  int batch = 4;
  double peak_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-12;
  double weight_decay = 0.1;  // applied to matrices only
  double clip = 1.0;          // global gradient-norm ceiling
  std::uint64_t seed = 11;
  int log_every = 50;

  void validate() const {
    require(steps > 0, "TrainConfig: steps must be positive");
    require(batch > 0, "TrainConfig: batch must be positive");
    require(peak_lr > 0.0, "TrainConfig: peak_lr must be positive");
    require(clip > 0.0, "TrainConfig: clip must be positive");
  }
};

struct Config {
  ModelConfig model;
  TrainConfig train;
};

// ---------------------------------------------------------------------------
// Flat dotted-key JSON. Unknown keys are rejected so typos fail loudly.

inline nlohmann::ordered_json config_to_json(const Config& c) {
  nlohmann::ordered_json j;
  j["model.d"] = c.model.d;
  j["model.layers"] = c.model.layers;
  j["model.expansion"] = c.model.expansion;
  j["model.tail_fraction"] = c.model.tail_fraction;
  j["model.context"] = c.model.context;
  j["model.vocab"] = c.model.vocab;
  j["model.tied"] = c.model.tied;
  j["ranker.split"] = c.model.split;
  j["ranker.k"] = c.model.k;
  j["ranker.causal_rank"] = c.model.causal_rank;
  j["ablate.no_ranker"] = c.model.ablate.no_ranker;
  j["ablate.no_weighting"] = c.model.ablate.no_weighting;
  j["ablate.no_bypass"] = c.model.ablate.no_bypass;
  j["ablate.static_parameterization"] =
      c.model.ablate.static_parameterization;
  j["ablate.no_expansion"] = c.model.ablate.no_expansion;
  j["train.steps"] = c.train.steps;
  j["train.batch"] = c.train.batch;
  j["train.peak_lr"] = c.train.peak_lr;
  j["train.beta1"] = c.train.beta1;
  j["train.beta2"] = c.train.beta2;
  j["train.eps"] = c.train.eps;
  j["train.weight_decay"] = c.train.weight_decay;
  j["train.clip"] = c.train.clip;
  j["train.seed"] = c.train.seed;
  j["train.log_every"] = c.train.log_every;
  return j;
}

// Applies one dotted key. Returns false for unknown keys.
inline bool apply_config_key(Config& c, const std::string& key,
                             const nlohmann::json& val) {
  auto& m = c.model;
  auto& t = c.train;
  if (key == "model.d") m.d = val.get<int>();
  else if (key == "model.layers") m.layers = val.get<int>();
  else if (key == "model.expansion") m.expansion = val.get<int>();
  else if (key == "model.tail_fraction") m.tail_fraction = val.get<double>();
  else if (key == "model.context") m.context = val.get<int>();
  else if (key == "model.vocab") m.vocab = val.get<int>();
  else if (key == "model.tied") m.tied = val.get<bool>();
  else if (key == "ranker.split") m.split = val.get<int>();
  else if (key == "ranker.k") m.k = val.get<int>();
  else if (key == "ranker.causal_rank") m.causal_rank = val.get<bool>();
  else if (key == "ablate.no_ranker") m.ablate.no_ranker = val.get<bool>();
  else if (key == "ablate.no_weighting")
    m.ablate.no_weighting = val.get<bool>();
  else if (key == "ablate.no_bypass") m.ablate.no_bypass = val.get<bool>();
  else if (key == "ablate.static_parameterization")
    m.ablate.static_parameterization = val.get<bool>();
  else if (key == "ablate.no_expansion")
    m.ablate.no_expansion = val.get<bool>();
  else if (key == "train.steps") t.steps = val.get<int>();
  else if (key == "train.batch") t.batch = val.get<int>();
  else if (key == "train.peak_lr") t.peak_lr = val.get<double>();
  else if (key == "train.beta1") t.beta1 = val.get<double>();
  else if (key == "train.beta2") t.beta2 = val.get<double>();
  else if (key == "train.eps") t.eps = val.get<double>();
  else if (key == "train.weight_decay") t.weight_decay = val.get<double>();
  else if (key == "train.clip") t.clip = val.get<double>();
  else if (key == "train.seed") t.seed = val.get<std::uint64_t>();
  else if (key == "train.log_every") t.log_every = val.get<int>();
  else return false;
  return true;
}

inline void config_from_json(Config& c, const nlohmann::json& j) {
  require(j.is_object(), "config_from_json: expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    require(apply_config_key(c, it.key(), it.value()),
            "config_from_json: unknown key '" + it.key() + "'");
  }
}

}  // namespace avey
