// Dataset-level glue shared by the command line tool and the end-to-end
// checks: train on a Dataset, predict over one, score predictions.

#pragma once

#include <algorithm>
#include <chrono>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "sprnet/coco_eval.hpp"
#include "sprnet/dataset.hpp"
#include "sprnet/infer.hpp"
#include "sprnet/parallel.hpp"
#include "sprnet/train.hpp"

namespace sprnet {

/// The model is initialised from train.seed, so one seed fixes the whole run.
template <class T>
SprNet<T> train_on_dataset(const RunConfig& cfg, const Dataset& ds,
                           const std::function<void(const StepMetrics&)>& on_step = {}) {
  validate(cfg);
  SprNet<T> net(cfg.model, cfg.train.seed);
  const auto samples = prepare_dataset(net, ds, cfg.train);
  train(net, samples, cfg.train, on_step);
  return net;
}

struct Predictions {
  nlohmann::json json = nlohmann::json::array();
  std::vector<EvalDet> dets;
  std::size_t max_decoder_rows = 0;
  std::size_t max_candidates = 0;
};

/// Images run in parallel; output order is dataset order regardless.
template <class T>
Predictions predict_dataset(const SprNet<T>& net, const Dataset& ds, const InferConfig& cfg) {
  std::vector<InferenceResult> results(ds.images.size());
  parallel_for(ds.images.size(), [&](std::size_t i) {
    results[i] = infer_image(net, image_to_tensor<T>(ds.load_image(i)), cfg);
  });
  Predictions p;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& im = ds.images[i];
    p.max_decoder_rows = std::max(p.max_decoder_rows, results[i].decoder_rows);
    p.max_candidates = std::max(p.max_candidates, results[i].candidates);
    for (const auto& d : results[i].detections) {
      p.json.push_back(detection_json(im.id, d, im.width, im.height, cfg.mask_threshold));
      p.dets.push_back({im.id, d.class_id, d.score, d.box, paste_mask(d, im.width, im.height, cfg.mask_threshold)});
    }
  }
  return p;
}

inline std::vector<EvalGt> dataset_gts(const Dataset& ds) {
  std::vector<EvalGt> out;
  for (const auto& im : ds.images)
    for (const auto& inst : im.instances) out.push_back({im.id, inst.class_id, inst.box, inst.mask});
  return out;
}

/// Reads the array written by `sprnet infer`; masks are decoded at the size
/// of the image they belong to in `ds`.
inline std::vector<EvalDet> parse_predictions(const std::string& text, const Dataset& ds) {
  std::map<std::int64_t, const ImageRecord*> images;
  for (const auto& im : ds.images) images[im.id] = &im;
  std::vector<EvalDet> out;
  try {
    const auto j = nlohmann::json::parse(text);
    if (!j.is_array()) throw Error("predictions: expected a JSON array");
    for (std::size_t k = 0; k < j.size(); ++k) {
      const std::string where = "predictions[" + std::to_string(k) + "]";
      const auto& e = j[k];
      EvalDet d;
      d.image_id = e.at("image_id").get<std::int64_t>();
      const auto it = images.find(d.image_id);
      if (it == images.end()) throw Error(where + ": image_id not in annotations");
      d.class_id = e.at("class").get<int>();
      d.score = e.at("score").get<double>();
      d.box = box_from_json(e.at("box"), where);
      try {
        d.mask = rle_decode(e.at("mask_rle").get<std::vector<std::uint32_t>>(), it->second->width, it->second->height);
      } catch (const Error& err) {
        throw Error(where + ": " + err.what());
      }
      out.push_back(std::move(d));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("predictions: ") + e.what());
  }
  return out;
}

struct RunOutcome {
  EvalResult eval;
  double train_seconds = 0;
  std::size_t max_decoder_rows = 0;
  std::vector<StepMetrics> metrics;
};

/// Train on `train_ds`, predict on `val_ds`, score.
template <class T>
RunOutcome train_and_evaluate(const RunConfig& cfg, const Dataset& train_ds, const Dataset& val_ds) {
  RunOutcome out;
  const auto t0 = std::chrono::steady_clock::now();
  const auto net = train_on_dataset<T>(cfg, train_ds, [&](const StepMetrics& m) { out.metrics.push_back(m); });
  out.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto p = predict_dataset(net, val_ds, cfg.infer);
  out.max_decoder_rows = p.max_decoder_rows;
  out.eval = summarize(dataset_gts(val_ds), p.dets);
  return out;
}

}  // namespace sprnet
