// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "carseg/model/anatomy_encoder.hpp"
#include "carseg/model/decoder.hpp"
#include "carseg/model/modality_encoder.hpp"
#include "carseg/model/segmentor.hpp"

namespace carseg::model {

/// Disentanglement model: anatomy encoder, modality encoder, segmentor and
/// AdaIN decoder. Parameters are grouped per subnetwork so the optimizer can
/// skip the segmentor on unlabeled batches.
template <typename T>
struct SdNetT {
  AnatomyEncoder<T> ea;
  ModalityEncoder<T> em;
  Segmentor<T> seg;
  Decoder<T> dec;

  void init(std::uint64_t seed) {
    Rng rng(seed, 0x5d0e7);
    ea.init(rng);
    em.init(rng);
    seg.init(rng);
    dec.init(rng);
  }

  struct FullOut {
    AnatomyOut<T> anatomy;
    nn::TensorT<T> modality;
    nn::TensorT<T> probs;
    nn::TensorT<T> reconstruction;
  };

  /// Composes all four subnetworks (inference-style single pass).
  FullOut forward_full(const nn::TensorT<T>& image, bool training = false) {
    FullOut out;
    out.anatomy = ea.forward(image, training);
    out.modality = em.forward(image, training);
    out.probs = seg.forward(out.anatomy.binary, training);
    out.reconstruction = dec.forward(out.anatomy.binary, out.modality, training);
    return out;
  }

  NamedParams<T> named_params() {
    NamedParams<T> out;
    ea.collect_params("ea", out);
    em.collect_params("em", out);
    seg.collect_params("seg", out);
    dec.collect_params("dec", out);
    return out;
  }
  NamedTensors<T> named_buffers() {
    NamedTensors<T> out;
    ea.collect_buffers("ea", out);
    seg.collect_buffers("seg", out);
    return out;
  }

  std::vector<nn::ParamT<T>*> param_group(const std::string& prefix) {
    std::vector<nn::ParamT<T>*> out;
    for (auto& [name, p] : named_params())
      if (name.rfind(prefix, 0) == 0) out.push_back(p);
    return out;
  }
  std::vector<nn::ParamT<T>*> all_params() {
    std::vector<nn::ParamT<T>*> out;
    for (auto& [name, p] : named_params()) out.push_back(p);
    return out;
  }

  static std::string arch_descriptor() {
    return R"({"model":"sdnet","anatomy_channels":8,"classes":4,"decoder_width":16,)"
           R"("modality_dim":8,"unet_widths":[16,32,64,128]})";
  }
};

using SdNet = SdNetT<float>;

}  // namespace carseg::model
