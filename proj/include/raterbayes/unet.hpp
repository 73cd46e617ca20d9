// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "raterbayes/rng.hpp"
#include "raterbayes/tensor.hpp"

namespace raterbayes {

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Architecture of the encoder-decoder. Block ids used in dropout_sites are
/// "encoder<l>", "bottleneck" and "decoder<l>" with l in [0, depth).
struct UNetConfig {
  std::size_t depth = 3;
  std::size_t base_channels = 16;
  std::size_t head_features = 64;
  std::size_t num_classes = 2;
  std::size_t input_channels = 1;
  double dropout_rate = 0.5;
  /// Unset means the central placement: after the bottleneck and after the
  /// two innermost decoder blocks.
  std::optional<std::set<std::string>> dropout_sites;

  void validate() const;
  std::set<std::string> resolved_dropout_sites() const;
  std::size_t spatial_multiple() const { return std::size_t{1} << depth; }
  bool operator==(const UNetConfig&) const = default;
};

std::set<std::string> central_dropout_sites(std::size_t depth);

namespace detail {
struct ConvSlot {
  std::size_t weight = 0;  // index of the weight in the parameter list; bias follows
  std::size_t padding = 0;
};
} // namespace detail

/// Encoder-decoder feature extractor with skip connections and an optional
/// deterministic 1x1 output head.
///
/// Per level: two 3x3 conv + ReLU blocks, 2x2 max pooling, channel doubling.
/// The decoder upsamples (nearest), applies a 3x3 conv + ReLU, concatenates
/// the skip and runs another two-conv block. A 1x1 conv + ReLU maps to
/// head_features channels (the per-pixel feature vector z).
class UNetModel {
public:
  static UNetModel build(const UNetConfig& config, Rng& rng, bool with_output_head = true);

  /// Rebuild from named tensors (e.g. a checkpoint); names and shapes must
  /// match the architecture exactly. Extra tensors are ignored.
  static UNetModel from_parameters(const UNetConfig& config,
                                   const std::vector<NamedTensor>& tensors,
                                   bool with_output_head);

  const UNetConfig& config() const noexcept { return config_; }
  bool has_output_head() const noexcept { return has_head_; }

  Tensor forward_features(Graph& g, const Tensor& x, bool dropout_active, Rng& rng) const;
  Tensor forward_logits(Graph& g, const Tensor& x, bool dropout_active, Rng& rng) const;
  /// The deterministic 1x1 head applied to precomputed features.
  Tensor apply_output_head(Graph& g, const Tensor& features) const;

  /// All trainable tensors in a fixed order.
  const std::vector<NamedTensor>& parameters() const noexcept { return params_; }
  std::size_t parameter_count() const;

  /// Deep copy with independent storage.
  UNetModel clone() const;

private:
  using Conv = detail::ConvSlot;

  UNetModel() = default;
  void layout(bool with_output_head);
  Tensor conv(Graph& g, const Conv& c, const Tensor& x) const;
  Tensor conv_relu(Graph& g, const Conv& c, const Tensor& x) const;
  Tensor maybe_dropout(Graph& g, const Tensor& x, const std::string& site, bool active,
                       Rng& rng) const;

  UNetConfig config_;
  std::set<std::string> sites_;
  bool has_head_ = false;
  std::vector<NamedTensor> params_;
  std::vector<Shape> shapes_;
  std::vector<std::size_t> fan_in_;
  std::vector<std::pair<Conv, Conv>> encoders_;
  std::pair<Conv, Conv> bottleneck_;
  struct Decoder {
    Conv up, first, second;
  };
  std::vector<Decoder> decoders_;
  Conv features_;
  Conv out_;
};

} // namespace raterbayes
