// SPDX-License-Identifier: Apache-2.0
#include "raterbayes/unet.hpp"

#include <cmath>
#include <map>

#include "raterbayes/error.hpp"

namespace raterbayes {

std::set<std::string> central_dropout_sites(std::size_t depth) {
  std::set<std::string> sites{"bottleneck", "decoder" + std::to_string(depth - 1)};
  if (depth >= 2) sites.insert("decoder" + std::to_string(depth - 2));
  return sites;
}

void UNetConfig::validate() const {
  if (depth < 1) throw ConfigError("unet: depth must be >= 1");
  if (depth > 8) throw ConfigError("unet: depth must be <= 8");
  if (base_channels < 1) throw ConfigError("unet: base_channels must be >= 1");
  if (head_features < 1) throw ConfigError("unet: head_features must be >= 1");
  if (num_classes < 2) throw ConfigError("unet: num_classes must be >= 2");
  if (input_channels < 1) throw ConfigError("unet: input_channels must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ConfigError("unet: dropout_rate must lie in [0, 1)");
  }
  if (dropout_sites) {
    for (const auto& s : *dropout_sites) {
      bool ok = s == "bottleneck";
      for (std::size_t l = 0; l < depth && !ok; ++l) {
        ok = s == "encoder" + std::to_string(l) || s == "decoder" + std::to_string(l);
      }
      if (!ok) throw ConfigError("unet: unknown dropout site '" + s + "'");
    }
  }
}

std::set<std::string> UNetConfig::resolved_dropout_sites() const {
  return dropout_sites ? *dropout_sites : central_dropout_sites(depth);
}

void UNetModel::layout(bool with_output_head) {
  config_.validate();
  sites_ = config_.resolved_dropout_sites();
  has_head_ = with_output_head;
  params_.clear();
  shapes_.clear();
  fan_in_.clear();

  auto add_conv = [&](const std::string& name, std::size_t cin, std::size_t cout,
                      std::size_t k) {
    Conv c{params_.size(), k / 2};
    params_.push_back({name + ".weight", {}});
    shapes_.push_back({cout, cin, k, k});
    fan_in_.push_back(cin * k * k);
    params_.push_back({name + ".bias", {}});
    shapes_.push_back({cout});
    fan_in_.push_back(0);
    return c;
  };

  const auto& cfg = config_;
  auto width = [&](std::size_t level) { return cfg.base_channels << level; };

  encoders_.clear();
  std::size_t cin = cfg.input_channels;
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const auto p = "enc" + std::to_string(l);
    auto a = add_conv(p + ".conv1", cin, width(l), 3);
    auto b = add_conv(p + ".conv2", width(l), width(l), 3);
    encoders_.emplace_back(a, b);
    cin = width(l);
  }
  bottleneck_.first = add_conv("bottleneck.conv1", cin, width(cfg.depth), 3);
  bottleneck_.second = add_conv("bottleneck.conv2", width(cfg.depth), width(cfg.depth), 3);

  decoders_.assign(cfg.depth, {});
  for (std::size_t i = cfg.depth; i-- > 0;) {
    const auto p = "dec" + std::to_string(i);
    decoders_[i].up = add_conv(p + ".up", width(i + 1), width(i), 3);
    decoders_[i].first = add_conv(p + ".conv1", 2 * width(i), width(i), 3);
    decoders_[i].second = add_conv(p + ".conv2", width(i), width(i), 3);
  }
  features_ = add_conv("features", width(0), cfg.head_features, 1);
  if (with_output_head) out_ = add_conv("out", cfg.head_features, cfg.num_classes, 1);
}

UNetModel UNetModel::build(const UNetConfig& config, Rng& rng, bool with_output_head) {
  UNetModel m;
  m.config_ = config;
  m.layout(with_output_head);
  for (std::size_t i = 0; i < m.params_.size(); ++i) {
    Tensor t = Tensor::zeros(m.shapes_[i], true);
    if (m.fan_in_[i] > 0) {
      const double stddev = std::sqrt(2.0 / static_cast<double>(m.fan_in_[i]));
      for (auto& v : t.data()) v = rng.normal(0.0, stddev);
    }
    m.params_[i].value = std::move(t);
  }
  return m;
}

UNetModel UNetModel::from_parameters(const UNetConfig& config,
                                     const std::vector<NamedTensor>& tensors,
                                     bool with_output_head) {
  UNetModel m;
  m.config_ = config;
  m.layout(with_output_head);
  std::map<std::string, const Tensor*> by_name;
  for (const auto& nt : tensors) by_name[nt.name] = &nt.value;
  for (std::size_t i = 0; i < m.params_.size(); ++i) {
    auto it = by_name.find(m.params_[i].name);
    if (it == by_name.end()) throw DataError("unet: missing parameter '" + m.params_[i].name + "'");
    if (it->second->shape() != m.shapes_[i]) {
      throw DimensionError("unet: parameter '" + m.params_[i].name + "' has shape " +
                           shape_str(it->second->shape()) + ", expected " +
                           shape_str(m.shapes_[i]));
    }
    Tensor t = it->second->clone();
    t.set_requires_grad(true);
    m.params_[i].value = std::move(t);
  }
  return m;
}

std::size_t UNetModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

UNetModel UNetModel::clone() const {
  UNetModel m = *this;
  for (auto& p : m.params_) {
    Tensor t = p.value.clone();
    t.set_requires_grad(true);
    p.value = std::move(t);
  }
  return m;
}

Tensor UNetModel::conv(Graph& g, const Conv& c, const Tensor& x) const {
  return conv2d(g, x, params_[c.weight].value, params_[c.weight + 1].value, c.padding, 1);
}

Tensor UNetModel::conv_relu(Graph& g, const Conv& c, const Tensor& x) const {
  return relu(g, conv(g, c, x));
}

Tensor UNetModel::maybe_dropout(Graph& g, const Tensor& x, const std::string& site, bool active,
                                Rng& rng) const {
  if (!active || !sites_.contains(site)) return x;
  return dropout(g, x, config_.dropout_rate, rng, true);
}

Tensor UNetModel::forward_features(Graph& g, const Tensor& x, bool dropout_active,
                                   Rng& rng) const {
  if (x.ndim() != 4) throw DimensionError("unet: input must be [N, C, H, W]");
  if (x.dim(1) != config_.input_channels) {
    throw DimensionError("unet: expected " + std::to_string(config_.input_channels) +
                         " input channels, got " + std::to_string(x.dim(1)));
  }
  const auto mult = config_.spatial_multiple();
  if (x.dim(2) % mult != 0 || x.dim(3) % mult != 0) {
    throw DimensionError("unet: spatial extents " + shape_str(x.shape()) +
                         " must be divisible by " + std::to_string(mult));
  }

  std::vector<Tensor> skips;
  Tensor h = x;
  for (std::size_t l = 0; l < config_.depth; ++l) {
    h = conv_relu(g, encoders_[l].second, conv_relu(g, encoders_[l].first, h));
    h = maybe_dropout(g, h, "encoder" + std::to_string(l), dropout_active, rng);
    skips.push_back(h);
    h = max_pool2d(g, h, 2);
  }
  h = conv_relu(g, bottleneck_.second, conv_relu(g, bottleneck_.first, h));
  h = maybe_dropout(g, h, "bottleneck", dropout_active, rng);
  for (std::size_t l = config_.depth; l-- > 0;) {
    const auto& d = decoders_[l];
    Tensor up = conv_relu(g, d.up, upsample_nearest(g, h, 2));
    h = concat_channels(g, skips[l], up);
    h = conv_relu(g, d.second, conv_relu(g, d.first, h));
    h = maybe_dropout(g, h, "decoder" + std::to_string(l), dropout_active, rng);
  }
  return conv_relu(g, features_, h);
}

Tensor UNetModel::apply_output_head(Graph& g, const Tensor& features) const {
  if (!has_head_) throw ConfigError("unet: model has no deterministic output head");
  return conv(g, out_, features);
}

Tensor UNetModel::forward_logits(Graph& g, const Tensor& x, bool dropout_active,
                                 Rng& rng) const {
  return apply_output_head(g, forward_features(g, x, dropout_active, rng));
}

} // namespace raterbayes
