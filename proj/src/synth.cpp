// SPDX-License-Identifier: Apache-2.0
#include "raterbayes/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "raterbayes/error.hpp"
#include "raterbayes/io.hpp"

namespace raterbayes {

using nlohmann::json;

std::string to_string(PhantomTask t) { return t == PhantomTask::vessel ? "vessel" : "blob"; }

PhantomTask parse_phantom_task(const std::string& s) {
  if (s == "vessel") return PhantomTask::vessel;
  if (s == "blob") return PhantomTask::blob;
  throw ConfigError("unknown phantom task '" + s + "' (expected vessel or blob)");
}

std::vector<std::string> phantom_structures(PhantomTask t) {
  if (t == PhantomTask::vessel) return {"eem", "lumen"};
  return {"blob"};
}

double RadialShape::radius(double theta) const {
  double r = r0;
  for (std::size_t k = 0; k < harmonics.size(); ++k) {
    const double kt = static_cast<double>(k + 1) * theta;
    r += harmonics[k][0] * std::cos(kt) + harmonics[k][1] * std::sin(kt);
  }
  return std::max(r, 0.0);
}

json RadialShape::to_json() const {
  return {{"cx", cx}, {"cy", cy}, {"r0", r0}, {"harmonics", harmonics}};
}

RadialShape RadialShape::from_json(const json& j) {
  try {
    RadialShape s;
    s.cx = j.at("cx").get<double>();
    s.cy = j.at("cy").get<double>();
    s.r0 = j.at("r0").get<double>();
    s.harmonics = j.at("harmonics").get<std::vector<std::array<double, 2>>>();
    return s;
  } catch (const json::exception& e) {
    throw DataError(std::string("radial shape: ") + e.what());
  }
}

Mask render_radial_mask(const RadialShape& shape, std::size_t h, std::size_t w) {
  Mask m(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - shape.cx;
      const double dy = static_cast<double>(y) + 0.5 - shape.cy;
      const double d = std::hypot(dx, dy);
      m.set(y, x, d <= shape.radius(std::atan2(dy, dx)));
    }
  }
  return m;
}

Mask render_ellipse_mask(std::array<double, 2> center, std::array<double, 2> axes,
                         double rotation, std::size_t size) {
  if (!(axes[0] > 0.0) || !(axes[1] > 0.0)) {
    throw ConfigError("render_ellipse_mask: axes must be positive");
  }
  const double c = std::cos(rotation), s = std::sin(rotation);
  Mask m(size, size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double dx = static_cast<double>(x) + 0.5 - center[0];
      const double dy = static_cast<double>(y) + 0.5 - center[1];
      // rotate into the ellipse frame
      const double u = c * dx + s * dy;
      const double v = -s * dx + c * dy;
      const double q = (u / axes[0]) * (u / axes[0]) + (v / axes[1]) * (v / axes[1]);
      m.set(y, x, q <= 1.0);
    }
  }
  return m;
}

RadialShape rater_contour(const RadialShape& truth, double offset, double jitter, Rng& rng) {
  RadialShape r = truth;
  r.r0 += offset;
  if (r.harmonics.size() < kJitterOrder) r.harmonics.resize(kJitterOrder, {0.0, 0.0});
  // 2 * kJitterOrder coefficients of variance s^2 give variance
  // kJitterOrder * s^2 at every angle.
  const double s = jitter / std::sqrt(static_cast<double>(kJitterOrder));
  for (std::size_t k = 0; k < kJitterOrder; ++k) {
    r.harmonics[k][0] += rng.normal(0.0, s);
    r.harmonics[k][1] += rng.normal(0.0, s);
  }
  return r;
}

// ---- config ---------------------------------------------------------------

void PhantomConfig::validate() const {
  if (size < 16 || size > 1024 || (size & (size - 1)) != 0) {
    throw ConfigError("phantom size must be a power of two in [16, 1024]");
  }
  if (num_raters == 0) throw ConfigError("num_raters must be at least 1");
  if (repeats_per_rater == 0) throw ConfigError("repeats_per_rater must be at least 1");
  if (!(rater_bias >= 0.0) || !std::isfinite(rater_bias)) {
    throw ConfigError("rater_bias must be finite and non-negative");
  }
  if (!rater_offsets.empty()) {
    if (rater_offsets.size() != num_raters) {
      throw ConfigError("rater_offsets needs one entry per rater");
    }
    for (double o : rater_offsets) {
      if (!std::isfinite(o)) throw ConfigError("rater_offsets must be finite");
    }
  }
  if (!(rater_jitter >= 0.0) || !std::isfinite(rater_jitter)) {
    throw ConfigError("rater_jitter must be finite and non-negative");
  }
  if (!(noise >= 0.0) || !(noise < 1.0)) throw ConfigError("noise must be in [0, 1)");
  if (num_cases() == 0) throw ConfigError("phantom dataset needs at least one case");
}

std::vector<double> PhantomConfig::offsets() const {
  if (!rater_offsets.empty()) return rater_offsets;
  std::vector<double> out(num_raters, 0.0);
  if (num_raters == 1) return out;
  for (std::size_t r = 0; r < num_raters; ++r) {
    out[r] = rater_bias * (-1.0 + 2.0 * static_cast<double>(r) / static_cast<double>(num_raters - 1));
  }
  return out;
}

Split PhantomConfig::split_of(std::size_t i) const {
  if (i < train) return Split::train;
  if (i < train + validation) return Split::validation;
  return Split::test;
}

json PhantomConfig::to_json() const {
  return {{"size", size},
          {"task", to_string(task)},
          {"num_raters", num_raters},
          {"repeats_per_rater", repeats_per_rater},
          {"rater_bias", rater_bias},
          {"rater_offsets", rater_offsets},
          {"rater_jitter", rater_jitter},
          {"noise", noise},
          {"train", train},
          {"validation", validation},
          {"test", test},
          {"seed", seed}};
}

PhantomConfig PhantomConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("phantom config must be an object");
  PhantomConfig c;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "size") c.size = v.get<std::size_t>();
      else if (key == "task") c.task = parse_phantom_task(v.get<std::string>());
      else if (key == "num_raters") c.num_raters = v.get<std::size_t>();
      else if (key == "repeats_per_rater") c.repeats_per_rater = v.get<std::size_t>();
      else if (key == "rater_bias") c.rater_bias = v.get<double>();
      else if (key == "rater_offsets") c.rater_offsets = v.get<std::vector<double>>();
      else if (key == "rater_jitter") c.rater_jitter = v.get<double>();
      else if (key == "noise") c.noise = v.get<double>();
      else if (key == "train") c.train = v.get<std::size_t>();
      else if (key == "validation") c.validation = v.get<std::size_t>();
      else if (key == "test") c.test = v.get<std::size_t>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else throw ConfigError("phantom config: unknown key '" + key + "'");
    } catch (const json::exception&) {
      throw ConfigError("phantom config: bad value for '" + key + "'");
    }
  }
  return c;
}

// ---- generation -----------------------------------------------------------

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::string case_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case%04zu", i);
  return buf;
}

std::vector<std::array<double, 2>> random_harmonics(Rng& rng, std::size_t first, std::size_t last,
                                                    double std) {
  std::vector<std::array<double, 2>> h(last, {0.0, 0.0});
  for (std::size_t k = first; k <= last; ++k) {
    h[k - 1][0] = rng.normal(0.0, std);
    h[k - 1][1] = rng.normal(0.0, std);
  }
  return h;
}

std::vector<RadialShape> draw_truth(const PhantomConfig& cfg, Rng& rng) {
  const double s = static_cast<double>(cfg.size) / 64.0;
  const double mid = static_cast<double>(cfg.size) / 2.0;
  if (cfg.task == PhantomTask::blob) {
    RadialShape b;
    b.cx = mid + rng.uniform(-6.0, 6.0) * s;
    b.cy = mid + rng.uniform(-6.0, 6.0) * s;
    b.r0 = rng.uniform(10.0, 18.0) * s;
    b.harmonics = random_harmonics(rng, 2, 4, 0.06 * b.r0);
    return {b};
  }
  RadialShape eem;
  eem.cx = mid + rng.uniform(-4.0, 4.0) * s;
  eem.cy = mid + rng.uniform(-4.0, 4.0) * s;
  eem.r0 = rng.uniform(14.0, 22.0) * s;
  eem.harmonics = random_harmonics(rng, 2, 3, 0.04 * eem.r0);

  RadialShape lumen;
  lumen.r0 = rng.uniform(0.45, 0.75) * eem.r0;
  lumen.harmonics = random_harmonics(rng, 2, 3, 0.04 * lumen.r0);
  // eccentric lumen, kept clear of the EEM wall
  const double room = std::max(0.0, 0.8 * eem.r0 - 1.1 * lumen.r0 - 1.5 * s);
  const double dist = rng.uniform(0.0, 1.0) * room;
  const double ang = rng.uniform(0.0, kTwoPi);
  lumen.cx = eem.cx + dist * std::cos(ang);
  lumen.cy = eem.cy + dist * std::sin(ang);
  return {eem, lumen};
}

void clip_nested(std::vector<Mask>& masks) {
  for (std::size_t s = 1; s < masks.size(); ++s) {
    for (std::size_t i = 0; i < masks[s].px.size(); ++i) masks[s].px[i] &= masks[s - 1].px[i];
  }
}

double soft_inside(const RadialShape& shape, double px, double py) {
  const double dx = px - shape.cx, dy = py - shape.cy;
  const double margin = shape.radius(std::atan2(dy, dx)) - std::hypot(dx, dy);
  return 1.0 / (1.0 + std::exp(-margin / 0.7));
}

GrayImage render_image(const PhantomConfig& cfg, const std::vector<RadialShape>& truth, Rng& rng) {
  GrayImage img{cfg.size, cfg.size, std::vector<std::uint8_t>(cfg.size * cfg.size)};
  for (std::size_t y = 0; y < cfg.size; ++y) {
    for (std::size_t x = 0; x < cfg.size; ++x) {
      const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
      double v;
      if (cfg.task == PhantomTask::vessel) {
        const double te = soft_inside(truth[0], px, py);
        const double tl = soft_inside(truth[1], px, py) * te;
        v = 0.30 + (0.65 - 0.30) * te;
        v = v * (1.0 - tl) + 0.12 * tl;
      } else {
        const double t = soft_inside(truth[0], px, py);
        v = 0.20 + 0.50 * t;
      }
      v *= std::max(0.0, 1.0 + cfg.noise * rng.normal());
      img.px[y * cfg.size + x] =
          static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    }
  }
  return img;
}

} // namespace

PhantomCase generate_case(const PhantomConfig& cfg, std::size_t index) {
  cfg.validate();
  // Three streams per case so images stay fixed when only the rater model
  // changes.
  Rng shape_rng = Rng::derive(cfg.seed, 3 * index);
  Rng rater_rng = Rng::derive(cfg.seed, 3 * index + 1);
  Rng image_rng = Rng::derive(cfg.seed, 3 * index + 2);

  PhantomCase c;
  c.id = case_id(index);
  c.split = cfg.split_of(index);
  c.truth = draw_truth(cfg, shape_rng);
  c.image = render_image(cfg, c.truth, image_rng);
  const auto offsets = cfg.offsets();
  for (std::size_t r = 0; r < cfg.num_raters; ++r) {
    for (std::size_t k = 0; k < cfg.repeats_per_rater; ++k) {
      Annotation a{r, k, {}};
      for (const auto& shape : c.truth) {
        const auto drawn = rater_contour(shape, offsets[r], cfg.rater_jitter, rater_rng);
        a.structures.push_back(render_radial_mask(drawn, cfg.size, cfg.size));
      }
      clip_nested(a.structures);
      c.annotations.push_back(std::move(a));
    }
  }
  return c;
}

std::vector<Mask> truth_masks(const PhantomCase& c) {
  std::vector<Mask> out;
  for (const auto& s : c.truth) out.push_back(render_radial_mask(s, c.image.h, c.image.w));
  clip_nested(out);
  return out;
}

DatasetManifest generate_dataset(const PhantomConfig& cfg, const std::filesystem::path& root) {
  cfg.validate();
  DatasetManifest m;
  m.task = to_string(cfg.task);
  m.height = m.width = cfg.size;
  m.structures = phantom_structures(cfg.task);
  m.num_raters = cfg.num_raters;
  m.generator = cfg.to_json();
  const auto offsets = cfg.offsets();

  for (std::size_t i = 0; i < cfg.num_cases(); ++i) {
    const auto pc = generate_case(cfg, i);
    CaseEntry e;
    e.id = pc.id;
    e.split = pc.split;
    e.image = "images/" + pc.id + "/image.pgm";
    write_pgm(root / e.image, pc.image);
    for (const auto& a : pc.annotations) {
      AnnotationEntry ae{a.rater, a.repeat, {}};
      for (std::size_t s = 0; s < m.structures.size(); ++s) {
        std::string name = "annotations/" + pc.id + "/" + m.structures[s] + "_r" + std::to_string(a.rater);
        if (cfg.repeats_per_rater > 1) name += "_k" + std::to_string(a.repeat);
        name += ".pbm";
        write_pbm(root / name, a.structures[s]);
        ae.masks.push_back(std::move(name));
      }
      e.annotations.push_back(std::move(ae));
    }
    json truth = json::object();
    for (std::size_t s = 0; s < m.structures.size(); ++s) truth[m.structures[s]] = pc.truth[s].to_json();
    truth["rater_offsets"] = offsets;
    e.truth = std::move(truth);
    m.cases.push_back(std::move(e));
  }
  write_file_atomic(root / "manifest.json", m.to_json().dump(2) + "\n");
  return m;
}

} // namespace raterbayes
