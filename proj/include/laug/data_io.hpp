#pragma once

#include <array>
#include <filesystem>

#include "laug/png_io.hpp"
#include "laug/tensor.hpp"

namespace laug {

// ---------------------------------------------------------------------------
// SSIM: 11x11 Gaussian window (sigma 1.5), C1=(0.01 L)^2, C2=(0.03 L)^2 with
// dynamic range L=2 for [-1,1] data, valid windows only, channels averaged.

namespace ssim_detail {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = (0.01 * 2.0) * (0.01 * 2.0);
constexpr double kC2 = (0.03 * 2.0) * (0.03 * 2.0);

inline const std::array<double, kWindow>& gaussian_window() {
  static const std::array<double, kWindow> w = [] {
    std::array<double, kWindow> g{};
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
      const double d = i - (kWindow - 1) / 2.0;
      g[static_cast<std::size_t>(i)] = std::exp(-(d * d) / (2.0 * kSigma * kSigma));
      sum += g[static_cast<std::size_t>(i)];
    }
    for (auto& v : g) v /= sum;
    return g;
  }();
  return w;
}

// separable valid-region Gaussian smoothing of an H x W plane
inline void smooth(const std::vector<double>& src, std::int64_t h, std::int64_t w,
                   std::vector<double>& tmp, std::vector<double>& dst) {
  const auto& g = gaussian_window();
  const std::int64_t ow = w - kWindow + 1;
  const std::int64_t oh = h - kWindow + 1;
  tmp.assign(static_cast<std::size_t>(h * ow), 0.0);
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < ow; ++j) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += g[static_cast<std::size_t>(k)] * src[i * w + j + k];
      tmp[static_cast<std::size_t>(i * ow + j)] = acc;
    }
  dst.assign(static_cast<std::size_t>(oh * ow), 0.0);
  for (std::int64_t i = 0; i < oh; ++i)
    for (std::int64_t j = 0; j < ow; ++j) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k)
        acc += g[static_cast<std::size_t>(k)] * tmp[static_cast<std::size_t>((i + k) * ow + j)];
      dst[static_cast<std::size_t>(i * ow + j)] = acc;
    }
}

}  // namespace ssim_detail

template <class S>
double ssim(const Tensor<S>& a, const Tensor<S>& b) {
  check(a.shape() == b.shape(),
        "ssim: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  check(a.ndim() == 3, "ssim: expected [C,H,W], got " + shape_str(a.shape()));
  const std::int64_t C = a.dim(0), H = a.dim(1), W = a.dim(2);
  if (H < ssim_detail::kWindow || W < ssim_detail::kWindow)
    throw ShapeError("ssim: image " + shape_str(a.shape()) + " smaller than the 11x11 window");

  const std::int64_t plane = H * W;
  std::vector<double> x(static_cast<std::size_t>(plane)), y(static_cast<std::size_t>(plane));
  std::vector<double> xx(static_cast<std::size_t>(plane)), yy(static_cast<std::size_t>(plane)),
      xy(static_cast<std::size_t>(plane));
  std::vector<double> tmp, mu1, mu2, s11, s22, s12;

  double total = 0.0;
  std::int64_t count = 0;
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t i = 0; i < plane; ++i) {
      x[static_cast<std::size_t>(i)] = static_cast<double>(a.data()[c * plane + i]);
      y[static_cast<std::size_t>(i)] = static_cast<double>(b.data()[c * plane + i]);
      xx[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i)];
      yy[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(i)];
      xy[static_cast<std::size_t>(i)] = x[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(i)];
    }
    ssim_detail::smooth(x, H, W, tmp, mu1);
    ssim_detail::smooth(y, H, W, tmp, mu2);
    ssim_detail::smooth(xx, H, W, tmp, s11);
    ssim_detail::smooth(yy, H, W, tmp, s22);
    ssim_detail::smooth(xy, H, W, tmp, s12);
    for (std::size_t i = 0; i < mu1.size(); ++i) {
      const double m1 = mu1[i], m2 = mu2[i];
      const double v1 = s11[i] - m1 * m1;
      const double v2 = s22[i] - m2 * m2;
      const double cov = s12[i] - m1 * m2;
      const double num = (2.0 * m1 * m2 + ssim_detail::kC1) * (2.0 * cov + ssim_detail::kC2);
      const double den = (m1 * m1 + m2 * m2 + ssim_detail::kC1) * (v1 + v2 + ssim_detail::kC2);
      total += num / den;
    }
    count += static_cast<std::int64_t>(mu1.size());
  }
  return total / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// frame sequences and pairs

template <class S>
struct FrameSequence {
  std::string id;
  std::vector<Tensor<S>> frames;  // [C,H,W] in [-1,1]
  std::string source;
};

template <class S>
struct FramePair {
  Tensor<S> frame_t;
  Tensor<S> frame_t_plus_x;
  int gap = 1;
  double ssim_value = 0.0;
  std::string sequence_id;
  int anchor = 0;
};

// Every anchor/gap combination with SSIM inside [lo, hi]; the upper bound
// rejects near-zero movement, the lower bound excessive movement.
template <class S>
std::vector<FramePair<S>> extract_pairs(const FrameSequence<S>& seq, double ssim_lo,
                                        double ssim_hi, int max_gap) {
  if (!(ssim_lo >= 0.0 && ssim_lo < ssim_hi && ssim_hi <= 1.0))
    throw ValueError("extract_pairs: thresholds must satisfy 0 <= lo < hi <= 1");
  if (max_gap < 1) throw ValueError("extract_pairs: max_gap must be >= 1");
  std::vector<FramePair<S>> pairs;
  const int n = static_cast<int>(seq.frames.size());
  for (int t = 0; t < n; ++t) {
    for (int gap = 1; gap <= max_gap && t + gap < n; ++gap) {
      const double s = ssim(seq.frames[static_cast<std::size_t>(t)],
                            seq.frames[static_cast<std::size_t>(t + gap)]);
      if (s < ssim_lo || s > ssim_hi) continue;
      pairs.push_back(FramePair<S>{seq.frames[static_cast<std::size_t>(t)],
                                   seq.frames[static_cast<std::size_t>(t + gap)], gap, s, seq.id,
                                   t});
    }
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// PNG <-> tensor

template <class S>
Tensor<S> tensor_from_image(const Image8& img, int channels = 3) {
  if (channels != 1 && channels != 3)
    throw ValueError("tensor_from_image: channels must be 1 or 3");
  Tensor<S> t(Shape{channels, img.height, img.width});
  const std::int64_t plane = static_cast<std::int64_t>(img.height) * img.width;
  for (std::int64_t i = 0; i < plane; ++i) {
    const double r = img.rgb[static_cast<std::size_t>(3 * i)] / 127.5 - 1.0;
    const double g = img.rgb[static_cast<std::size_t>(3 * i + 1)] / 127.5 - 1.0;
    const double b = img.rgb[static_cast<std::size_t>(3 * i + 2)] / 127.5 - 1.0;
    if (channels == 3) {
      t.mutable_data()[i] = static_cast<S>(r);
      t.mutable_data()[plane + i] = static_cast<S>(g);
      t.mutable_data()[2 * plane + i] = static_cast<S>(b);
    } else {
      t.mutable_data()[i] = static_cast<S>((r + g + b) / 3.0);
    }
  }
  return t;
}

template <class S>
Image8 image_from_tensor(const Tensor<S>& t) {
  check(t.ndim() == 3 && (t.dim(0) == 1 || t.dim(0) == 3),
        "image_from_tensor: expected [1|3,H,W], got " + shape_str(t.shape()));
  Image8 img;
  img.height = static_cast<int>(t.dim(1));
  img.width = static_cast<int>(t.dim(2));
  const std::int64_t plane = t.dim(1) * t.dim(2);
  img.rgb.resize(static_cast<std::size_t>(plane) * 3);
  auto to_byte = [](double v) {
    const double clamped = std::min(1.0, std::max(-1.0, v));
    const double scaled = (clamped + 1.0) * 127.5;
    const int b = static_cast<int>(scaled + 0.5);
    return static_cast<std::uint8_t>(std::min(255, std::max(0, b)));
  };
  for (std::int64_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) {
      const std::int64_t src = t.dim(0) == 3 ? c * plane + i : i;
      img.rgb[static_cast<std::size_t>(3 * i + c)] = to_byte(static_cast<double>(t.data()[src]));
    }
  return img;
}

template <class S>
FrameSequence<S> load_frames(const std::filesystem::path& dir, int channels = 3) {
  if (!std::filesystem::is_directory(dir))
    throw IoError("load_frames: not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".png")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("load_frames: no PNG frames in " + dir.string());

  FrameSequence<S> seq;
  seq.id = dir.filename().string();
  seq.source = dir.string();
  for (const auto& f : files) {
    Image8 img = read_png(f);
    if (!seq.frames.empty() &&
        (seq.frames.front().dim(1) != img.height || seq.frames.front().dim(2) != img.width))
      throw IoError("load_frames: inconsistent resolution at " + f.string());
    seq.frames.push_back(tensor_from_image<S>(img, channels));
  }
  return seq;
}

template <class S>
void save_frames(const FrameSequence<S>& seq, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%06zu.png", i + 1);
    write_png(dir / name, image_from_tensor(seq.frames[i]));
  }
}

// Loads one sequence (flat PNG directory) or many (directory of sequence
// subdirectories), in lexicographic order.
template <class S>
std::vector<FrameSequence<S>> load_video_set(const std::filesystem::path& dir, int channels = 3) {
  if (!std::filesystem::is_directory(dir))
    throw IoError("load_video_set: not a directory: " + dir.string());
  bool has_png = false;
  std::vector<std::filesystem::path> subdirs;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") has_png = true;
    if (entry.is_directory()) subdirs.push_back(entry.path());
  }
  std::vector<FrameSequence<S>> out;
  if (has_png) {
    out.push_back(load_frames<S>(dir, channels));
    return out;
  }
  std::sort(subdirs.begin(), subdirs.end());
  for (const auto& sub : subdirs) {
    bool sub_has_png = false;
    for (const auto& entry : std::filesystem::directory_iterator(sub))
      if (entry.is_regular_file() && entry.path().extension() == ".png") sub_has_png = true;
    if (sub_has_png) out.push_back(load_frames<S>(sub, channels));
  }
  if (out.empty()) throw IoError("load_video_set: no frames found under " + dir.string());
  return out;
}

// ---------------------------------------------------------------------------
// synthetic video oracle: a textured anti-aliased disk under a known
// low-dimensional motion, with the true motion parameters returned per frame

enum class MotionKind { translate, rotate, scale, mixed };

inline const char* motion_kind_name(MotionKind k) {
  switch (k) {
    case MotionKind::translate: return "translate";
    case MotionKind::rotate: return "rotate";
    case MotionKind::scale: return "scale";
    case MotionKind::mixed: return "mixed";
  }
  return "unknown";
}

inline MotionKind parse_motion_kind(const std::string& s) {
  if (s == "translate") return MotionKind::translate;
  if (s == "rotate") return MotionKind::rotate;
  if (s == "scale") return MotionKind::scale;
  if (s == "mixed") return MotionKind::mixed;
  throw ValueError("unknown motion kind '" + s + "' (translate|rotate|scale|mixed)");
}

template <class S>
struct SynthVideo {
  FrameSequence<S> seq;
  std::vector<std::vector<double>> motion;  // per-frame true parameters
  std::vector<std::string> motion_names;
};

namespace synth_detail {

struct DiskStyle {
  double cx0, cy, radius, phase, theta0;
  double col[3];
};

inline DiskStyle style_from(std::uint64_t seed, int resolution, Rng& rng) {
  DiskStyle st;
  st.cx0 = std::floor(rng.uniform() * resolution);
  st.cy = resolution / 2.0;
  st.radius = resolution * 0.28 * (1.0 + rng.uniform(-0.05, 0.05));
  st.phase = rng.uniform();
  st.theta0 = rng.uniform(0.0, 6.283185307179586);
  st.col[0] = 0.55 + rng.uniform(-0.08, 0.08);
  st.col[1] = 0.15 + rng.uniform(-0.08, 0.08);
  st.col[2] = -0.10 + rng.uniform(-0.08, 0.08);
  (void)seed;
  return st;
}

// cx wraps on the torus so constant per-frame displacement is an exact
// cyclic shift of the whole image
template <class S>
Tensor<S> render_disk(int res, const DiskStyle& st, double cx, double radius, double theta) {
  Tensor<S> frame(Shape{3, res, res});
  const std::int64_t plane = static_cast<std::int64_t>(res) * res;
  for (int py = 0; py < res; ++py) {
    const double bg_base = -0.75 + 0.3 * (static_cast<double>(py) / res);
    for (int px = 0; px < res; ++px) {
      double u = px - cx;
      u -= res * std::round(u / res);  // wrapped horizontal offset
      const double v = py - st.cy;
      const double dist = std::sqrt(u * u + v * v);
      const double ang = std::atan2(v, u);
      const double alpha = std::min(1.0, std::max(0.0, radius + 0.5 - dist));
      const double rings = 0.30 * std::sin(2.0 * 3.141592653589793 * (dist / radius * 2.5 + st.phase));
      const double spokes = 0.30 * std::sin(5.0 * ang + theta);
      for (int c = 0; c < 3; ++c) {
        const double bg = bg_base - 0.03 * c;
        const double fg = st.col[c] + rings + spokes;
        double val = bg * (1.0 - alpha) + fg * alpha;
        val = std::min(1.0, std::max(-1.0, val));
        frame.mutable_data()[c * plane + py * res + px] = static_cast<S>(val);
      }
    }
  }
  return frame;
}

}  // namespace synth_detail

template <class S>
SynthVideo<S> synth_video(MotionKind kind, int length, int resolution, double amplitude,
                          std::uint64_t seed) {
  if (length < 2) throw ValueError("synth_video: length must be >= 2");
  if (resolution < 16) throw ValueError("synth_video: resolution must be >= 16");

  Rng rng(seed ^ 0x5f3759df);
  const auto st = synth_detail::style_from(seed, resolution, rng);

  SynthVideo<S> video;
  video.seq.id = std::string(motion_kind_name(kind)) + "_" + std::to_string(seed);
  video.seq.source = "synthetic";

  const double deg = 3.141592653589793 / 180.0;
  for (int t = 0; t < length; ++t) {
    double cx = st.cx0, radius = st.radius, theta = st.theta0;
    std::vector<double> params;
    switch (kind) {
      case MotionKind::translate:
        cx = st.cx0 + amplitude * t;
        params = {cx};
        video.motion_names = {"cx"};
        break;
      case MotionKind::rotate:
        theta = st.theta0 + amplitude * deg * t;
        params = {theta};
        video.motion_names = {"theta"};
        break;
      case MotionKind::scale: {
        // triangle wave between 0.75 r0 and 1.25 r0 with slope `amplitude` px/frame
        const double span = st.radius * 0.25;
        double pos = amplitude == 0.0 ? 0.0 : std::fmod(amplitude * t, 4.0 * span);
        if (pos < 0) pos += 4.0 * span;
        const double tri = pos < 2.0 * span ? pos - span : 3.0 * span - pos;
        radius = st.radius + tri;
        params = {radius};
        video.motion_names = {"radius"};
        break;
      }
      case MotionKind::mixed:
        cx = st.cx0 + amplitude * t;
        theta = st.theta0 + 3.0 * deg * t;
        params = {cx, theta};
        video.motion_names = {"cx", "theta"};
        break;
    }
    video.seq.frames.push_back(synth_detail::render_disk<S>(resolution, st, cx, radius, theta));
    video.motion.push_back(std::move(params));
  }
  return video;
}

}  // namespace laug
