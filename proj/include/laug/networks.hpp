#pragma once

#include <map>

#include "laug/network_spec.hpp"
#include "laug/ops.hpp"
#include "laug/optim.hpp"

namespace laug {

// Ordered named tensor registry for one network: trainable parameters plus
// running-statistic buffers, in a deterministic order for serialization.
template <class S>
struct NetworkParams {
  std::vector<std::pair<std::string, Tensor<S>>> items;

  void add(std::string name, const Tensor<S>& t) {
    for (const auto& [n, _] : items)
      if (n == name) throw ValueError("duplicate parameter name '" + name + "'");
    items.emplace_back(std::move(name), t);
  }

  Tensor<S>& at(const std::string& name) {
    for (auto& [n, t] : items)
      if (n == name) return t;
    throw ValueError("unknown parameter '" + name + "'");
  }

  std::vector<std::pair<std::string, Tensor<S>>> trainable() const {
    std::vector<std::pair<std::string, Tensor<S>>> out;
    for (const auto& it : items)
      if (it.second.requires_grad()) out.push_back(it);
    return out;
  }

  std::int64_t trainable_count() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : items)
      if (t.requires_grad()) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : items) t.zero_grad();
  }

  void set_requires_grad(bool b) {
    for (auto& [name, t] : items)
      if (t.requires_grad() || b) t.set_requires_grad(b && !is_buffer(name));
  }

  static bool is_buffer(const std::string& name) {
    return name.find("running_") != std::string::npos;
  }
};

// ---------------------------------------------------------------------------
// layers

template <class S>
struct Conv2dLayer {
  Tensor<S> w, b;
  int stride = 2, pad = 1;
  Tensor<S> forward(const Tensor<S>& x) const { return conv2d(x, w, b, stride, pad); }
};

template <class S>
struct ConvT2dLayer {
  Tensor<S> w, b;
  int stride = 2, pad = 1;
  Tensor<S> forward(const Tensor<S>& x) const { return conv_transpose2d(x, w, b, stride, pad); }
};

template <class S>
struct BatchNorm2dLayer {
  Tensor<S> gamma, beta, running_mean, running_var;
  Tensor<S> forward(const Tensor<S>& x, Mode mode) const {
    return batchnorm2d(x, gamma, beta, running_mean, running_var, mode);
  }
};

template <class S>
struct LinearLayer {
  Tensor<S> w, b;
  Tensor<S> forward(const Tensor<S>& x) const { return linear(x, w, b); }
};

namespace detail {

constexpr double kInitStd = 0.02;

template <class S>
Tensor<S> param(Shape shape, Rng& rng) {
  auto t = Tensor<S>::randn(std::move(shape), rng, kInitStd);
  t.set_requires_grad(true);
  return t;
}

template <class S>
Tensor<S> zero_param(Shape shape) {
  Tensor<S> t(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

template <class S>
Conv2dLayer<S> make_conv(int in_ch, int out_ch, Rng& rng) {
  return Conv2dLayer<S>{param<S>({out_ch, in_ch, 4, 4}, rng), zero_param<S>({out_ch})};
}

template <class S>
ConvT2dLayer<S> make_deconv(int in_ch, int out_ch, Rng& rng) {
  return ConvT2dLayer<S>{param<S>({in_ch, out_ch, 4, 4}, rng), zero_param<S>({out_ch})};
}

template <class S>
BatchNorm2dLayer<S> make_bn(int ch) {
  BatchNorm2dLayer<S> bn;
  bn.gamma = Tensor<S>::ones({ch});
  bn.gamma.set_requires_grad(true);
  bn.beta = zero_param<S>({ch});
  bn.running_mean = Tensor<S>::zeros({ch});
  bn.running_var = Tensor<S>::ones({ch});
  return bn;
}

template <class S>
LinearLayer<S> make_linear(int in_dim, int out_dim, Rng& rng) {
  return LinearLayer<S>{param<S>({out_dim, in_dim}, rng), zero_param<S>({out_dim})};
}

template <class S>
void collect_conv(const std::string& name, const Conv2dLayer<S>& l, NetworkParams<S>& out) {
  out.add(name + ".weight", l.w);
  out.add(name + ".bias", l.b);
}

template <class S>
void collect_deconv(const std::string& name, const ConvT2dLayer<S>& l, NetworkParams<S>& out) {
  out.add(name + ".weight", l.w);
  out.add(name + ".bias", l.b);
}

template <class S>
void collect_bn(const std::string& name, const BatchNorm2dLayer<S>& l, NetworkParams<S>& out) {
  out.add(name + ".gamma", l.gamma);
  out.add(name + ".beta", l.beta);
  out.add(name + ".running_mean", l.running_mean);
  out.add(name + ".running_var", l.running_var);
}

template <class S>
void collect_linear(const std::string& name, const LinearLayer<S>& l, NetworkParams<S>& out) {
  out.add(name + ".weight", l.w);
  out.add(name + ".bias", l.b);
}

}  // namespace detail

// stride-2 conv + batchnorm + leaky stack shared by the encoders
template <class S>
struct ConvStack {
  std::vector<Conv2dLayer<S>> convs;
  std::vector<BatchNorm2dLayer<S>> bns;
  double alpha = 0.2;

  // taps, when requested, receive the post-activation output of every layer
  Tensor<S> forward(const Tensor<S>& x, Mode mode, std::vector<Tensor<S>>* taps = nullptr) const {
    Tensor<S> h = x;
    for (std::size_t i = 0; i < convs.size(); ++i) {
      h = convs[i].forward(h);
      h = bns[i].forward(h, mode);
      h = leaky_relu(h, alpha);
      if (taps) taps->push_back(h);
    }
    return h;
  }

  void collect(const std::string& prefix, NetworkParams<S>& out) const {
    for (std::size_t i = 0; i < convs.size(); ++i) {
      detail::collect_conv(prefix + "conv" + std::to_string(i + 1), convs[i], out);
      detail::collect_bn(prefix + "bn" + std::to_string(i + 1), bns[i], out);
    }
  }
};

template <class S>
ConvStack<S> make_coder_stack(const NetworkSpec& spec, Rng& rng) {
  ConvStack<S> stack;
  stack.alpha = spec.leaky_alpha;
  int in_ch = spec.channels;
  for (int i = 1; i <= spec.coder_layers; ++i) {
    const int out_ch = spec.width_at(i);
    stack.convs.push_back(detail::make_conv<S>(in_ch, out_ch, rng));
    stack.bns.push_back(detail::make_bn<S>(out_ch));
    in_ch = out_ch;
  }
  return stack;
}

// ---------------------------------------------------------------------------
// encoder: image -> latent

template <class S>
struct Encoder {
  NetworkSpec spec;
  ConvStack<S> stack;
  LinearLayer<S> fc;  // final layer stays linear so the latent range is unconstrained

  Tensor<S> forward(const Tensor<S>& x, Mode mode) const {
    if (x.ndim() != 4 || x.dim(1) != spec.channels || x.dim(2) != spec.height ||
        x.dim(3) != spec.width)
      throw ShapeError("encoder: expected [N," + std::to_string(spec.channels) + "," +
                       std::to_string(spec.height) + "," + std::to_string(spec.width) +
                       "], got " + shape_str(x.shape()));
    Tensor<S> h = stack.forward(x, mode);
    return fc.forward(flatten2d(h));
  }

  NetworkParams<S> params() const {
    NetworkParams<S> out;
    stack.collect("", out);
    detail::collect_linear("fc", fc, out);
    return out;
  }
};

template <class S>
Encoder<S> build_encoder(const NetworkSpec& spec, Rng& rng) {
  spec.validate();
  Encoder<S> e;
  e.spec = spec;
  e.stack = make_coder_stack<S>(spec, rng);
  const int flat = spec.width_at(spec.coder_layers) * spec.bottleneck_h() * spec.bottleneck_w();
  e.fc = detail::make_linear<S>(flat, spec.latent_dim, rng);
  return e;
}

template <class S>
Encoder<S> build_encoder(const NetworkSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  return build_encoder<S>(spec, rng);
}

// ---------------------------------------------------------------------------
// decoder: latent -> image in [-1,1]

template <class S>
struct Decoder {
  NetworkSpec spec;
  LinearLayer<S> fc;
  std::vector<ConvT2dLayer<S>> deconvs;
  std::vector<BatchNorm2dLayer<S>> bns;  // all but the output layer

  Tensor<S> forward(const Tensor<S>& z, Mode mode) const {
    if (z.ndim() != 2 || z.dim(1) != spec.latent_dim)
      throw ShapeError("decoder: expected [N," + std::to_string(spec.latent_dim) + "], got " +
                       shape_str(z.shape()));
    const std::int64_t n = z.dim(0);
    Tensor<S> h = fc.forward(z);
    h = reshape(h, Shape{n, spec.width_at(spec.coder_layers), spec.bottleneck_h(),
                         spec.bottleneck_w()});
    for (std::size_t j = 0; j < deconvs.size(); ++j) {
      h = deconvs[j].forward(h);
      if (j + 1 < deconvs.size()) {
        h = bns[j].forward(h, mode);
        h = leaky_relu(h, spec.leaky_alpha);
      }
    }
    return tanh_act(h);
  }

  NetworkParams<S> params() const {
    NetworkParams<S> out;
    detail::collect_linear("fc", fc, out);
    for (std::size_t j = 0; j < deconvs.size(); ++j) {
      detail::collect_deconv("deconv" + std::to_string(j + 1), deconvs[j], out);
      if (j + 1 < deconvs.size())
        detail::collect_bn("bn" + std::to_string(j + 1), bns[j], out);
    }
    return out;
  }
};

template <class S>
Decoder<S> build_decoder(const NetworkSpec& spec, Rng& rng) {
  spec.validate();
  Decoder<S> d;
  d.spec = spec;
  const int top = spec.width_at(spec.coder_layers);
  d.fc = detail::make_linear<S>(spec.latent_dim, top * spec.bottleneck_h() * spec.bottleneck_w(), rng);
  int in_ch = top;
  for (int j = 1; j <= spec.coder_layers; ++j) {
    const int out_ch = j == spec.coder_layers ? spec.channels : spec.width_at(spec.coder_layers - j);
    d.deconvs.push_back(detail::make_deconv<S>(in_ch, out_ch, rng));
    if (j < spec.coder_layers) d.bns.push_back(detail::make_bn<S>(out_ch));
    in_ch = out_ch;
  }
  return d;
}

template <class S>
Decoder<S> build_decoder(const NetworkSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  return build_decoder<S>(spec, rng);
}

// ---------------------------------------------------------------------------
// AAE discriminator: (latent, image) -> logit, with penultimate features.
// Image and latent pathways are fused by concatenation before the final two
// layers; the image pathway pools its conv features so the fused layers stay
// resolution-independent.

template <class S>
struct AaeDiscriminator {
  NetworkSpec spec;
  std::vector<Conv2dLayer<S>> img_convs;
  LinearLayer<S> latent_fc;
  LinearLayer<S> fuse1, fuse2;

  struct Out {
    Tensor<S> logits;    // [N,1]
    Tensor<S> features;  // [N,feature_dim], penultimate activations
  };

  Out forward(const Tensor<S>& latent, const Tensor<S>& image) const {
    if (latent.ndim() != 2 || latent.dim(1) != spec.latent_dim)
      throw ShapeError("aae discriminator: latent " + shape_str(latent.shape()) +
                       " does not match spec latent dim " + std::to_string(spec.latent_dim));
    Tensor<S> h = image;
    for (const auto& c : img_convs) h = leaky_relu(c.forward(h), spec.leaky_alpha);
    Tensor<S> img_feat = global_avg_pool(h);
    Tensor<S> lat_feat = leaky_relu(latent_fc.forward(latent), spec.leaky_alpha);
    Tensor<S> fused = concat1(img_feat, lat_feat);
    Tensor<S> features = leaky_relu(fuse1.forward(fused), spec.leaky_alpha);
    return Out{fuse2.forward(features), features};
  }

  int depth() const { return static_cast<int>(img_convs.size()) + 2; }

  NetworkParams<S> params() const {
    NetworkParams<S> out;
    for (std::size_t i = 0; i < img_convs.size(); ++i)
      detail::collect_conv("conv" + std::to_string(i + 1), img_convs[i], out);
    detail::collect_linear("latent_fc", latent_fc, out);
    detail::collect_linear("fuse1", fuse1, out);
    detail::collect_linear("fuse2", fuse2, out);
    return out;
  }
};

template <class S>
AaeDiscriminator<S> build_aae_discriminator(const NetworkSpec& spec, Rng& rng) {
  spec.validate();
  AaeDiscriminator<S> d;
  d.spec = spec;
  int in_ch = spec.channels;
  for (int i = 1; i <= spec.disc_conv_layers(); ++i) {
    const int out_ch = spec.width_at(i);
    d.img_convs.push_back(detail::make_conv<S>(in_ch, out_ch, rng));
    in_ch = out_ch;
  }
  const int feat = spec.feature_dim();
  d.latent_fc = detail::make_linear<S>(spec.latent_dim, feat, rng);
  d.fuse1 = detail::make_linear<S>(in_ch + feat, feat, rng);
  d.fuse2 = detail::make_linear<S>(feat, 1, rng);
  return d;
}

template <class S>
AaeDiscriminator<S> build_aae_discriminator(const NetworkSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  return build_aae_discriminator<S>(spec, rng);
}

// ---------------------------------------------------------------------------
// cGAN generator: (latent, condition image) -> image. The condition passes
// through a coder stack, the latent is concatenated at the bottleneck, and
// encoder taps named in spec.skip_layers are concatenated channel-wise into
// the mirror decoder layers.

template <class S>
struct CganGenerator {
  NetworkSpec spec;
  ConvStack<S> enc;
  LinearLayer<S> latent_fc;
  std::vector<ConvT2dLayer<S>> deconvs;
  std::vector<BatchNorm2dLayer<S>> bns;

  Tensor<S> forward(const Tensor<S>& latent, const Tensor<S>& condition, Mode mode,
                    bool zero_skips = false) const {
    if (latent.ndim() != 2 || latent.dim(1) != spec.latent_dim)
      throw ShapeError("generator: latent " + shape_str(latent.shape()) +
                       " does not match spec latent dim " + std::to_string(spec.latent_dim));
    if (condition.ndim() != 4 || condition.dim(1) != spec.channels ||
        condition.dim(2) != spec.height || condition.dim(3) != spec.width)
      throw ShapeError("generator: condition " + shape_str(condition.shape()) +
                       " does not match spec resolution");
    if (latent.dim(0) != condition.dim(0))
      throw ShapeError("generator: latent batch " + shape_str(latent.shape()) +
                       " vs condition batch " + shape_str(condition.shape()));
    const std::int64_t n = condition.dim(0);
    const int L = spec.coder_layers;

    std::vector<Tensor<S>> taps;
    Tensor<S> bottleneck = enc.forward(condition, mode, &taps);
    Tensor<S> lat = latent_fc.forward(latent);
    lat = reshape(lat, Shape{n, spec.width_at(L), spec.bottleneck_h(), spec.bottleneck_w()});
    Tensor<S> h = concat1(bottleneck, lat);

    for (int j = 1; j <= L; ++j) {
      const int src = L + 1 - j;  // mirror encoder layer feeding this decoder layer
      if (j > 1 && src < L && spec.has_skip(src)) {
        const Tensor<S>& tap = taps[static_cast<std::size_t>(src - 1)];
        h = concat1(h, zero_skips ? Tensor<S>::zeros(tap.shape()) : tap);
      }
      h = deconvs[static_cast<std::size_t>(j - 1)].forward(h);
      if (j < L) {
        h = bns[static_cast<std::size_t>(j - 1)].forward(h, mode);
        h = leaky_relu(h, spec.leaky_alpha);
      }
    }
    return tanh_act(h);
  }

  NetworkParams<S> params() const {
    NetworkParams<S> out;
    enc.collect("enc.", out);
    detail::collect_linear("latent_fc", latent_fc, out);
    for (std::size_t j = 0; j < deconvs.size(); ++j) {
      detail::collect_deconv("deconv" + std::to_string(j + 1), deconvs[j], out);
      if (j + 1 < deconvs.size()) detail::collect_bn("dbn" + std::to_string(j + 1), bns[j], out);
    }
    return out;
  }
};

template <class S>
CganGenerator<S> build_cgan_generator(const NetworkSpec& spec, Rng& rng) {
  spec.validate();
  CganGenerator<S> g;
  g.spec = spec;
  g.enc = make_coder_stack<S>(spec, rng);
  const int L = spec.coder_layers;
  const int top = spec.width_at(L);
  g.latent_fc = detail::make_linear<S>(spec.latent_dim, top * spec.bottleneck_h() * spec.bottleneck_w(), rng);
  int in_ch = 2 * top;  // bottleneck + reshaped latent
  for (int j = 1; j <= L; ++j) {
    const int src = L + 1 - j;
    if (j > 1 && src < L && spec.has_skip(src)) in_ch += spec.width_at(src);
    const int out_ch = j == L ? spec.channels : spec.width_at(L - j);
    g.deconvs.push_back(detail::make_deconv<S>(in_ch, out_ch, rng));
    if (j < L) g.bns.push_back(detail::make_bn<S>(out_ch));
    in_ch = out_ch;
  }
  return g;
}

template <class S>
CganGenerator<S> build_cgan_generator(const NetworkSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  return build_cgan_generator<S>(spec, rng);
}

// ---------------------------------------------------------------------------
// cGAN discriminator: (candidate, condition) concatenated channel-wise

template <class S>
struct CganDiscriminator {
  NetworkSpec spec;
  std::vector<Conv2dLayer<S>> convs;
  LinearLayer<S> fc1, fc2;

  struct Out {
    Tensor<S> logits;
    Tensor<S> features;
  };

  Out forward(const Tensor<S>& candidate, const Tensor<S>& condition) const {
    if (candidate.shape() != condition.shape())
      throw ShapeError("cgan discriminator: candidate " + shape_str(candidate.shape()) +
                       " vs condition " + shape_str(condition.shape()));
    Tensor<S> h = concat1(candidate, condition);
    for (const auto& c : convs) h = leaky_relu(c.forward(h), spec.leaky_alpha);
    Tensor<S> pooled = global_avg_pool(h);
    Tensor<S> features = leaky_relu(fc1.forward(pooled), spec.leaky_alpha);
    return Out{fc2.forward(features), features};
  }

  int depth() const { return static_cast<int>(convs.size()) + 2; }

  NetworkParams<S> params() const {
    NetworkParams<S> out;
    for (std::size_t i = 0; i < convs.size(); ++i)
      detail::collect_conv("conv" + std::to_string(i + 1), convs[i], out);
    detail::collect_linear("fc1", fc1, out);
    detail::collect_linear("fc2", fc2, out);
    return out;
  }
};

template <class S>
CganDiscriminator<S> build_cgan_discriminator(const NetworkSpec& spec, Rng& rng) {
  spec.validate();
  CganDiscriminator<S> d;
  d.spec = spec;
  int in_ch = 2 * spec.channels;
  for (int i = 1; i <= spec.disc_conv_layers(); ++i) {
    const int out_ch = spec.width_at(i);
    d.convs.push_back(detail::make_conv<S>(in_ch, out_ch, rng));
    in_ch = out_ch;
  }
  d.fc1 = detail::make_linear<S>(in_ch, spec.feature_dim(), rng);
  d.fc2 = detail::make_linear<S>(spec.feature_dim(), 1, rng);
  return d;
}

template <class S>
CganDiscriminator<S> build_cgan_discriminator(const NetworkSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  return build_cgan_discriminator<S>(spec, rng);
}

// Copies values into `dst` from a name -> tensor map, requiring an exact match
// of names and shapes (used by checkpoint loading).
template <class S>
void assign_named_tensors(NetworkParams<S>& dst,
                          const std::vector<std::pair<std::string, Tensor<S>>>& src) {
  std::map<std::string, const Tensor<S>*> lookup;
  for (const auto& [name, t] : src) lookup[name] = &t;
  if (lookup.size() != dst.items.size())
    throw FormatError("checkpoint tensor count " + std::to_string(lookup.size()) +
                      " does not match model (" + std::to_string(dst.items.size()) + ")");
  for (auto& [name, t] : dst.items) {
    auto it = lookup.find(name);
    if (it == lookup.end()) throw FormatError("checkpoint is missing tensor '" + name + "'");
    if (it->second->shape() != t.shape())
      throw FormatError("checkpoint tensor '" + name + "' has shape " +
                        shape_str(it->second->shape()) + ", expected " + shape_str(t.shape()));
    std::copy_n(it->second->data(), t.size(), t.mutable_data());
  }
}

}  // namespace laug
