#include "hybridseg/network.hpp"

#include <cmath>
#include <stdexcept>

namespace hybridseg {

void validate(const NetConfig& cfg) {
  const auto& w = cfg.stage_widths;
  if (w.size() < 3) throw std::invalid_argument("net.stage_widths: need at least 3 stages");
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] <= 0 || w[i] % 2 != 0) throw std::invalid_argument("net.stage_widths: widths must be positive and even");
    if (i > 0 && w[i] < w[i - 1]) throw std::invalid_argument("net.stage_widths: widths must not decrease with depth");
  }
  if (!cfg.aux_branch && (cfg.ablate_spm || cfg.ablate_fd || cfg.bottleneck_only || cfg.detach_uncertainty))
    throw std::invalid_argument("net.aux_branch: FD/SPM options require the background branch");
}

NetConfig full_scale_net_config() {
  NetConfig cfg;
  cfg.stage_widths = {64, 64, 128, 256, 512};
  return cfg;
}

template <typename T>
std::size_t ParameterSet<T>::add(std::string name, std::vector<int> shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  entries.push_back({std::move(name), std::move(shape), std::vector<T>(n, T(0))});
  return entries.size() - 1;
}

template <typename T>
std::optional<std::size_t> ParameterSet<T>::find(std::string_view name) const {
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (entries[i].name == name) return i;
  return std::nullopt;
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.values.size();
  return n;
}

template <typename T>
Tensor<T> to_tensor(const GrayImage& image) {
  Tensor<T> t(1, image.height, image.width);
  for (std::size_t i = 0; i < image.size(); ++i) t.data[i] = static_cast<T>(image.values[i]);
  return t;
}

template <typename T>
RealMap to_real_map(const Tensor<T>& t) {
  RealMap m(t.height, t.width);
  for (std::size_t i = 0; i < m.size(); ++i) m.values[i] = static_cast<double>(t.data[i]);
  return m;
}

template <typename T>
Network<T>::Network(NetConfig cfg) : cfg_(std::move(cfg)) {
  validate(cfg_);
  std::mt19937_64 rng(cfg_.init_seed);
  const auto& widths = cfg_.stage_widths;
  const auto he = [](int fan_in) { return std::sqrt(2.0 / fan_in); };

  int in = 1;
  for (int l = 0; l < depth(); ++l) {
    const int c = widths[l];
    const std::string prefix = "encoder.stage" + std::to_string(l + 1);
    EncoderStage s;
    s.down = make_layer(prefix + ".down", {in, c, 3, 2}, he(in * 9), rng);
    s.res1 = make_layer(prefix + ".res1", {c, c, 3, 1}, he(c * 9), rng);
    // Residual branch starts near identity.
    s.res2 = make_layer(prefix + ".res2", {c, c, 3, 1}, 0.5 * he(c * 9), rng);
    encoder_.push_back(s);
    in = c;
  }

  if (cfg_.aux_branch) {
    proj_lesion_.resize(depth());
    proj_other_.resize(depth());
    for (int l = 0; l < depth(); ++l) {
      if (!disentangles_stage(l)) continue;
      const int c = widths[l];
      const std::string prefix = "disentangle.stage" + std::to_string(l + 1);
      proj_lesion_[l] = make_layer(prefix + ".lesion", {c / 2, c, 1, 1}, std::sqrt(2.0 / c), rng);
      proj_other_[l] = make_layer(prefix + ".other", {c / 2, c, 1, 1}, std::sqrt(2.0 / c), rng);
    }
    dec_bg_ = make_decoder("dec_bg", rng);
  }
  dec_seg_ = make_decoder("dec_seg", rng);
}

template <typename T>
typename Network<T>::Layer Network<T>::make_layer(const std::string& name, ConvShape shape, double init_std,
                                                  std::mt19937_64& rng) {
  Layer layer;
  layer.shape = shape;
  layer.weight = params_.add(name + ".weight", {shape.out_channels, shape.in_channels, shape.kernel, shape.kernel});
  layer.bias = params_.add(name + ".bias", {shape.out_channels});
  std::normal_distribution<double> normal(0.0, init_std);
  for (auto& v : params_.entries[layer.weight].values) v = static_cast<T>(normal(rng));
  return layer;
}

template <typename T>
typename Network<T>::Decoder Network<T>::make_decoder(const std::string& name, std::mt19937_64& rng) {
  const auto& widths = cfg_.stage_widths;
  Decoder dec;
  dec.levels.resize(depth() - 1);
  for (int l = depth() - 2; l >= 0; --l) {
    const int in = widths[l + 1] + widths[l];
    const std::string prefix = name + ".level" + std::to_string(l + 1);
    dec.levels[l].first = make_layer(prefix + ".conv_a", {in, widths[l], 3, 1}, std::sqrt(2.0 / (in * 9)), rng);
    dec.levels[l].second =
        make_layer(prefix + ".conv_b", {widths[l], widths[l], 3, 1}, std::sqrt(2.0 / (widths[l] * 9)), rng);
  }
  dec.head = make_layer(name + ".head", {widths[0], widths[0], 3, 1}, std::sqrt(2.0 / (widths[0] * 9)), rng);
  dec.out = make_layer(name + ".out", {widths[0], 1, 1, 1}, std::sqrt(1.0 / widths[0]), rng);
  return dec;
}

template <typename T>
Gradients<T> Network<T>::zero_gradients() const {
  Gradients<T> g(params_.entries.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i].assign(params_.entries[i].values.size(), T(0));
  return g;
}

template <typename T>
bool Network<T>::disentangles_stage(int l) const {
  return cfg_.aux_branch && !cfg_.ablate_fd && (!cfg_.bottleneck_only || l == depth() - 1);
}

template <typename T>
bool Network<T>::prompts_stage(int l) const {
  return cfg_.aux_branch && !cfg_.ablate_spm && (!cfg_.bottleneck_only || l == depth() - 1);
}

template <typename T>
Tensor<T> Network<T>::run(const Layer& layer, const Tensor<T>& x, ConvCache<T>* cache) const {
  return conv2d_forward<T>(layer.shape, params_.entries[layer.weight].values, params_.entries[layer.bias].values, x,
                           cache);
}

template <typename T>
Tensor<T> Network<T>::back(const Layer& layer, const ConvCache<T>& cache, const Tensor<T>& grad,
                           Gradients<T>& grads, bool need_input_grad) const {
  return conv2d_backward<T>(layer.shape, params_.entries[layer.weight].values, cache, grad, grads[layer.weight],
                            grads[layer.bias], need_input_grad);
}

template <typename T>
Stages<T> Network<T>::encode(const Tensor<T>& image, EncoderCache<T>* cache) const {
  const int factor = 1 << depth();
  if (image.height % factor != 0 || image.width % factor != 0) {
    throw std::invalid_argument("encode: image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                                " not divisible by " + std::to_string(factor));
  }
  if (cache) cache->stages.resize(depth());
  Stages<T> feats;
  const Tensor<T>* x = &image;
  for (int l = 0; l < depth(); ++l) {
    const EncoderStage& s = encoder_[l];
    auto* c = cache ? &cache->stages[l] : nullptr;
    Tensor<T> a = run(s.down, *x, c ? &c->down : nullptr);
    relu_inplace(a);
    Tensor<T> r1 = run(s.res1, a, c ? &c->res1 : nullptr);
    relu_inplace(r1);
    Tensor<T> y = run(s.res2, r1, c ? &c->res2 : nullptr);
    add_inplace(y, a);
    relu_inplace(y);
    if (c) {
      c->a = a;
      c->r1 = std::move(r1);
      c->y = y;
    }
    feats.push_back(std::move(y));
    x = &feats.back();
  }
  return feats;
}

template <typename T>
void Network<T>::encode_backward(const EncoderCache<T>& cache, Stages<T> grad, Gradients<T>& grads) const {
  for (int l = depth() - 1; l >= 0; --l) {
    const EncoderStage& s = encoder_[l];
    const auto& c = cache.stages[l];
    Tensor<T>& dy = grad[l];
    relu_backward_inplace(dy, c.y);
    Tensor<T> dr1 = back(s.res2, c.res2, dy, grads);
    relu_backward_inplace(dr1, c.r1);
    Tensor<T> da = back(s.res1, c.res1, dr1, grads);
    add_inplace(da, dy);
    relu_backward_inplace(da, c.a);
    Tensor<T> dx = back(s.down, c.down, da, grads, l > 0);
    if (l > 0) add_inplace(grad[l - 1], dx);
  }
}

template <typename T>
DisentangledFeatures<T> Network<T>::disentangle(const Stages<T>& feats, ForwardCache<T>* cache) const {
  if (static_cast<int>(feats.size()) != depth()) throw std::invalid_argument("disentangle: wrong stage count");
  DisentangledFeatures<T> out;
  if (cache) {
    cache->proj_lesion.assign(depth(), {});
    cache->proj_other.assign(depth(), {});
  }
  for (int l = 0; l < depth(); ++l) {
    const Tensor<T>& f = feats[l];
    if (!disentangles_stage(l)) {
      out.lesion_related.push_back(f);
      out.other.push_back(f);
      continue;
    }
    if (f.channels % 2 != 0) throw std::invalid_argument("disentangle: odd channel count");
    const int half = f.channels / 2;
    out.lesion_related.push_back(
        run(proj_lesion_[l], slice_channels(f, 0, half), cache ? &cache->proj_lesion[l] : nullptr));
    out.other.push_back(
        run(proj_other_[l], slice_channels(f, half, f.channels), cache ? &cache->proj_other[l] : nullptr));
  }
  return out;
}

template <typename T>
Tensor<T> Network<T>::decode(const Decoder& dec, const Stages<T>& stages, DecoderCache<T>* cache) const {
  if (static_cast<int>(stages.size()) != depth()) throw std::invalid_argument("decode: wrong stage count");
  if (cache) cache->levels.assign(depth() - 1, {});
  Tensor<T> x = stages.back();
  for (int l = depth() - 2; l >= 0; --l) {
    auto* c = cache ? &cache->levels[l] : nullptr;
    Tensor<T> up = upsample_nearest2x(x);
    if (c) c->upsampled_channels = up.channels;
    Tensor<T> a = run(dec.levels[l].first, concat_channels(up, stages[l]), c ? &c->conv_a : nullptr);
    relu_inplace(a);
    Tensor<T> b = run(dec.levels[l].second, a, c ? &c->conv_b : nullptr);
    relu_inplace(b);
    if (c) {
      c->a = std::move(a);
      c->b = b;
    }
    x = std::move(b);
  }
  Tensor<T> h = run(dec.head, upsample_nearest2x(x), cache ? &cache->head : nullptr);
  relu_inplace(h);
  Tensor<T> logits = run(dec.out, h, cache ? &cache->out : nullptr);
  if (cache) cache->head_out = std::move(h);
  return logits;
}

template <typename T>
Stages<T> Network<T>::decode_backward(const Decoder& dec, const DecoderCache<T>& cache, const Tensor<T>& grad,
                                      Gradients<T>& grads) const {
  Stages<T> d_stages(depth());
  Tensor<T> dh = back(dec.out, cache.out, grad, grads);
  relu_backward_inplace(dh, cache.head_out);
  Tensor<T> dx = upsample_nearest2x_backward(back(dec.head, cache.head, dh, grads));
  for (int l = 0; l <= depth() - 2; ++l) {
    const auto& c = cache.levels[l];
    relu_backward_inplace(dx, c.b);
    Tensor<T> da = back(dec.levels[l].second, c.conv_b, dx, grads);
    relu_backward_inplace(da, c.a);
    Tensor<T> dcat = back(dec.levels[l].first, c.conv_a, da, grads);
    Tensor<T> dup;
    split_channels(dcat, c.upsampled_channels, dup, d_stages[l]);
    dx = upsample_nearest2x_backward(dup);
  }
  d_stages.back() = std::move(dx);
  return d_stages;
}

template <typename T>
Tensor<T> Network<T>::decode_background(const Stages<T>& other, DecoderCache<T>* cache) const {
  if (!cfg_.aux_branch) throw std::logic_error("decode_background: network has no background branch");
  return decode(dec_bg_, other, cache);
}

template <typename T>
Tensor<T> Network<T>::decode_segmentation(const Stages<T>& lesion, DecoderCache<T>* cache) const {
  return decode(dec_seg_, lesion, cache);
}

template <typename T>
Tensor<T> Network<T>::uncertainty_from_background(const Tensor<T>& bg_logits) {
  Tensor<T> u = bg_logits;
  // 1 - sigmoid(z) = sigmoid(-z)
  for (auto& v : u.data) v = T(1) / (T(1) + std::exp(v));
  return u;
}

template <typename T>
Stages<T> Network<T>::prompt(const Stages<T>& lesion, const Tensor<T>& uncertainty, Stages<T>* resized) const {
  Stages<T> out;
  if (resized) resized->assign(lesion.size(), {});
  for (int l = 0; l < static_cast<int>(lesion.size()); ++l) {
    const Tensor<T>& f = lesion[l];
    if (!prompts_stage(l)) {
      out.push_back(f);
      continue;
    }
    Tensor<T> u = bilinear_resize(uncertainty, f.height, f.width);
    Tensor<T> p = f;
    const std::size_t plane = f.plane_size();
    for (int c = 0; c < f.channels; ++c) {
      T* dst = p.plane(c);
      for (std::size_t i = 0; i < plane; ++i) dst[i] *= u.data[i];
    }
    out.push_back(std::move(p));
    if (resized) (*resized)[l] = std::move(u);
  }
  return out;
}

template <typename T>
ModelOutput Network<T>::forward(const GrayImage& image) const {
  ForwardCache<T> scratch;
  return forward(image, scratch);
}

template <typename T>
ModelOutput Network<T>::forward(const GrayImage& image, ForwardCache<T>& cache) const {
  cache.height = image.height;
  cache.width = image.width;
  const Stages<T> feats = encode(to_tensor<T>(image), &cache.encoder);
  ModelOutput out;
  if (!cfg_.aux_branch) {
    out.seg_logits = to_real_map(decode(dec_seg_, feats, &cache.segmentation));
    return out;
  }
  DisentangledFeatures<T> dis = disentangle(feats, &cache);
  const Tensor<T> bg = decode(dec_bg_, dis.other, &cache.background);
  cache.uncertainty = uncertainty_from_background(bg);
  const Stages<T> prompted = prompt(dis.lesion_related, cache.uncertainty, &cache.resized_uncertainty);
  cache.lesion_related = std::move(dis.lesion_related);
  out.seg_logits = to_real_map(decode(dec_seg_, prompted, &cache.segmentation));
  out.bg_logits = to_real_map(bg);
  out.uncertainty = to_real_map(cache.uncertainty);
  return out;
}

template <typename T>
void Network<T>::backward(const ForwardCache<T>& cache, const RealMap& seg_grad, const RealMap* bg_grad,
                          Gradients<T>& grads) const {
  if (grads.size() != params_.entries.size()) throw std::invalid_argument("backward: gradient buffer mismatch");
  const auto to_t = [](const RealMap& m) {
    Tensor<T> t(1, m.height, m.width);
    for (std::size_t i = 0; i < m.size(); ++i) t.data[i] = static_cast<T>(m.values[i]);
    return t;
  };
  Stages<T> d_prompted = decode_backward(dec_seg_, cache.segmentation, to_t(seg_grad), grads);
  if (!cfg_.aux_branch) {
    encode_backward(cache.encoder, std::move(d_prompted), grads);
    return;
  }

  Tensor<T> d_bg = bg_grad ? to_t(*bg_grad) : Tensor<T>(1, cache.height, cache.width);
  Stages<T>& d_lesion = d_prompted;
  Tensor<T> d_u(1, cache.height, cache.width);
  for (int l = 0; l < depth(); ++l) {
    if (!prompts_stage(l)) continue;
    const Tensor<T>& u = cache.resized_uncertainty[l];
    const Tensor<T>& f = cache.lesion_related[l];
    Tensor<T>& dp = d_lesion[l];
    Tensor<T> du_l(1, f.height, f.width);
    const std::size_t plane = f.plane_size();
    for (int c = 0; c < f.channels; ++c) {
      T* g = dp.plane(c);
      const T* fv = f.plane(c);
      for (std::size_t i = 0; i < plane; ++i) {
        du_l.data[i] += g[i] * fv[i];
        g[i] *= u.data[i];
      }
    }
    add_inplace(d_u, bilinear_resize_backward(du_l, cache.height, cache.width));
  }
  if (!cfg_.detach_uncertainty) {
    // du/dz = -u (1 - u)
    for (std::size_t i = 0; i < d_bg.size(); ++i) {
      const T u = cache.uncertainty.data[i];
      d_bg.data[i] -= d_u.data[i] * u * (T(1) - u);
    }
  }
  Stages<T> d_other = decode_backward(dec_bg_, cache.background, d_bg, grads);

  Stages<T> d_feats(depth());
  for (int l = 0; l < depth(); ++l) {
    if (!disentangles_stage(l)) {
      d_feats[l] = std::move(d_lesion[l]);
      add_inplace(d_feats[l], d_other[l]);
      continue;
    }
    Tensor<T> dr = back(proj_lesion_[l], cache.proj_lesion[l], d_lesion[l], grads);
    Tensor<T> dother = back(proj_other_[l], cache.proj_other[l], d_other[l], grads);
    d_feats[l] = concat_channels(dr, dother);
  }
  encode_backward(cache.encoder, std::move(d_feats), grads);
}

template struct ParameterSet<float>;
template struct ParameterSet<double>;
template class Network<float>;
template class Network<double>;
template Tensor<float> to_tensor<float>(const GrayImage&);
template Tensor<double> to_tensor<double>(const GrayImage&);
template RealMap to_real_map<float>(const Tensor<float>&);
template RealMap to_real_map<double>(const Tensor<double>&);

}  // namespace hybridseg
