// Copyright 2026 The tiasu Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "tiasu/model.h"

#include "tiasu/npy.h"
#include "tiasu/rng.h"

#include <cmath>
#include <cstring>
#include <map>

namespace tiasu {

using nlohmann::json;

std::string to_string(Modality m) {
  switch (m) {
    case Modality::kSpeech: return "speech";
    case Modality::kText: return "text";
    case Modality::kMultimodal: return "mm";
  }
  return "mm";
}

Modality modality_from_string(const std::string& s) {
  if (s == "speech") return Modality::kSpeech;
  if (s == "text") return Modality::kText;
  if (s == "mm") return Modality::kMultimodal;
  throw ConfigError("unknown modality '" + s + "'");
}

int ModelSpec::classifier_input() const {
  switch (mode) {
    case Modality::kSpeech: return speech_embedding();
    case Modality::kText: return text_embedding();
    case Modality::kMultimodal: return speech_embedding() + text_embedding();
  }
  return 0;
}

std::size_t ModelSpec::parameter_count() const {
  auto z = [](int v) { return static_cast<std::size_t>(v); };
  std::size_t n = 0;
  if (uses_speech(mode))
    n += z(num_layers + 1) + z(speech_dim * conv_channels + conv_channels) +
         z(conv_channels * conv_channels + conv_channels);
  if (uses_text(mode)) {
    const std::size_t h = z(gru_hidden);
    for (int l = 0; l < gru_layers; ++l) {
      const std::size_t in = l == 0 ? z(text_dim) : 2 * h;
      n += 2 * (in * 3 * h + h * 3 * h + 6 * h);
    }
  }
  n += z(classifier_input()) * z(fc_hidden) + z(fc_hidden) + z(fc_hidden) * z(num_classes) + z(num_classes);
  return n;
}

void ModelSpec::validate() const {
  if (num_classes < 2) throw ConfigError("model needs at least 2 classes");
  if (num_layers < 1) throw ConfigError("speech stack needs at least one encoder layer");
  if (speech_dim < 1 || text_dim < 1 || conv_channels < 1 || gru_hidden < 1 || fc_hidden < 1 || gru_layers < 1)
    throw ConfigError("model dimensions must be positive");
}

json to_json(const ModelSpec& s) {
  return {{"mode", to_string(s.mode)},       {"num_classes", s.num_classes},
          {"num_layers", s.num_layers},      {"speech_dim", s.speech_dim},
          {"text_dim", s.text_dim},          {"conv_channels", s.conv_channels},
          {"gru_layers", s.gru_layers},      {"gru_hidden", s.gru_hidden},
          {"fc_hidden", s.fc_hidden}};
}

ModelSpec model_spec_from_json(const json& j) {
  ModelSpec s;
  s.mode = modality_from_string(j.at("mode").get<std::string>());
  s.num_classes = j.at("num_classes").get<int>();
  s.num_layers = j.at("num_layers").get<int>();
  s.speech_dim = j.at("speech_dim").get<int>();
  s.text_dim = j.at("text_dim").get<int>();
  s.conv_channels = j.value("conv_channels", 256);
  s.gru_layers = j.value("gru_layers", 2);
  s.gru_hidden = j.value("gru_hidden", 128);
  s.fc_hidden = j.value("fc_hidden", 256);
  s.validate();
  return s;
}

template <typename T>
DownstreamParams<T> DownstreamParams<T>::zeros_like() const {
  DownstreamParams<T> out = *this;
  out.visit([](const std::string&, const std::string&, Mat<T>& m) { m.setZero(); });
  return out;
}

template <typename T>
std::size_t DownstreamParams<T>::size() const {
  std::size_t n = 0;
  visit([&](const std::string&, const std::string&, const Mat<T>& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

template <typename T>
Mat<T> softmax_row(const Mat<T>& logits) {
  Mat<T> out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const T mx = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - mx).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

namespace {

template <typename T>
Mat<T> xavier(Rng& rng, Eigen::Index fan_in, Eigen::Index fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Mat<T> m(fan_in, fan_out);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
  return m;
}

template <typename T>
Mat<T> sigmoid(const Mat<T>& x) {
  return (T(1) / (T(1) + (-x.array()).exp())).matrix();
}

}  // namespace

template <typename T>
DownstreamModel<T>::DownstreamModel(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
  spec_.validate();
  Rng rng = make_stream(seed, "model_init");
  auto& p = params_;
  const int cc = spec_.conv_channels;
  if (uses_speech(spec_.mode)) {
    p.layer_logits = Mat<T>::Zero(1, spec_.num_layers + 1);
    p.conv1_w = xavier<T>(rng, spec_.speech_dim, cc);
    p.conv1_b = Mat<T>::Zero(1, cc);
    p.conv2_w = xavier<T>(rng, cc, cc);
    p.conv2_b = Mat<T>::Zero(1, cc);
  }
  if (uses_text(spec_.mode)) {
    const int h = spec_.gru_hidden;
    for (int l = 0; l < spec_.gru_layers; ++l) {
      const int in = l == 0 ? spec_.text_dim : 2 * h;
      for (int d = 0; d < 2; ++d)
        p.gru.push_back({xavier<T>(rng, in, 3 * h), xavier<T>(rng, h, 3 * h), Mat<T>::Zero(1, 3 * h),
                         Mat<T>::Zero(1, 3 * h)});
    }
  }
  p.fc1_w = xavier<T>(rng, spec_.classifier_input(), spec_.fc_hidden);
  p.fc1_b = Mat<T>::Zero(1, spec_.fc_hidden);
  p.fc2_w = xavier<T>(rng, spec_.fc_hidden, spec_.num_classes);
  p.fc2_b = Mat<T>::Zero(1, spec_.num_classes);
}

template <typename T>
DownstreamModel<T>::DownstreamModel(const ModelSpec& spec, DownstreamParams<T> params)
    : spec_(spec), params_(std::move(params)) {
  spec_.validate();
}

namespace detail {
template <typename T>
struct GruStep {
  Mat<T> h_prev, r, z, n, ghn;
};
}  // namespace detail

template <typename T>
struct DownstreamModel<T>::Cache {
  // speech
  Mat<T> weights;  // 1 x (L+1)
  Mat<T> frames;   // sum(T_b) x D
  Mat<T> z1;       // sum(T_b) x Cc
  Mat<T> pooled;   // B x Cc, mean of ReLU(z1)
  std::vector<Eigen::Index> offsets, lengths;
  Mat<T> speech_vec;

  // text
  using Step = detail::GruStep<T>;
  struct Layer {
    std::vector<Mat<T>> input;  // per step, B x in
    std::vector<Step> steps[2];
    std::vector<Mat<T>> out;    // per step, B x 2H
  };
  Mat<T> mask;  // B x Tmax
  Mat<T> inv_len;  // B x 1
  std::vector<Layer> layers;
  Mat<T> text_vec;

  // head
  Mat<T> u, z3, logits;
};

namespace {

template <typename T>
void gru_step(const GruDirection<T>& p, const Mat<T>& x, const Mat<T>& h_prev, const Mat<T>& m,
              detail::GruStep<T>* s, Mat<T>& h_out) {
  const Eigen::Index h = p.w_hh.rows();
  Mat<T> gi = x * p.w_ih;
  gi.rowwise() += p.b_ih.row(0);
  Mat<T> gh = h_prev * p.w_hh;
  gh.rowwise() += p.b_hh.row(0);
  Mat<T> r = sigmoid<T>(gi.leftCols(h) + gh.leftCols(h));
  Mat<T> z = sigmoid<T>(gi.middleCols(h, h) + gh.middleCols(h, h));
  Mat<T> ghn = gh.rightCols(h);
  Mat<T> n = (gi.rightCols(h).array() + r.array() * ghn.array()).tanh().matrix();
  Mat<T> hc = ((T(1) - z.array()) * n.array() + z.array() * h_prev.array()).matrix();
  const auto mb = m.replicate(1, h).array();
  h_out = (mb * hc.array() + (T(1) - mb) * h_prev.array()).matrix();
  if (s) {
    s->h_prev = h_prev;
    s->r = std::move(r);
    s->z = std::move(z);
    s->n = std::move(n);
    s->ghn = std::move(ghn);
  }
}

// Returns d(loss)/d(h_prev); accumulates parameter gradients and, if dx is
// non-null, the input gradient.
template <typename T>
Mat<T> gru_step_backward(const GruDirection<T>& p, const Mat<T>& x, const Mat<T>& m,
                         const detail::GruStep<T>& s, const Mat<T>& dh,
                         GruDirection<T>& g, Mat<T>* dx) {
  const Eigen::Index h = p.w_hh.rows();
  const auto mb = m.replicate(1, h).array();
  const Mat<T> dhc = (dh.array() * mb).matrix();
  Mat<T> dh_prev = (dh.array() * (T(1) - mb)).matrix();
  const auto z = s.z.array();
  const auto n = s.n.array();
  const auto r = s.r.array();
  const Mat<T> dn = (dhc.array() * (T(1) - z)).matrix();
  const Mat<T> dz = (dhc.array() * (s.h_prev.array() - n)).matrix();
  dh_prev += (dhc.array() * z).matrix();
  const Mat<T> dpn = (dn.array() * (T(1) - n * n)).matrix();
  const Mat<T> dr = (dpn.array() * s.ghn.array()).matrix();

  Mat<T> dgi(dh.rows(), 3 * h), dgh(dh.rows(), 3 * h);
  dgi.leftCols(h) = (dr.array() * r * (T(1) - r)).matrix();
  dgi.middleCols(h, h) = (dz.array() * z * (T(1) - z)).matrix();
  dgi.rightCols(h) = dpn;
  dgh.leftCols(2 * h) = dgi.leftCols(2 * h);
  dgh.rightCols(h) = (dpn.array() * r).matrix();

  g.w_ih.noalias() += x.transpose() * dgi;
  g.b_ih += dgi.colwise().sum();
  g.w_hh.noalias() += s.h_prev.transpose() * dgh;
  g.b_hh += dgh.colwise().sum();
  dh_prev.noalias() += dgh * p.w_hh.transpose();
  if (dx) dx->noalias() = dgi * p.w_ih.transpose();
  return dh_prev;
}

}  // namespace

template <typename T>
Mat<T> DownstreamModel<T>::run(const ModelBatch<T>& batch, Cache* cache) const {
  Cache local;
  Cache& c = cache ? *cache : local;
  const auto b = static_cast<Eigen::Index>(batch.size());
  if (b == 0) throw InputError("empty batch");
  const auto& p = params_;

  if (uses_speech(spec_.mode)) {
    if (batch.speech.size() != batch.size()) throw InputError("speech inputs missing from batch");
    c.weights = softmax_row<T>(p.layer_logits);
    const auto nl = p.layer_logits.cols();
    c.offsets.resize(static_cast<std::size_t>(b));
    c.lengths.resize(static_cast<std::size_t>(b));
    Eigen::Index total = 0;
    for (Eigen::Index i = 0; i < b; ++i) {
      const auto* stack = batch.speech[static_cast<std::size_t>(i)];
      if (!stack || static_cast<Eigen::Index>(stack->size()) != nl)
        throw InputError("layer stack depth does not match layer weights");
      const auto t = stack->front().rows();
      if (t < 1) throw InputError("speech input has no frames");
      if (stack->front().cols() != spec_.speech_dim) throw InputError("speech feature dimension mismatch");
      c.offsets[static_cast<std::size_t>(i)] = total;
      c.lengths[static_cast<std::size_t>(i)] = t;
      total += t;
    }
    c.frames.resize(total, spec_.speech_dim);
    for (Eigen::Index i = 0; i < b; ++i) {
      const auto& stack = *batch.speech[static_cast<std::size_t>(i)];
      auto block = c.frames.middleRows(c.offsets[static_cast<std::size_t>(i)], c.lengths[static_cast<std::size_t>(i)]);
      block = c.weights(0, 0) * stack[0];
      for (Eigen::Index l = 1; l < nl; ++l) block += c.weights(0, l) * stack[static_cast<std::size_t>(l)];
    }
    c.z1.noalias() = c.frames * p.conv1_w;
    c.z1.rowwise() += p.conv1_b.row(0);
    c.pooled.resize(b, spec_.conv_channels);
    for (Eigen::Index i = 0; i < b; ++i) {
      const auto len = c.lengths[static_cast<std::size_t>(i)];
      c.pooled.row(i) = c.z1.middleRows(c.offsets[static_cast<std::size_t>(i)], len).cwiseMax(T(0)).colwise().sum() /
                        static_cast<T>(len);
    }
    c.speech_vec.noalias() = c.pooled * p.conv2_w;
    c.speech_vec.rowwise() += p.conv2_b.row(0);
  }

  if (uses_text(spec_.mode)) {
    if (batch.text.size() != batch.size()) throw InputError("text inputs missing from batch");
    Eigen::Index tmax = 0;
    for (const auto* t : batch.text) {
      if (!t || t->rows() < 1) throw InputError("text input has no positions");
      if (t->cols() != spec_.text_dim) throw InputError("text feature dimension mismatch");
      tmax = std::max(tmax, t->rows());
    }
    c.mask = Mat<T>::Zero(b, tmax);
    c.inv_len.resize(b, 1);
    for (Eigen::Index i = 0; i < b; ++i) {
      const auto* t = batch.text[static_cast<std::size_t>(i)];
      const std::vector<unsigned char>* m =
          batch.text_mask.size() == batch.size() ? batch.text_mask[static_cast<std::size_t>(i)] : nullptr;
      if (m && static_cast<Eigen::Index>(m->size()) != t->rows()) throw InputError("text mask length mismatch");
      T len = 0;
      for (Eigen::Index s = 0; s < t->rows(); ++s) {
        const bool valid = !m || (*m)[static_cast<std::size_t>(s)];
        c.mask(i, s) = valid ? T(1) : T(0);
        len += c.mask(i, s);
      }
      if (len <= 0) throw InputError("text input is fully masked");
      c.inv_len(i, 0) = T(1) / len;
    }

    const int h = spec_.gru_hidden;
    c.layers.assign(static_cast<std::size_t>(spec_.gru_layers), {});
    for (int l = 0; l < spec_.gru_layers; ++l) {
      auto& layer = c.layers[static_cast<std::size_t>(l)];
      if (l == 0) {
        layer.input.resize(static_cast<std::size_t>(tmax));
        for (Eigen::Index s = 0; s < tmax; ++s) {
          Mat<T> x = Mat<T>::Zero(b, spec_.text_dim);
          for (Eigen::Index i = 0; i < b; ++i) {
            const auto* t = batch.text[static_cast<std::size_t>(i)];
            if (s < t->rows()) x.row(i) = t->row(s);
          }
          layer.input[static_cast<std::size_t>(s)] = std::move(x);
        }
      } else {
        layer.input = c.layers[static_cast<std::size_t>(l - 1)].out;
      }
      layer.out.assign(static_cast<std::size_t>(tmax), Mat<T>(b, 2 * h));
      for (int dir = 0; dir < 2; ++dir) {
        const auto& gp = p.gru[static_cast<std::size_t>(l * 2 + dir)];
        auto& steps = layer.steps[dir];
        steps.resize(static_cast<std::size_t>(tmax));
        Mat<T> state = Mat<T>::Zero(b, h);
        for (Eigen::Index k = 0; k < tmax; ++k) {
          const Eigen::Index s = dir == 0 ? k : tmax - 1 - k;
          Mat<T> next;
          gru_step<T>(gp, layer.input[static_cast<std::size_t>(s)], state, c.mask.col(s),
                      cache ? &steps[static_cast<std::size_t>(s)] : nullptr, next);
          state = std::move(next);
          layer.out[static_cast<std::size_t>(s)].middleCols(dir * h, h) = state;
        }
      }
      if (!cache && l > 0) c.layers[static_cast<std::size_t>(l - 1)] = {};
    }
    const auto& top = c.layers.back();
    c.text_vec = Mat<T>::Zero(b, 2 * h);
    for (Eigen::Index s = 0; s < tmax; ++s)
      c.text_vec += (top.out[static_cast<std::size_t>(s)].array().colwise() * c.mask.col(s).array()).matrix();
    c.text_vec = (c.text_vec.array().colwise() * c.inv_len.col(0).array()).matrix();
  }

  switch (spec_.mode) {
    case Modality::kSpeech: c.u = c.speech_vec; break;
    case Modality::kText: c.u = c.text_vec; break;
    case Modality::kMultimodal:
      c.u.resize(b, spec_.classifier_input());
      c.u << c.speech_vec, c.text_vec;
      break;
  }
  c.z3.noalias() = c.u * p.fc1_w;
  c.z3.rowwise() += p.fc1_b.row(0);
  Mat<T> logits = c.z3.cwiseMax(T(0)) * p.fc2_w;
  logits.rowwise() += p.fc2_b.row(0);
  if (cache) c.logits = logits;
  return logits;
}

template <typename T>
void DownstreamModel<T>::backward(const ModelBatch<T>& batch, const Cache& c, const Mat<T>& dlogits,
                                  DownstreamParams<T>& g) const {
  const auto& p = params_;
  const auto b = static_cast<Eigen::Index>(batch.size());

  const Mat<T> a3 = c.z3.cwiseMax(T(0));
  g.fc2_w.noalias() += a3.transpose() * dlogits;
  g.fc2_b += dlogits.colwise().sum();
  const Mat<T> dz3 = ((dlogits * p.fc2_w.transpose()).array() * (c.z3.array() > T(0)).template cast<T>()).matrix();
  g.fc1_w.noalias() += c.u.transpose() * dz3;
  g.fc1_b += dz3.colwise().sum();
  const Mat<T> du = dz3 * p.fc1_w.transpose();

  if (uses_speech(spec_.mode)) {
    const Mat<T> ds = du.leftCols(spec_.speech_embedding());
    g.conv2_w.noalias() += c.pooled.transpose() * ds;
    g.conv2_b += ds.colwise().sum();
    const Mat<T> dpooled = ds * p.conv2_w.transpose();
    Mat<T> dz1(c.z1.rows(), c.z1.cols());
    for (Eigen::Index i = 0; i < b; ++i) {
      const auto off = c.offsets[static_cast<std::size_t>(i)];
      const auto len = c.lengths[static_cast<std::size_t>(i)];
      const Mat<T> row = dpooled.row(i) / static_cast<T>(len);
      dz1.middleRows(off, len) =
          (row.replicate(len, 1).array() * (c.z1.middleRows(off, len).array() > T(0)).template cast<T>()).matrix();
    }
    g.conv1_w.noalias() += c.frames.transpose() * dz1;
    g.conv1_b += dz1.colwise().sum();
    const Mat<T> dframes = dz1 * p.conv1_w.transpose();
    const auto nl = p.layer_logits.cols();
    Mat<T> dw = Mat<T>::Zero(1, nl);
    for (Eigen::Index i = 0; i < b; ++i) {
      const auto& stack = *batch.speech[static_cast<std::size_t>(i)];
      const auto block = dframes.middleRows(c.offsets[static_cast<std::size_t>(i)], c.lengths[static_cast<std::size_t>(i)]);
      for (Eigen::Index l = 0; l < nl; ++l) dw(0, l) += (block.array() * stack[static_cast<std::size_t>(l)].array()).sum();
    }
    const T dot = (dw.array() * c.weights.array()).sum();
    g.layer_logits += (c.weights.array() * (dw.array() - dot)).matrix();
  }

  if (uses_text(spec_.mode)) {
    const int h = spec_.gru_hidden;
    const Mat<T> de = du.rightCols(spec_.text_embedding());
    const auto tmax = c.mask.cols();
    // Gradient w.r.t. each step output of the current layer.
    std::vector<Mat<T>> dout(static_cast<std::size_t>(tmax));
    const Mat<T> scaled = (de.array().colwise() * c.inv_len.col(0).array()).matrix();
    for (Eigen::Index s = 0; s < tmax; ++s)
      dout[static_cast<std::size_t>(s)] = (scaled.array().colwise() * c.mask.col(s).array()).matrix();

    for (int l = spec_.gru_layers - 1; l >= 0; --l) {
      const auto& layer = c.layers[static_cast<std::size_t>(l)];
      const bool need_dx = l > 0;
      const Eigen::Index in = layer.input.front().cols();
      std::vector<Mat<T>> dinput;
      if (need_dx) dinput.assign(static_cast<std::size_t>(tmax), Mat<T>::Zero(b, in));
      for (int dir = 0; dir < 2; ++dir) {
        const auto& gp = p.gru[static_cast<std::size_t>(l * 2 + dir)];
        auto& gg = g.gru[static_cast<std::size_t>(l * 2 + dir)];
        Mat<T> carry = Mat<T>::Zero(b, h);
        Mat<T> dx;
        for (Eigen::Index k = tmax - 1; k >= 0; --k) {
          const Eigen::Index s = dir == 0 ? k : tmax - 1 - k;
          const Mat<T> dh = dout[static_cast<std::size_t>(s)].middleCols(dir * h, h) + carry;
          carry = gru_step_backward<T>(gp, layer.input[static_cast<std::size_t>(s)], c.mask.col(s),
                                       layer.steps[dir][static_cast<std::size_t>(s)], dh, gg,
                                       need_dx ? &dx : nullptr);
          if (need_dx) dinput[static_cast<std::size_t>(s)] += dx;
        }
      }
      if (need_dx) dout = std::move(dinput);
    }
  }
}

template <typename T>
Mat<T> DownstreamModel<T>::forward(const ModelBatch<T>& batch) const {
  return run(batch, nullptr);
}

template <typename T>
T DownstreamModel<T>::loss(const ModelBatch<T>& batch) const {
  const Mat<T> probs = softmax_row<T>(run(batch, nullptr));
  T total = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) total -= std::log(probs(i, batch.labels[static_cast<std::size_t>(i)]));
  return total / static_cast<T>(probs.rows());
}

template <typename T>
T DownstreamModel<T>::loss_and_gradient(const ModelBatch<T>& batch, DownstreamParams<T>& grad) const {
  Cache cache;
  const Mat<T> logits = run(batch, &cache);
  Mat<T> d = softmax_row<T>(logits);
  T total = 0;
  const auto n = static_cast<T>(d.rows());
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    const int y = batch.labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= spec_.num_classes) throw InputError("label outside class range");
    total -= std::log(d(i, y));
    d(i, y) -= T(1);
  }
  d /= n;
  backward(batch, cache, d, grad);
  return total / n;
}

template <typename T>
Mat<T> DownstreamModel<T>::layer_weights() const {
  if (!uses_speech(spec_.mode)) throw InputError("text-mode model has no layer weights");
  return softmax_row<T>(params_.layer_logits);
}

template <typename T>
Mat<T> DownstreamModel<T>::combine_layers(const std::vector<Mat<T>>& stack) const {
  const Mat<T> w = layer_weights();
  if (static_cast<Eigen::Index>(stack.size()) != w.cols())
    throw InputError("layer stack has " + std::to_string(stack.size()) + " entries, expected " +
                     std::to_string(w.cols()));
  Mat<T> out = w(0, 0) * stack[0];
  for (Eigen::Index l = 1; l < w.cols(); ++l) out += w(0, l) * stack[static_cast<std::size_t>(l)];
  return out;
}

template <typename T>
Mat<T> DownstreamModel<T>::speech_head(const Mat<T>& frames) const {
  if (!uses_speech(spec_.mode)) throw InputError("model has no speech head");
  if (frames.rows() < 1) throw InputError("speech head needs at least one frame");
  Mat<T> z1 = frames * params_.conv1_w;
  z1.rowwise() += params_.conv1_b.row(0);
  const Mat<T> pooled = z1.cwiseMax(T(0)).colwise().sum() / static_cast<T>(frames.rows());
  Mat<T> out = pooled * params_.conv2_w;
  out += params_.conv2_b;
  return out;
}

template <typename T>
Mat<T> DownstreamModel<T>::text_head(const Mat<T>& hidden, const std::vector<unsigned char>* mask) const {
  if (!uses_text(spec_.mode)) throw InputError("model has no text head");
  // Reuse the batch path with a text-only view of the model.
  ModelSpec text_spec = spec_;
  text_spec.mode = Modality::kText;
  DownstreamParams<T> tp;
  tp.gru = params_.gru;
  tp.fc1_w = Mat<T>::Zero(text_spec.classifier_input(), 1);
  tp.fc1_b = Mat<T>::Zero(1, 1);
  tp.fc2_w = Mat<T>::Zero(1, spec_.num_classes);
  tp.fc2_b = Mat<T>::Zero(1, spec_.num_classes);
  text_spec.fc_hidden = 1;
  DownstreamModel<T> view(text_spec, std::move(tp));
  ModelBatch<T> batch;
  batch.text = {&hidden};
  batch.text_mask = {mask};
  batch.labels = {0};
  Cache cache;
  view.run(batch, &cache);
  return cache.text_vec;
}

template <typename T>
Mat<T> DownstreamModel<T>::fuse_classify(const std::optional<Mat<T>>& speech_vec,
                                         const std::optional<Mat<T>>& text_vec) const {
  Mat<T> u;
  switch (spec_.mode) {
    case Modality::kSpeech:
      if (!speech_vec) throw InputError("speech mode requires a speech embedding");
      if (text_vec) throw InputError("speech mode does not take a text embedding");
      u = *speech_vec;
      break;
    case Modality::kText:
      if (!text_vec) throw InputError("text mode requires a text embedding");
      if (speech_vec) throw InputError("text mode does not take a speech embedding");
      u = *text_vec;
      break;
    case Modality::kMultimodal:
      if (!speech_vec || !text_vec) throw InputError("multimodal mode requires both embeddings");
      u.resize(1, spec_.classifier_input());
      u << *speech_vec, *text_vec;
      break;
  }
  if (u.cols() != spec_.classifier_input()) throw InputError("embedding size mismatch");
  Mat<T> z = u * params_.fc1_w;
  z += params_.fc1_b;
  Mat<T> logits = z.cwiseMax(T(0)) * params_.fc2_w;
  logits += params_.fc2_b;
  return logits;
}

template struct DownstreamParams<float>;
template struct DownstreamParams<double>;
template class DownstreamModel<float>;
template class DownstreamModel<double>;
template Mat<float> softmax_row<float>(const Mat<float>&);
template Mat<double> softmax_row<double>(const Mat<double>&);

namespace {
constexpr char kCheckpointMagic[8] = {'T', 'I', 'A', 'S', 'U', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  json tensors = json::array();
  std::string data;
  ck.params.visit([&](const std::string& name, const std::string& group, const Mat<float>& m) {
    tensors.push_back({{"name", name}, {"group", group}, {"rows", m.rows()}, {"cols", m.cols()}});
    data.append(reinterpret_cast<const char*>(m.data()), sizeof(float) * static_cast<std::size_t>(m.size()));
  });
  const json header = {{"spec", to_json(ck.spec)}, {"tensors", tensors}, {"meta", ck.meta}};
  const std::string h = header.dump();
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::uint32_t version = kCheckpointVersion;
  const std::uint64_t hlen = h.size();
  out.append(reinterpret_cast<const char*>(&version), 4);
  out.append(reinterpret_cast<const char*>(&hlen), 8);
  out += h;
  out += data;
  write_file_atomic(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw ParseError(path.string() + ": not a checkpoint");
  std::uint32_t version;
  std::uint64_t hlen;
  std::memcpy(&version, bytes.data() + 8, 4);
  std::memcpy(&hlen, bytes.data() + 12, 8);
  if (version != kCheckpointVersion) throw ParseError(path.string() + ": unsupported checkpoint version");
  if (bytes.size() < 20 + hlen) throw ParseError(path.string() + ": truncated header");
  const json header = json::parse(bytes.substr(20, hlen));

  Checkpoint ck;
  ck.spec = model_spec_from_json(header.at("spec"));
  ck.meta = header.value("meta", json::object());
  DownstreamModel<float> shape(ck.spec, 0);
  ck.params = shape.params();
  std::map<std::string, json> table;
  for (const auto& t : header.at("tensors")) table[t.at("name").get<std::string>()] = t;
  std::size_t off = 20 + hlen;
  ck.params.visit([&](const std::string& name, const std::string&, Mat<float>& m) {
    auto it = table.find(name);
    if (it == table.end() || it->second.at("rows").get<Eigen::Index>() != m.rows() ||
        it->second.at("cols").get<Eigen::Index>() != m.cols())
      throw ParseError(path.string() + ": tensor '" + name + "' missing or misshapen");
    const std::size_t n = sizeof(float) * static_cast<std::size_t>(m.size());
    if (bytes.size() < off + n) throw ParseError(path.string() + ": truncated tensor data");
    std::memcpy(m.data(), bytes.data() + off, n);
    off += n;
  });
  return ck;
}

}  // namespace tiasu
