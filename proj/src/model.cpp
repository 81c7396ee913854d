#include "apd/model.hpp"

#include <algorithm>
#include <cmath>

namespace apd {

using ad::Tape;

ad::Param& ApdModel::add_weight(const std::string& name, int rows, int cols,
                                bool he_init, bool decay) {
  ad::Param& p = params_.add(name, rows, cols, decay);
  if (he_init) {
    const double std = std::sqrt(2.0 / cols);
    for (long j = 0; j < p.value.cols(); ++j)
      for (long i = 0; i < p.value.rows(); ++i)
        p.value(i, j) = init_rng_.normal(0.0, std);
  }
  return p;
}

ApdModel::ConvBn ApdModel::make_conv_bn(const std::string& name, int cin,
                                        int cout, int k) {
  ConvBn cb;
  cb.w = &add_weight(name + ".w", cout, cin * k * k, true);
  cb.b = &add_weight(name + ".b", cout, 1, false, false);
  cb.gamma = &add_weight(name + ".gamma", cout, 1, false, false);
  cb.gamma->value.setOnes();
  cb.beta = &add_weight(name + ".beta", cout, 1, false, false);
  cb.bn.name = name + ".bn";
  cb.bn.running_mean = Vector::Zero(cout);
  cb.bn.running_var = Vector::Ones(cout);
  return cb;
}

ApdModel::ApdModel(const ModelConfig& cfg, std::uint64_t init_seed)
    : cfg_(cfg), init_rng_(init_seed) {
  const auto& enc = cfg_.encoder;
  require(enc.stages >= 2, "ApdModel: need at least two stages");
  require(static_cast<int>(enc.widths.size()) == enc.stages,
          "ApdModel: one width per stage required");

  stages_.resize(enc.stages);
  for (int l = 0; l < enc.stages; ++l) {
    const int cin = l == 0 ? 3 : enc.widths[l - 1];
    const int c = enc.widths[l];
    const std::string base = "enc.s" + std::to_string(l + 1);
    Stage& s = stages_[l];
    s.entry = make_conv_bn(base + ".entry", cin, c, 3);
    if (enc.backbone == Backbone::kDesk) {
      s.blocks.push_back(make_conv_bn(base + ".conv2", c, c, 3));
    } else {
      for (int u = 0; u < 2; ++u) {
        s.blocks.push_back(make_conv_bn(
            base + ".res" + std::to_string(u) + "a", c, c, 3));
        s.blocks.push_back(make_conv_bn(
            base + ".res" + std::to_string(u) + "b", c, c, 3));
      }
    }
    // residual identity at init: zero aggregation weight
    s.align_w = &add_weight(base + ".align.w", c, c, false);
    const int hidden = std::max(1, c / 2);
    s.mask_w1 = &add_weight(base + ".mask.w1", hidden, 2 * c, true);
    s.mask_b1 = &add_weight(base + ".mask.b1", hidden, 1, false, false);
    s.mask_w2 = &add_weight(base + ".mask.w2", 1, hidden, true);
    s.mask_b2 = &add_weight(base + ".mask.b2", 1, 1, false, false);
  }

  const int cn = enc.widths.back();
  auto build_branch = [&](DecoderBranch& br, const std::string& base,
                          int entry_cin, bool agnostic) {
    br.entry_w = &add_weight(base + ".entry.w", cn, entry_cin, true);
    br.entry_b = &add_weight(base + ".entry.b", cn, 1, false, false);
    for (int l = enc.stages; l >= 2; --l) {
      const int cd = enc.widths[l - 1];   // incoming decoder width
      const int co = enc.widths[l - 2];   // width at the finer level
      const std::string lv = base + ".l" + std::to_string(l);
      if (agnostic) {
        br.proj_d_w.push_back(&add_weight(lv + ".projd.w", co, cd, true));
        br.proj_d_b.push_back(&add_weight(lv + ".projd.b", co, 1, false, false));
        br.proj_o_w.push_back(&add_weight(lv + ".projo.w", co, co, true));
        br.proj_o_b.push_back(&add_weight(lv + ".projo.b", co, 1, false, false));
        br.conv1.push_back(make_conv_bn(lv + ".conv1", co, co, 3));
      } else {
        br.conv1.push_back(make_conv_bn(lv + ".conv1", cd + co, co, 3));
      }
      br.conv2.push_back(make_conv_bn(lv + ".conv2", co, co, 3));
    }
    br.head_w = &add_weight(base + ".head.w", 1, enc.widths[0] * 9, true);
    br.head_b = &add_weight(base + ".head.b", 1, 1, false, false);
  };

  if (cfg_.ablation.decoupling) {
    build_branch(aware_, "dec.aw", 2 * cn, false);
    build_branch(agnostic_, "dec.ag", cn, true);
  } else {
    build_branch(single_, "dec.single", 3 * cn, false);
  }
}

std::vector<ad::BnState*> ApdModel::bn_states() {
  std::vector<ad::BnState*> out;
  auto take = [&](ConvBn& cb) { out.push_back(&cb.bn); };
  for (auto& s : stages_) {
    take(s.entry);
    for (auto& b : s.blocks) take(b);
  }
  for (auto* br : {&aware_, &agnostic_, &single_}) {
    for (auto& b : br->conv1) take(b);
    for (auto& b : br->conv2) take(b);
  }
  return out;
}

Tape::Var ApdModel::run_conv_bn(Tape& t, Tape::Var x, ConvBn& cb, int k,
                                int stride, NormMode norm, bool rectify) {
  Tape::Var y = t.conv2d(x, *cb.w, *cb.b, k, stride);
  y = t.batchnorm(y, *cb.gamma, *cb.beta, cb.bn,
                  norm == NormMode::kBatchStats);
  return rectify ? t.relu(y) : y;
}

Tape::Var ApdModel::run_stage(Tape& t, Tape::Var x, Stage& s, NormMode norm) {
  Tape::Var y = run_conv_bn(t, x, s.entry, 3, 2, norm);
  if (cfg_.encoder.backbone == Backbone::kDesk) {
    y = run_conv_bn(t, y, s.blocks[0], 3, 1, norm);
  } else {
    for (std::size_t u = 0; u + 1 < s.blocks.size(); u += 2) {
      Tape::Var h = run_conv_bn(t, y, s.blocks[u], 3, 1, norm);
      h = run_conv_bn(t, h, s.blocks[u + 1], 3, 1, norm, false);
      y = t.relu(t.add(y, h));
    }
  }
  return y;
}

std::vector<Matrix> ApdModel::single_stream_features(const FeatureMap& x,
                                                     NormMode norm) {
  Tape t(&cache_);
  Tape::Var v = t.input(x.data, x.height, x.width);
  std::vector<Matrix> out;
  for (auto& s : stages_) {
    v = run_stage(t, v, s, norm);
    out.push_back(t.value(v));
  }
  return out;
}

ForwardOutput ApdModel::forward(
    Tape& t, const FeatureMap& x0, const FeatureMap& x1, NormMode norm,
    const std::vector<PerturbationVector>* perturbations) {
  require(x0.same_shape(x1) && x0.channels() == 3,
          "forward: inputs must be congruent 3-channel images");
  if (perturbations)
    require(static_cast<int>(perturbations->size()) == cfg_.encoder.stages,
            "forward: one perturbation vector per stage required");

  ForwardOutput out;
  Tape::Var s0 = t.input(x0.data, x0.height, x0.width);
  Tape::Var s1 = t.input(x1.data, x1.height, x1.width);

  const int n_stages = cfg_.encoder.stages;
  for (int l = 0; l < n_stages; ++l) {
    Stage& st = stages_[l];
    Tape::Var f0 = run_stage(t, s0, st, norm);
    Tape::Var f1 = run_stage(t, s1, st, norm);
    const int h = t.height(f0), w = t.width(f0);
    if (l == n_stages - 1) {
      out.f0_terminal = f0;
      out.f1_terminal = f1;
    }

    StageOutput so;
    so.h = h;
    so.w = w;
    if (cfg_.ablation.alignment) {
      FeatureMap fm0(t.value(f0), h, w), fm1(t.value(f1), h, w);
      const FeatureMap c0 = context_aggregate(fm0, cfg_.context);
      const FeatureMap c1 = context_aggregate(fm1, cfg_.context);
      const int n = std::min(cfg_.context.neighbor_count, h * w);
      const NeighborGraph g =
          build_bipartite_graph(c0, c1, n, cfg_.context.chunk_size);
      auto fwd = std::make_shared<const SparseOp>(neighbor_mean_op(g));
      auto rev = std::make_shared<const SparseOp>(reverse_mean_op(g));
      Tape::Var agg0 = t.sparse_right(f1, fwd, h, w);
      Tape::Var agg1 = t.sparse_right(f0, rev, h, w);
      so.f0_hat = t.add(f0, t.linear(agg0, *st.align_w));
      so.f1_hat = t.add(f1, t.linear(agg1, *st.align_w));
    } else {
      so.f0_hat = f0;
      so.f1_hat = f1;
    }

    Tape::Var diff = t.sub(so.f0_hat, so.f1_hat);
    if (cfg_.ablation.perturbation) {
      Tape::Var diff_p = diff;
      if (perturbations)
        diff_p = t.scale_channels(diff, (*perturbations)[l].values);
      Tape::Var cat = t.concat_rows(t.gap_broadcast(diff_p), diff_p);
      Tape::Var hid = t.relu(t.linear(cat, *st.mask_w1, st.mask_b1));
      so.mask_logit = t.linear(hid, *st.mask_w2, st.mask_b2);
      so.mask = t.sigmoid(so.mask_logit);
      so.f0_mod = t.rowvec_mul(so.f0_hat, so.mask);
      so.f1_mod = t.rowvec_mul(so.f1_hat, so.mask);
      so.diff = t.rowvec_mul(diff, so.mask);
    } else {
      so.mask = t.input(Matrix::Ones(1, h * w), h, w);
      so.f0_mod = so.f0_hat;
      so.f1_mod = so.f1_hat;
      so.diff = diff;
    }
    out.stages.push_back(so);
    s0 = so.f0_mod;
    s1 = so.f1_mod;
  }

  Tape::Var fused_logit;
  if (cfg_.ablation.decoupling) {
    Tape::Var entry_aw = t.concat_rows(out.f0_terminal, out.f1_terminal);
    Tape::Var logit_aw = decode_aware_like(t, aware_, entry_aw, out.stages, norm);
    Tape::Var logit_ag = decode_agnostic(t, agnostic_, out.stages, norm);
    fused_logit = t.add(logit_aw, logit_ag);
  } else {
    Tape::Var entry = t.concat_rows(
        t.concat_rows(out.f0_terminal, out.f1_terminal),
        out.stages.back().diff);
    fused_logit = decode_aware_like(t, single_, entry, out.stages, norm);
  }
  out.logit = t.upsample2(fused_logit);  // stage-1 resolution -> input
  out.prob = t.sigmoid(out.logit);
  return out;
}

Tape::Var ApdModel::decode_aware_like(Tape& t, DecoderBranch& br,
                                      Tape::Var entry_input,
                                      const std::vector<StageOutput>& stages,
                                      NormMode norm) {
  Tape::Var d = t.relu(t.linear(entry_input, *br.entry_w, br.entry_b));
  const int n = cfg_.encoder.stages;
  for (int l = n; l >= 2; --l) {
    const int idx = n - l;
    Tape::Var up = t.upsample2(d);
    Tape::Var cat = t.concat_rows(up, stages[l - 2].diff);
    d = run_conv_bn(t, cat, br.conv1[idx], 3, 1, norm);
    d = run_conv_bn(t, d, br.conv2[idx], 3, 1, norm);
  }
  return t.conv2d(d, *br.head_w, *br.head_b, 3, 1);
}

Tape::Var ApdModel::decode_agnostic(Tape& t, DecoderBranch& br,
                                    const std::vector<StageOutput>& stages,
                                    NormMode norm) {
  Tape::Var d = t.relu(t.linear(stages.back().diff, *br.entry_w, br.entry_b));
  const int n = cfg_.encoder.stages;
  for (int l = n; l >= 2; --l) {
    const int idx = n - l;
    Tape::Var up = t.linear(t.upsample2(d), *br.proj_d_w[idx], br.proj_d_b[idx]);
    Tape::Var o = t.linear(stages[l - 2].diff, *br.proj_o_w[idx],
                           br.proj_o_b[idx]);
    d = run_conv_bn(t, t.add(up, o), br.conv1[idx], 3, 1, norm);
    d = run_conv_bn(t, d, br.conv2[idx], 3, 1, norm);
  }
  return t.conv2d(d, *br.head_w, *br.head_b, 3, 1);
}

LossOutput ApdModel::losses(Tape& t, const ForwardOutput& out,
                            const LabelMap& label, const LossConfig& cfg) {
  require(label.height == t.height(out.logit) &&
              label.width == t.width(out.logit),
          "losses: label/prediction shape mismatch");
  LossOutput lo;
  lo.change = t.bce_with_logits(out.logit, label.data);

  std::vector<Tape::Var> parts{lo.change};
  std::vector<double> weights{1.0};
  if (cfg_.ablation.perturbation) {
    for (const auto& so : out.stages) {
      const LabelMap yl =
          downsample_label(label, so.h, so.w, cfg_.label_downsample);
      Tape::Var dl = cfg.deep_supervision == DeepSupervisionForm::kBce
                         ? t.bce_with_logits(so.mask_logit, yl.data)
                         : t.dice(so.mask, yl.data);
      lo.deep.push_back(dl);
      parts.push_back(dl);
      weights.push_back(cfg.lambda1);
    }
  }
  const auto& last = out.stages.back();
  const LabelMap yn =
      downsample_label(label, last.h, last.w, cfg_.label_downsample);
  lo.comparative =
      t.comparative(last.f0_mod, last.f1_mod, yn.data, cfg.gamma,
                    cfg.comparative_form == ComparativeForm::kMargin);
  parts.push_back(lo.comparative);
  weights.push_back(cfg.lambda2);

  lo.total = t.weighted_sum(parts, weights);
  return lo;
}

std::vector<PerturbationVector> ApdModel::sample_stage_perturbations(
    Rng& rng) const {
  std::vector<PerturbationVector> vs;
  vs.reserve(cfg_.encoder.stages);
  for (int l = 0; l < cfg_.encoder.stages; ++l)
    vs.push_back(
        sample_perturbation(cfg_.encoder.widths[l], cfg_.mask_ratio, rng));
  return vs;
}

}  // namespace apd
