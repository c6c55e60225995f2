#include "persurv/policy.hpp"

#include <cmath>
#include <limits>

#include "persurv/error.hpp"
#include "persurv/road_network.hpp"

namespace persurv {

namespace {

template <class F>
void shape_blocks(const PolicyHyper& h, PolicyWeights<Tensor>& w, F&& make) {
  const int d = h.d_h;
  w.W0 = make(3, d);
  w.b0 = make(1, d);
  w.layers.resize(static_cast<std::size_t>(h.layers));
  for (auto& L : w.layers) {
    L.Wq = make(d, d);
    L.Wk = make(d, d);
    L.Wv = make(d, d);
    L.Wo = h.head_projection ? make(d, d) : Tensor();
    L.bn1_gamma = make(1, d);
    L.bn1_beta = make(1, d);
    L.W1 = make(d, h.d_ff);
    L.b1 = make(1, h.d_ff);
    L.W2 = make(h.d_ff, d);
    L.b2 = make(1, d);
    L.bn2_gamma = make(1, d);
    L.bn2_beta = make(1, d);
  }
  w.Wg = make(d, d);
  w.Wc = make(d + 1, d);
  w.Wa = make(1, d);
  w.Wkg = make(d, d);
  w.Wvg = make(d, d);
  w.Wog = make(d, d);
  w.Wq = make(d, d);
  w.Wk = make(d, d);
  w.start_embed = make(1, d);
  w.recharge_embed = make(1, d);
}

// Multi-head attention of `q_rows` over (k_rows, v_rows); all inputs already
// projected. `mask` restricts the attended columns.
ad::Var attention(const ad::Var& q, const ad::Var& k, const ad::Var& v, int heads,
                  const std::vector<char>& mask = {}) {
  const int dk = q.cols() / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
  std::vector<ad::Var> out;
  out.reserve(static_cast<std::size_t>(heads));
  for (int j = 0; j < heads; ++j) {
    const int c0 = j * dk, c1 = c0 + dk;
    const ad::Var qh = heads == 1 ? q : ad::slice_cols(q, c0, c1);
    const ad::Var kh = heads == 1 ? k : ad::slice_cols(k, c0, c1);
    const ad::Var vh = heads == 1 ? v : ad::slice_cols(v, c0, c1);
    const ad::Var s = ad::softmax_rows(ad::scale(ad::matmul_nt(qh, kh), inv), mask);
    out.push_back(ad::matmul(s, vh));
  }
  return heads == 1 ? out[0] : ad::concat_cols(out);
}

}  // namespace

void validate(const PolicyHyper& h) {
  if (h.d_h <= 0 || h.heads <= 0 || h.layers < 0 || h.d_ff <= 0) {
    throw Error(ErrorCode::kValidation, "policy dimensions must be positive");
  }
  if (h.d_h % h.heads != 0) throw Error(ErrorCode::kValidation, "d_h must be divisible by the head count");
  if (!(h.clip > 0.0)) throw Error(ErrorCode::kValidation, "clip must be positive");
  if (!(h.bn_momentum > 0.0 && h.bn_momentum <= 1.0)) throw Error(ErrorCode::kValidation, "bn_momentum");
  if (!(h.bn_eps > 0.0)) throw Error(ErrorCode::kValidation, "bn_eps");
}

PolicyHyper toy_hyper() {
  PolicyHyper h;
  h.d_h = 16;
  h.heads = 2;
  h.layers = 1;
  h.d_ff = 64;
  return h;
}

std::vector<std::string> PolicyParams::block_names() const {
  std::vector<std::string> names;
  for_each_block(hyper, [&](const std::string& name, const Tensor&) { names.push_back(name); }, w);
  return names;
}

std::size_t PolicyParams::parameter_count() const {
  std::size_t n = 0;
  for_each_block(hyper, [&](const std::string&, const Tensor& t) { n += t.size(); }, w);
  return n;
}

PolicyParams init_params(std::uint64_t seed, const PolicyHyper& hyper) {
  validate(hyper);
  PolicyParams p;
  p.hyper = hyper;
  shape_blocks(hyper, p.w, [](int r, int c) { return Tensor(r, c); });
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(hyper.d_h));
  for_each_block(
      hyper,
      [&](const std::string&, Tensor& t) {
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
      },
      p.w);
  p.running.assign(2 * static_cast<std::size_t>(hyper.layers),
                   BnStats{Tensor(1, hyper.d_h, 0.0), Tensor(1, hyper.d_h, 1.0)});
  return p;
}

PolicyWeights<Tensor> zeros_like(const PolicyParams& p) {
  PolicyWeights<Tensor> z;
  shape_blocks(p.hyper, z, [](int r, int c) { return Tensor(r, c); });
  return z;
}

WeightVars as_vars(const PolicyParams& p, bool requires_grad) {
  WeightVars v;
  v.layers.resize(p.w.layers.size());
  PolicyWeights<Tensor> copy = p.w;
  for_each_block(
      p.hyper, [&](const std::string&, Tensor& t, ad::Var& var) { var = ad::leaf(std::move(t), requires_grad); },
      copy, v);
  return v;
}

Tensor node_features(const ScenarioInstance& s) {
  Tensor f(static_cast<int>(s.points.size()), 3);
  for (std::size_t i = 0; i < s.points.size(); ++i) {
    const int r = static_cast<int>(i);
    f(r, 0) = s.points[i].pos.x / kFrameSize;
    f(r, 1) = s.points[i].pos.y / kFrameSize;
    f(r, 2) = s.points[i].kind == PointKind::kGround ? 1.0 : 0.0;
  }
  return f;
}

std::vector<EncoderOutput> encode_batch(const PolicyParams& p, const WeightVars& w,
                                        const std::vector<Tensor>& features, BnMode mode,
                                        std::vector<BnStats>* batch_stats) {
  const PolicyHyper& h = p.hyper;
  if (features.empty()) throw Error(ErrorCode::kShapeMismatch, "empty batch");
  std::vector<int> offsets{0};
  for (const Tensor& f : features) {
    if (f.cols() != 3 || f.rows() == 0) throw Error(ErrorCode::kShapeMismatch, "node features must be n x 3, n > 0");
    offsets.push_back(offsets.back() + f.rows());
  }
  const std::size_t B = features.size();
  if (batch_stats) batch_stats->clear();

  std::vector<ad::Var> rows;
  for (const Tensor& f : features) rows.push_back(ad::constant(f));
  ad::Var H = ad::add_row(ad::matmul(B == 1 ? rows[0] : ad::concat_rows(rows), w.W0), w.b0);

  const auto norm = [&](const ad::Var& x, const ad::Var& g, const ad::Var& b, std::size_t idx) {
    if (mode == BnMode::kEval) {
      return ad::batchnorm_eval(x, g, b, p.running[idx].mean, p.running[idx].var, h.bn_eps);
    }
    BnStats st;
    ad::Var y = ad::batchnorm_train(x, g, b, h.bn_eps, &st.mean, &st.var);
    if (batch_stats) batch_stats->push_back(std::move(st));
    return y;
  };

  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const auto& L = w.layers[l];
    const ad::Var Q = ad::matmul(H, L.Wq), K = ad::matmul(H, L.Wk), V = ad::matmul(H, L.Wv);
    ad::Var mha;
    if (B == 1) {
      mha = attention(Q, K, V, h.heads);
    } else {
      std::vector<ad::Var> per;
      for (std::size_t b = 0; b < B; ++b) {
        const int r0 = offsets[b], r1 = offsets[b + 1];
        per.push_back(attention(ad::slice_rows(Q, r0, r1), ad::slice_rows(K, r0, r1), ad::slice_rows(V, r0, r1),
                                h.heads));
      }
      mha = ad::concat_rows(per);
    }
    if (h.head_projection) mha = ad::matmul(mha, L.Wo);
    const ad::Var hh = norm(ad::add(H, mha), L.bn1_gamma, L.bn1_beta, 2 * l);
    const ad::Var ff = ad::add_row(ad::matmul(ad::relu(ad::add_row(ad::matmul(hh, L.W1), L.b1)), L.W2), L.b2);
    H = norm(ad::add(hh, ff), L.bn2_gamma, L.bn2_beta, 2 * l + 1);
  }

  std::vector<EncoderOutput> out;
  out.reserve(B);
  for (std::size_t b = 0; b < B; ++b) {
    ad::Var hb = B == 1 ? H : ad::slice_rows(H, offsets[b], offsets[b + 1]);
    out.push_back({hb, ad::mean_rows(hb)});
  }
  return out;
}

EncoderOutput encode(const PolicyParams& p, const Tensor& features, BnMode mode) {
  ad::NoGradGuard guard;
  const WeightVars w = as_vars(p, false);
  return encode_batch(p, w, {features}, mode).front();
}

DecoderContext::DecoderContext(const PolicyParams& p, const WeightVars& w, const Environment& env,
                               EncoderOutput enc)
    : p_(&p), w_(&w), env_(&env), enc_(std::move(enc)) {
  const std::size_t n = env.scenario().points.size();
  if (static_cast<std::size_t>(enc_.node_embeddings.rows()) != n) {
    throw Error(ErrorCode::kShapeMismatch, "encoder rows do not match the scenario");
  }
  graph_ctx_ = ad::matmul(enc_.graph_mean, w.Wg);
  recharge_key_ = ad::matmul(w.recharge_embed, w.Wk);
  // The age term enters h^a = h^L + LN(a) W_a linearly, so its projections
  // are precomputed once per episode.
  hk_ = ad::matmul(enc_.node_embeddings, w.Wk);
  hkg_ = ad::matmul(enc_.node_embeddings, w.Wkg);
  hvg_ = ad::matmul(enc_.node_embeddings, w.Wvg);
  ak_ = ad::matmul(w.Wa, w.Wk);
  akg_ = ad::matmul(w.Wa, w.Wkg);
  avg_ = ad::matmul(w.Wa, w.Wvg);
  const ActionSpace& space = env.actions();
  ground_rows_ = space.ground_points();
  visit_rows_ = space.ground_points();
  visit_rows_.insert(visit_rows_.end(), space.aerial_points().begin(), space.aerial_points().end());
  for (std::size_t a = 0; a < space.size(); ++a) action_node_.push_back(space.token(a).point);
}

ad::Var DecoderContext::log_probs(const EnvState& st, const std::vector<char>& mask) const {
  const PolicyHyper& h = p_->hyper;
  const WeightVars& w = *w_;
  const int n = enc_.node_embeddings.rows();
  if (mask.size() != action_node_.size()) throw Error(ErrorCode::kShapeMismatch, "mask length");

  // Layer-normalized ages across the points of this instance.
  Tensor ahat(n, 1);
  double mean = 0.0, var = 0.0;
  for (double a : st.ages) mean += a;
  mean /= n;
  for (double a : st.ages) var += (a - mean) * (a - mean);
  var /= n;
  const double inv = 1.0 / std::sqrt(var + 1e-5);
  for (int i = 0; i < n; ++i) ahat(i, 0) = (st.ages[static_cast<std::size_t>(i)] - mean) * inv;
  const ad::Var A = ad::constant(std::move(ahat));

  const ad::Var cur = st.last_action ? ad::gather_rows(enc_.node_embeddings, {st.last_action->point}) : w.start_embed;
  const ad::Var fuel = ad::constant(Tensor(1, 1, st.fuel / env_->scenario().vehicle.F_a));
  const ad::Var ctx = ad::add(graph_ctx_, ad::matmul(ad::concat_cols(cur, fuel), w.Wc));

  std::vector<char> node_mask(static_cast<std::size_t>(n), 0);
  bool any = false;
  for (std::size_t a = 0; a < mask.size(); ++a) {
    if (mask[a]) {
      node_mask[static_cast<std::size_t>(action_node_[a])] = 1;
      any = true;
    }
  }
  if (!any) throw Error(ErrorCode::kAllMasked, "no feasible action");

  const ad::Var kg = ad::add(hkg_, ad::matmul(A, akg_));
  const ad::Var vg = ad::add(hvg_, ad::matmul(A, avg_));
  const ad::Var glimpse = ad::matmul(attention(ctx, kg, vg, h.heads, node_mask), w.Wog);

  const ad::Var q = ad::matmul(glimpse, w.Wq);
  const ad::Var k = ad::add(hk_, ad::matmul(A, ak_));
  ad::Var keys = ad::gather_rows(k, visit_rows_);
  if (!ground_rows_.empty()) {
    keys = ad::concat_rows({ad::add_row(ad::gather_rows(k, ground_rows_), recharge_key_), keys});
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(h.d_h));
  const ad::Var logits = ad::scale(ad::tanh(ad::scale(ad::matmul_nt(q, keys), scale)), h.clip);
  return ad::log_softmax_row(logits, mask);
}

std::vector<double> decode_step(const PolicyParams& p, const Environment& env, const EnvState& st,
                                const std::vector<char>& mask) {
  ad::NoGradGuard guard;
  const WeightVars w = as_vars(p, false);
  DecoderContext ctx(p, w, env, encode_batch(p, w, {node_features(env.scenario())}, BnMode::kEval).front());
  std::vector<double> probs = ctx.log_probs(st, mask).value().values();
  for (double& v : probs) v = std::exp(v);
  return probs;
}

std::size_t greedy_choice(const std::vector<double>& log_probs) {
  std::size_t best = 0;
  double best_v = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < log_probs.size(); ++i) {
    if (log_probs[i] > best_v) {
      best_v = log_probs[i];
      best = i;
    }
  }
  if (!std::isfinite(best_v)) throw Error(ErrorCode::kAllMasked, "no feasible action");
  return best;
}

std::size_t sample_choice(const std::vector<double>& log_probs, Rng& rng) {
  const double u = rng.uniform();
  double cum = 0.0;
  std::size_t last = log_probs.size();
  for (std::size_t i = 0; i < log_probs.size(); ++i) {
    if (!std::isfinite(log_probs[i])) continue;
    cum += std::exp(log_probs[i]);
    last = i;
    if (u < cum) return i;
  }
  if (last == log_probs.size()) throw Error(ErrorCode::kAllMasked, "no feasible action");
  return last;  // rounding left the cumulative sum just below u
}

namespace {

struct EpisodeResult {
  Trajectory traj;
  ad::Var log_prob_sum;
};

EpisodeResult run_episode(const DecoderContext& ctx, const Environment& env, DecodeMode mode, Rng* rng,
                          const std::vector<std::size_t>* replay) {
  EpisodeResult r;
  r.traj.log = EpisodeLog::start(env.scenario());
  EnvState st = env.initial_state();
  std::vector<ad::Var> chosen;
  double plain_sum = 0.0;
  while (st.clock < env.scenario().mission_period) {
    if (mode == DecodeMode::kReplay && r.traj.actions.size() >= replay->size()) break;
    const std::vector<char> mask = env.feasible_actions(st);
    const ad::Var lp = ctx.log_probs(st, mask);
    const std::vector<double>& row = lp.value().values();
    std::size_t a = 0;
    switch (mode) {
      case DecodeMode::kGreedy: a = greedy_choice(row); break;
      case DecodeMode::kSample: a = sample_choice(row, *rng); break;
      case DecodeMode::kReplay:
        a = (*replay)[r.traj.actions.size()];
        if (a >= mask.size() || !mask[a]) throw Error(ErrorCode::kInfeasibleAction, "replayed action is masked");
        break;
    }
    r.traj.actions.push_back(a);
    r.traj.log_probs.push_back(row[a]);
    if (lp.requires_grad()) {
      chosen.push_back(ad::pick(lp, 0, static_cast<int>(a)));
    } else {
      plain_sum += row[a];
    }
    StepOutcome out = env.step(st, a);
    r.traj.log.record(out);
    st = std::move(out.next);
  }
  r.traj.reward = episode_reward(r.traj.log);
  r.log_prob_sum = chosen.empty() ? ad::constant(Tensor(1, 1, plain_sum)) : ad::sum_scalars(chosen);
  return r;
}

}  // namespace

PolicyRun run_policy(const PolicyParams& p, const WeightVars& w, std::span<const Environment* const> envs,
                     DecodeMode mode, BnMode bn, Rng* rng, const std::vector<std::vector<std::size_t>>* replay) {
  if (mode == DecodeMode::kSample && !rng) throw Error(ErrorCode::kValidation, "sampling needs a random stream");
  if (mode == DecodeMode::kReplay && (!replay || replay->size() != envs.size())) {
    throw Error(ErrorCode::kValidation, "replay needs one action list per environment");
  }
  std::vector<Tensor> feats;
  for (const Environment* e : envs) feats.push_back(node_features(e->scenario()));
  PolicyRun run;
  std::vector<EncoderOutput> enc = encode_batch(p, w, feats, bn, &run.batch_stats);
  for (std::size_t b = 0; b < envs.size(); ++b) {
    const DecoderContext ctx(p, w, *envs[b], std::move(enc[b]));
    EpisodeResult r = run_episode(ctx, *envs[b], mode, rng, replay ? &(*replay)[b] : nullptr);
    run.trajectories.push_back(std::move(r.traj));
    run.log_prob_sums.push_back(std::move(r.log_prob_sum));
  }
  return run;
}

Trajectory rollout(const PolicyParams& p, const Environment& env, RolloutMode mode, Rng& rng) {
  ad::NoGradGuard guard;
  const WeightVars w = as_vars(p, false);
  const Environment* e = &env;
  PolicyRun run = run_policy(p, w, std::span<const Environment* const>(&e, 1),
                             mode == RolloutMode::kGreedy ? DecodeMode::kGreedy : DecodeMode::kSample, BnMode::kEval,
                             &rng);
  return std::move(run.trajectories.front());
}

Trajectory sample_best(const PolicyParams& p, const Environment& env, int n, Rng& rng) {
  if (n < 1) throw Error(ErrorCode::kValidation, "sample count must be at least 1");
  ad::NoGradGuard guard;
  const WeightVars w = as_vars(p, false);
  const DecoderContext ctx(p, w, env,
                           encode_batch(p, w, {node_features(env.scenario())}, BnMode::kEval).front());
  Trajectory best;
  for (int i = 0; i < n; ++i) {
    Trajectory t = run_episode(ctx, env, DecodeMode::kSample, &rng, nullptr).traj;
    if (i == 0 || t.reward > best.reward) best = std::move(t);
  }
  return best;
}

}  // namespace persurv
