#include "semintk/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "semintk/errors.hpp"
#include "semintk/rng.hpp"

namespace semintk {

namespace {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

// Batched forward/backward engine for the scaled ReLU network. Weight
// updates, activations and GEMMs run in S; the per-sample loss statistics
// and beta live in double on the caller's side.
template <typename S>
class Engine {
 public:
  void load(const NetParams& params, const NetParams& params0) {
    arch_ = params.arch;
    const int L = arch_.depth;
    w_.resize(L + 1);
    b_.resize(L + 1);
    w0_.resize(L + 1);
    b0_.resize(L + 1);
    scale_.resize(L);
    for (int i = 0; i <= L; ++i) {
      w_[i] = params.weights[i].template cast<S>();
      b_[i] = params.biases[i].template cast<S>();
      w0_[i] = params0.weights[i].template cast<S>();
      b0_[i] = params0.biases[i].template cast<S>();
      if (i < L) scale_[i] = static_cast<S>(std::sqrt(2.0 / arch_.layer_out(i)));
    }
    acts_.resize(L + 1);
    delta_.resize(L + 1);
    gw_.resize(L + 1);
    gb_.resize(L + 1);
  }

  template <typename Derived>
  void set_input(const Eigen::MatrixBase<Derived>& x) {
    acts_[0] = x.template cast<S>();
  }

  // base-network values at the current input rows
  Vec<S> forward() {
    const int L = arch_.depth;
    for (int i = 0; i < L; ++i) {
      acts_[i + 1].noalias() = acts_[i] * w_[i].transpose();
      acts_[i + 1].rowwise() += b_[i].transpose();
      acts_[i + 1] = (scale_[i] * acts_[i + 1]).cwiseMax(S(0));
    }
    Vec<S> out = acts_[L] * w_[L].transpose();
    out.array() += b_[L](0);
    return out;
  }

  // gradients of sum_i coeff_i * base(x_i) into gw_/gb_
  void backward(const Vec<S>& coeff) {
    const int L = arch_.depth;
    delta_[L] = coeff;
    for (int i = L; i >= 0; --i) {
      gw_[i].noalias() = delta_[i].transpose() * acts_[i];
      gb_[i] = delta_[i].colwise().sum().transpose();
      if (i > 0) {
        delta_[i - 1].noalias() = delta_[i] * w_[i];
        delta_[i - 1] = (scale_[i - 1] * delta_[i - 1].array() *
                         (acts_[i].array() > S(0)).template cast<S>())
                            .matrix();
      }
    }
  }

  // theta <- theta - eta * (g + lambda2 * (theta - theta0))
  void apply(double eta, double lambda2) {
    const S e = static_cast<S>(eta), l2 = static_cast<S>(lambda2);
    for (size_t i = 0; i < w_.size(); ++i) {
      w_[i] -= e * (gw_[i] + l2 * (w_[i] - w0_[i]));
      b_[i] -= e * (gb_[i] + l2 * (b_[i] - b0_[i]));
    }
  }

  double penalty() const {
    double sum = 0.0;
    for (size_t i = 0; i < w_.size(); ++i) {
      sum += static_cast<double>((w_[i] - w0_[i]).squaredNorm());
      sum += static_cast<double>((b_[i] - b0_[i]).squaredNorm());
    }
    return sum;
  }

  double grad_norm(double lambda2) const {
    double sum = 0.0;
    for (size_t i = 0; i < w_.size(); ++i) {
      sum += static_cast<double>(
          (gw_[i] + static_cast<S>(lambda2) * (w_[i] - w0_[i])).squaredNorm());
      sum += static_cast<double>(
          (gb_[i] + static_cast<S>(lambda2) * (b_[i] - b0_[i])).squaredNorm());
    }
    return std::sqrt(sum);
  }

  NetParams dump() const {
    NetParams p;
    p.arch = arch_;
    for (size_t i = 0; i < w_.size(); ++i) {
      p.weights.push_back(w_[i].template cast<double>());
      p.biases.push_back(b_[i].template cast<double>());
    }
    return p;
  }

 private:
  NetArch arch_;
  std::vector<Mat<S>> w_, w0_;
  std::vector<Vec<S>> b_, b0_;
  std::vector<S> scale_;
  std::vector<Mat<S>> acts_, delta_;
  std::vector<Mat<S>> gw_;
  std::vector<Vec<S>> gb_;
};

struct StepStats {
  double objective;
  Eigen::VectorXd l1;  // per-sample first partials (weighted)
  Eigen::VectorXd l2;
};

// objective and per-sample partials at given index values; weights are
// already folded in (w_i * l'_i), objective is (1/n) sum w_i l_i
StepStats loss_pass(const LossSpec& loss, const Eigen::VectorXd& u1,
                    const Eigen::VectorXd& u2, const Eigen::VectorXd& y,
                    const Eigen::VectorXd* weights) {
  const Eigen::Index n = y.size();
  StepStats s;
  s.l1.resize(n);
  s.l2.resize(n);
  double obj = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double w = weights ? (*weights)(i) : 1.0;
    obj += w * loss_value(loss, u1(i), u2(i), y(i));
    const LossGrad g = loss_grad(loss, u1(i), u2(i), y(i));
    s.l1(i) = w * g.l1;
    s.l2(i) = w * g.l2;
  }
  s.objective = obj / static_cast<double>(n);
  return s;
}

void check_divergence(double obj, double initial, int step, double factor) {
  if (!std::isfinite(obj))
    throw NumericalError("objective became non-finite at step " +
                         std::to_string(step));
  if (obj > factor * std::max(initial, 1e-12) && obj > initial)
    throw NumericalError("objective diverged at step " + std::to_string(step) +
                         " (" + std::to_string(obj) + " from initial " +
                         std::to_string(initial) + ")");
}

template <typename S>
FitResult fit_nn_impl(const Dataset& data, const LossSpec& loss,
                      const NetArch& arch, const TrainConfig& config,
                      const Eigen::VectorXd* weights,
                      std::vector<NnFitState>* trace) {
  data.validate();
  config.validate();
  const Eigen::Index n = data.n(), p = data.p();
  if (n < 2) throw std::invalid_argument("fit_nn: need n >= 2");
  if (arch.input_dim != data.d())
    throw std::invalid_argument("fit_nn: arch input_dim != data dimension");
  if (weights && (weights->size() != n || weights->minCoeff() < 0.0 ||
                  weights->maxCoeff() <= 0.0))
    throw std::invalid_argument("fit_nn: invalid sample weights");

  const NetParams theta0 = init_params(arch, config.seed);
  auto params0 = std::make_shared<const NetParams>(theta0);

  Engine<S> engine;
  engine.load(theta0, theta0);
  engine.set_input(data.x);
  const Vec<S> base0 = engine.forward();

  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  std::vector<double> history;
  history.reserve(config.steps + 1);
  double initial_obj = 0.0;
  const double lambda2 = 2.0 * config.lambda;

  const bool full_batch = config.batch == 0;
  Rng shuffle_rng = Rng::from_stream(config.seed, 0x5u);
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  auto full_eval = [&](Eigen::VectorXd& u1, Eigen::VectorXd& u2) {
    engine.set_input(data.x);
    const Vec<S> out = engine.forward();
    u2 = (out - base0).template cast<double>();
    u1 = p > 0 ? Eigen::VectorXd(data.z * beta) : Eigen::VectorXd::Zero(n);
  };

  auto record_checkpoint = [&](int step_i) {
    if (!trace) return;
    if (std::find(config.checkpoints.begin(), config.checkpoints.end(), step_i) ==
        config.checkpoints.end())
      return;
    NnFitState st;
    st.beta = beta;
    st.params = engine.dump();
    st.params0 = params0;
    st.step_index = step_i;
    st.objective_history = history;
    trace->push_back(std::move(st));
  };

  Eigen::VectorXd u1, u2;
  if (full_batch) {
    for (int t = 0; t < config.steps; ++t) {
      full_eval(u1, u2);
      StepStats s = loss_pass(loss, u1, u2, data.y, weights);
      s.objective += config.lambda * engine.penalty();
      if (t == 0) initial_obj = s.objective;
      check_divergence(s.objective, initial_obj, t, config.divergence_factor);
      history.push_back(s.objective);
      record_checkpoint(t);

      const Vec<S> coeff =
          (s.l2 / static_cast<double>(n)).template cast<S>();
      engine.backward(coeff);
      if (p > 0) {
        const Eigen::VectorXd gbeta = data.z.transpose() * s.l1 / static_cast<double>(n);
        if (!gbeta.allFinite())
          throw NumericalError("non-finite beta gradient at step " + std::to_string(t));
        beta -= config.step * gbeta;
      }
      engine.apply(config.step, lambda2);
    }
  } else {
    // epochs of seeded minibatch passes; history holds epoch-level objectives
    Mat<S> xb;
    Eigen::VectorXd yb, wb;
    Eigen::MatrixXd zb;
    Vec<S> base0b;
    for (int epoch = 0; epoch < config.steps; ++epoch) {
      if (epoch % std::max(1, config.objective_every) == 0) {
        full_eval(u1, u2);
        StepStats s = loss_pass(loss, u1, u2, data.y, weights);
        s.objective += config.lambda * engine.penalty();
        if (epoch == 0) initial_obj = s.objective;
        check_divergence(s.objective, initial_obj, epoch, config.divergence_factor);
        history.push_back(s.objective);
      }

      // Fisher-Yates on the sample order
      for (Eigen::Index i = n - 1; i > 0; --i)
        std::swap(order[i], order[shuffle_rng.below(i + 1)]);

      for (Eigen::Index start = 0; start < n; start += config.batch) {
        const Eigen::Index b = std::min<Eigen::Index>(config.batch, n - start);
        xb.resize(b, data.d());
        yb.resize(b);
        base0b.resize(b);
        if (p > 0) zb.resize(b, p);
        if (weights) wb.resize(b);
        for (Eigen::Index k = 0; k < b; ++k) {
          const Eigen::Index idx = order[start + k];
          xb.row(k) = data.x.row(idx).template cast<S>();
          yb(k) = data.y(idx);
          base0b(k) = base0(idx);
          if (p > 0) zb.row(k) = data.z.row(idx);
          if (weights) wb(k) = (*weights)(idx);
        }
        engine.set_input(xb);
        const Vec<S> out = engine.forward();
        const Eigen::VectorXd u2b = (out - base0b).template cast<double>();
        const Eigen::VectorXd u1b =
            p > 0 ? Eigen::VectorXd(zb * beta) : Eigen::VectorXd::Zero(b);
        StepStats sb = loss_pass(loss, u1b, u2b, yb, weights ? &wb : nullptr);
        const Vec<S> coeff =
            (sb.l2 / static_cast<double>(b)).template cast<S>();
        engine.backward(coeff);
        if (p > 0) beta -= config.step * (zb.transpose() * sb.l1 / static_cast<double>(b));
        engine.apply(config.step, lambda2);
      }
    }
  }

  // final objective and gradient norms
  full_eval(u1, u2);
  StepStats fin = loss_pass(loss, u1, u2, data.y, weights);
  fin.objective += config.lambda * engine.penalty();
  check_divergence(fin.objective, initial_obj, config.steps, config.divergence_factor);
  history.push_back(fin.objective);
  record_checkpoint(config.steps);
  engine.backward((fin.l2 / static_cast<double>(n)).template cast<S>());

  FitResult result;
  result.beta_hat = beta;
  result.fitted_f = u2;
  auto params = std::make_shared<const NetParams>(engine.dump());
  result.net_params = params;
  result.net_params0 = params0;
  result.predict_rows = [params, params0](const Eigen::MatrixXd& rows) {
    return Eigen::VectorXd(forward_base_batch(*params, rows) -
                           forward_base_batch(*params0, rows));
  };
  result.predictor = [params, params0](const Eigen::VectorXd& x) {
    return forward(*params, *params0, x);
  };
  result.diagnostics.final_objective = fin.objective;
  result.diagnostics.beta_grad_norm =
      p > 0 ? (data.z.transpose() * fin.l1 / static_cast<double>(n)).norm() : 0.0;
  result.diagnostics.f_grad_norm = engine.grad_norm(lambda2);
  result.diagnostics.lambda = config.lambda;
  result.diagnostics.step = config.step;
  result.diagnostics.steps_run = config.steps;
  result.diagnostics.monotone_guarantee =
      full_batch && config.step * gradient_lipschitz_estimate(
                                      data, loss, ntk_diag_max(data, arch.depth),
                                      config.lambda) <= 2.0;
  result.diagnostics.objective_history = std::move(history);
  return result;
}

}  // namespace

void TrainConfig::validate() const {
  if (lambda < 0.0) throw std::invalid_argument("TrainConfig: lambda must be >= 0");
  if (step <= 0.0) throw std::invalid_argument("TrainConfig: step must be > 0");
  if (steps < 0) throw std::invalid_argument("TrainConfig: steps must be >= 0");
  if (batch < 0) throw std::invalid_argument("TrainConfig: batch must be >= 0");
  if (!std::is_sorted(checkpoints.begin(), checkpoints.end()))
    throw std::invalid_argument("TrainConfig: checkpoints must be sorted");
  if (!checkpoints.empty() &&
      (checkpoints.front() < 0 || checkpoints.back() > steps))
    throw std::invalid_argument("TrainConfig: checkpoints must lie in [0, steps]");
  if (objective_every < 1)
    throw std::invalid_argument("TrainConfig: objective_every must be >= 1");
}

double ntk_diag_max(const Dataset& data, int depth) {
  double mx = 0.0;
  for (Eigen::Index i = 0; i < data.n(); ++i)
    mx = std::max(mx, (depth + 1) * (data.x.row(i).squaredNorm() + 1.0) + depth);
  return mx;
}

double gradient_lipschitz_estimate(const Dataset& data, const LossSpec& loss,
                                   double kernel_diag_max, double lambda) {
  double zmax = 0.0;
  for (Eigen::Index i = 0; i < data.n(); ++i)
    zmax = std::max(zmax, data.z.row(i).squaredNorm());
  return loss.grad_lipschitz() * (kernel_diag_max + zmax) + 2.0 * lambda;
}

NnFitState make_nn_state(const Dataset& data, const NetArch& arch,
                         std::uint64_t seed) {
  data.validate();
  NnFitState st;
  st.beta = Eigen::VectorXd::Zero(data.p());
  st.params = init_params(arch, seed);
  st.params0 = std::make_shared<const NetParams>(st.params);
  return st;
}

NnFitState nn_flow_step(const NnFitState& state, const Dataset& data,
                        const LossSpec& loss, const TrainConfig& config) {
  data.validate();
  config.validate();
  if (state.params.arch.input_dim != data.d())
    throw std::invalid_argument("nn_flow_step: state/data dimension mismatch");
  const Eigen::Index n = data.n();

  Engine<double> engine;
  engine.load(state.params, *state.params0);
  engine.set_input(data.x);
  const Eigen::VectorXd base = engine.forward();
  const Eigen::VectorXd base0 = forward_base_batch(*state.params0, data.x);
  const Eigen::VectorXd u2 = base - base0;
  const Eigen::VectorXd u1 = data.z * state.beta;

  StepStats s = loss_pass(loss, u1, u2, data.y, nullptr);
  s.objective += config.lambda * engine.penalty();

  engine.backward(s.l2 / static_cast<double>(n));
  const Eigen::VectorXd gbeta = data.z.transpose() * s.l1 / static_cast<double>(n);
  if (!gbeta.allFinite() || !std::isfinite(engine.grad_norm(2.0 * config.lambda)))
    throw NumericalError("nn_flow_step: non-finite gradient");
  engine.apply(config.step, 2.0 * config.lambda);

  NnFitState next;
  next.beta = state.beta - config.step * gbeta;
  next.params = engine.dump();
  next.params0 = state.params0;
  next.step_index = state.step_index + 1;
  next.objective_history = state.objective_history;
  next.objective_history.push_back(s.objective);
  return next;
}

FitResult fit_nn(const Dataset& data, const LossSpec& loss, const NetArch& arch,
                 const TrainConfig& config, const Eigen::VectorXd* sample_weights) {
  if (config.precision == Precision::F32)
    return fit_nn_impl<float>(data, loss, arch, config, sample_weights, nullptr);
  return fit_nn_impl<double>(data, loss, arch, config, sample_weights, nullptr);
}

std::vector<NnFitState> fit_nn_trace(const Dataset& data, const LossSpec& loss,
                                     const NetArch& arch,
                                     const TrainConfig& config) {
  if (config.batch != 0 || config.precision != Precision::F64)
    throw std::invalid_argument("fit_nn_trace: requires full batch and f64");
  std::vector<NnFitState> trace;
  fit_nn_impl<double>(data, loss, arch, config, nullptr, &trace);
  return trace;
}

RkhsFitState make_rkhs_state(const Dataset& data, const KernelFn& kernel) {
  data.validate();
  RkhsFitState st;
  st.beta = Eigen::VectorXd::Zero(data.p());
  st.alpha = Eigen::VectorXd::Zero(data.n());
  st.gram = std::make_shared<const GramMatrix>(gram(kernel, data.x));
  return st;
}

RkhsFitState rkhs_flow_step(const RkhsFitState& state, const Dataset& data,
                            const LossSpec& loss, const TrainConfig& config) {
  data.validate();
  config.validate();
  if (!state.gram || state.gram->size() != data.n())
    throw std::invalid_argument("rkhs_flow_step: gram built from different data");
  const Eigen::Index n = data.n();

  const Eigen::VectorXd galpha = state.gram->entries * state.alpha;
  const Eigen::VectorXd u1 = data.z * state.beta;
  StepStats s = loss_pass(loss, u1, galpha, data.y, nullptr);
  s.objective += config.lambda * state.alpha.dot(galpha);

  const Eigen::VectorXd galpha_grad =
      s.l2 / static_cast<double>(n) + 2.0 * config.lambda * state.alpha;
  const Eigen::VectorXd gbeta = data.z.transpose() * s.l1 / static_cast<double>(n);
  if (!galpha_grad.allFinite() || !gbeta.allFinite())
    throw NumericalError("rkhs_flow_step: non-finite update");

  RkhsFitState next;
  next.beta = state.beta - config.step * gbeta;
  next.alpha = state.alpha - config.step * galpha_grad;
  next.gram = state.gram;
  next.step_index = state.step_index + 1;
  next.objective_history = state.objective_history;
  next.objective_history.push_back(s.objective);
  return next;
}

FitResult fit_rkhs(const Dataset& data, const LossSpec& loss,
                   const KernelFn& kernel, const TrainConfig& config,
                   const std::optional<Eigen::VectorXd>& frozen_beta) {
  data.validate();
  config.validate();
  const Eigen::Index n = data.n();
  if (n < 2) throw std::invalid_argument("fit_rkhs: need n >= 2");

  auto st = std::make_shared<RkhsFitState>(make_rkhs_state(data, kernel));
  if (frozen_beta) {
    if (frozen_beta->size() != data.p())
      throw std::invalid_argument("fit_rkhs: frozen beta dimension mismatch");
    st->beta = *frozen_beta;
  }

  std::vector<double> history;
  history.reserve(config.steps + 1);
  double initial_obj = 0.0;
  Eigen::VectorXd galpha, u1, last_l1, last_l2;

  for (int t = 0; t <= config.steps; ++t) {
    galpha.noalias() = st->gram->entries * st->alpha;
    u1 = data.z * st->beta;
    StepStats s = loss_pass(loss, u1, galpha, data.y, nullptr);
    s.objective += config.lambda * st->alpha.dot(galpha);
    if (t == 0) initial_obj = s.objective;
    check_divergence(s.objective, initial_obj, t, config.divergence_factor);
    history.push_back(s.objective);
    last_l1 = s.l1;
    last_l2 = s.l2;
    if (t == config.steps) break;

    const Eigen::VectorXd ga =
        s.l2 / static_cast<double>(n) + 2.0 * config.lambda * st->alpha;
    if (!ga.allFinite()) throw NumericalError("fit_rkhs: non-finite update");
    st->alpha -= config.step * ga;
    if (!frozen_beta)
      st->beta -= config.step * (data.z.transpose() * s.l1 / static_cast<double>(n));
    st->step_index = t + 1;
  }
  st->objective_history = history;

  const Eigen::VectorXd coeff_grad =
      last_l2 / static_cast<double>(n) + 2.0 * config.lambda * st->alpha;

  FitResult result;
  result.beta_hat = st->beta;
  result.fitted_f = st->gram->entries * st->alpha;
  const Eigen::MatrixXd anchors = st->gram->anchors;
  const Eigen::VectorXd alpha = st->alpha;
  result.predict_rows = [kernel, anchors, alpha](const Eigen::MatrixXd& rows) {
    return kernel_expansion(kernel, anchors, alpha, rows);
  };
  result.predictor = [kernel, anchors, alpha](const Eigen::VectorXd& x) {
    double v = 0.0;
    for (Eigen::Index i = 0; i < anchors.rows(); ++i)
      v += alpha(i) * kernel(x, anchors.row(i));
    return v;
  };
  result.diagnostics.final_objective = history.back();
  result.diagnostics.beta_grad_norm =
      frozen_beta ? 0.0
                  : (data.z.transpose() * last_l1 / static_cast<double>(n)).norm();
  // RKHS-norm of the functional gradient: sqrt(g' G g) for coefficient grad g
  result.diagnostics.f_grad_norm =
      std::sqrt(std::max(0.0, coeff_grad.dot(st->gram->entries * coeff_grad)));
  result.diagnostics.lambda = config.lambda;
  result.diagnostics.step = config.step;
  result.diagnostics.steps_run = config.steps;
  result.diagnostics.monotone_guarantee =
      config.step * gradient_lipschitz_estimate(
                        data, loss, st->gram->entries.diagonal().maxCoeff(),
                        config.lambda) <= 2.0;
  result.diagnostics.objective_history = std::move(history);
  result.rkhs_state = st;
  return result;
}

std::vector<RkhsFitState> fit_rkhs_trace(const Dataset& data, const LossSpec& loss,
                                         const KernelFn& kernel,
                                         const TrainConfig& config) {
  data.validate();
  config.validate();
  std::vector<RkhsFitState> trace;
  RkhsFitState st = make_rkhs_state(data, kernel);
  auto maybe_record = [&](const RkhsFitState& s) {
    if (std::find(config.checkpoints.begin(), config.checkpoints.end(),
                  s.step_index) != config.checkpoints.end())
      trace.push_back(s);
  };
  maybe_record(st);
  for (int t = 0; t < config.steps; ++t) {
    st = rkhs_flow_step(st, data, loss, config);
    maybe_record(st);
  }
  return trace;
}

Eigen::VectorXd kernel_expansion(const KernelFn& kernel,
                                 const Eigen::MatrixXd& anchors,
                                 const Eigen::VectorXd& alpha,
                                 const Eigen::MatrixXd& points) {
  std::vector<Eigen::VectorXd> arows(anchors.rows());
  for (Eigen::Index j = 0; j < anchors.rows(); ++j) arows[j] = anchors.row(j);
  Eigen::VectorXd out(points.rows());
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Eigen::VectorXd xi = points.row(i);
    double v = 0.0;
    for (Eigen::Index j = 0; j < anchors.rows(); ++j)
      v += alpha(j) * kernel(xi, arows[j]);
    out(i) = v;
  }
  return out;
}

GapReport flow_gap(const std::vector<NnFitState>& nn_ckpts,
                   const std::vector<RkhsFitState>& rkhs_ckpts,
                   const KernelFn& kernel, const Eigen::MatrixXd& probe) {
  if (nn_ckpts.size() != rkhs_ckpts.size() || nn_ckpts.empty())
    throw std::invalid_argument("flow_gap: checkpoint lists misaligned");
  GapReport report;
  for (size_t k = 0; k < nn_ckpts.size(); ++k) {
    const NnFitState& nn = nn_ckpts[k];
    const RkhsFitState& rk = rkhs_ckpts[k];
    if (nn.step_index != rk.step_index)
      throw std::invalid_argument("flow_gap: checkpoint step indices misaligned");
    const Eigen::VectorXd f_nn =
        forward_base_batch(nn.params, probe) - forward_base_batch(*nn.params0, probe);
    const Eigen::VectorXd f_rk =
        kernel_expansion(kernel, rk.gram->anchors, rk.alpha, probe);
    report.step_indices.push_back(nn.step_index);
    report.beta_gaps.push_back((nn.beta - rk.beta).norm());
    report.f_gaps.push_back((f_nn - f_rk).cwiseAbs().maxCoeff());
  }
  report.max_beta_gap =
      *std::max_element(report.beta_gaps.begin(), report.beta_gaps.end());
  report.max_f_gap = *std::max_element(report.f_gaps.begin(), report.f_gaps.end());
  return report;
}

double lambda_schedule(int n, int d, std::optional<double> smoothness, double c) {
  if (n < 1 || d < 1) throw std::invalid_argument("lambda_schedule: n, d >= 1");
  double exponent;
  if (smoothness) {
    if (*smoothness <= d / 2.0)
      throw std::invalid_argument("lambda_schedule: smoothness must exceed d/2");
    exponent = (d + 1.0) / (2.0 * *smoothness + d);
  } else {
    exponent = (d + 1.0) / (2.0 * d + 1.0);
  }
  return c * std::pow(static_cast<double>(n), -exponent);
}

std::pair<Dataset, Dataset> split_train_validation(const Dataset& data,
                                                   double train_fraction,
                                                   std::uint64_t seed) {
  data.validate();
  const Eigen::Index n = data.n();
  if (n < 2) throw std::invalid_argument("split: need n >= 2");
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng rng = Rng::from_stream(seed, 0x517u);
  for (Eigen::Index i = n - 1; i > 0; --i)
    std::swap(order[i], order[rng.below(i + 1)]);
  Eigen::Index ntrain = static_cast<Eigen::Index>(std::llround(train_fraction * n));
  ntrain = std::clamp<Eigen::Index>(ntrain, 1, n - 1);

  auto take = [&](Eigen::Index lo, Eigen::Index hi) {
    Dataset part;
    part.kind = data.kind;
    part.truth = data.truth;
    part.y.resize(hi - lo);
    part.z.resize(hi - lo, data.p());
    part.x.resize(hi - lo, data.d());
    for (Eigen::Index k = lo; k < hi; ++k) {
      part.y(k - lo) = data.y(order[k]);
      part.z.row(k - lo) = data.z.row(order[k]);
      part.x.row(k - lo) = data.x.row(order[k]);
    }
    return part;
  };
  return {take(0, ntrain), take(ntrain, n)};
}

double validation_risk(const FitResult& fit, const Dataset& holdout,
                       const LossSpec& loss) {
  const Eigen::VectorXd u2 = fit.predict_rows(holdout.x);
  const Eigen::VectorXd u1 = holdout.z * fit.beta_hat;
  double risk = 0.0;
  for (Eigen::Index i = 0; i < holdout.n(); ++i)
    risk += loss_value(loss, u1(i), u2(i), holdout.y(i));
  return risk / static_cast<double>(holdout.n());
}

std::size_t select_hyperparams_by(
    const Dataset& data, const LossSpec& loss,
    const std::vector<std::function<FitResult(const Dataset&)>>& fitters,
    const std::vector<double>& lambdas, std::uint64_t split_seed) {
  if (fitters.empty()) throw std::invalid_argument("select_hyperparams: empty grid");
  if (data.n() < 5) throw std::invalid_argument("select_hyperparams: need n >= 5");
  if (fitters.size() != lambdas.size())
    throw std::invalid_argument("select_hyperparams: grid size mismatch");
  auto [train, val] = split_train_validation(data, 0.8, split_seed);
  std::size_t best = 0;
  double best_risk = std::numeric_limits<double>::infinity();
  bool any_ok = false;
  for (std::size_t g = 0; g < fitters.size(); ++g) {
    double risk;
    try {
      const FitResult fit = fitters[g](train);
      risk = validation_risk(fit, val, loss);
    } catch (const NumericalError&) {
      continue;  // divergent configuration loses the comparison
    }
    if (!any_ok || risk < best_risk ||
        (risk == best_risk && lambdas[g] < lambdas[best])) {
      best = g;
      best_risk = risk;
      any_ok = true;
    }
  }
  if (!any_ok)
    throw NumericalError("select_hyperparams: every grid element diverged");
  return best;
}

std::size_t select_hyperparams(const Dataset& data, const LossSpec& loss,
                               const NetArch& arch,
                               const std::vector<TrainConfig>& grid) {
  if (grid.empty()) throw std::invalid_argument("select_hyperparams: empty grid");
  std::vector<std::function<FitResult(const Dataset&)>> fitters;
  std::vector<double> lambdas;
  for (const TrainConfig& cfg : grid) {
    fitters.push_back(
        [&loss, &arch, cfg](const Dataset& train) { return fit_nn(train, loss, arch, cfg); });
    lambdas.push_back(cfg.lambda);
  }
  return select_hyperparams_by(data, loss, fitters, lambdas, grid.front().seed);
}

ConvergenceReport convergence_report(const std::vector<double>& history,
                                     const TrainConfig& config,
                                     std::optional<double> limit,
                                     std::optional<double> final_grad_norm) {
  (void)config;
  if (history.empty())
    throw std::invalid_argument("convergence_report: empty history");
  ConvergenceReport rep;
  double hi = history[0], lo = history[0];
  for (size_t t = 1; t < history.size(); ++t) {
    hi = std::max(hi, history[t]);
    lo = std::min(lo, history[t]);
    const double scale = std::max({std::abs(history[t - 1]), std::abs(history[t]), 1e-300});
    const double rel_inc = (history[t] - history[t - 1]) / scale;
    if (rel_inc > 1e-10) {
      rep.monotone = false;
      ++rep.increase_count;
      rep.max_relative_increase = std::max(rep.max_relative_increase, rel_inc);
    }
  }
  const double span = (hi - lo) / std::max(std::abs(hi), 1e-300);
  rep.stalled = span < 1e-12 && final_grad_norm.value_or(0.0) > 1e-8;

  if (limit && history.size() >= 8) {
    // least squares of log10(objective gap) on the step index, last half
    std::vector<std::pair<double, double>> pts;
    const double floor = std::max(1e-300, 1e-15 * std::abs(history.front()));
    for (size_t t = history.size() / 2; t < history.size(); ++t) {
      const double gap = history[t] - *limit;
      if (gap > floor) pts.push_back({static_cast<double>(t), std::log10(gap)});
    }
    if (pts.size() >= 3) {
      double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
      for (auto [a, b] : pts) sx += a, sy += b, sxx += a * a, sxy += a * b, syy += b * b;
      const double m = static_cast<double>(pts.size());
      const double cov = sxy - sx * sy / m, vx = sxx - sx * sx / m, vy = syy - sy * sy / m;
      if (vx > 0 && vy > 0) {
        rep.tail_slope = cov / vx;
        rep.tail_r2 = (cov * cov) / (vx * vy);
      }
    }
  }
  return rep;
}

}  // namespace semintk
