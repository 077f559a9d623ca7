// Python bindings for the core operations: network evaluation, tangent
// kernels, losses, training flows, inference, and the simulation generators.
#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "semintk/baselines.hpp"
#include "semintk/inference.hpp"
#include "semintk/ntk.hpp"
#include "semintk/simgen.hpp"
#include "semintk/train.hpp"

namespace py = pybind11;
using namespace semintk;

namespace {

LossSpec make_loss(const std::string& name, double huber_delta) {
  LossSpec spec;
  if (name == "squared") spec.family = LossFamily::Squared;
  else if (name == "huber") spec.family = LossFamily::Huber;
  else if (name == "logistic") spec.family = LossFamily::LogisticNll;
  else if (name == "probit") spec.family = LossFamily::ProbitNll;
  else throw std::invalid_argument("unknown loss family " + name);
  spec.huber_delta = huber_delta;
  return spec;
}

Dataset make_dataset(const Eigen::VectorXd& y, const Eigen::MatrixXd& z,
                     const Eigen::MatrixXd& x, const std::string& kind) {
  Dataset data;
  data.y = y;
  data.z = z;
  data.x = x;
  data.kind = kind == "classification" ? TaskKind::Classification
                                       : TaskKind::Regression;
  data.validate();
  return data;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "semiparametric M-estimation with overparameterized ReLU networks";

  py::class_<NetArch>(m, "NetArch")
      .def(py::init([](int depth, int width, int input_dim) {
             return NetArch{depth, width, input_dim};
           }),
           py::arg("depth"), py::arg("width"), py::arg("input_dim"))
      .def_readwrite("depth", &NetArch::depth)
      .def_readwrite("width", &NetArch::width)
      .def_readwrite("input_dim", &NetArch::input_dim)
      .def("param_count", &NetArch::param_count);

  py::class_<NetParams>(m, "NetParams")
      .def_readonly("arch", &NetParams::arch);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("lambda_", &TrainConfig::lambda)
      .def_readwrite("step", &TrainConfig::step)
      .def_readwrite("steps", &TrainConfig::steps)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("batch", &TrainConfig::batch);

  py::class_<FitDiagnostics>(m, "FitDiagnostics")
      .def_readonly("final_objective", &FitDiagnostics::final_objective)
      .def_readonly("beta_grad_norm", &FitDiagnostics::beta_grad_norm)
      .def_readonly("f_grad_norm", &FitDiagnostics::f_grad_norm)
      .def_readonly("objective_history", &FitDiagnostics::objective_history);

  py::class_<FitResult>(m, "FitResult")
      .def_readonly("beta_hat", &FitResult::beta_hat)
      .def_readonly("fitted_f", &FitResult::fitted_f)
      .def_readonly("diagnostics", &FitResult::diagnostics)
      .def("predict", [](const FitResult& fit, const Eigen::MatrixXd& rows) {
        return fit.predict_rows(rows);
      });

  m.def("init_params", &init_params, py::arg("arch"), py::arg("seed"));
  m.def("forward_base", &forward_base);
  m.def("forward", &forward);
  m.def("param_gradient",
        [](const NetParams& p, const Eigen::VectorXd& x) {
          return param_gradient(p, x).values;
        });
  m.def("penalty", &penalty);

  m.def("kappa0", &kappa0);
  m.def("kappa1", &kappa1);
  m.def("analytic_ntk",
        [](int depth, const Eigen::VectorXd& x, const Eigen::VectorXd& x2) {
          return analytic_ntk(KernelSpec{depth}, x, x2);
        },
        py::arg("depth"), py::arg("x"), py::arg("x2"));
  m.def("empirical_ntk", &empirical_ntk);
  m.def("gram",
        [](int depth, const Eigen::MatrixXd& points) {
          return gram(analytic_kernel(KernelSpec{depth}), points).entries;
        },
        py::arg("depth"), py::arg("points"));

  m.def("loss_value",
        [](const std::string& family, double u1, double u2, double y,
           double huber_delta) {
          return loss_value(make_loss(family, huber_delta), u1, u2, y);
        },
        py::arg("family"), py::arg("u1"), py::arg("u2"), py::arg("y"),
        py::arg("huber_delta") = 1.345);
  m.def("loss_grad",
        [](const std::string& family, double u1, double u2, double y,
           double huber_delta) {
          const LossGrad g = loss_grad(make_loss(family, huber_delta), u1, u2, y);
          return std::make_pair(g.l1, g.l2);
        },
        py::arg("family"), py::arg("u1"), py::arg("u2"), py::arg("y"),
        py::arg("huber_delta") = 1.345);

  m.def("gen_regression",
        [](int case_id, int n, std::uint64_t seed) {
          const Dataset data = gen_regression(CaseSpec{case_id}, n, seed);
          return std::make_tuple(data.y, data.z, data.x);
        },
        py::arg("case_id"), py::arg("n"), py::arg("seed"));
  m.def("gen_classification",
        [](int case_id, int n, std::uint64_t seed) {
          const Dataset data = gen_classification(CaseSpec{case_id}, n, seed);
          return std::make_tuple(data.y, data.z, data.x);
        },
        py::arg("case_id"), py::arg("n"), py::arg("seed"));
  m.def("f0_eval", [](int case_id, const Eigen::VectorXd& x) {
    return f0_eval(CaseSpec{case_id}, x);
  });
  m.def("lambda_schedule",
        [](int n, int d, std::optional<double> s, double c) {
          return lambda_schedule(n, d, s, c);
        },
        py::arg("n"), py::arg("d"), py::arg("smoothness") = std::nullopt,
        py::arg("c") = 1.0);

  m.def("fit_nn",
        [](const Eigen::VectorXd& y, const Eigen::MatrixXd& z,
           const Eigen::MatrixXd& x, const std::string& kind,
           const std::string& loss, const NetArch& arch, const TrainConfig& cfg,
           double huber_delta) {
          return fit_nn(make_dataset(y, z, x, kind), make_loss(loss, huber_delta),
                        arch, cfg);
        },
        py::arg("y"), py::arg("z"), py::arg("x"), py::arg("kind"),
        py::arg("loss"), py::arg("arch"), py::arg("config"),
        py::arg("huber_delta") = 1.345);
  m.def("fit_rkhs",
        [](const Eigen::VectorXd& y, const Eigen::MatrixXd& z,
           const Eigen::MatrixXd& x, const std::string& kind,
           const std::string& loss, int depth, const TrainConfig& cfg,
           double huber_delta) {
          return fit_rkhs(make_dataset(y, z, x, kind), make_loss(loss, huber_delta),
                          analytic_kernel(KernelSpec{depth}), cfg);
        },
        py::arg("y"), py::arg("z"), py::arg("x"), py::arg("kind"),
        py::arg("loss"), py::arg("depth"), py::arg("config"),
        py::arg("huber_delta") = 1.345);

  m.def("confidence_intervals",
        [](const Eigen::VectorXd& beta, const Eigen::MatrixXd& sigma, int n,
           double level) {
          VarianceEstimate var;
          var.sigma_hat = sigma;
          const ConfidenceIntervals ci = confidence_intervals(beta, var, n, level);
          return std::make_pair(ci.lower, ci.upper);
        },
        py::arg("beta_hat"), py::arg("sigma_hat"), py::arg("n"),
        py::arg("level") = 0.95);
  m.def("infer",
        [](const Eigen::VectorXd& y, const Eigen::MatrixXd& z,
           const Eigen::MatrixXd& x, const std::string& kind,
           const std::string& loss, const FitResult& fit, const NetArch& aux_arch,
           const TrainConfig& aux_cfg, double level, const std::string& method) {
          VarianceMethod vm = VarianceMethod::Sandwich;
          if (method == "plugin")
            vm = kind == "classification" ? VarianceMethod::PlugInClassification
                                          : VarianceMethod::PlugInRegression;
          else if (method != "sandwich")
            throw std::invalid_argument("method must be plugin or sandwich");
          const InferenceResult r =
              run_inference(make_dataset(y, z, x, kind), make_loss(loss, 1.345),
                            fit, aux_arch, aux_cfg, level, vm);
          return std::make_tuple(r.variance.sigma_hat, r.intervals.lower,
                                 r.intervals.upper);
        },
        py::arg("y"), py::arg("z"), py::arg("x"), py::arg("kind"),
        py::arg("loss"), py::arg("fit"), py::arg("aux_arch"),
        py::arg("aux_config"), py::arg("level") = 0.95,
        py::arg("method") = "plugin");

  m.def("mse_beta", &mse_beta);
}
