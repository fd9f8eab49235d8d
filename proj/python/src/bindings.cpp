#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <string>
#include <vector>

#include "cmatch/correspondence.hpp"
#include "cmatch/episode.hpp"
#include "cmatch/error.hpp"
#include "cmatch/message_flow.hpp"
#include "cmatch/metrics.hpp"
#include "cmatch/ot.hpp"
#include "cmatch/pipeline.hpp"
#include "cmatch/tensor.hpp"

namespace py = pybind11;
using namespace cmatch;

namespace {

using F32Array = py::array_t<float, py::array::c_style | py::array::forcecast>;
using F64Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

void require_ndim(const py::array& a, py::ssize_t ndim, const char* what) {
  if (a.ndim() != ndim) {
    throw Error(ErrorKind::kInvalidShape,
                std::string(what) + " must have " + std::to_string(ndim) + " dimensions");
  }
}

template <typename T>
py::array_t<T> to_array(std::span<const T> values, std::vector<py::ssize_t> shape) {
  py::array_t<T> out(shape);
  std::copy(values.begin(), values.end(), out.mutable_data());
  return out;
}

FeatureGrid grid_from(const F32Array& a) {
  require_ndim(a, 3, "feature grid");
  return FeatureGrid(a.shape(0), a.shape(1), a.shape(2),
                     std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> grid_to(const FeatureGrid& g) {
  return to_array(g.values(), {static_cast<py::ssize_t>(g.height()),
                               static_cast<py::ssize_t>(g.width()),
                               static_cast<py::ssize_t>(g.channels())});
}

BinaryMask mask_from(const U8Array& a) {
  require_ndim(a, 2, "mask");
  return BinaryMask(a.shape(0), a.shape(1),
                    std::vector<std::uint8_t>(a.data(), a.data() + a.size()));
}

py::array_t<std::uint8_t> mask_to(const BinaryMask& m) {
  return to_array(m.values(), {static_cast<py::ssize_t>(m.height()),
                               static_cast<py::ssize_t>(m.width())});
}

py::array_t<float> prob_to(const ProbabilityMap& p) {
  return to_array(p.values(), {static_cast<py::ssize_t>(p.height()),
                               static_cast<py::ssize_t>(p.width())});
}

CostMatrix cost_from(const F32Array& a) {
  require_ndim(a, 2, "cost matrix");
  return CostMatrix(a.shape(0), a.shape(1), std::vector<float>(a.data(), a.data() + a.size()));
}

std::vector<double> vector_from(const F64Array& a) {
  require_ndim(a, 1, "mass vector");
  return std::vector<double>(a.data(), a.data() + a.size());
}

py::array_t<double> plan_to(const TransportPlan& p) {
  return to_array(std::span<const double>(p.flows),
                  {static_cast<py::ssize_t>(p.rows), static_cast<py::ssize_t>(p.cols)});
}

TransportPlan plan_from(const F64Array& a) {
  require_ndim(a, 2, "plan");
  TransportPlan p;
  p.rows = a.shape(0);
  p.cols = a.shape(1);
  p.flows.assign(a.data(), a.data() + a.size());
  return p;
}

py::array tensor_to(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  if (t.dtype() == DType::kFloat32) return to_array(t.f32_data(), shape);
  return to_array(t.u8_data(), shape);
}

Tensor tensor_from(const py::array& a) {
  Tensor::Shape shape(a.shape(), a.shape() + a.ndim());
  if (py::isinstance<py::array_t<std::uint8_t>>(a)) {
    const U8Array u = a;
    return Tensor::u8(shape, std::vector<std::uint8_t>(u.data(), u.data() + u.size()));
  }
  const F32Array f = a;
  return Tensor::f32(shape, std::vector<float>(f.data(), f.data() + f.size()));
}

py::dict plan_result(const TransportPlan& plan, const BalancedProblem& problem) {
  py::dict out;
  out["plan"] = plan_to(plan);
  out["real"] = plan_to(strip_dummies(plan, problem.real_rows(), problem.real_cols()));
  out["cost"] = plan.cost;
  out["iterations"] = plan.iterations;
  out["defect"] = marginal_defect(plan, problem.supply(), problem.demand());
  out["supply"] = std::vector<double>(problem.supply().begin(), problem.supply().end());
  out["demand"] = std::vector<double>(problem.demand().begin(), problem.demand().end());
  return out;
}

py::dict solve(const F32Array& cost, const F64Array& supply, const F64Array& demand,
               double matched, const std::string& method, double epsilon_scale, int max_iters,
               double tolerance, int anneal_steps) {
  const MarginalWeights w{vector_from(supply), vector_from(demand), matched};
  const auto problem = build_partial_problem(w, cost_from(cost));
  if (method == "oracle") return plan_result(exact_solve_oracle(problem), problem);
  if (method != "sinkhorn") {
    throw Error(ErrorKind::kConfig, "method must be sinkhorn or oracle, got " + method);
  }
  SinkhornConfig cfg;
  cfg.epsilon_scale = epsilon_scale;
  cfg.max_iters = max_iters;
  cfg.tolerance = tolerance;
  cfg.anneal_steps = anneal_steps;
  return plan_result(sinkhorn_solve(problem, cfg), problem);
}

py::tuple message_flow(const F32Array& query, const F32Array& support, const std::string& mode,
                       int steps, const std::string& neighborhood, std::uint64_t seed,
                       bool zero_mlp, const std::optional<std::filesystem::path>& params) {
  const auto q = grid_from(query);
  const auto s = grid_from(support);
  ParameterStore store;
  if (params) {
    store = ParameterStore::load(*params);
  } else {
    FlowSchedule schedule{parse_flow_mode(mode), steps, parse_neighborhood(neighborhood)};
    store = zero_mlp ? ParameterStore::zero_mlp(q.channels(), schedule, seed)
                     : ParameterStore::random(q.channels(), schedule, seed);
  }
  const auto [q2, s2] = run_message_flow(q, s, store.schedule, store);
  return py::make_tuple(grid_to(q2), grid_to(s2));
}

py::array_t<float> probability_map(const F64Array& real_plan, const U8Array& support_mask,
                                   const F64Array& demand, std::size_t height,
                                   std::size_t width) {
  const auto plan = plan_from(real_plan);
  const auto mask = mask_from(support_mask);
  MarginalWeights w;
  w.demand = vector_from(demand);
  const auto fp = filter_by_support_mask(plan, mask);
  return prob_to(foreground_probability_map(fp, w, height, width));
}

py::array_t<std::int32_t> best_match(const F64Array& real_plan, std::size_t height,
                                     std::size_t width) {
  const auto map = best_match_map(plan_from(real_plan), height, width);
  return to_array(std::span<const std::int32_t>(map.indices),
                  {static_cast<py::ssize_t>(height), static_cast<py::ssize_t>(width)});
}

py::dict report_to(const MetricReport& r) {
  py::dict out;
  out["iou_fg"] = r.iou_fg;
  out["iou_bg"] = r.iou_bg;
  out["fbiou"] = r.fbiou;
  out["miou"] = r.miou;
  out["per_class"] = r.per_class;
  return out;
}

py::dict run_match_py(const std::filesystem::path& episode, const std::filesystem::path& out,
                      const std::filesystem::path& params,
                      const std::map<std::string, std::string>& options) {
  PipelineConfig cfg;
  KeyValueConfig kv;
  for (const auto& [key, value] : options) kv.set(key, value);
  cfg.apply(kv);
  cfg.episode_dir = episode;
  cfg.out_dir = out;
  cfg.params_dir = params;
  const auto r = run_match(cfg);
  py::dict d;
  d["probability"] = prob_to(r.probability);
  d["prediction"] = mask_to(r.prediction);
  d["plan"] = plan_to(r.plan);
  d["matched_mass"] = r.matched_mass;
  d["metrics"] = r.metrics ? py::object(report_to(*r.metrics)) : py::none();
  d["prior"] = r.prior ? py::object(prob_to(*r.prior)) : py::none();
  return d;
}

py::dict synthetic_episode(std::uint64_t seed, std::size_t height, std::size_t width,
                           std::size_t channels, double fg_fraction, double separation,
                           double noise) {
  EpisodeSpec spec;
  spec.height = height;
  spec.width = width;
  spec.channels = channels;
  spec.fg_fraction = fg_fraction;
  spec.separation = separation;
  spec.noise = noise;
  const auto e = make_synthetic_episode(seed, spec);
  py::dict d;
  d["support"] = grid_to(e.support);
  d["query"] = grid_to(e.query);
  d["support_mask"] = mask_to(e.support_mask);
  d["query_gt"] = mask_to(*e.query_gt);
  d["class_id"] = e.class_id;
  return d;
}

}  // namespace

PYBIND11_MODULE(_cmatch, m) {
  m.doc() = "Correspondence matching with partial optimal transport and message flow";

  // Leaked on purpose: the translator may run until interpreter shutdown.
  static PyObject* error_type =
      py::exception<Error>(m, "CmatchError", PyExc_RuntimeError).release().ptr();
  static PyObject* convergence_type =
      py::exception<ConvergenceError>(m, "ConvergenceError", error_type).release().ptr();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ConvergenceError& e) {
      py::object exc = py::reinterpret_borrow<py::object>(convergence_type)(py::str(e.what()));
      exc.attr("kind") = to_string(e.kind());
      exc.attr("defect") = e.defect();
      exc.attr("iterations") = e.iterations();
      PyErr_SetObject(convergence_type, exc.ptr());
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error_type)(py::str(e.what()));
      exc.attr("kind") = to_string(e.kind());
      PyErr_SetObject(error_type, exc.ptr());
    }
  });

  m.def("read_tensor", [](const std::filesystem::path& p) { return tensor_to(read_tensor(p)); },
        py::arg("path"));
  m.def("write_tensor",
        [](const std::filesystem::path& p, const py::array& a) { write_tensor(tensor_from(a), p); },
        py::arg("path"), py::arg("array"),
        "Writes a uint8 array as u8 and anything else as float32.");

  m.def("cosine_cost",
        [](const F32Array& support, const F32Array& query) {
          const auto c = cosine_cost_matrix(grid_from(support), grid_from(query));
          return to_array(c.values(), {static_cast<py::ssize_t>(c.rows()),
                                       static_cast<py::ssize_t>(c.cols())});
        },
        py::arg("support"), py::arg("query"));
  m.def("select_matched_mass", &select_matched_mass, py::arg("foreground_count"),
        py::arg("lam"), py::arg("suppliers"), py::arg("demanders"));
  m.def("solve", &solve, py::arg("cost"), py::arg("supply"), py::arg("demand"),
        py::arg("matched"), py::arg("method") = "sinkhorn", py::arg("epsilon_scale") = 0.05,
        py::arg("max_iters") = 1000, py::arg("tolerance") = 1e-6, py::arg("anneal_steps") = 3,
        "Solves the partial transport problem; returns the augmented and real-block plans.");
  m.def("exact_transport",
        [](const F32Array& cost, const F64Array& supply, const F64Array& demand) {
          const auto s = vector_from(supply);
          const auto d = vector_from(demand);
          const auto plan = exact_transport(cost_from(cost), s, d);
          return py::make_tuple(plan_to(plan), plan.cost);
        },
        py::arg("cost"), py::arg("supply"), py::arg("demand"));

  m.def("positional_encoding",
        [](std::size_t h, std::size_t w, std::size_t c, double base) {
          return tensor_to(positional_encode(h, w, c, base));
        },
        py::arg("height"), py::arg("width"), py::arg("channels"), py::arg("base") = 10000.0);
  m.def("message_flow", &message_flow, py::arg("query"), py::arg("support"),
        py::arg("mode") = "iterative", py::arg("steps") = 1, py::arg("neighborhood") = "8",
        py::arg("seed") = 0, py::arg("zero_mlp") = false, py::arg("params") = py::none(),
        "Runs the message-flow schedule; returns (query, support) features.");

  m.def("probability_map", &probability_map, py::arg("real_plan"), py::arg("support_mask"),
        py::arg("demand"), py::arg("height"), py::arg("width"));
  m.def("prior_mask",
        [](const F32Array& query, const F32Array& support, const U8Array& mask) {
          return prob_to(prior_mask(grid_from(query), grid_from(support), mask_from(mask)));
        },
        py::arg("query"), py::arg("support"), py::arg("support_mask"));
  m.def("best_match", &best_match, py::arg("real_plan"), py::arg("height"), py::arg("width"));
  m.def("threshold",
        [](const F32Array& p, double tau) {
          require_ndim(p, 2, "probability map");
          const ProbabilityMap map(p.shape(0), p.shape(1),
                                   std::vector<float>(p.data(), p.data() + p.size()));
          return mask_to(threshold_prediction(map, tau));
        },
        py::arg("probability"), py::arg("tau") = 0.5);

  m.def("confusion",
        [](const U8Array& pred, const U8Array& gt) {
          const auto c = confusion_counts(mask_from(pred), mask_from(gt));
          return py::make_tuple(c.tp, c.fp, c.fn, c.tn);
        },
        py::arg("pred"), py::arg("gt"), "Returns (tp, fp, fn, tn).");
  m.def("iou",
        [](std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
          return iou(ConfusionCounts{tp, fp, fn, 0});
        },
        py::arg("tp"), py::arg("fp"), py::arg("fn"));
  m.def("mean_iou", &mean_iou, py::arg("per_class"));
  m.def("fb_iou",
        [](const U8Array& pred, const U8Array& gt) { return fb_iou(mask_from(pred), mask_from(gt)); },
        py::arg("pred"), py::arg("gt"));
  m.def("evaluate",
        [](const U8Array& pred, const U8Array& gt, const std::string& class_id) {
          return report_to(evaluate_episode(mask_from(pred), mask_from(gt), class_id));
        },
        py::arg("pred"), py::arg("gt"), py::arg("class_id") = "0");

  m.def("synthetic_episode", &synthetic_episode, py::arg("seed"), py::arg("height") = 8,
        py::arg("width") = 8, py::arg("channels") = 8, py::arg("fg_fraction") = 0.25,
        py::arg("separation") = 8.0, py::arg("noise") = 1.0);
  m.def("generate_episode",
        [](std::uint64_t seed, const std::filesystem::path& out) {
          generate_synthetic_episode(seed, EpisodeSpec{}, out);
        },
        py::arg("seed"), py::arg("out"), "Writes a default synthetic episode directory.");
  m.def("run_match", &run_match_py, py::arg("episode"), py::arg("out"),
        py::arg("params") = std::filesystem::path{},
        py::arg("options") = std::map<std::string, std::string>{},
        "Runs the full pipeline and writes the output directory. Options use the "
        "config-file keys, e.g. {'ot_mode': 'full', 'mfm': 'off'}.");
}
