#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "unis/bmkd_tree.hpp"
#include "unis/errors.hpp"
#include "unis/partition.hpp"
#include "unis/quantile_model.hpp"
#include "unis/search.hpp"
#include "unis/strategy_selector.hpp"

namespace py = pybind11;
using namespace unis;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

PointSet to_points(const Array& a) {
  if (a.ndim() != 2) throw UsageError("points must be a two-dimensional array");
  const auto n = static_cast<std::size_t>(a.shape(0));
  const auto d = static_cast<std::size_t>(a.shape(1));
  if (d == 0) throw UsageError("points need at least one coordinate");
  std::vector<double> coords(a.data(), a.data() + n * d);
  return PointSet(d, std::move(coords));
}

std::vector<double> to_query(const Array& q, std::size_t d) {
  if (q.ndim() != 1 || static_cast<std::size_t>(q.shape(0)) != d) {
    throw UsageError("query must be a vector of length " + std::to_string(d));
  }
  return {q.data(), q.data() + d};
}

py::tuple hits_to_arrays(const std::vector<Hit>& hits) {
  py::array_t<std::uint64_t> ids(static_cast<py::ssize_t>(hits.size()));
  py::array_t<double> dists(static_cast<py::ssize_t>(hits.size()));
  auto iv = ids.mutable_unchecked<1>();
  auto dv = dists.mutable_unchecked<1>();
  for (std::size_t i = 0; i < hits.size(); ++i) {
    iv(static_cast<py::ssize_t>(i)) = hits[i].id;
    dv(static_cast<py::ssize_t>(i)) = hits[i].distance;
  }
  return py::make_tuple(ids, dists);
}

py::dict insert_report(const InsertReport& r) {
  py::list rebuilds;
  for (const auto& e : r.rebuilds) {
    py::dict ev;
    ev["depth"] = e.depth;
    ev["degree"] = e.degree;
    ev["offending_child"] = e.offending_child;
    ev["i0"] = e.i0;
    ev["i1"] = e.i1;
    ev["full_range"] = e.full_range;
    ev["selective_points"] = e.selective_points;
    ev["scapegoat_points"] = e.scapegoat_points;
    rebuilds.append(ev);
  }
  py::dict out;
  out["inserted"] = r.inserted;
  out["leaf_splits"] = r.leaf_splits;
  out["rebuilds"] = rebuilds;
  return out;
}

}  // namespace

PYBIND11_MODULE(_unis, m) {
  m.doc() = "Learned multi-way kd-tree with exact kNN and radius search";

  py::enum_<PivotMethod>(m, "PivotMethod")
      .value("predicted", PivotMethod::predicted)
      .value("exact_sort", PivotMethod::exact_sort);

  py::class_<TreeConfig>(m, "TreeConfig")
      .def(py::init<>())
      .def_readwrite("c", &TreeConfig::c)
      .def_readwrite("delta", &TreeConfig::delta)
      .def_readwrite("l", &TreeConfig::l)
      .def_readwrite("kappa", &TreeConfig::kappa)
      .def_readwrite("omega", &TreeConfig::omega)
      .def_readwrite("t", &TreeConfig::t)
      .def_readwrite("t_auto", &TreeConfig::t_auto)
      .def_readwrite("t_max", &TreeConfig::t_max)
      .def_readwrite("seed", &TreeConfig::seed)
      .def_readwrite("pivot_method", &TreeConfig::pivot_method)
      .def("validate", &TreeConfig::validate);

  py::class_<BmkdTree>(m, "Tree")
      .def_static(
          "build", [](const Array& points, const TreeConfig& cfg) { return BmkdTree::build(to_points(points), cfg); },
          py::arg("points"), py::arg("config") = TreeConfig{})
      .def_static("load", &BmkdTree::load_file, py::arg("path"))
      .def("save", &BmkdTree::save_file, py::arg("path"))
      .def(
          "insert",
          [](BmkdTree& tree, const Array& points) {
            const PointSet batch = to_points(points);
            if (batch.dim() != tree.dim()) throw UsageError("insert: dimension mismatch");
            return insert_report(tree.insert(batch));
          },
          py::arg("points"))
      .def(
          "knn",
          [](const BmkdTree& tree, const Array& q, std::size_t k, const std::string& strategy) {
            const auto query = to_query(q, tree.dim());
            return hits_to_arrays(knn(tree, query, k, parse_strategy(strategy)).hits);
          },
          py::arg("q"), py::arg("k"), py::arg("strategy") = "r_dfs",
          "Returns (ids, distances) ascending by distance, ties by id.")
      .def(
          "radius",
          [](const BmkdTree& tree, const Array& q, double r, const std::string& strategy) {
            const auto query = to_query(q, tree.dim());
            return hits_to_arrays(radius_search(tree, query, r, parse_strategy(strategy)).hits);
          },
          py::arg("q"), py::arg("r"), py::arg("strategy") = "r_bfs")
      .def(
          "audit",
          [](const BmkdTree& tree) {
            const AuditReport a = audit(tree);
            py::dict out;
            out["ok"] = a.ok();
            out["violations"] = a.violations;
            out["nodes"] = a.nodes;
            out["leaves"] = a.leaves;
            return out;
          })
      .def(
          "leaf_path", [](const BmkdTree& tree, const Array& q) { return tree.leaf_path(to_query(q, tree.dim())); },
          py::arg("q"))
      .def(
          "index_metric",
          [](const BmkdTree& tree, const Array& a, const Array& b) {
            return index_metric(tree, to_query(a, tree.dim()), to_query(b, tree.dim()));
          },
          py::arg("a"), py::arg("b"))
      .def("aepl", [](const BmkdTree& tree) { return aepl_empirical(tree); })
      .def_property_readonly("size", &BmkdTree::size)
      .def_property_readonly("dim", &BmkdTree::dim)
      .def_property_readonly("t", &BmkdTree::t)
      .def_property_readonly("height", &BmkdTree::height)
      .def("__len__", &BmkdTree::size);

  py::class_<CdfModel>(m, "CdfModel")
      .def("predict", &CdfModel::predict, py::arg("x"))
      .def_property_readonly("alpha", [](const CdfModel& c) { return c.root().alpha; })
      .def_property_readonly("beta", [](const CdfModel& c) { return c.root().beta; });

  m.def(
      "cdf_train",
      [](const Array& values, double delta, std::size_t l, std::uint64_t seed) {
        if (values.ndim() != 1) throw UsageError("values must be one-dimensional");
        return cdf_train(std::span<const double>(values.data(), static_cast<std::size_t>(values.shape(0))), delta, l,
                         seed);
      },
      py::arg("values"), py::arg("delta") = 0.01, py::arg("l") = 100, py::arg("seed") = 42);

  m.def(
      "linear_knn",
      [](const Array& points, const Array& q, std::size_t k) {
        const PointSet pts = to_points(points);
        return hits_to_arrays(linear_knn(pts, to_query(q, pts.dim()), k));
      },
      py::arg("points"), py::arg("q"), py::arg("k"));
  m.def(
      "linear_radius",
      [](const Array& points, const Array& q, double r) {
        const PointSet pts = to_points(points);
        return hits_to_arrays(linear_radius(pts, to_query(q, pts.dim()), r));
      },
      py::arg("points"), py::arg("q"), py::arg("r"));

  m.def("objective_h", &objective_h, py::arg("n"), py::arg("c"), py::arg("t"));
  m.def(
      "select_t",
      [](std::uint64_t n, std::uint64_t c, std::uint64_t t_max, std::uint64_t seed) {
        const PartitionChoice p = select_t(n, c, t_max, AnnealParams{}, seed);
        return py::make_tuple(p.t, p.objective);
      },
      py::arg("n"), py::arg("c"), py::arg("t_max") = 64, py::arg("seed") = 42);
}
