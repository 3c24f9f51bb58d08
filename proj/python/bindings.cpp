#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <string>
#include <vector>

#include "ulns/cli.hpp"
#include "ulns/error.hpp"
#include "ulns/geometry.hpp"
#include "ulns/model.hpp"
#include "ulns/probes.hpp"
#include "ulns/synthdata.hpp"
#include "ulns/theory.hpp"
#include "ulns/unlearn.hpp"

namespace py = pybind11;
using namespace ulns;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Labels = py::array_t<int, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
    if (a.ndim() != 2) throw Error(ErrorKind::ShapeError, "expected a 2-d array");
    const auto rows = static_cast<std::size_t>(a.shape(0)), cols = static_cast<std::size_t>(a.shape(1));
    return Matrix(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

py::array_t<double> to_array(const Matrix& m) {
    py::array_t<double> out({m.rows(), m.cols()});
    std::copy(m.flat().begin(), m.flat().end(), out.mutable_data());
    return out;
}

py::array_t<int> to_array(const std::vector<int>& v) {
    py::array_t<int> out(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

std::vector<int> to_labels(const Labels& y) {
    if (y.ndim() != 1) throw Error(ErrorKind::ShapeError, "expected a 1-d label array");
    return {y.data(), y.data() + y.shape(0)};
}

Dataset to_dataset(const Array& x, const Labels& y, int classes) {
    Dataset ds{to_matrix(x), to_labels(y), classes};
    ds.check();
    return ds;
}

py::object to_python(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

void apply_method_params(MethodParams& p, const py::dict& extra) {
    for (const auto& [key, value] : extra) {
        const auto name = key.cast<std::string>();
        if (name == "salun_threshold") p.salun_threshold = value.cast<double>();
        else if (name == "scrub_msteps") p.scrub_msteps = value.cast<int>();
        else if (name == "scrub_kd_temperature") p.scrub_kd_temperature = value.cast<double>();
        else if (name == "scrub_kd_weight") p.scrub_kd_weight = value.cast<double>();
        else if (name == "unsir_noise_steps") p.unsir_noise_steps = value.cast<int>();
        else if (name == "unsir_noise_lr") p.unsir_noise_lr = value.cast<double>();
        else if (name == "unsir_noise_samples") p.unsir_noise_samples = value.cast<std::size_t>();
        else if (name == "unsir_impair_epochs") p.unsir_impair_epochs = value.cast<int>();
        else if (name == "grad_clip") p.grad_clip = value.cast<double>();
        else if (name == "neggrad_retain_weight") p.neggrad_retain_weight = value.cast<double>();
        else throw Error(ErrorKind::InvalidConfig, "unknown method parameter '" + name + "'");
    }
}

ClassMeans means_from(const Array& features, const Labels& labels, int classes) {
    return class_means(FeatureSet{to_matrix(features), to_labels(labels)}, classes);
}

}  // namespace

PYBIND11_MODULE(_ulns, m) {
    m.doc() = "Synthetic class-unlearning experiments: data, MLP, unlearning methods, probes and geometry.";
    py::register_exception<Error>(m, "UlnsError", PyExc_RuntimeError);

    py::class_<MlpModel>(m, "Model")
        .def_property_readonly("input_dim", &MlpModel::input_dim)
        .def_property_readonly("feature_dim", &MlpModel::feature_dim)
        .def_property_readonly("class_count", &MlpModel::class_count)
        .def_property_readonly("parameter_count", [](const MlpModel& self) { return parameter_count(self); })
        .def_property_readonly("head_weight", [](const MlpModel& self) { return to_array(self.head.weight); })
        .def_property_readonly("head_bias", [](const MlpModel& self) { return self.head.bias; })
        .def(
            "forward",
            [](const MlpModel& self, const Array& x) {
                ForwardResult r = forward(self, to_matrix(x));
                return py::make_tuple(to_array(r.features), to_array(r.logits));
            },
            py::arg("x"), "Returns (features, logits).")
        .def(
            "predict", [](const MlpModel& self, const Array& x) { return to_array(argmax_rows(forward(self, to_matrix(x)).logits)); },
            py::arg("x"))
        .def("save", [](const MlpModel& self, const std::filesystem::path& p) { write_checkpoint(self, p); })
        .def_static("load", [](const std::filesystem::path& p) { return read_checkpoint(p); })
        .def(py::self == py::self);

    m.def(
        "make_mlp",
        [](std::size_t input_dim, const std::vector<std::size_t>& hidden, std::size_t classes, std::uint64_t seed) {
            return make_mlp(input_dim, hidden, classes, seed);
        },
        py::arg("input_dim"), py::arg("hidden") = std::vector<std::size_t>{64, 32}, py::arg("classes") = 10,
        py::arg("seed") = 0);

    m.def(
        "generate",
        [](int classes, std::size_t n_per_class, std::size_t input_dim, double mean_scale, double noise_sigma,
           std::uint64_t seed) {
            GaussianMixtureParams p{classes, n_per_class, input_dim, mean_scale, noise_sigma, seed};
            TrainTestData d = make_gaussian_mixture(p);
            py::dict out;
            out["x_train"] = to_array(d.train.inputs);
            out["y_train"] = to_array(d.train.labels);
            out["x_test"] = to_array(d.test.inputs);
            out["y_test"] = to_array(d.test.labels);
            return out;
        },
        py::arg("classes") = 10, py::arg("n_per_class") = 500, py::arg("input_dim") = 32, py::arg("mean_scale") = 4.0,
        py::arg("noise_sigma") = 1.0, py::arg("seed") = 0,
        "Gaussian blobs around a scaled simplex ETF; returns a dict of x/y train/test arrays.");

    m.def(
        "train",
        [](const MlpModel& model, const Array& x, const Labels& y, int epochs, std::size_t batch_size, double lr,
           double momentum, double weight_decay, std::uint64_t seed) {
            TrainConfig tc{epochs, batch_size, lr, momentum, weight_decay, seed, std::nullopt};
            const Dataset ds = to_dataset(x, y, static_cast<int>(model.class_count()));
            TrainResult r;
            {
                py::gil_scoped_release release;
                r = train(model, ds, tc);
            }
            std::vector<double> losses;
            for (const auto& rec : r.history) losses.push_back(rec.loss);
            return py::make_tuple(std::move(r.model), losses);
        },
        py::arg("model"), py::arg("x"), py::arg("y"), py::arg("epochs") = 50, py::arg("batch_size") = 128,
        py::arg("learning_rate") = 0.01, py::arg("momentum") = 0.9, py::arg("weight_decay") = 5e-4,
        py::arg("seed") = 0, "Mini-batch SGD with cross-entropy; returns (model, per-epoch losses).");

    m.def(
        "unlearn",
        [](const MlpModel& model, const Array& x, const Labels& y, const std::vector<int>& forget,
           const std::string& method, const std::string& scope, bool cmf, int epochs, double lr, double momentum,
           std::size_t batch_size, std::uint64_t seed, const py::kwargs& params) {
            UnlearnConfig cfg;
            cfg.method = parse_method(method);
            cfg.scope = parse_scope(scope);
            cfg.use_cmf = cmf;
            cfg.epochs = epochs;
            cfg.learning_rate = lr;
            cfg.momentum = momentum;
            cfg.batch_size = batch_size;
            cfg.seed = seed;
            apply_method_params(cfg.params, params);
            cfg.check();
            const Dataset ds = to_dataset(x, y, static_cast<int>(model.class_count()));
            const RetainForgetSplit split = split_retain_forget(ds, forget);
            py::gil_scoped_release release;
            return run_unlearning(model, split.retain, split.forget, split.spec, cfg).model;
        },
        py::arg("model"), py::arg("x"), py::arg("y"), py::arg("forget"), py::arg("method") = "random_label",
        py::arg("scope") = "full", py::arg("cmf") = false, py::arg("epochs") = 5, py::arg("learning_rate") = 0.01,
        py::arg("momentum") = 0.0, py::arg("batch_size") = 128, py::arg("seed") = 0,
        "Runs one unlearning method on the training set; extra keyword arguments set method parameters.");

    m.def(
        "evaluate",
        [](const MlpModel& model, const Array& x_train, const Labels& y_train, const Array& x_test,
           const Labels& y_test, const std::vector<int>& forget) {
            const int k = static_cast<int>(model.class_count());
            const Dataset train_set = to_dataset(x_train, y_train, k), test_set = to_dataset(x_test, y_test, k);
            const SplitSpec spec = make_split_spec(k, forget);
            EvalReport r;
            {
                py::gil_scoped_release release;
                r = evaluate_with_probe(model, train_set, test_set, spec);
            }
            nlohmann::json j = r;
            return to_python(j);
        },
        py::arg("model"), py::arg("x_train"), py::arg("y_train"), py::arg("x_test"), py::arg("y_test"),
        py::arg("forget"), "Output, probe and NCC accuracies plus NC1/NC3, as a dict.");

    m.def(
        "extract_features", [](const MlpModel& model, const Array& x) { return to_array(forward(model, to_matrix(x)).features); },
        py::arg("model"), py::arg("x"));

    m.def(
        "simplex_etf",
        [](std::size_t classes, std::size_t dim, std::uint64_t seed) {
            return to_array(simplex_etf(classes, dim, seed).directions);
        },
        py::arg("classes"), py::arg("dim"), py::arg("seed") = kDefaultEtfSeed);

    m.def(
        "class_means",
        [](const Array& features, const Labels& labels, int classes) {
            ClassMeans cm = means_from(features, labels, classes);
            return py::make_tuple(to_array(cm.mu), cm.mu_global);
        },
        py::arg("features"), py::arg("labels"), py::arg("classes"), "Returns (per-class means, unweighted global mean).");

    m.def(
        "nc3_per_class",
        [](const Array& head_weight, const Array& features, const Labels& labels) {
            const Matrix w = to_matrix(head_weight);
            LinearHead head{w, std::vector<double>(w.rows(), 0.0)};
            return nc3_per_class(head, means_from(features, labels, static_cast<int>(w.rows())));
        },
        py::arg("head_weight"), py::arg("features"), py::arg("labels"));

    m.def(
        "ncc_predict",
        [](const Array& features, const Array& train_features, const Labels& train_labels, int classes) {
            return to_array(ncc_predict(to_matrix(features), means_from(train_features, train_labels, classes)));
        },
        py::arg("features"), py::arg("train_features"), py::arg("train_labels"), py::arg("classes"));

    m.def(
        "certify_last_layer",
        [](std::size_t classes, std::size_t dim, std::size_t forget_class, double lambda_w, double tol,
           double family_tol) {
            const TheoryInstance inst = make_theory_instance(classes, dim == 0 ? classes : dim, forget_class, lambda_w);
            LastLayerSolution sol;
            {
                py::gil_scoped_release release;
                sol = optimize_last_layer(inst, {});
            }
            nlohmann::json j{{"iterations", sol.iterations},
                             {"grad_norm", sol.grad_norm},
                             {"final_loss", sol.final_loss},
                             {"flip_structure", certify_flip_structure(sol.weights, inst, tol)},
                             {"logit_families", certify_logit_families(sol.weights, inst, family_tol)}};
            py::dict out = to_python(j);
            out["weights"] = to_array(sol.weights);
            return out;
        },
        py::arg("classes"), py::arg("dim") = 0, py::arg("forget_class") = 0, py::arg("lambda_w") = 0.1,
        py::arg("tol") = 1e-3, py::arg("family_tol") = 1e-4,
        "Minimises the regularised last-layer NegGrad objective from the aligned head and certifies its structure.");

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            std::vector<const char*> argv{"ulns"};
            for (const auto& a : args) argv.push_back(a.c_str());
            py::gil_scoped_release release;
            return cli::run(static_cast<int>(argv.size()), argv.data());
        },
        py::arg("args"), "Runs the command-line tool in-process and returns its exit code.");

    py::tuple methods(6);
    const UnlearnMethod all[] = {UnlearnMethod::retain_ft, UnlearnMethod::neggrad_plus, UnlearnMethod::random_label,
                                 UnlearnMethod::salun,     UnlearnMethod::scrub,        UnlearnMethod::unsir};
    for (std::size_t i = 0; i < 6; ++i) methods[i] = std::string(method_name(all[i]));
    m.attr("METHODS") = methods;
}
