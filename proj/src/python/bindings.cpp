#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "rsvp/cli/cli.hpp"
#include "rsvp/cli/gen_data.hpp"
#include "rsvp/eval/metrics.hpp"
#include "rsvp/objectives/losses.hpp"
#include "rsvp/text/preprocess.hpp"
#include "rsvp/trainer/runner.hpp"

namespace py = pybind11;
using namespace rsvp;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

num::Tensor<double> to_tensor(const Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return num::Tensor<double>({rows, cols}, std::vector<double>(a.data(), a.data() + a.size()));
}

std::vector<eval::Prediction> to_predictions(const Array& scores, const std::vector<int>& gold) {
  const auto t = to_tensor(scores);
  const auto cols = t.shape()[1];
  if (gold.size() != t.shape()[0]) throw std::invalid_argument("gold length does not match score rows");
  std::vector<eval::Prediction> out(gold.size());
  for (std::size_t i = 0; i < gold.size(); ++i) {
    out[i].scores.assign(t.data().begin() + static_cast<std::ptrdiff_t>(i * cols),
                         t.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * cols));
    out[i].gold = gold[i];
  }
  return out;
}

py::dict record_dict(const text::DialogueRecord& r) {
  py::dict d;
  d["id"] = r.id;
  d["utterance_turns"] = r.utterance_turns;
  d["response_turns"] = r.response_turns;
  d["intents"] = r.intents;
  return d;
}

text::DialogueRecord record_from(const py::dict& d) {
  text::DialogueRecord r;
  r.id = d["id"].cast<std::string>();
  r.utterance_turns = d["utterance_turns"].cast<std::vector<std::string>>();
  if (d.contains("response_turns")) r.response_turns = d["response_turns"].cast<std::vector<std::string>>();
  if (d.contains("intents")) r.intents = d["intents"].cast<std::vector<std::string>>();
  return r;
}

train::StageConfig config_from(const py::dict& overrides) {
  train::StageConfig cfg;
  for (const auto& [k, v] : overrides) train::set_value(cfg, k.cast<std::string>(), py::str(v).cast<std::string>());
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_rsvp, m) {
  m.doc() = "RSVP intent detection core";

  m.def("preprocess", &text::preprocess);
  m.def("tokenize", [](const std::string& s) {
    return text::tokenize(text::preprocess(s), text::TokenizerMode::whitespace);
  });

  m.def("default_config", [] {
    py::dict d;
    for (const auto& [k, v] : train::to_key_values(train::StageConfig{})) d[py::str(k)] = v;
    return d;
  });
  m.def("render_config", [](const py::dict& overrides) { return train::render_config(config_from(overrides)); });

  m.def(
      "gen_data",
      [](std::size_t n_intents, std::size_t n_per_intent, const std::string& style, std::uint64_t seed,
         double multi_rate) {
        cli::GenDataOptions g{n_intents, n_per_intent, cli::parse_vocab_style(style), seed, multi_rate};
        py::list out;
        for (const auto& r : cli::gen_data(g)) out.append(record_dict(r));
        return out;
      },
      py::arg("n_intents") = 5, py::arg("n_per_intent") = 40, py::arg("style") = "basic", py::arg("seed") = 7,
      py::arg("multi_rate") = 0.0);

  m.def(
      "contrastive_loss",
      [](const Array& a, const Array& b, double tau) {
        return obj::contrastive_loss(to_tensor(a), to_tensor(b), tau).item();
      },
      py::arg("anchors"), py::arg("candidates"), py::arg("tau"));
  m.def(
      "classification_loss",
      [](const Array& probs, const std::vector<int>& labels) {
        return obj::classification_loss(to_tensor(probs), labels).item();
      },
      py::arg("probs"), py::arg("labels"));
  m.def(
      "generation_loss",
      [](const Array& logits, const std::vector<int>& targets) {
        return obj::generation_loss(to_tensor(logits), targets).item();
      },
      py::arg("logits"), py::arg("targets"));

  m.def(
      "accuracy", [](const Array& s, const std::vector<int>& g) { return eval::accuracy(to_predictions(s, g)); },
      py::arg("scores"), py::arg("gold"));
  m.def(
      "mrr_at_k",
      [](const Array& s, const std::vector<int>& g, int k) { return eval::mrr_at_k(to_predictions(s, g), k); },
      py::arg("scores"), py::arg("gold"), py::arg("k"));

  m.def(
      "run_rsvp",
      [](const py::list& records, const py::dict& overrides, const std::string& variant) {
        std::vector<text::DialogueRecord> recs;
        for (const auto& r : records) recs.push_back(record_from(r.cast<py::dict>()));
        const auto cfg = config_from(overrides);
        train::RunOptions opts;
        opts.variant = variant;
        std::string json;
        {
          py::gil_scoped_release release;
          json = train::report_json(train::run_rsvp(recs, cfg, opts));
        }
        return json;
      },
      py::arg("records"), py::arg("config") = py::dict(), py::arg("variant") = "rsvp",
      "Runs the pipeline and returns the report as JSON text.");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run_cli(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
