#pragma once

#include <string>
#include <vector>

#include "rsvp/model/layers.hpp"

namespace rsvp::model {

// Intent head on pooled embeddings: linear, tanh, linear to |C| logits.
template <typename T>
struct IntentClassifier {
  Linear<T> hidden;
  Linear<T> output;

  IntentClassifier() = default;
  IntentClassifier(std::size_t in, std::size_t n_classes, num::Rng& rng)
      : hidden("classifier.hidden", in, in, rng), output("classifier.output", in, n_classes, rng) {}

  std::size_t classes() const { return output.bias.size(); }

  // q: batch x in -> batch x |C|.
  num::Tensor<T> logits(const num::Tensor<T>& q) const { return output(num::tanh(hidden(q))); }
  num::Tensor<T> probabilities(const num::Tensor<T>& q) const { return num::softmax(logits(q), 1); }

  template <typename Self, typename F>
  static void visit(Self& self, F&& f) {
    Linear<T>::visit(self.hidden, f);
    Linear<T>::visit(self.output, f);
  }

  std::vector<num::Parameter<T>*> parameters() {
    std::vector<num::Parameter<T>*> out;
    visit(*this, [&](num::Parameter<T>& p) { out.push_back(&p); });
    return out;
  }
  std::vector<const num::Parameter<T>*> parameters() const {
    std::vector<const num::Parameter<T>*> out;
    visit(*this, [&](const num::Parameter<T>& p) { out.push_back(&p); });
    return out;
  }
};

}  // namespace rsvp::model
