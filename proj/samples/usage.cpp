// Library walk-through on a small synthetic scene.
#include <iostream>

#include "onramp/merge_extractor.hpp"
#include "onramp/nhmm/selection.hpp"
#include "onramp/segmenter.hpp"
#include "onramp/synthetic.hpp"
#include "onramp/tskm/kmeans.hpp"

int main() {
  using namespace onramp;
  synth::SceneLayout layout;
  const auto scene = synth::gen_merging_scene(layout, synth::SceneSpec{6, 0, 0.0}, 7);
  const auto ex = extract_events(scene.scene, ExtractionConfig{});
  std::cout << ex.events.size() << " events extracted\n";

  nhmm::FitConfig fc;
  fc.iterations = 400;
  fc.burn_in = 200;
  fc.thinning = 1;
  std::vector<Primitive> prims;
  for (const auto& e : ex.events) {
    fc.seed = derive_seed(1, e.event_id);
    const auto samples = nhmm::gibbs_fit(e, 2, fc);
    const auto q = nhmm::decode_states(samples).front();
    auto kept = filter_min_duration(segment(e, q), 5).retained;
    std::cout << e.event_id << ": " << e.length() << " frames, " << kept.size() << " primitives\n";
    for (auto& p : kept) prims.push_back(std::move(p));
  }
  if (prims.size() < 2) return 0;

  std::vector<tskm::Series> data;
  for (const auto& p : prims) data.push_back(p.series);
  const auto scaler = tskm::FeatureScaler::fit(data);
  for (auto& s : data) s = scaler.apply(s);
  const auto model = tskm::fit_tskm(data, 2, 3);
  for (const auto& s : tskm::summarize_patterns(model, data, scaler))
    std::cout << "pattern " << s.cluster + 1 << ": " << s.count << " primitives, mean v_y " << s.signature[1] << '\n';
}
