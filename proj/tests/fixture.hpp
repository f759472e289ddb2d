#pragma once

#include "dtgba/gfm.hpp"
#include "dtgba/synthetic.hpp"
#include "dtgba/text_encoder.hpp"

#include <memory>
#include <vector>

namespace dtgba::testkit {

/// 200-node, 4-class synthetic graph with a pretrained frozen GFM. Built once
/// per process.
struct Fixture {
  SyntheticTag tag;
  std::shared_ptr<const TextEncoder> encoder;
  std::unique_ptr<FrozenGfm> gfm;
  std::vector<LabelDescription> labels;
};

inline const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture out;
    out.tag = make_synthetic_tag(SyntheticTagConfig{});
    auto encoder = std::make_shared<HashingTextEncoder>(384);
    cache_attributes(out.tag.graph, *encoder);
    out.encoder = encoder;
    out.gfm = std::make_unique<FrozenGfm>(pretrain_gfm(out.tag.graph, encoder, PretrainConfig{}, 1));
    out.labels = make_label_descriptions(out.tag.labels);
    return out;
  }();
  return f;
}

}  // namespace dtgba::testkit
