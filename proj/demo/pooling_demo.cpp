// Encodes one synthetic subject per class with every pooling method and prints
// how far apart the class encodings land. Order-blind methods collapse the
// grow and shrink classes onto each other; ARP keeps them apart.
//
// usage: pooling_demo [seed]

#include <cmath>
#include <cstdio>
#include <cstdlib>

#include "dase/arp.hpp"
#include "dase/synth.hpp"

int main(int argc, char** argv) {
  using namespace dase;
  synth::SynthSpec spec;
  spec.noise = 0.0;
  if (argc > 1) spec.seed = std::strtoull(argv[1], nullptr, 10);

  std::printf("%-11s %12s %12s %12s\n", "method", "grow-shrink", "grow-pulse", "shrink-pulse");
  for (auto m : kAllPoolingMethods) {
    std::vector<PlanarImage> enc;
    for (std::size_t c = 0; c < 3; ++c) {
      enc.push_back(encode(normalize_volume(synth::gen_synthetic_volume(spec, c, 0)), m, 7).payload);
    }
    auto dist = [&](std::size_t a, std::size_t b) {
      double s = 0.0;
      for (std::size_t i = 0; i < enc[a].values().size(); ++i) {
        const double d = enc[a].values()[i] - enc[b].values()[i];
        s += d * d;
      }
      return std::sqrt(s);
    };
    std::printf("%-11s %12.4f %12.4f %12.4f\n", std::string(to_string(m)).c_str(), dist(0, 1), dist(0, 2),
                dist(1, 2));
  }
}
