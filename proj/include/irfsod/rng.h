// Copyright 2026 The irfsod Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#ifndef IRFSOD_RNG_H_
#define IRFSOD_RNG_H_

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace irfsod {

// Seeded random stream. The engine is std::mt19937_64 whose output sequence
// is fixed by the standard; the distribution helpers below are written out so
// that results do not depend on the standard library's distribution code.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  // Independent child stream for (seed, index), e.g. the i-th episode.
  static Rng derive(uint64_t seed, uint64_t index);

  uint64_t next() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be positive.
  size_t index(size_t n);

  // Standard normal via Box-Muller.
  double normal();

  // k distinct indices drawn uniformly from [0, n), in draw order.
  std::vector<size_t> choose(size_t n, size_t k);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace irfsod

#endif  // IRFSOD_RNG_H_
