/*
 * Copyright 2026 The mtldyn Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef MTLDYN_ERRORS_HPP
#define MTLDYN_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace mtldyn {

struct InvalidInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct InvalidSpec : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RangeError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct ConsistencyError : std::logic_error {
  using std::logic_error::logic_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown by the trainers when the loss leaves the finite range.
struct DivergenceError : std::runtime_error {
  DivergenceError(long step, double loss)
      : std::runtime_error("training diverged at step " + std::to_string(step) +
                           " (loss " + std::to_string(loss) + ")"),
        step(step), loss(loss) {}
  long step;
  double loss;
};

}  // namespace mtldyn

#endif
