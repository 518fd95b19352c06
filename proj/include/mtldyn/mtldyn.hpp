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


#ifndef MTLDYN_MTLDYN_HPP
#define MTLDYN_MTLDYN_HPP

#include "mtldyn/benefit.hpp"
#include "mtldyn/config.hpp"
#include "mtldyn/core.hpp"
#include "mtldyn/errors.hpp"
#include "mtldyn/experiment.hpp"
#include "mtldyn/gmatrix.hpp"
#include "mtldyn/student.hpp"
#include "mtldyn/sweep.hpp"
#include "mtldyn/tadynamics.hpp"
#include "mtldyn/teachergen.hpp"
#include "mtldyn/validate.hpp"

#endif
