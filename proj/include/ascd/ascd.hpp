#pragma once

// Everything at once, for tools and samples.

#include "ascd/decoder.hpp"
#include "ascd/error.hpp"
#include "ascd/eval.hpp"
#include "ascd/model.hpp"
#include "ascd/numerics.hpp"
#include "ascd/planted.hpp"
#include "ascd/profiler.hpp"
#include "ascd/serialization.hpp"
#include "ascd/steering.hpp"
#include "ascd/synth/metrics.hpp"
#include "ascd/synth/text_prior.hpp"
#include "ascd/synth/world.hpp"
#include "ascd/tensor_io.hpp"
#include "ascd/types.hpp"
