#pragma once

// mpvoc: a desk-scale laboratory for joint magnitude-phase estimation in
// time-frequency neural vocoders.

#include "mpvoc/autodiff.hpp"
#include "mpvoc/checkpoint.hpp"
#include "mpvoc/config.hpp"
#include "mpvoc/corpus.hpp"
#include "mpvoc/fft.hpp"
#include "mpvoc/losses.hpp"
#include "mpvoc/matrix.hpp"
#include "mpvoc/mel.hpp"
#include "mpvoc/metrics.hpp"
#include "mpvoc/model.hpp"
#include "mpvoc/optim.hpp"
#include "mpvoc/pgm.hpp"
#include "mpvoc/rng.hpp"
#include "mpvoc/signal.hpp"
#include "mpvoc/tensor.hpp"
#include "mpvoc/threading.hpp"
#include "mpvoc/trainer.hpp"
#include "mpvoc/wav.hpp"

namespace mpvoc {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace mpvoc
