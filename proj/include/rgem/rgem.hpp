// Umbrella header.
#pragma once

#include "rgem/numkernel.hpp"
#include "rgem/corpus.hpp"
#include "rgem/lstm.hpp"
#include "rgem/conv.hpp"
#include "rgem/optimizer.hpp"
#include "rgem/parallel.hpp"
#include "rgem/tvembed.hpp"
#include "rgem/model.hpp"
#include "rgem/trainer.hpp"
#include "rgem/gradcheck.hpp"
#include "rgem/serialize.hpp"
