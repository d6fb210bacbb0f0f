#pragma once

#include "bpq/common.hpp"
#include "bpq/engine.hpp"
#include "bpq/evalbench.hpp"
#include "bpq/fbpq.hpp"
#include "bpq/hbpq.hpp"
#include "bpq/index_io.hpp"
#include "bpq/multi_index.hpp"
#include "bpq/multi_sequence.hpp"
#include "bpq/quantizer.hpp"
#include "bpq/serialize.hpp"
#include "bpq/vecio.hpp"
