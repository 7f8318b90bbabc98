#pragma once

#include "mxcomm/baselines.hpp"
#include "mxcomm/bitpack.hpp"
#include "mxcomm/codec.hpp"
#include "mxcomm/codec_spec.hpp"
#include "mxcomm/csv.hpp"
#include "mxcomm/error.hpp"
#include "mxcomm/formats.hpp"
#include "mxcomm/half.hpp"
#include "mxcomm/netbench.hpp"
#include "mxcomm/rtns.hpp"
#include "mxcomm/search.hpp"
#include "mxcomm/stats.hpp"
#include "mxcomm/tensor.hpp"
#include "mxcomm/tpsim.hpp"
#include "mxcomm/transport.hpp"
#include "mxcomm/wire.hpp"
