#pragma once

#include "memex/error.hpp"
#include "memex/core.hpp"
#include "memex/random.hpp"
#include "memex/numeric.hpp"
#include "memex/parallel.hpp"
#include "memex/predictor.hpp"
#include "memex/samplers.hpp"
#include "memex/toymodel.hpp"
#include "memex/engine.hpp"
#include "memex/extraction.hpp"
#include "memex/oracle.hpp"
#include "memex/pii.hpp"
#include "memex/protocol.hpp"
#include "memex/modelclient.hpp"
#include "memex/stub_server.hpp"
#include "memex/synth.hpp"
#include "memex/config.hpp"
#include "memex/commands.hpp"
