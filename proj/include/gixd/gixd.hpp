#pragma once

#include "gixd/benchmark.hpp"
#include "gixd/core.hpp"
#include "gixd/crystallography.hpp"
#include "gixd/detect.hpp"
#include "gixd/enhance.hpp"
#include "gixd/geometry.hpp"
#include "gixd/io.hpp"
#include "gixd/lbfgsb.hpp"
#include "gixd/lm.hpp"
#include "gixd/perlin.hpp"
#include "gixd/pipeline.hpp"
#include "gixd/postprocess.hpp"
#include "gixd/random.hpp"
#include "gixd/refine.hpp"
#include "gixd/report.hpp"
#include "gixd/simulate.hpp"
#include "gixd/twin.hpp"
