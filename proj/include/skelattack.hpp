#pragma once

#include "skelattack/errors.hpp"
#include "skelattack/image.hpp"
#include "skelattack/png_io.hpp"
#include "skelattack/region.hpp"
#include "skelattack/metrics.hpp"
#include "skelattack/atlas.hpp"
#include "skelattack/util.hpp"
#include "skelattack/oracle.hpp"
#include "skelattack/external_oracle.hpp"
#include "skelattack/optimizers.hpp"
#include "skelattack/attack.hpp"
#include "skelattack/dataset.hpp"
#include "skelattack/trace_io.hpp"
#include "skelattack/config.hpp"
#include "skelattack/report.hpp"
#include "skelattack/commands.hpp"
