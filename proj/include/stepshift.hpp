#pragma once

#include "stepshift/calibration.hpp"
#include "stepshift/datagen.hpp"
#include "stepshift/detector.hpp"
#include "stepshift/evaluation.hpp"
#include "stepshift/isotonic.hpp"
#include "stepshift/normalization.hpp"
#include "stepshift/random.hpp"
#include "stepshift/series.hpp"
#include "stepshift/series_io.hpp"
#include "stepshift/split_scan.hpp"
