#pragma once

#include "fmital/annotations.hpp"
#include "fmital/boundary_head.hpp"
#include "fmital/config.hpp"
#include "fmital/dataset.hpp"
#include "fmital/episode.hpp"
#include "fmital/error.hpp"
#include "fmital/evaluation.hpp"
#include "fmital/experiment.hpp"
#include "fmital/feature_io.hpp"
#include "fmital/localizer.hpp"
#include "fmital/numerics.hpp"
#include "fmital/pipeline.hpp"
#include "fmital/rng.hpp"
#include "fmital/scr_transformer.hpp"
#include "fmital/supervision.hpp"
