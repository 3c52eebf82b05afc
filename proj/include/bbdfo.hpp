#pragma once

#include "bbdfo/attack.hpp"
#include "bbdfo/baseline.hpp"
#include "bbdfo/campaign.hpp"
#include "bbdfo/classifier.hpp"
#include "bbdfo/errors.hpp"
#include "bbdfo/lifting.hpp"
#include "bbdfo/loss.hpp"
#include "bbdfo/sampling.hpp"
#include "bbdfo/trust_region.hpp"
