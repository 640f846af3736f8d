#pragma once

#include "gdahin/alignment.hpp"
#include "gdahin/checkpoint.hpp"
#include "gdahin/cli.hpp"
#include "gdahin/completion.hpp"
#include "gdahin/dataset_io.hpp"
#include "gdahin/graph.hpp"
#include "gdahin/hgt.hpp"
#include "gdahin/laplacian.hpp"
#include "gdahin/report.hpp"
#include "gdahin/synthetic.hpp"
#include "gdahin/trainer.hpp"
