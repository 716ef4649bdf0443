#pragma once

// Umbrella header. The CLI front end (cli.hpp) is not included; it pulls in CLI11.

#include "compress.hpp"
#include "config.hpp"
#include "crossbar.hpp"
#include "data_io.hpp"
#include "dataset.hpp"
#include "device.hpp"
#include "error.hpp"
#include "experiment.hpp"
#include "nn.hpp"
#include "quantizer.hpp"
#include "random.hpp"
#include "repair.hpp"
#include "serialize.hpp"
#include "tensor.hpp"
