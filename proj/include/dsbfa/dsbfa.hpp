#ifndef DSBFA_DSBFA_HPP
#define DSBFA_DSBFA_HPP

#include "dsbfa/error.hpp"
#include "dsbfa/random.hpp"
#include "dsbfa/cp_kernel.hpp"
#include "dsbfa/dataset.hpp"
#include "dsbfa/factor_model.hpp"
#include "dsbfa/gibbs.hpp"
#include "dsbfa/io.hpp"
#include "dsbfa/stem.hpp"
#include "dsbfa/alignment.hpp"
#include "dsbfa/simulate.hpp"
#include "dsbfa/preprocess.hpp"
#include "dsbfa/tuning.hpp"

#endif  // DSBFA_DSBFA_HPP
