#include "catch_amalgamated.hpp"

#include "cfl/cfl.hpp"
