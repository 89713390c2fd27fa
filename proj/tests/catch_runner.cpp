// Single translation unit for the amalgamated Catch2 framework (provides
// its own main).
#include <catch2/catch_amalgamated.cpp>
