#pragma once

// Generated from data/peoe_params.txt; tests keep the two in sync.

namespace chemimg::detail {

inline constexpr const char* kPeoeParamsAsset = R"PEOE(
# PEOE (Gasteiger-Marsili) electronegativity coefficients, asset version 1
# chi(q) = a + b*q + c*q^2
# element hyb a b c      hyb is sp, sp2, sp3 or * (any)
H   *    7.17   6.24  -0.56
C   sp3  7.98   9.18   1.88
C   sp2  8.79   9.32   1.51
C   sp  10.39   9.45   0.73
N   sp3 11.54  10.82   1.36
N   sp2 12.87  11.15   0.85
N   sp  15.68  11.70  -0.27
O   sp3 14.18  12.92   1.39
O   sp2 17.07  13.79   0.47
F   sp3 14.66  13.85   2.31
Cl  sp3 11.00   9.69   1.35
Br  sp3 10.08   8.47   1.16
I   sp3  9.90   7.96   0.96
S   sp3 10.14   9.13   1.38
S   sp2 10.88   9.49   1.33
P   sp3  8.90   8.24   0.96
P   sp2  9.665  8.530  0.735
B   sp3  5.980  6.820  1.605
B   sp2  6.420  6.807  1.322
Si  sp3  7.300  6.567  0.657
Si  sp2  7.905  6.748  0.443
)PEOE";

}  // namespace chemimg::detail
