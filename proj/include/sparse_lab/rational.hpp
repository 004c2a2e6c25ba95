#pragma once

#include <boost/multiprecision/cpp_int.hpp>

#include <string>
#include <vector>

namespace sparse_lab {

using Rational = boost::multiprecision::cpp_rational;
using BigInt = boost::multiprecision::cpp_int;

/// Exact rational value of a finite double.
Rational rational_from_double(double x);

double to_double(const Rational& r);

std::string to_string(const Rational& r);

/// Cumulants c_1..c_kmax of a law given by its raw moments m_1..m_kmax
/// (index 0 of both vectors is unused). Exact.
std::vector<Rational> cumulants_from_moments(const std::vector<Rational>& moments);

}  // namespace sparse_lab
