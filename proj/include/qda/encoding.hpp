// encoding.hpp
// Uniform grid discretization of continuous states onto register basis indices.
//
// Each of the d coordinates gets m bits. Coordinate i occupies bits
// [i*m, (i+1)*m) of the basis index, so dimension 0 sits in the
// least-significant bits. Grids include both endpoints.

#pragma once

#include <Eigen/Dense>
#include <functional>

#include "qda/statevector.hpp"

namespace qda {

struct EncodingScheme {
  int dims = 0;
  int bits_per_dim = 0;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  int total_qubits() const { return dims * bits_per_dim; }
  BasisIndex levels() const { return BasisIndex{1} << bits_per_dim; }
  BasisIndex size() const { return BasisIndex{1} << total_qubits(); }
  // Grid spacing per coordinate.
  Eigen::VectorXd cell_width() const;
};

// Validates bounds and capacity; throws PreconditionError / CapacityError.
EncodingScheme make_scheme(int bits_per_dim, Eigen::VectorXd lower, Eigen::VectorXd upper);

// Clamps, quantizes to the nearest grid point (ties to the lower point) and packs.
BasisIndex encode(const Eigen::VectorXd& x, const EncodingScheme& scheme);
Eigen::VectorXd decode(BasisIndex index, const EncodingScheme& scheme);

using StateFunction = std::function<double(const Eigen::VectorXd&)>;

// values[k] = cost(decode(k)) over the whole grid.
DiagonalObservable tabulate_cost(const EncodingScheme& scheme, const StateFunction& cost);

}  // namespace qda
