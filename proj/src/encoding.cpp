#include "qda/encoding.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "qda/errors.hpp"

namespace qda {

Eigen::VectorXd EncodingScheme::cell_width() const {
  return (upper - lower) / static_cast<double>(levels() - 1);
}

EncodingScheme make_scheme(int bits_per_dim, Eigen::VectorXd lower, Eigen::VectorXd upper) {
  if (lower.size() != upper.size()) throw ShapeError("encoding bounds have different lengths");
  if (lower.size() < 1) throw PreconditionError("encoding needs at least one dimension");
  if (bits_per_dim < 1) throw PreconditionError("bits_per_dim must be >= 1");
  for (Eigen::Index i = 0; i < lower.size(); ++i)
    if (!(upper[i] > lower[i]) || !std::isfinite(lower[i]) || !std::isfinite(upper[i]))
      throw PreconditionError("encoding bound " + std::to_string(i) + " needs finite upper > lower");
  const auto dims = static_cast<int>(lower.size());
  if (dims * bits_per_dim > kMaxQubits)
    throw CapacityError("encoding needs " + std::to_string(dims * bits_per_dim) + " qubits, capacity is " +
                        std::to_string(kMaxQubits));
  return {dims, bits_per_dim, std::move(lower), std::move(upper)};
}

BasisIndex encode(const Eigen::VectorXd& x, const EncodingScheme& scheme) {
  if (x.size() != scheme.dims)
    throw ShapeError("encode: state has length " + std::to_string(x.size()) + ", scheme expects " +
                     std::to_string(scheme.dims));
  const double top = static_cast<double>(scheme.levels() - 1);
  BasisIndex index = 0;
  for (int i = 0; i < scheme.dims; ++i) {
    const double clamped = std::clamp(x[i], scheme.lower[i], scheme.upper[i]);
    const double cell = (clamped - scheme.lower[i]) * top / (scheme.upper[i] - scheme.lower[i]);
    // Round half down: ceil(c - 1/2) picks the lower neighbour on an exact tie.
    const double q = std::clamp(std::ceil(cell - 0.5), 0.0, top);
    index |= static_cast<BasisIndex>(q) << (i * scheme.bits_per_dim);
  }
  return index;
}

Eigen::VectorXd decode(BasisIndex index, const EncodingScheme& scheme) {
  if (index >= scheme.size())
    throw IndexError("decode: index " + std::to_string(index) + " out of range");
  const BasisIndex mask = scheme.levels() - 1;
  const double top = static_cast<double>(mask);
  Eigen::VectorXd x(scheme.dims);
  for (int i = 0; i < scheme.dims; ++i) {
    const auto cell = static_cast<double>((index >> (i * scheme.bits_per_dim)) & mask);
    x[i] = scheme.lower[i] + cell * (scheme.upper[i] - scheme.lower[i]) / top;
  }
  return x;
}

DiagonalObservable tabulate_cost(const EncodingScheme& scheme, const StateFunction& cost) {
  if (scheme.total_qubits() > kMaxQubits) throw CapacityError("tabulate_cost: grid exceeds capacity");
  const BasisIndex n = scheme.size();
  Eigen::VectorXd values(static_cast<Eigen::Index>(n));
  for (BasisIndex k = 0; k < n; ++k) values[static_cast<Eigen::Index>(k)] = cost(decode(k, scheme));
  return make_observable(std::move(values));
}

}  // namespace qda
