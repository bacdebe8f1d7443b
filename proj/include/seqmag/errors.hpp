#pragma once

#include <stdexcept>
#include <string>

namespace seqmag {

/// Base class of every exception thrown by the library.
class error : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

/// Invalid arguments or parameters violating a type invariant.
class invalid_argument_error : public error
{
public:
  using error::error;
};

/// The requested problem exceeds a configured size limit (sites, n_seq, ...).
class capacity_error : public error
{
public:
  using error::error;
};

/// Operand dimensions do not agree.
class dimension_error : public error
{
public:
  using error::error;
};

/// A numerical routine failed (e.g. eigensolver non-convergence).
class numeric_error : public error
{
public:
  using error::error;
};

/// Collapse requested on an outcome whose probability is at or below the floor.
class degenerate_outcome_error : public error
{
public:
  using error::error;
};

/// Every grid point of a posterior carries zero likelihood.
class degenerate_posterior_error : public error
{
public:
  using error::error;
};

/// A time budget too small to afford a single protocol repetition.
class budget_error : public error
{
public:
  using error::error;
};

} // namespace seqmag
