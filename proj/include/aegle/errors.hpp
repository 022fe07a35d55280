#pragma once

#include <stdexcept>
#include <string>

namespace aegle {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
public:
  using Error::Error;
};

// clinical_state
class FrozenStateError : public Error {
public:
  using Error::Error;
};
class UnknownFieldError : public Error {
public:
  using Error::Error;
};
class IllegalTransitionError : public Error {
public:
  using Error::Error;
};
class AlreadyFrozenError : public Error {
public:
  using Error::Error;
};
class StageError : public Error {
public:
  using Error::Error;
};
class EmptyDiagnosisError : public Error {
public:
  using Error::Error;
};

/// Stage II produced no diagnostic hypothesis to reconcile.
class EmptyReconciliationError : public Error {
public:
  using Error::Error;
};

// model_gateway
class BackendError : public Error {
public:
  using Error::Error;
};
class NetworkError : public BackendError {
public:
  using BackendError::BackendError;
};
class AuthError : public BackendError {
public:
  using BackendError::BackendError;
};
class ScriptMissError : public BackendError {
public:
  using BackendError::BackendError;
};
class ReplayMissError : public BackendError {
public:
  using BackendError::BackendError;
};
class MissingPlaceholderError : public Error {
public:
  using Error::Error;
};
class UnknownRoleTagError : public Error {
public:
  using Error::Error;
};

// evaluation
class MissingScoreError : public Error {
public:
  using Error::Error;
};
class UndefinedCorrelationError : public Error {
public:
  using Error::Error;
};

// corpus
class ChecksumMismatchError : public Error {
public:
  using Error::Error;
};
class RunExistsError : public Error {
public:
  using Error::Error;
};

}  // namespace aegle
