#pragma once

#include <stdexcept>
#include <string>

namespace panoweave {

// Base of every error thrown by the engine. The category decides the CLI
// exit code (see exit_code_for).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Configuration and input shape problems (exit code 2).
class ConfigError : public Error { using Error::Error; };
class DimensionError : public ConfigError { using ConfigError::ConfigError; };
class GeometryError : public ConfigError { using ConfigError::ConfigError; };
class PlanningError : public ConfigError { using ConfigError::ConfigError; };
class SteeringError : public ConfigError { using ConfigError::ConfigError; };

// Generator side (exit code 3).
class GeneratorError : public Error { using Error::Error; };
class TransportError : public GeneratorError { using GeneratorError::GeneratorError; };
class ProtocolError : public GeneratorError { using GeneratorError::GeneratorError; };
class CancelledError : public GeneratorError { using GeneratorError::GeneratorError; };

// Run state, persistence and broken invariants (exit code 4).
class StateError : public Error { using Error::Error; };
class IoError : public StateError { using StateError::StateError; };
class ContractError : public StateError { using StateError::StateError; };
class SchedulingError : public StateError { using StateError::StateError; };
class NumericError : public StateError { using StateError::StateError; };

inline int exit_code_for(const Error& e)
{
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const GeneratorError*>(&e)) return 3;
    return 4;
}

}  // namespace panoweave
