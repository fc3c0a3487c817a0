# lattice_sternberg/errors.py
"""
Exception hierarchy. Every error carries the CLI exit code of its family:
2 for configuration, 3 for violated preconditions, 4 for numerical failure.
"""

from typing import Any, Dict, List, Optional


class LatticeError(RuntimeError):
    exit_code = 1

    def __init__(self, detail: str, context: Optional[Dict[str, Any]] = None):
        super().__init__(detail)
        self.detail = detail
        self.context = context or {}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error": type(self).__name__,
            "family": _family(type(self)),
            "detail": self.detail,
            "context": self.context,
            "exit_code": self.exit_code,
        }


# -------- configuration (exit 2) --------
class ConfigError(LatticeError):
    exit_code = 2


class ParseError(ConfigError):
    pass


class SchemaError(ConfigError):
    def __init__(self, detail: str, errors: Optional[List[Dict[str, Any]]] = None):
        super().__init__(detail, {"errors": errors or []})
        self.errors = errors or []


# -------- preconditions (exit 3) --------
class PreconditionError(LatticeError):
    exit_code = 3


class NotSummable(PreconditionError):
    pass


class PreconditionViolated(PreconditionError):
    pass


class WindowMismatch(PreconditionError):
    pass


class SlotOutOfRange(PreconditionError):
    pass


class ArityMismatch(PreconditionError):
    pass


class NotContraction(PreconditionError):
    pass


class ResonantOrder(PreconditionError):
    pass


class MethodInapplicable(PreconditionError):
    pass


class TooLarge(PreconditionError):
    pass


class ContourTooClose(PreconditionError):
    pass


class ZeroLeadingCoefficient(PreconditionError):
    pass


class DomainEscape(PreconditionError):
    pass


# -------- numerical failure (exit 4) --------
class NumericalError(LatticeError):
    exit_code = 4


class NoValidAmplitude(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


class NotInvertible(NumericalError):
    pass


class Singular(NumericalError):
    pass


class Overflow(NumericalError):
    pass


class QuadratureStalled(NumericalError):
    pass


class AcceptanceFailed(NumericalError):
    pass


def _family(cls: type) -> str:
    for base in cls.__mro__:
        if base in (ConfigError, PreconditionError, NumericalError):
            return base.__name__
    return LatticeError.__name__
