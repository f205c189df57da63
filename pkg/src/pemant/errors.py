"""Exception hierarchy.

Each top-level family maps to one CLI exit code (see ``pemant.cli``).
"""

from __future__ import annotations


class PemantError(Exception):
    """Base class for every error raised by this package."""


# -- configuration ---------------------------------------------------------

class ConfigError(PemantError):
    pass


# -- data ------------------------------------------------------------------

class DataError(PemantError):
    pass


class RowParseError(DataError):
    def __init__(self, source: str, row_index: int, message: str):
        self.source = source
        self.row_index = row_index
        super().__init__(f"{source} row {row_index}: {message}")


class ReferentialIntegrityError(DataError):
    pass


class DegenerateDatasetError(DataError):
    pass


class TranslationError(DataError):
    def __init__(self, variable: str, rule_id: str, message: str):
        self.variable = variable
        self.rule_id = rule_id
        super().__init__(f"{variable} (rule {rule_id}): {message}")


class HeldOutViolation(DataError):
    pass


# -- anchors ---------------------------------------------------------------

class AnchorLeakageError(ConfigError):
    def __init__(self, source_cycle: str, target_cycle: str):
        self.source_cycle = source_cycle
        self.target_cycle = target_cycle
        super().__init__(
            f"anchor source cycle {source_cycle!r} does not precede target cycle {target_cycle!r}"
        )


# -- backend ---------------------------------------------------------------

class BackendError(PemantError):
    pass


class BackendUnavailable(BackendError):
    pass


class RemoteError(BackendError):
    def __init__(self, status: int, message: str):
        self.status = status
        super().__init__(f"HTTP {status}: {message}")


class MalformedResponse(BackendError):
    pass


class RenderError(PemantError):
    pass


# -- parsing of model output -------------------------------------------------

class ResponseParseError(PemantError):
    """Model output did not follow the requested format. Callers regenerate."""


class VoteParseError(ResponseParseError):
    pass


class CountParseError(ResponseParseError):
    pass


class ModeratorParseError(ResponseParseError):
    pass


class FinalAnswerParseError(ResponseParseError):
    pass


class LikertParseError(ResponseParseError):
    pass


class ConstructParseError(ResponseParseError):
    pass


# -- protocol --------------------------------------------------------------

class ProtocolError(PemantError):
    pass


class SynthesisError(ProtocolError):
    def __init__(self, message: str, violations=()):
        self.violations = list(violations)
        super().__init__(message)


class EnrichmentError(ProtocolError):
    def __init__(self, message: str, violations=()):
        self.violations = list(violations)
        super().__init__(message)


class ProposalPhaseError(ProtocolError):
    def __init__(self, agent_id: str, message: str):
        self.agent_id = agent_id
        super().__init__(f"agent {agent_id}: {message}")


class BaselineError(ProtocolError):
    pass


class ScoringError(ProtocolError):
    pass


# -- metrics ---------------------------------------------------------------

class MetricDomainError(PemantError, ValueError):
    pass


class UndefinedKappaError(MetricDomainError):
    pass
