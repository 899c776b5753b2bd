"""Exception hierarchy for the harness.

Every error raised by this package derives from HarnessError so callers can
catch harness failures without swallowing programming errors.
"""

from __future__ import annotations


class HarnessError(Exception):
    """Base class for all errors raised by fedkgrec."""


# -- dataset ingestion / generation ------------------------------------------

class MissingFile(HarnessError):
    pass


class MalformedRow(HarnessError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class DanglingReference(HarnessError):
    def __init__(self, kind: str, ref_id: str):
        super().__init__(f"unknown {kind}: {ref_id!r}")
        self.kind = kind
        self.ref_id = ref_id


class InvalidRange(HarnessError):
    pass


# -- knowledge graphs / prompts ----------------------------------------------

class UnknownCustomer(HarnessError):
    pass


class AblationMismatch(HarnessError):
    pass


class TooManyAssets(HarnessError):
    pass


# -- alignment data ------------------------------------------------------------

class NoPriceData(HarnessError):
    pass


class EmptyUniverse(HarnessError):
    pass


class WindowUncovered(HarnessError):
    pass


class UniverseTooSmall(HarnessError):
    pass


# -- federation -----------------------------------------------------------------

class EmptyStratumSupport(HarnessError):
    def __init__(self, stratum: tuple):
        super().__init__(f"no client has weight on populated stratum {stratum}")
        self.stratum = stratum


class ShapeMismatch(HarnessError):
    pass


class TrainerFailure(HarnessError):
    """Local training failed; carries the partial round logs collected so far."""

    def __init__(self, round_index: int, client_id: int, cause: Exception, round_logs=None):
        super().__init__(f"round {round_index}, client {client_id}: {cause}")
        self.round_index = round_index
        self.client_id = client_id
        self.cause = cause
        self.round_logs = round_logs or []


# -- adapter container / trainer wire protocol ---------------------------------

class BadMagic(HarnessError):
    pass


class HeaderMismatch(HarnessError):
    pass


class TruncatedPayload(HarnessError):
    pass


class CorpusEmpty(HarnessError):
    pass


class TrainerTimeout(HarnessError):
    pass


class ProtocolError(HarnessError):
    def __init__(self, line: str):
        super().__init__(f"unparseable trainer response: {line!r}")
        self.response_line = line


class TrainerReportedError(HarnessError):
    pass


# -- CLI / configuration --------------------------------------------------------

class ConfigError(HarnessError):
    pass
