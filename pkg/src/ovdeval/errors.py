"""Exception hierarchy shared across the toolkit.

``InputError`` subclasses signal bad input data (CLI exit code 2);
everything else is an internal error (exit code 1).
"""


class OvdEvalError(Exception):
    """Base class for all toolkit errors."""


class InputError(OvdEvalError):
    """Invalid input data or configuration."""


class MalformedRecord(InputError):
    def __init__(self, line_no: int, detail: str):
        super().__init__(f"line {line_no}: {detail}")
        self.line_no = line_no
        self.detail = detail


class UnknownLabel(InputError):
    def __init__(self, label_id: str):
        super().__init__(f"unknown label id: {label_id!r}")
        self.label_id = label_id


class DegenerateBox(InputError):
    pass


class TokenLengthMismatch(InputError):
    pass


class LogitOutOfRange(InputError):
    pass


class DuplicatePromptId(InputError):
    def __init__(self, prompt_id: str):
        super().__init__(f"duplicate prompt id: {prompt_id!r}")
        self.prompt_id = prompt_id


class NonContiguousIndices(InputError):
    pass


class SanityCheckFailed(InputError):
    """Strict-mode parse abort carrying the full violation report."""

    def __init__(self, violations):
        lines = "; ".join(str(v) for v in violations)
        super().__init__(f"{len(violations)} sanity violation(s): {lines}")
        self.violations = list(violations)


class MissingCondition(InputError):
    pass


class MissingState(InputError):
    pass


class EmptySelection(InputError):
    pass


class EmptyVector(InputError):
    pass


class MissingNativeScore(InputError):
    pass


class NoTemplateForLevel(InputError):
    pass


class SizeLimitExceeded(OvdEvalError):
    pass
