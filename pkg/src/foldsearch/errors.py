"""Exception hierarchy shared across the harness."""

from __future__ import annotations


class FoldSearchError(Exception):
    """Base class for every error raised by this package."""


# history


class HistoryError(FoldSearchError):
    pass


class AppendAfterFinal(HistoryError):
    pass


class MissingObservation(HistoryError):
    pass


class UnexpectedObservation(HistoryError):
    pass


class NotAnAnswer(HistoryError):
    pass


class IncompleteTrajectory(HistoryError):
    pass


# turn grammar


class ProtocolError(FoldSearchError):
    """A model message does not follow the think / tool_call / answer grammar."""


class MissingThink(ProtocolError):
    pass


class MultipleToolCalls(ProtocolError):
    pass


class NoPayload(ProtocolError):
    pass


class AmbiguousPayload(NoPayload):
    """Both a tool call and an answer were emitted in one turn."""


class MalformedToolCallBody(ProtocolError):
    pass


class UnbalancedBoxed(ProtocolError):
    pass


# tool-call validation


class ToolValidationError(FoldSearchError):
    pass


class UnknownTool(ToolValidationError):
    pass


class MissingArgument(ToolValidationError):
    def __init__(self, argument: str, tool: str = ""):
        super().__init__(f"{tool}: missing required argument {argument!r}")
        self.argument = argument


class WrongArgumentType(ToolValidationError):
    pass


class UnknownArgument(ToolValidationError):
    pass


class ImageIndexOutOfRange(ToolValidationError):
    pass


class ImageSearchRepeated(ToolValidationError):
    pass


# tools


class ToolError(FoldSearchError):
    pass


class EmptyQueries(ToolError):
    pass


class BackendUnavailable(ToolError):
    pass


class SummarizerUnavailable(ToolError):
    def __init__(self, message: str, attempts: int = 0):
        super().__init__(message)
        self.attempts = attempts


class FetchError(ToolError):
    pass


class Unparseable(ToolError):
    pass


class FixtureMissing(ToolError):
    pass


# rendering


class RenderError(FoldSearchError):
    pass


class EmptyText(RenderError):
    pass


class FontLoadError(RenderError):
    pass


class PageLimitExceeded(UserWarning):
    """Warning category: an observation needed more pages than allowed."""


# endpoints


class EndpointError(FoldSearchError):
    def __init__(self, message: str, status: int | None = None, retry_after: float | None = None):
        super().__init__(message)
        self.status = status
        self.retry_after = retry_after
        self.partial_result = None


class JudgeUnparseable(FoldSearchError):
    pass


class TeacherUnparseable(FoldSearchError):
    pass


class ConfigError(FoldSearchError):
    pass
