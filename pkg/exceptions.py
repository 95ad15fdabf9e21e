from typing import Iterable, Optional, Sequence


class SvaFixError(Exception):
    """Base class for every error raised by the svafix modules."""


# --- Frontend ---

class HdlSyntaxError(SvaFixError):
    """Raised when Verilog or SVA text does not match the supported grammar."""

    def __init__(self, message: str, file: str = "<input>", line: int = 0, column: int = 0, expected: str = ""):
        self.file = file
        self.line = line
        self.column = column
        self.expected = expected
        location = f"{file}:{line}:{column}"
        detail = f" (expected {expected})" if expected else ""
        super().__init__(f"{location}: {message}{detail}")


class UnsupportedConstruct(SvaFixError):
    def __init__(self, construct: str, span=None):
        self.construct = construct
        self.span = span
        where = f" at {span}" if span is not None else ""
        super().__init__(f"Unsupported construct '{construct}'{where}")


class UnresolvedIdentifier(SvaFixError):
    def __init__(self, name: str, module: str, span=None):
        self.name = name
        self.module = module
        self.span = span
        super().__init__(f"Identifier '{name}' is not declared in module '{module}'")


class UnsupportedSvaFeature(SvaFixError):
    def __init__(self, feature: str, text: str = ""):
        self.feature = feature
        self.text = text
        super().__init__(f"SVA feature '{feature}' is outside the supported subset")


# --- Graph ---

class CombinationalLoop(SvaFixError):
    def __init__(self, cycle: Sequence[str]):
        self.cycle = list(cycle)
        super().__init__(f"Combinational loop: {' -> '.join(self.cycle)}")


class UnknownSignal(SvaFixError):
    def __init__(self, signal: str):
        self.signal = signal
        super().__init__(f"Unknown signal '{signal}'")


# --- Traces ---

class VcdSyntaxError(SvaFixError):
    pass


class MissingClock(SvaFixError):
    def __init__(self, clock: str):
        self.clock = clock
        super().__init__(f"Clock '{clock}' is not present in the VCD")


class SignalMissing(SvaFixError):
    def __init__(self, signals: Iterable[str]):
        self.signals = sorted(signals)
        super().__init__(f"Signals missing from trace: {', '.join(self.signals)}")


class WidthMismatch(SvaFixError):
    def __init__(self, signal: str, trace_width: int, expected_width: int):
        self.signal = signal
        super().__init__(f"Signal '{signal}' is {trace_width} bits in the trace but compared as {expected_width} bits")


class UnrepresentableShift(SvaFixError):
    pass


# --- Repair ---

class NoTraces(SvaFixError):
    pass


class NoFailure(SvaFixError):
    pass


class NoDriversFound(SvaFixError):
    pass


class NoForwardTargets(SvaFixError):
    pass


# --- LLM backends ---

class LlmBackendError(SvaFixError):
    """Network, HTTP, status or answer-format failure. Callers may fall back to heuristics."""


class LlmFixtureError(SvaFixError):
    """A replay/mock backend could not answer. Not recoverable by fallback."""


class FixtureMiss(LlmFixtureError):
    def __init__(self, prompt_hash: str):
        self.prompt_hash = prompt_hash
        super().__init__(f"No recorded response for prompt hash {prompt_hash}")


class MockUnmatched(LlmFixtureError):
    def __init__(self, prompt_hash: str, excerpt: Optional[str] = None):
        self.prompt_hash = prompt_hash
        super().__init__(f"No mock rule matched prompt {prompt_hash}" + (f": {excerpt!r}" if excerpt else ""))


# --- Config ---

class ConfigError(SvaFixError):
    pass
