from __future__ import annotations


class ScriptError(Exception):
    """Base class for script diagnostics; carries an optional source position."""

    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.message = message
        self.line = line
        self.col = col
        super().__init__(self.render())

    def render(self) -> str:
        if self.line is None:
            return self.message
        if self.col is None:
            return f"line {self.line}: {self.message}"
        return f"line {self.line}, column {self.col}: {self.message}"

    @classmethod
    def at(cls, message: str, pos) -> "ScriptError":
        if pos is None:
            return cls(message)
        return cls(message, pos.line, pos.col)


class ScriptSyntaxError(ScriptError):
    pass


class CheckError(ScriptError):
    pass


class UndefinedSymbolError(CheckError):
    def __init__(self, symbol: str, line: int | None = None, col: int | None = None):
        self.symbol = symbol
        super().__init__(f"undefined symbol '{symbol}'", line, col)

    @classmethod
    def at(cls, symbol: str, pos) -> "UndefinedSymbolError":
        if pos is None:
            return cls(symbol)
        return cls(symbol, pos.line, pos.col)


class CorrelationError(ValueError):
    """Correlation input outside [-1, 1] or not positive semidefinite."""
