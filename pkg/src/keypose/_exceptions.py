class KeyposeError(Exception):
    """Custom exception for every failure raised by keypose.

    Attributes:
        error_code: A code identifying the type of error
        message: Human-readable error message
        context: Optional additional context about the error
    """

    # Input and invariant errors
    SCHEMA = "SCHEMA"
    VALIDATION = "VALIDATION"
    OUT_OF_BOUNDS = "OUT_OF_BOUNDS"
    RIGIDITY = "RIGIDITY"
    EMPTY_BIN = "EMPTY_BIN"
    INSUFFICIENT_POSES = "INSUFFICIENT_POSES"
    # Runtime errors
    COMMAND_INFEASIBLE = "COMMAND_INFEASIBLE"
    STANCE_INFEASIBLE = "STANCE_INFEASIBLE"
    NUMERICAL = "NUMERICAL"
    IO = "IO"
    UNKNOWN = "UNKNOWN"

    _VALIDATION_CODES = frozenset({SCHEMA, VALIDATION, OUT_OF_BOUNDS, RIGIDITY, EMPTY_BIN, INSUFFICIENT_POSES, IO})

    def __init__(self, message: str, error_code: str, context=None):
        """Initialize KeyposeError.

        Args:
            message (str): Human-readable error message
            error_code (str): Error code identifying the error type
            context (dict, optional): Additional context about the error
        """
        self.error_code = error_code
        self.context = context or {}
        super().__init__(message)

    @property
    def exit_status(self) -> int:
        """Process exit status for the CLI: 1 for validation errors, 2 for runtime failures."""
        return 1 if self.error_code in self._VALIDATION_CODES else 2

    def with_context(self, **extra) -> "KeyposeError":
        """Return a copy of this error with additional context entries."""
        merged = dict(self.context)
        merged.update(extra)
        err = KeyposeError(super().__str__(), self.error_code, merged)
        err.__dict__.update({k: v for k, v in self.__dict__.items() if k not in ("error_code", "context")})
        return err

    def __str__(self):
        """Return string representation of the error."""
        base_msg = f"KeyposeError (Code: {self.error_code}): {super().__str__()}"
        if self.context:
            context_str = ", ".join(f"{k}={v}" for k, v in self.context.items())
            return f"{base_msg} [Context: {context_str}]"
        return base_msg

    def __repr__(self):
        """Return detailed representation for debugging."""
        return f"KeyposeError(message={super().__str__()!r}, error_code={self.error_code!r}, context={self.context!r})"

    def to_dict(self):
        """Convert error to dictionary for serialization."""
        return {
            "error_type": "KeyposeError",
            "message": super().__str__(),
            "error_code": self.error_code,
            "context": {k: _plain(v) for k, v in self.context.items()},
        }


def _plain(value):
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)
