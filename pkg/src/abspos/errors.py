"""Error types shared across the toolkit."""


class InputError(ValueError):
    """Invalid input value, configuration, or file content."""


class AnnotationParseError(InputError):
    """Malformed annotation file; carries the byte offset when known."""

    def __init__(self, message: str, byte_offset: int | None = None):
        if byte_offset is not None:
            message = f"{message} (at byte {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset
