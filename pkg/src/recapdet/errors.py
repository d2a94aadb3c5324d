class ConfigError(ValueError):
    """Invalid configuration, detected before any compute starts."""

    def __init__(self, message: str, problems: list | None = None):
        super().__init__(message)
        self.problems = list(problems or [message])


class CheckpointError(ValueError):
    """Checkpoint file is malformed, of the wrong version, or built for another config."""
