"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Non-finite, mis-shaped or otherwise unusable numeric input."""


class RangeError(ValueError):
    """A value lies outside its configured bounds."""


class BehindCameraError(ValueError):
    """A point has non-positive depth in the camera frame."""


class InitializationError(RuntimeError):
    """Offline Jacobian probing could not complete."""


class ConfigError(ValueError):
    """Scenario validation failure.

    ``problems`` holds ``(field_path, message)`` pairs so every failing
    field is reported at once.
    """

    def __init__(self, problems):
        self.problems = list(problems)
        lines = [f"{path}: {msg}" for path, msg in self.problems]
        super().__init__("invalid scenario:\n  " + "\n  ".join(lines))
