"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad input: schedule collisions, malformed configs, wrong shapes."""

    def __init__(self, message, path=None):
        self.path = path
        if path:
            message = f"{path}: {message}"
        super().__init__(message)


class TruncationError(ArithmeticError):
    """A requested tolerance could not be certified within the size cap."""

    def __init__(self, message, achieved):
        self.achieved = achieved
        super().__init__(f"{message} (achieved bound {achieved:.3e})")


class NumericError(ArithmeticError):
    """A numerical kernel failed; carries whatever is needed to replay it."""

    def __init__(self, message, seed=None, fingerprint=None):
        self.seed = seed
        self.fingerprint = fingerprint
        extra = []
        if seed is not None:
            extra.append(f"seed={seed}")
        if fingerprint is not None:
            extra.append(f"fingerprint={fingerprint}")
        if extra:
            message = f"{message} [{', '.join(extra)}]"
        super().__init__(message)


class DegenerateDeterminantError(NumericError):
    pass
