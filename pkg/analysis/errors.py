class ContractViolation(ValueError):
    """Raised when an operation is called outside its preconditions"""


class IngestError(ValueError):
    """Raised when an input file cannot be parsed under the declared schema"""

    def __init__(self, message: str, line: int = None, site_id: str = None):
        self.line = line
        self.site_id = site_id
        location = []
        if line is not None:
            location.append(f"line {line}")
        if site_id is not None:
            location.append(f"site {site_id}")
        super().__init__(f"{message} ({', '.join(location)})" if location else message)


class ShortWindowWarning(UserWarning):
    """Window too short for a statistically meaningful entropy estimate (N <= 5·d!)"""


class ConfigError(ValueError):
    """Raised for an unreadable or inconsistent run configuration"""
