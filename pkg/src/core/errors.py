# errors.py: exception hierarchy shared by core and app layers


class ReprPrivacyError(Exception):
    """Base class for every error the pipeline raises on purpose."""


class InvalidShapeError(ReprPrivacyError, ValueError):
    pass


class InvalidInputError(ReprPrivacyError, ValueError):
    pass


class ContractViolation(ReprPrivacyError, AssertionError):
    pass


class ConfigError(ReprPrivacyError, ValueError):
    pass


class SchemaError(ReprPrivacyError, ValueError):
    def __init__(self, message: str, field: str = ""):
        super().__init__(message)
        self.field = field


class CorpusParseError(ReprPrivacyError, ValueError):
    def __init__(self, message: str, line_no: int = 0):
        super().__init__(f"line {line_no}: {message}" if line_no else message)
        self.line_no = line_no


class VocabularyMismatchError(ReprPrivacyError, ValueError):
    pass
