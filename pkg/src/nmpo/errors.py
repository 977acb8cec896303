"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`NmpoError`
and carries the process exit code the CLI maps it to:

====  ==========================
code  meaning
====  ==========================
0     success
1     usage / configuration error
2     data or parse error
3     model or version error
4     internal error
====  ==========================
"""


class NmpoError(Exception):
    exit_code = 4


def with_context(exc: NmpoError, context: str) -> NmpoError:
    """Copy of ``exc`` (same type, same exit code) whose message starts with ``context``."""
    cls = exc.__class__
    # with several builtin bases only the one with the largest layout can allocate
    for base in cls.__mro__:
        if base.__module__ == "builtins":
            try:
                new = base.__new__(cls)
                break
            except TypeError:
                continue
    new.__dict__.update(exc.__dict__)
    new.args = (f"{context}: {exc}",)
    return new


class ConfigError(NmpoError, ValueError):
    exit_code = 1


class DataError(NmpoError, ValueError):
    exit_code = 2


class ParseError(DataError):
    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}: "
        if line is not None:
            where += f"line {line}: "
        super().__init__(where + message)


class AmbiguityError(ParseError):
    pass


class EmptyInputError(ParseError):
    pass


class MissingStatisticError(DataError):
    def __init__(self, missing, source=None):
        self.missing = list(missing)
        prefix = f"{source}: " if source else ""
        super().__init__(prefix + "missing statistic(s): " + ", ".join(self.missing))


class ConsistencyError(DataError):
    pass


class ManifestError(DataError):
    pass


class IngestIOError(DataError, OSError):
    pass


class JoinError(DataError):
    pass


class FeatureError(DataError):
    """A required event or feature is absent or unusable."""

    def __init__(self, message, missing=()):
        self.missing = list(missing)
        super().__init__(message)


class SchemaError(FeatureError):
    pass


class DomainError(DataError):
    pass


class ShapeError(DataError):
    pass


class DegenerateVarianceError(DomainError):
    pass


class SampleSizeError(DataError):
    pass


class CorpusError(DataError):
    pass


class FitError(DataError):
    pass


class ModelError(NmpoError):
    exit_code = 3


class VersionError(ModelError):
    pass


class IntegrityError(ModelError):
    pass
