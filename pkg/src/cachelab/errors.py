"""Exception types raised across cachelab."""


class CacheLabError(Exception):
    pass


class DenominatorUnderflow(CacheLabError, ZeroDivisionError):
    """Reference norm too small to divide by."""


class ZeroVector(CacheLabError, ValueError):
    pass


class ShapeMismatch(CacheLabError, ValueError):
    pass


class IndexOutOfRange(CacheLabError, IndexError):
    pass


class CacheMiss(CacheLabError, LookupError):
    """A reuse was requested but nothing is cached (scheduling bug)."""


class ScheduleRange(CacheLabError, ValueError):
    pass


class CurveLengthMismatch(CacheLabError, ValueError):
    pass


class PhaseOverflow(CacheLabError, ValueError):
    pass


class NoRefreshSteps(CacheLabError, ValueError):
    pass


class ZeroFlops(CacheLabError, ZeroDivisionError):
    pass


class ConfigError(CacheLabError, ValueError):
    """Base for config failures; `path` names the offending field or file."""

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ConfigParse(ConfigError):
    pass


class SchemaViolation(ConfigError):
    pass
