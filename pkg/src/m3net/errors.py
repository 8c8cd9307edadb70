"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line can map failures to
its documented codes (1 usage/config, 2 data, 3 check failure).
"""


class M3NetError(Exception):
    exit_code = 1


class ConfigError(M3NetError, ValueError):
    exit_code = 1


class DataError(M3NetError, ValueError):
    exit_code = 2


class InsufficientClasses(DataError):
    pass


class InsufficientClipsPerClass(DataError):
    pass


class TooFewDistinctOrderings(DataError):
    pass


class UnknownClass(DataError, KeyError):
    pass


class UnknownClip(DataError, KeyError):
    pass


class BadMagic(DataError):
    pass


class UnsupportedVersion(DataError):
    pass


class TruncatedRecord(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class BadGrid(DataError):
    pass


class EpisodeSizeMismatch(DataError):
    pass


class ZeroNormFrame(DataError):
    pass


class NonPositiveTemperature(ConfigError):
    pass


class LabelOutOfRange(DataError, IndexError):
    pass
