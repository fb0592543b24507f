"""Exception hierarchy.

Errors fall in three families that the CLI maps to exit codes: configuration
problems (2), bad or inconsistent data (3) and numerical failures (4).
"""


class EITError(Exception):
    exit_code = 1


class ConfigError(EITError):
    exit_code = 2


class DataError(EITError):
    exit_code = 3


class NumericalError(EITError):
    exit_code = 4


# geometry / meshing
class FootprintOverflow(ConfigError):
    pass


class MeshFailure(NumericalError):
    pass


# forward model
class SingularSystem(NumericalError):
    pass


# DN algebra and ingestion
class RankDeficient(DataError):
    pass


class DegenerateData(DataError):
    pass


class DegenerateDataWarning(UserWarning):
    pass


class ParseError(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class NonMeanFreeCurrents(DataError):
    pass


# CGO methods
class ZeroXi(ConfigError):
    pass


class DuplicateCenters(DataError):
    pass


class NearSingularBIE(NumericalError):
    pass


class IndefiniteSystem(NumericalError):
    pass


# linear difference imaging
class FactorizationFailure(NumericalError):
    pass


# metrics
class NoTargetsFound(DataError):
    pass
