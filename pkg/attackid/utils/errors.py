class AttackIdError(Exception):
    """Base class of all errors raised by attackid."""


class ConfigError(AttackIdError, ValueError):
    """A configuration, network, state or attack file is malformed or invalid."""

    def __init__(self, message, path=None, field=None):
        self.path = None if path is None else str(path)
        self.field = field
        where = []
        if self.path is not None:
            where.append(self.path)
        if field is not None:
            where.append(field)
        super().__init__(f"{': '.join(where)}: {message}" if where else message)


class DimensionError(AttackIdError, ValueError):
    """Vector or matrix shapes do not match the model."""


class NumericalError(AttackIdError, RuntimeError):
    def __init__(self, message, step=None):
        self.step = step
        super().__init__(message if step is None else f"step {step}: {message}")


class RankDeficiencyError(NumericalError):
    pass


class ZeroColumnError(NumericalError):
    pass


class DegenerateCurvatureError(NumericalError):
    """K = 0: the map is linear and the conditions hold vacuously."""


class NonFiniteStateError(NumericalError):
    pass
