"""Exception types. ``exit_code`` is what the CLI returns when one escapes."""


class VsfError(Exception):
    exit_code = 1


class ConfigError(VsfError):
    exit_code = 2


class SceneError(VsfError):
    """Malformed or invalid scene. ``field`` names the offending entry."""

    exit_code = 3

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class SceneParseError(SceneError):
    pass


class SceneValidationError(SceneError):
    pass


class GenerationInfeasibleError(SceneError):
    pass


class PoseInObstacleError(SceneError):
    pass


class UnsafeViewError(VsfError):
    pass


class NoPathError(VsfError):
    exit_code = 4


class ExplorationComplete(VsfError):
    """Raised by NBV selection when no view scores above the termination threshold."""

    exit_code = 0
