from __future__ import annotations


class RayMixturesError(Exception):
    """Base error. `exit_code` is what the CLI returns for it."""

    exit_code = 1


class ConfigError(RayMixturesError):
    exit_code = 2


class DomainError(RayMixturesError, ValueError):
    """A precondition of an operation does not hold (bad count, negative density, ...)."""

    exit_code = 2


class DataError(RayMixturesError):
    exit_code = 3


class ManifestError(DataError):
    pass


class FrameError(DataError):
    def __init__(self, frame_index: int, message: str) -> None:
        super().__init__(f"frame {frame_index}: {message}")
        self.frame_index = frame_index


class CheckpointError(DataError):
    """Checkpoint could not be read. `code` is one of bad_magic, version, truncated, architecture."""

    def __init__(self, code: str, message: str) -> None:
        super().__init__(f"checkpoint {code}: {message}")
        self.code = code


class NumericFault(RayMixturesError):
    exit_code = 4

    def __init__(self, message: str, *, step: int | None = None, ray_ids: list[int] | None = None, index: str | None = None) -> None:
        super().__init__(message)
        self.step = step
        self.ray_ids = list(ray_ids or [])
        self.index = index


class VerificationFailure(RayMixturesError):
    exit_code = 5
