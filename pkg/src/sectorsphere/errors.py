"""Error types shared across layers.

Errors that may cross the wire carry a numeric ``code`` so the RPC layer can
re-raise the same class on the calling side.
"""

from __future__ import annotations

_BY_CODE: dict[int, type["SectorError"]] = {}


class SectorError(Exception):
    code = 255

    def __init_subclass__(cls, **kwargs) -> None:
        super().__init_subclass__(**kwargs)
        if "code" in cls.__dict__:
            if cls.code in _BY_CODE:
                raise TypeError(f"duplicate error code {cls.code}")
            _BY_CODE[cls.code] = cls


def error_for_code(code: int) -> type[SectorError]:
    return _BY_CODE.get(code, SectorError)


class Unreachable(SectorError):
    """The peer did not answer (timeout or connection loss)."""
    code = 1


class PeerDown(Unreachable):
    """Raised locally when the transport itself lost the peer; never sent on the wire."""


class BadRequest(SectorError):
    code = 2


# routing
class LookupTimeout(SectorError):
    code = 10


class JoinFailed(SectorError):
    code = 11


# storage
class NotFound(SectorError):
    code = 20


class AccessDenied(SectorError):
    code = 21


class NameConflict(SectorError):
    code = 22


class NotEnoughNodes(SectorError):
    code = 23


class ChunkCorrupt(SectorError):
    code = 24


class AllReplicasDown(SectorError):
    code = 25


class SourceUnreachable(SectorError):
    code = 26


class Unrecoverable(SectorError):
    code = 27


# sphere
class DuplicateName(SectorError):
    code = 40


class UnknownUdf(SectorError):
    code = 41


class UnknownInput(SectorError):
    code = 42


class AdmissionFailed(SectorError):
    code = 43


class UdfError(SectorError):
    code = 44

    def __init__(self, message: str = "", record_index: int | None = None) -> None:
        super().__init__(message)
        self.record_index = record_index


class ChunkUnavailable(SectorError):
    code = 45


class JobAborted(SectorError):
    code = 46


class JobNotDone(SectorError):
    code = 47


class OwnerUnreachable(SectorError):
    """A worker could not deliver bucket output; the message is the owner address."""
    code = 48


# apps
class BadDimension(SectorError):
    code = 60


class KTooLarge(SectorError):
    code = 61
