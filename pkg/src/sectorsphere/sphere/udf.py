"""Named processing functions shared by every worker in the process."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Iterable

from ..errors import DuplicateName, UnknownUdf


@dataclass(frozen=True)
class Udf:
    name: str
    fn: Callable[..., Iterable[Any]]
    batch: bool = False
    takes_params: bool = False

    def run(self, records: list[bytes], params: bytes) -> list[tuple[int, bytes]]:
        """Apply to a segment's records; returns (bucket, record) pairs.

        Per-record UDFs may yield bare records (bucket 0) or (bucket, record)
        pairs. Raised exceptions carry the failing record index in ``index``.
        """
        out: list[tuple[int, bytes]] = []
        if self.batch:
            args = (records, params) if self.takes_params else (records,)
            out.extend(_normalise(self.fn(*args)))
            return out
        fn = self.fn
        for i, rec in enumerate(records):
            try:
                res = fn(rec, params) if self.takes_params else fn(rec)
                out.extend(_normalise(res))
            except Exception as exc:
                exc.index = i  # type: ignore[attr-defined]
                raise
        return out


def _normalise(items: Iterable[Any]) -> Iterable[tuple[int, bytes]]:
    if items is None:
        return
    for it in items:
        if isinstance(it, (bytes, bytearray, memoryview)):
            yield 0, bytes(it)
        else:
            b, rec = it
            yield int(b), bytes(rec)


class Engine:
    """UDF registry. In simulation every worker shares one engine."""

    def __init__(self) -> None:
        self.udfs: dict[str, Udf] = {}

    def register_udf(self, name: str, fn: Callable[..., Iterable[Any]], *, batch: bool = False,
                     takes_params: bool = False) -> Udf:
        if name in self.udfs:
            raise DuplicateName(f"UDF {name!r} already registered")
        udf = self.udfs[name] = Udf(name, fn, batch, takes_params)
        return udf

    def get(self, name: str) -> Udf:
        try:
            return self.udfs[name]
        except KeyError:
            raise UnknownUdf(name) from None

    def __contains__(self, name: str) -> bool:
        return name in self.udfs


def register_udf(engine: Engine, name: str, fn: Callable[..., Iterable[Any]], **kw) -> Udf:
    return engine.register_udf(name, fn, **kw)
