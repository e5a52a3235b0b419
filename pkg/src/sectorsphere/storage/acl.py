"""Write-gated, publicly readable access control."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class Op(Enum):
    READ = "read"
    WRITE = "write"


@dataclass
class AccessControlList:
    owner: str
    writers: set[str] = field(default_factory=set)
    public_read: bool = True

    def __post_init__(self) -> None:
        self.writers = set(self.writers)
        self.writers.add(self.owner)


def check_access(acl: AccessControlList, user: str | None, op: Op) -> bool:
    if op is Op.READ:
        return acl.public_read or (user is not None and user in acl.writers)
    return user is not None and user in acl.writers
