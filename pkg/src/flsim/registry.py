"""Named registries for pluggable components (strategies, consensus, datasets)."""

from __future__ import annotations

from typing import Generic, Iterator, TypeVar

from .errors import DuplicateName, UnknownName

T = TypeVar("T")


class Registry(Generic[T]):
    """A mapping from names to implementations that refuses silent overwrites."""

    def __init__(
        self,
        kind: str,
        unknown: type[UnknownName] = UnknownName,
        duplicate: type[DuplicateName] = DuplicateName,
    ):
        self.kind = kind
        self._unknown = unknown
        self._duplicate = duplicate
        self._items: dict[str, T] = {}

    def register(self, name: str, impl: T, *, replace: bool = False) -> T:
        if not replace and name in self._items:
            raise self._duplicate(name)
        self._items[name] = impl
        return impl

    def unregister(self, name: str) -> None:
        self._items.pop(name, None)

    def lookup(self, name: str) -> T:
        try:
            return self._items[name]
        except KeyError:
            raise self._unknown(name) from None

    def __contains__(self, name: object) -> bool:
        return name in self._items

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._items))

    def names(self) -> list[str]:
        return sorted(self._items)
