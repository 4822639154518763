"""The domain hierarchy: one orchestrator per domain, arranged as a rooted tree."""

from __future__ import annotations

from typing import Dict, Iterable, List, Optional, Tuple

from .intent import check_domain_id


class TopologyError(ValueError):
    pass


class Topology:
    """Rooted tree of domains. Rank is depth; the root has rank 0.

    Domain order is the declaration order and doubles as the deterministic
    actor id used to break ties in the simulator.
    """

    def __init__(self, entries: Iterable[Tuple[str, Optional[str], int]]):
        self._parent: Dict[str, Optional[str]] = {}
        self._rank: Dict[str, int] = {}
        self._children: Dict[str, List[str]] = {}
        for domain, parent, rank in entries:
            try:
                check_domain_id(domain)
            except ValueError as exc:
                raise TopologyError(str(exc)) from None
            if domain in self._parent:
                raise TopologyError(f"duplicate domain {domain!r}")
            self._parent[domain] = parent
            self._rank[domain] = rank
            self._children[domain] = []
        roots = [d for d, p in self._parent.items() if p is None]
        if len(roots) != 1:
            raise TopologyError(f"expected exactly one root, found {len(roots)}")
        self.root = roots[0]
        for domain, parent in self._parent.items():
            if parent is None:
                continue
            if parent not in self._parent:
                raise TopologyError(f"{domain!r} names unknown parent {parent!r}")
            self._children[parent].append(domain)
        # ranks must equal depth, which also rules out cycles
        for domain in self._parent:
            depth, seen, cur = 0, {domain}, self._parent[domain]
            while cur is not None:
                if cur in seen:
                    raise TopologyError(f"cycle through {domain!r}")
                seen.add(cur)
                depth += 1
                cur = self._parent[cur]
            if self._rank[domain] != depth:
                raise TopologyError(f"{domain!r} has rank {self._rank[domain]} but depth {depth}")
        self.order: Dict[str, int] = {d: i for i, d in enumerate(self._parent)}

    @property
    def domains(self) -> List[str]:
        return list(self._parent)

    def __contains__(self, domain: object) -> bool:
        return domain in self._parent

    def __len__(self) -> int:
        return len(self._parent)

    def parent(self, domain: str) -> Optional[str]:
        return self._parent[domain]

    def rank(self, domain: str) -> int:
        return self._rank[domain]

    def children(self, domain: str) -> List[str]:
        return list(self._children[domain])

    def is_child(self, child: str, parent: str) -> bool:
        return child in self._parent and self._parent[child] == parent

    def path_to_root(self, domain: str) -> List[str]:
        path = [domain]
        while self._parent[path[-1]] is not None:
            path.append(self._parent[path[-1]])  # type: ignore[arg-type]
        return path

    def next_hop(self, src: str, dst: str) -> Optional[str]:
        """Child of ``src`` on the way down to ``dst``; None unless ``dst`` is a proper descendant."""
        if dst not in self._parent or dst == src:
            return None
        path = self.path_to_root(dst)
        if src not in path:
            return None
        return path[path.index(src) - 1]

    def entries(self) -> List[Tuple[str, Optional[str], int]]:
        return [(d, self._parent[d], self._rank[d]) for d in self._parent]

    def __repr__(self) -> str:
        return f"Topology({self.entries()!r})"
