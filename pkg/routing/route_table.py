"""Static store-and-forward routes keyed by destination domain.

Nodes are stations and mass-storage endpoints. Each belongs to a domain
(its own id unless configured). At node ``c``, a file bound for ``d``:

* has arrived when ``c == d``;
* goes straight to ``d`` when both share a domain;
* otherwise follows ``c``'s entry for ``d``'s domain, if any.

Updates that would let any walk revisit a node are refused.
"""

import csv
import io
import logging
from dataclasses import dataclass

from errors import NoRoute, UnknownStation, WouldCreateLoop

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RouteLine:
    station: str
    domain: str
    next_hop: str
    cache_in_transit: bool


class RouteTable:
    def __init__(self) -> None:
        self._domain: dict[str, str] = {}
        self._routes: dict[str, dict[str, str]] = {}
        self._cache_in_transit: dict[str, bool] = {}

    # ------------------------------------------------------------------
    # registration
    # ------------------------------------------------------------------

    def register(self, node: str, domain: str | None = None, cache_in_transit: bool = False) -> None:
        if node in self._domain:
            raise ValueError(f"node {node!r} already registered")
        self._domain[node] = domain or node
        self._routes[node] = {}
        self._cache_in_transit[node] = cache_in_transit

    def nodes(self) -> list[str]:
        return list(self._domain)

    def is_registered(self, node: str) -> bool:
        return node in self._domain

    def domain_of(self, node: str) -> str:
        self._require(node)
        return self._domain[node]

    def caches_in_transit(self, node: str) -> bool:
        self._require(node)
        return self._cache_in_transit[node]

    def set_cache_in_transit(self, node: str, enabled: bool) -> None:
        self._require(node)
        self._cache_in_transit[node] = enabled

    # ------------------------------------------------------------------
    # routes
    # ------------------------------------------------------------------

    def add_route(self, station: str, destination_domain: str, next_hop: str) -> None:
        self._require(station)
        self._require(next_hop)
        if next_hop == station:
            raise WouldCreateLoop(f"{station} cannot route {destination_domain!r} to itself")

        table = self._routes[station]
        previous = table.get(destination_domain)
        table[destination_domain] = next_hop
        looping = self._find_loop(station, destination_domain)
        if looping is not None:
            if previous is None:
                del table[destination_domain]
            else:
                table[destination_domain] = previous
            raise WouldCreateLoop(
                f"route {station} -({destination_domain})-> {next_hop} loops via {' -> '.join(looping)}"
            )
        logger.debug("route %s -(%s)-> %s", station, destination_domain, next_hop)

    def routes(self, station: str) -> dict[str, str]:
        self._require(station)
        return dict(self._routes[station])

    def next_hop(self, current: str, destination: str) -> str | None:
        if current == destination:
            return None
        if self._domain[current] == self._domain[destination]:
            return destination
        return self._routes[current].get(self._domain[destination])

    def compute_path(self, src: str, dst: str) -> list[str]:
        self._require(src)
        self._require(dst)
        path = [src]
        limit = len(self._domain)
        while path[-1] != dst:
            hop = self.next_hop(path[-1], dst)
            if hop is None or len(path) > limit:
                raise NoRoute(f"no route from {src} to {dst} (stuck at {path[-1]})")
            path.append(hop)
        return path

    def hop_count(self, src: str, dst: str) -> int | None:
        if src not in self._domain or dst not in self._domain:
            return None
        try:
            return len(self.compute_path(src, dst)) - 1
        except NoRoute:
            return None

    # ------------------------------------------------------------------
    # route config lines
    # ------------------------------------------------------------------

    def lines(self) -> list[RouteLine]:
        return [
            RouteLine(station, domain, hop, self._cache_in_transit[station])
            for station, table in self._routes.items()
            for domain, hop in table.items()
        ]

    def apply_lines(self, lines: list[RouteLine]) -> None:
        for line in lines:
            self.add_route(line.station, line.domain, line.next_hop)
            if line.cache_in_transit:
                self.set_cache_in_transit(line.station, True)

    # ------------------------------------------------------------------
    # internal helpers
    # ------------------------------------------------------------------

    def _require(self, node: str) -> None:
        if node not in self._domain:
            raise UnknownStation(f"unknown station {node!r}")

    def _find_loop(self, station: str, domain: str) -> list[str] | None:
        # Any walk toward a node of ``domain`` follows the ``domain`` entries
        # until it enters the domain, then hops directly. The table was
        # loop-free before this update, so checking the chain that starts at
        # ``station`` is enough.
        walk = [station]
        seen = {station}
        current = station
        while self._domain[current] != domain:
            hop = self._routes[current].get(domain)
            if hop is None:
                return None
            walk.append(hop)
            if hop in seen:
                return walk
            seen.add(hop)
            current = hop
        return None


def parse_route_lines(text: str) -> list[RouteLine]:
    """Parse ``station,domain,next_hop,cache_in_transit(0|1)`` lines."""
    lines = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), 1):
        if not row or row[0].lstrip().startswith("#"):
            continue
        if len(row) != 4:
            raise ValueError(f"route line {lineno}: expected 4 fields, got {len(row)}")
        station, domain, hop, flag = (c.strip() for c in row)
        if flag not in ("0", "1"):
            raise ValueError(f"route line {lineno}: cache_in_transit must be 0 or 1, got {flag!r}")
        lines.append(RouteLine(station, domain, hop, flag == "1"))
    return lines


def format_route_lines(lines: list[RouteLine]) -> str:
    return "".join(
        f"{ln.station},{ln.domain},{ln.next_hop},{int(ln.cache_in_transit)}\n" for ln in lines
    )
