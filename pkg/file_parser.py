# ============================================================
# file_parser.py - Black-Box Load Distribution
# Topology files, traffic-matrix series and Rocketfuel /
# geographic converters. Everything returns model objects.
# ============================================================

import logging
import math
from pathlib import Path
from typing import List, Dict, Tuple

import numpy as np

from models import (
    Link, Topology, TrafficMatrix, ParseError,
    DEFAULT_SERVICE_WEIGHT, DEFAULT_PROPAGATION, DEFAULT_CONGESTION_DELAY
)

logger = logging.getLogger(__name__)

SPEED_IN_FIBER = 2.0e8        # m/s
EARTH_RADIUS = 6_371_000.0    # m


def _read_lines(path) -> List[str]:
    raw = Path(path).read_bytes()
    for enc in ["utf-8", "utf-8-sig", "latin-1"]:
        try:
            return raw.decode(enc).splitlines()
        except UnicodeDecodeError:
            continue
    raise ParseError("Could not decode file", path=str(path))


def _records(path):
    """(line number, tokens) of every non-blank, non-comment line"""
    for number, line in enumerate(_read_lines(path), 1):
        text = line.split("#", 1)[0].strip()
        if text:
            yield number, text.split()


# ── Topology ──────────────────────────────────────────────────────────────────
def parse_topology_file(
    path,
    directed: bool = False,
    congestion_delay: float = DEFAULT_CONGESTION_DELAY,
) -> Topology:
    """
    One link per line: `src dst capacity [service_weight [propagation]]`.
    Missing service weight / propagation fall back to the model defaults.
    """
    edges: List[Link] = []
    seen = set()
    for number, tokens in _records(path):
        if not 3 <= len(tokens) <= 5:
            raise ParseError(f"expected 3-5 fields, got {len(tokens)}", number, str(path))
        try:
            src, dst = int(tokens[0]), int(tokens[1])
            values = [float(t) for t in tokens[2:]]
        except ValueError as e:
            raise ParseError(f"bad number ({e})", number, str(path)) from e
        if src < 0 or dst < 0:
            raise ParseError("node ids must be non-negative", number, str(path))
        capacity = values[0]
        service_weight = values[1] if len(values) > 1 else DEFAULT_SERVICE_WEIGHT
        propagation = values[2] if len(values) > 2 else DEFAULT_PROPAGATION
        key = (src, dst) if directed else (min(src, dst), max(src, dst))
        if key in seen:
            raise ParseError(f"duplicate link {src}-{dst}", number, str(path))
        seen.add(key)
        try:
            edges.append(Link(src, dst, capacity, service_weight, propagation, congestion_delay))
        except ValueError as e:
            raise ParseError(str(e), number, str(path)) from e
    if not edges:
        raise ParseError("no links found", path=str(path))
    topology = Topology.from_edges(edges, directed=directed)
    logger.info("📖 Loaded topology %s: %d nodes, %d links",
                path, len(topology.nodes), topology.num_links)
    return topology


def write_topology_file(topology: Topology, path) -> None:
    """Inverse of parse_topology_file (one record per undirected edge when undirected)"""
    lines = ["# src dst capacity service_weight propagation"]
    for link in topology.links:
        if not topology.directed and link.src > link.dst:
            continue
        lines.append(f"{link.src} {link.dst} {link.capacity!r} "
                     f"{link.service_weight!r} {link.propagation!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def validate_topology_file(path, directed: bool = False) -> Tuple[bool, str]:
    try:
        topology = parse_topology_file(path, directed)
    except (ParseError, OSError) as e:
        return False, str(e)
    return True, f"{len(topology.nodes)} nodes, {topology.num_links} links"


# ── Traffic matrix series ─────────────────────────────────────────────────────
def load_tm_series(path) -> List[TrafficMatrix]:
    """
    Header line `n`, then one line per step with n*n non-negative reals
    in row-major order.
    """
    records = list(_records(path))
    if not records:
        raise ParseError("empty traffic matrix series", path=str(path))
    number, header = records[0]
    try:
        n = int(header[0])
    except ValueError as e:
        raise ParseError("header must be the node count", number, str(path)) from e
    if len(header) != 1 or n < 1:
        raise ParseError("header must be a single positive node count", number, str(path))
    series = []
    for number, tokens in records[1:]:
        if len(tokens) != n * n:
            raise ParseError(f"expected {n * n} values, got {len(tokens)}", number, str(path))
        try:
            row = np.array([float(t) for t in tokens])
        except ValueError as e:
            raise ParseError(f"bad number ({e})", number, str(path)) from e
        if np.any(row < 0) or not np.all(np.isfinite(row)):
            raise ParseError("demands must be finite and non-negative", number, str(path))
        matrix = row.reshape(n, n)
        if np.any(np.diag(matrix) != 0):
            raise ParseError("diagonal demands must be zero", number, str(path))
        series.append(TrafficMatrix(matrix))
    logger.info("📖 Loaded %d traffic matrices (n=%d) from %s", len(series), n, path)
    return series


def write_tm_series(path, series: List[TrafficMatrix]) -> None:
    if not series:
        raise ValueError("Nothing to write")
    n = series[0].n
    lines = [str(n)]
    for tm in series:
        if tm.n != n:
            raise ValueError("All matrices in a series must share one size")
        lines.append(" ".join(repr(float(v)) for v in tm.demand.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


# ── Converters ────────────────────────────────────────────────────────────────
def convert_rocketfuel(
    path,
    capacity: float,
    value_kind: str = "latency",
    service_weight: float = DEFAULT_SERVICE_WEIGHT,
) -> Tuple[Topology, Dict[str, int]]:
    """
    Rocketfuel `latencies.intra` / `weights.intra` style files:
    `name1 name2 value` per line. Latencies (ms) become propagation delays;
    IGP weights are dropped since routing uses hop count.
    Returns the topology and the name -> node id map.
    """
    if value_kind not in ("latency", "weight"):
        raise ValueError(f"Unknown value kind: {value_kind}")
    ids: Dict[str, int] = {}
    edges: Dict[Tuple[int, int], Link] = {}
    for number, tokens in _records(path):
        if len(tokens) < 2:
            raise ParseError("expected two router names", number, str(path))
        a = ids.setdefault(tokens[0], len(ids))
        b = ids.setdefault(tokens[1], len(ids))
        if a == b:
            continue
        propagation = DEFAULT_PROPAGATION
        if value_kind == "latency" and len(tokens) > 2:
            try:
                propagation = float(tokens[2]) / 1000.0
            except ValueError as e:
                raise ParseError(f"bad latency ({e})", number, str(path)) from e
        key = (min(a, b), max(a, b))
        # both directions usually appear; keep the first record
        edges.setdefault(key, Link(key[0], key[1], capacity, service_weight, propagation))
    if not edges:
        raise ParseError("no links found", path=str(path))
    return Topology.from_edges(list(edges.values()), nodes=list(range(len(ids)))), ids


def propagation_from_coordinates(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    """Great-circle distance between two locations at fibre speed, in seconds"""
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dphi = phi2 - phi1
    dlmb = math.radians(lon2 - lon1)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    distance = 2 * EARTH_RADIUS * math.asin(min(1.0, math.sqrt(h)))
    return distance / SPEED_IN_FIBER


def apply_geographic_propagation(
    topology: Topology,
    coordinates: Dict[int, Tuple[float, float]],
) -> Topology:
    """Replace propagation delays with great-circle values where both ends are located"""
    links = []
    for link in topology.links:
        if link.src in coordinates and link.dst in coordinates:
            p = propagation_from_coordinates(*coordinates[link.src], *coordinates[link.dst])
            link = Link(link.src, link.dst, link.capacity, link.service_weight,
                        p, link.congestion_delay)
        links.append(link)
    return Topology(topology.nodes, tuple(links), topology.directed)


def parse_coordinates_file(path) -> Dict[int, Tuple[float, float]]:
    """`node lat lon` per line"""
    coords = {}
    for number, tokens in _records(path):
        if len(tokens) != 3:
            raise ParseError("expected `node lat lon`", number, str(path))
        try:
            coords[int(tokens[0])] = (float(tokens[1]), float(tokens[2]))
        except ValueError as e:
            raise ParseError(f"bad coordinate ({e})", number, str(path)) from e
    return coords
