"""Input file loaders: plain point lists and the OSM-XML road subset.

Point files are comma-separated ``x,y[,key=value...]`` lines.  Road maps are
OSM XML restricted to ``<node id lat lon>`` plus ``<way>`` elements tagged as
highways; consecutive node references inside a way become undirected edges
whose length is the great-circle distance in meters (one simulation length
unit is one meter).
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FileFormatError

EARTH_RADIUS_M = 6_371_000.0


@dataclass
class GisPoint:
    x: float
    y: float
    attrs: dict[str, str] = field(default_factory=dict)
    line: int = 0


@dataclass
class Graph:
    """Undirected road graph with planar node coordinates in meters."""

    nodes: dict[str, tuple[float, float]] = field(default_factory=dict)
    edges: dict[tuple[str, str], float] = field(default_factory=dict)
    _adjacency: dict[str, list[str]] | None = field(default=None, repr=False, compare=False)

    def edge_key(self, a: str, b: str) -> tuple[str, str]:
        return (a, b) if a <= b else (b, a)

    def add_edge(self, a: str, b: str, length: float) -> None:
        self.edges[self.edge_key(a, b)] = length
        self._adjacency = None

    def edge_length(self, a: str, b: str) -> float:
        return self.edges[self.edge_key(a, b)]

    def neighbors(self, node: str) -> list[str]:
        if self._adjacency is None:
            adj: dict[str, set[str]] = {n: set() for n in self.nodes}
            for a, b in self.edges:
                adj.setdefault(a, set()).add(b)
                adj.setdefault(b, set()).add(a)
            self._adjacency = {n: sorted(s) for n, s in adj.items()}
        return self._adjacency.get(node, [])

    def degree(self, node: str) -> int:
        return len(self.neighbors(node))

    def intersections(self, minimum_degree: int = 3) -> list[str]:
        return [n for n in sorted(self.nodes) if self.degree(n) >= minimum_degree]

    def sorted_nodes(self) -> list[str]:
        return sorted(self.nodes)


def load_gis_points(path: str | Path) -> list[GisPoint]:
    """Parse a point file, preserving line order; blank lines are skipped."""
    path = Path(path)
    if not path.exists():
        raise FileFormatError(f"{path}: file not found")
    points: list[GisPoint] = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) < 2:
            raise FileFormatError(f"{path}: line {lineno}: expected x,y")
        try:
            x, y = float(parts[0]), float(parts[1])
        except ValueError:
            raise FileFormatError(f"{path}: line {lineno}: expected number") from None
        attrs: dict[str, str] = {}
        for extra in parts[2:]:
            if "=" not in extra:
                raise FileFormatError(f"{path}: line {lineno}: expected key=value, got '{extra}'")
            key, value = extra.split("=", 1)
            attrs[key.strip()] = value.strip()
        points.append(GisPoint(x, y, attrs, lineno))
    return points


def haversine_m(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    phi1, phi2 = math.radians(lat1), math.radians(lat2)
    dphi = phi2 - phi1
    dlam = math.radians(lon2 - lon1)
    a = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(math.sqrt(a))


def load_osm_graph(path: str | Path) -> Graph:
    """Build the road graph from an OSM-XML file.

    Only ways carrying a ``highway`` tag contribute edges; a way referencing
    an undeclared node id is an error naming that id.
    """
    path = Path(path)
    if not path.exists():
        raise FileFormatError(f"{path}: file not found")
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as err:
        raise FileFormatError(f"{path}: malformed XML: {err}") from None
    latlon: dict[str, tuple[float, float]] = {}
    for node in root.iter("node"):
        try:
            node_id = node.attrib["id"]
            lat, lon = float(node.attrib["lat"]), float(node.attrib["lon"])
        except (KeyError, ValueError):
            raise FileFormatError(f"{path}: node element missing id/lat/lon") from None
        latlon[node_id] = (lat, lon)
    graph = Graph()
    if latlon:
        # Local planar projection around the mean latitude keeps Euclidean
        # coordinates consistent with the haversine edge lengths.
        lat0 = sum(lat for lat, _ in latlon.values()) / len(latlon)
        lon0 = min(lon for _, lon in latlon.values())
        lat_min = min(lat for lat, _ in latlon.values())
        scale = math.cos(math.radians(lat0))
        for node_id, (lat, lon) in latlon.items():
            x = math.radians(lon - lon0) * EARTH_RADIUS_M * scale
            y = math.radians(lat - lat_min) * EARTH_RADIUS_M
            graph.nodes[node_id] = (x, y)
    for way in root.iter("way"):
        tags = {t.attrib.get("k"): t.attrib.get("v") for t in way.iter("tag")}
        if "highway" not in tags:
            continue
        refs = [nd.attrib.get("ref") for nd in way.iter("nd")]
        for ref in refs:
            if ref not in latlon:
                raise FileFormatError(f"{path}: way references unknown node id {ref}")
        for a, b in zip(refs, refs[1:]):
            la, lb = latlon[a], latlon[b]
            graph.add_edge(a, b, haversine_m(la[0], la[1], lb[0], lb[1]))
    return graph


def graph_from_inline(nodes, edges) -> Graph:
    """Graph from inline node/edge declarations (metamodel objects)."""
    graph = Graph()
    for node in nodes:
        graph.nodes[node.name] = (node.x, node.y)
    for edge in edges:
        for end in (edge.source, edge.target):
            if end not in graph.nodes:
                graph.nodes[end] = (0.0, 0.0)
        graph.add_edge(edge.source, edge.target, edge.length)
    return graph
