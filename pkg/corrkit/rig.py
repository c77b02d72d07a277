from __future__ import annotations
from typing import Dict, Iterable, List, Optional, Tuple
import logging
import math
import networkx as nx
import numpy as np

from .core import CameraModel, PoseWarp, compose_camera_pair, compose_warps
from .errors import ArgumentError

logger = logging.getLogger(__name__)


class PoseGraph:
    """Posed frames as nodes, candidate correspondence pairs as edges.

    Frames keep insertion order; ``pairs()`` orients every edge from the
    earlier frame to the later one.
    """

    def __init__(self):
        self.g = nx.Graph()
        self._order: Dict[str, int] = {}

    def add_camera(self, name: str, cam: CameraModel):
        if name not in self._order:
            self._order[name] = len(self._order)
        self.g.add_node(name, camera=cam, index=self._order[name])

    def camera(self, name: str) -> CameraModel:
        if name not in self.g:
            raise ArgumentError(f"unknown frame {name!r}")
        return self.g.nodes[name]["camera"]

    @property
    def frames(self) -> List[str]:
        return sorted(self._order, key=self._order.get)

    def link(self, a: str, b: str, **extras):
        self.camera(a); self.camera(b)
        self.g.add_edge(a, b, **extras)

    def link_similar(self, max_angle_deg: float = 30.0, max_baseline: float = math.inf,
                     min_baseline: float = 0.0) -> int:
        """Connect frames whose optical axes and centres are close enough to share a view."""
        frames = self.frames
        added = 0
        for i, a in enumerate(frames):
            ca = self.camera(a)
            for b in frames[i + 1:]:
                cb = self.camera(b)
                cosang = float(np.clip(ca.optical_axis @ cb.optical_axis, -1.0, 1.0))
                angle = math.degrees(math.acos(cosang))
                baseline = float(np.linalg.norm(ca.center - cb.center))
                if angle <= max_angle_deg and min_baseline <= baseline <= max_baseline:
                    self.g.add_edge(a, b, angle=angle, baseline=baseline)
                    added += 1
        logger.debug("linked %d posed pairs among %d frames", added, len(frames))
        return added

    def pairs(self) -> List[Tuple[str, str]]:
        out = []
        for a, b in self.g.edges():
            if self._order[a] > self._order[b]:
                a, b = b, a
            out.append((a, b))
        return sorted(out, key=lambda e: (self._order[e[0]], self._order[e[1]]))

    def direct_warp(self, src: str, dst: str) -> PoseWarp:
        return compose_camera_pair(self.camera(src), self.camera(dst))

    def chain_warp(self, path: Iterable[str]) -> PoseWarp:
        path = list(path)
        if len(path) < 2:
            raise ArgumentError("a warp chain needs at least two frames")
        warp = self.direct_warp(path[0], path[1])
        for a, b in zip(path[1:], path[2:]):
            warp = compose_warps(warp, self.direct_warp(a, b))
        return warp

    def warp(self, src: str, dst: str) -> PoseWarp:
        """Warp along the shortest linked path; direct when the frames are adjacent."""
        try:
            path = nx.shortest_path(self.g, src, dst)
        except (nx.NetworkXNoPath, nx.NodeNotFound) as e:
            raise ArgumentError(f"no linked path from {src!r} to {dst!r}") from e
        return self.chain_warp(path) if len(path) > 1 else compose_camera_pair(self.camera(src), self.camera(dst))

    def components(self) -> List[List[str]]:
        comps = [sorted(c, key=self._order.get) for c in nx.connected_components(self.g)]
        return sorted(comps, key=lambda c: self._order[c[0]])
