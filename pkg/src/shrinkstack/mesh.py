"""Triangle mesh of the initial surface.

Each level is a polar grid on the disk of radius ``R_out``.  Around every
singular point the grid leaves out a polar rectangle (a block) that is
filled by rings graded geometrically from the bridge end circle out to the
block boundary.  Bridges are cylinder grids in the catenoid parameters
``(s, theta)``; their end circles are shared with the innermost rings of the
two levels they join, so the pieces are stitched by construction.

The grid is built symmetric under the reflections of the dihedral group: the
angular nodes contain ``0`` and ``pi/m`` and are symmetric about both, and
the ring angles at each point are read off the block boundary.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from . import balance, geometry

__all__ = [
    "SurfaceMesh",
    "MeshLayout",
    "build_mesh",
    "build_initial_surface",
    "group_generators",
    "symmetry_errors",
    "expected_vertex_count",
]


# ---------------------------------------------------------------------------
# symmetry group
# ---------------------------------------------------------------------------


def _reflection(c: float, flip: bool):
    c2, s2 = math.cos(2 * c), math.sin(2 * c)
    zs = -1.0 if flip else 1.0

    def g(X):
        X = np.asarray(X, dtype=float)
        return np.column_stack(
            [X[:, 0] * c2 + X[:, 1] * s2, X[:, 0] * s2 - X[:, 1] * c2, zs * X[:, 2]]
        )

    return g


def group_generators(group: str, m: int) -> dict:
    """Generators of ``D_mh`` or ``D_md`` as maps on ``(n, 3)`` arrays.

    ``sigma_v[c]`` reflects the plane across the line at angle ``c``;
    ``U[c]`` composes it with ``z -> -z``.
    """
    gens = {"sigma_v[0]": _reflection(0.0, False), "sigma_v[pi/m]": _reflection(math.pi / m, False)}
    if group == "D_mh":
        gens["U[0]"] = _reflection(0.0, True)
    elif group == "D_md":
        gens["U[pi/(2m)]"] = _reflection(math.pi / (2 * m), True)
    else:
        raise ValueError(f"unknown group {group!r}")
    return gens


# ---------------------------------------------------------------------------
# layout
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MeshLayout:
    """Grid parameters shared by all levels.

    Attributes
    ----------
    q : int
        Intervals per block side; every ring has ``4 q`` nodes.
    q_theta : int
        Angular intervals between the two families, so there are
        ``n_theta = 2 m q_theta`` angular nodes.
    radii : ndarray
        Radii of the polar rings (the origin is separate).
    i_lo, i_hi : int
        Ring indices bounding the radial band of the blocks.
    n_grade : dict
        Number of ring gaps between the bridge end and the block boundary,
        per doubled interface index.
    n_s : dict
        Number of ``s`` intervals of the bridges, per interface.
    """

    m: int
    q: int
    q_theta: int
    radii: np.ndarray = field(repr=False)
    i_lo: int = 0
    i_hi: int = 0
    n_grade: dict = field(default_factory=dict)
    n_s: dict = field(default_factory=dict)

    @property
    def n_theta(self) -> int:
        return 2 * self.m * self.q_theta

    @property
    def d_theta(self) -> float:
        return math.pi / (self.m * self.q_theta)


def _make_layout(data: geometry.SurfaceData, resolution: int, growth: float = 1.15) -> MeshLayout:
    if resolution < 16 or resolution % 8:
        raise ValueError("resolution must be a multiple of 8 and at least 16")
    m = data.m
    q = resolution // 4
    q_theta = q + 1
    d_theta = math.pi / (m * q_theta)
    dp = data.derived
    radii_l = list(dp.r.values())
    r_c = 0.5 * (max(radii_l) + min(radii_l))
    b = 0.5 * q * d_theta
    a = r_c * b
    spread = 0.5 * (max(radii_l) - min(radii_l)) + max(data.hole.values())
    if spread > 0.9 * min(a, (r_c - a) * b):
        raise ValueError("bridge holes do not fit in the grid blocks; raise the resolution")
    dr = 2.0 * a / q
    inner = r_c - a
    n_in = max(2, int(math.ceil(inner / dr)))
    r_in = list(inner * np.arange(1, n_in + 1) / n_in)
    band = list(inner + dr * np.arange(1, q + 1))
    i_lo = n_in - 1
    i_hi = i_lo + q
    r_out = []
    r, step = band[-1], dr
    while True:
        step *= growth
        if r + step >= data.R_out - 0.5 * step:
            break
        r += step
        r_out.append(r)
    radii = np.array(r_in + band + r_out + [data.R_out])
    n_grade, n_s = {}, {}
    for e, tau in dp.tau.items():
        hole = data.hole[e]
        reach = min(a, r_c * b * 0.5 + 0.5 * a)
        n_grade[e] = max(2, int(math.ceil(math.log(reach / hole) / math.log(1.4))))
        spec = data.bridge(e, 0)
        s_end = math.acosh(hole / spec.e_minus_omega / tau)
        n_s[e] = 2 * max(2, int(math.ceil(s_end * 4 * q / (2.0 * math.pi))))
    return MeshLayout(m, q, q_theta, radii, i_lo, i_hi, n_grade, n_s)


def expected_vertex_count(layout: MeshLayout, two_J: int) -> int:
    """Vertex count implied by the layout.

    Per level: the origin, the polar nodes minus those strictly inside
    blocks, and ``n_grade - 1`` graded rings per block.  Per bridge:
    ``n_s + 1`` rings.  Every ring has ``4 q`` nodes.
    """
    n = 0
    ring = 4 * layout.q
    nodes = len(layout.radii) * layout.n_theta
    for tj in balance.levels(two_J):
        n += 1 + nodes
        for e in (tj - 1, tj + 1):
            if abs(e) < two_J:
                n -= layout.m * (layout.q - 1) ** 2
                n += layout.m * (layout.n_grade[e] - 1) * ring
    for e in balance.interfaces(two_J):
        n += layout.m * (layout.n_s[e] + 1) * ring
    return n


# ---------------------------------------------------------------------------
# mesh type
# ---------------------------------------------------------------------------


@dataclass
class SurfaceMesh:
    """Triangulated initial surface.

    Attributes
    ----------
    vertices : ndarray, shape (n, 3)
    triangles : ndarray, shape (f, 3)
    tags : ndarray, shape (f,)
        Index into ``tag_names`` per triangle.
    tag_names : list of str
    group : str
        ``"D_mh"`` or ``"D_md"``.
    m, two_J : int
    layout : MeshLayout
    """

    vertices: np.ndarray
    triangles: np.ndarray
    tags: np.ndarray
    tag_names: list
    group: str
    m: int
    two_J: int
    layout: Optional[MeshLayout] = field(default=None, repr=False)

    # topology -----------------------------------------------------------

    def _edges(self):
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        key = np.sort(e, axis=1)
        uniq, counts = np.unique(key, axis=0, return_counts=True)
        return uniq, counts

    def edge_counts(self) -> dict:
        _, counts = self._edges()
        vals, num = np.unique(counts, return_counts=True)
        return {int(v): int(n) for v, n in zip(vals, num)}

    def is_watertight(self) -> bool:
        """Every edge is shared by one (boundary) or two triangles."""
        _, counts = self._edges()
        return bool(np.all((counts == 1) | (counts == 2)))

    def boundary_loops(self) -> list:
        """Boundary edges grouped into closed loops (lists of vertex indices)."""
        uniq, counts = self._edges()
        bd = uniq[counts == 1]
        nbr = {}
        for a, b in bd:
            nbr.setdefault(int(a), []).append(int(b))
            nbr.setdefault(int(b), []).append(int(a))
        if any(len(v) != 2 for v in nbr.values()):
            raise ValueError("boundary is not a disjoint union of loops")
        seen = set()
        loops = []
        for start in sorted(nbr):
            if start in seen:
                continue
            loop = [start]
            seen.add(start)
            prev, cur = None, start
            while True:
                a, b = nbr[cur]
                nxt = b if a == prev else a
                if nxt == start:
                    break
                loop.append(nxt)
                seen.add(nxt)
                prev, cur = cur, nxt
            loops.append(loop)
        return loops

    def euler_characteristic(self) -> int:
        used = np.unique(self.triangles)
        uniq, _ = self._edges()
        return int(len(used) - len(uniq) + len(self.triangles))

    def genus(self) -> int:
        b = len(self.boundary_loops())
        twice = 2 - self.euler_characteristic() - b
        if twice % 2:
            raise ValueError("odd 2 - chi - b; the mesh is not a compact orientable surface")
        return twice // 2

    def is_consistently_oriented(self) -> bool:
        t = self.triangles
        directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        _, counts = np.unique(directed, axis=0, return_counts=True)
        return bool(np.all(counts == 1))

    def orient(self) -> None:
        """Make the winding consistent by breadth-first propagation.

        Raises
        ------
        ValueError
            If the surface is not orientable.
        """
        t = self.triangles.copy()
        nf = len(t)
        edge_faces = {}
        for f in range(nf):
            for k in range(3):
                a, b = int(t[f, k]), int(t[f, (k + 1) % 3])
                edge_faces.setdefault((min(a, b), max(a, b)), []).append(f)
        flipped = np.zeros(nf, dtype=bool)
        done = np.zeros(nf, dtype=bool)

        def directed(f):
            tri = t[f][::-1] if flipped[f] else t[f]
            return {(int(tri[k]), int(tri[(k + 1) % 3])) for k in range(3)}

        for seed in range(nf):
            if done[seed]:
                continue
            done[seed] = True
            queue = deque([seed])
            while queue:
                f = queue.popleft()
                df = directed(f)
                for a, b in df:
                    for g in edge_faces[(min(a, b), max(a, b))]:
                        if g == f:
                            continue
                        dg = directed(g)
                        consistent = (b, a) in dg
                        if done[g]:
                            if not consistent:
                                raise ValueError("mesh is not orientable")
                            continue
                        if not consistent:
                            flipped[g] = True
                        done[g] = True
                        queue.append(g)
        t[flipped] = t[flipped][:, ::-1]
        self.triangles = t

    # export -------------------------------------------------------------

    def to_obj(self, path) -> None:
        """Write a Wavefront OBJ with one material group per region tag."""
        with open(path, "w") as fh:
            fh.write(f"# initial surface, group {self.group}, m={self.m}, J={self.two_J / 2}\n")
            for v in self.vertices:
                fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
            order = np.argsort(self.tags, kind="stable")
            current = None
            for f in order:
                tag = int(self.tags[f])
                if tag != current:
                    fh.write(f"usemtl {self.tag_names[tag].replace(' ', '_')}\n")
                    current = tag
                a, b, c = self.triangles[f] + 1
                fh.write(f"f {a} {b} {c}\n")

    def to_ply(self, path) -> None:
        """Write a binary little-endian PLY with a per-face tag and colour."""
        nv, nf = len(self.vertices), len(self.triangles)
        header = (
            "ply\nformat binary_little_endian 1.0\n"
            f"comment group {self.group} m {self.m} two_J {self.two_J}\n"
            f"element vertex {nv}\nproperty double x\nproperty double y\nproperty double z\n"
            f"element face {nf}\nproperty list uchar int vertex_indices\nproperty int tag\n"
            "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
        )
        palette = {"graph": (200, 200, 200), "bridge": (220, 80, 60), "glue": (60, 120, 220)}
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(np.ascontiguousarray(self.vertices, dtype="<f8").tobytes())
            rec = np.dtype([("n", "u1"), ("i", "<i4", 3), ("tag", "<i4"), ("rgb", "u1", 3)])
            out = np.zeros(nf, dtype=rec)
            out["n"] = 3
            out["i"] = self.triangles
            out["tag"] = self.tags
            colours = np.array([palette[name.split()[0]] for name in self.tag_names], dtype=np.uint8)
            out["rgb"] = colours[self.tags]
            fh.write(out.tobytes())

    def summary(self) -> dict:
        loops = self.boundary_loops()
        return {
            "group": self.group,
            "m": self.m,
            "J": self.two_J / 2.0,
            "vertices": int(len(self.vertices)),
            "triangles": int(len(self.triangles)),
            "watertight": self.is_watertight(),
            "oriented": self.is_consistently_oriented(),
            "boundary_loops": len(loops),
            "euler_characteristic": self.euler_characteristic(),
            "genus": self.genus(),
            "expected_genus": self.two_J * (self.m - 1),
        }


def symmetry_errors(mesh: SurfaceMesh) -> dict:
    """Hausdorff distance between the vertex set and its image per generator."""
    tree = cKDTree(mesh.vertices)
    out = {}
    for name, g in group_generators(mesh.group, mesh.m).items():
        img = g(mesh.vertices)
        d1, _ = tree.query(img)
        d2, _ = cKDTree(img).query(mesh.vertices)
        out[name] = float(max(d1.max(), d2.max()))
    return out


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


class _Builder:
    def __init__(self):
        self.verts = []
        self.n = 0
        self.tris = []
        self.tags = []
        self.tag_names = []
        self._tag_ids = {}

    def add(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 3)
        idx = np.arange(self.n, self.n + len(pts))
        self.verts.append(pts)
        self.n += len(pts)
        return idx

    def tag(self, name: str) -> int:
        if name not in self._tag_ids:
            self._tag_ids[name] = len(self.tag_names)
            self.tag_names.append(name)
        return self._tag_ids[name]

    def strip(self, ring_a: np.ndarray, ring_b: np.ndarray, tag: int) -> None:
        """Quads between two closed rings of equal length, split into triangles."""
        a0, b0 = ring_a, ring_b
        a1, b1 = np.roll(ring_a, -1), np.roll(ring_b, -1)
        self.tris.append(np.column_stack([a0, a1, b1]))
        self.tris.append(np.column_stack([a0, b1, b0]))
        self.tags.append(np.full(2 * len(a0), tag))

    def tris_from(self, tri: np.ndarray, tag: int) -> None:
        tri = np.asarray(tri).reshape(-1, 3)
        self.tris.append(tri)
        self.tags.append(np.full(len(tri), tag))


def _block_loop(layout: MeshLayout, kc: int) -> list:
    """Boundary nodes ``(i, k)`` of the block centred at angular node ``kc``."""
    q, lo, hi = layout.q, layout.i_lo, layout.i_hi
    k0, k1 = kc - q // 2, kc + q // 2
    loop = [(lo, k) for k in range(k0, k1)]
    loop += [(i, k1) for i in range(lo, hi)]
    loop += [(hi, k) for k in range(k1, k0, -1)]
    loop += [(i, k0) for i in range(hi, lo, -1)]
    return [(i, k % layout.n_theta) for i, k in loop]


def _centres(layout: MeshLayout, family: int) -> list:
    return [(family * layout.q_theta + 2 * layout.q_theta * n) % layout.n_theta for n in range(layout.m)]


def _loop_angles(layout: MeshLayout, kc: int, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Positions of the block boundary nodes and their angles about ``p``."""
    loop = _block_loop(layout, kc)
    r = layout.radii[[i for i, _ in loop]]
    th = layout.d_theta * np.array([k for _, k in loop])
    xy = np.column_stack([r * np.cos(th), r * np.sin(th)])
    er = p / np.hypot(*p)
    et = np.array([-er[1], er[0]])
    rel = xy - p
    return xy, np.arctan2(rel @ et, rel @ er)


def build_mesh(data: geometry.SurfaceData, resolution: int = 16, steps: int = geometry.FERMI_STEPS) -> SurfaceMesh:
    """Triangulate the initial surface described by ``data``.

    Parameters
    ----------
    data : SurfaceData
    resolution : int
        Nodes per bridge circumference (multiple of 8, at least 16).
    steps : int
        RK4 steps per Fermi-map leg.

    Raises
    ------
    ValueError
        If a bridge end circle does not fit inside its grid block or the
        layout is otherwise infeasible.
    """
    layout = _make_layout(data, resolution)
    dp = data.derived
    two_J, m = data.two_J, data.m
    B = _Builder()
    nt = layout.n_theta
    ring_n = 4 * layout.q

    # bridges ------------------------------------------------------------
    ends = {}
    for e in balance.interfaces(two_J):
        lat = dp.lattice(e)
        fam = lat.family
        n_s = layout.n_s[e]
        for idx, kc in enumerate(_centres(layout, fam)):
            spec = data.bridge(e, idx)
            p = np.asarray(spec.p)
            _, psi = _loop_angles(layout, kc, p)
            s_end = math.acosh(data.hole[e] / spec.e_minus_omega / spec.tau)
            s = s_end * np.linspace(-1.0, 1.0, n_s + 1)
            S, T = np.meshgrid(s, psi, indexing="ij")
            pts = geometry.catenoid_point(spec, S * (1 - 1e-15), T, steps=steps)
            rings = [B.add(pts[i]) for i in range(n_s + 1)]
            tag = B.tag(f"bridge l={e / 2} p={idx}")
            for i in range(n_s):
                B.strip(rings[i], rings[i + 1], tag)
            ends[(e, idx)] = (rings[0], rings[-1], pts[0], pts[-1])

    # levels -------------------------------------------------------------
    radii = layout.radii
    for tj in balance.levels(two_J):
        sides = data.sides(tj)
        blocks = []  # (kc, side, ell, idx)
        for s, ell, sheet in sides:
            fam = dp.lattice(ell).family
            for idx, kc in enumerate(_centres(layout, fam)):
                blocks.append((kc, s, ell, idx, sheet))
        inside_node = np.zeros((len(radii), nt), dtype=bool)
        inside_cell = np.zeros((len(radii) - 1, nt), dtype=bool)
        half = layout.q // 2
        for kc, *_ in blocks:
            ks = np.arange(kc - half, kc + half) % nt
            inside_cell[layout.i_lo : layout.i_hi, ks] = True
            kin = np.arange(kc - half + 1, kc + half) % nt
            inside_node[layout.i_lo + 1 : layout.i_hi, kin] = True
        # polar nodes
        I, K = np.nonzero(~inside_node)
        r = radii[I]
        th = layout.d_theta * K
        x, y = r * np.cos(th), r * np.sin(th)
        z = geometry.graph_phi_gl(data, tj, x, y, steps=steps)
        node_id = -np.ones((len(radii), nt), dtype=np.int64)
        node_id[I, K] = B.add(np.column_stack([x, y, z]))
        origin = B.add(np.array([[0.0, 0.0, float(geometry.graph_phi_gl(data, tj, 0.0, 0.0))]]))[0]
        tag = B.tag(f"graph j={tj / 2}")
        ring0 = node_id[0]
        B.tris_from(np.column_stack([np.full(nt, origin), ring0, np.roll(ring0, -1)]), tag)
        ci, ck = np.nonzero(~inside_cell)
        a = node_id[ci, ck]
        b = node_id[ci, (ck + 1) % nt]
        c = node_id[ci + 1, (ck + 1) % nt]
        d = node_id[ci + 1, ck]
        B.tris_from(np.column_stack([a, b, c]), tag)
        B.tris_from(np.column_stack([a, c, d]), tag)
        # graded rings inside blocks
        for kc, s, ell, idx, sheet in blocks:
            lower, upper, p_lower, p_upper = ends[(ell, idx)]
            inner_ids, inner_pts = (upper, p_upper) if sheet > 0 else (lower, p_lower)
            p = np.asarray(data.bridge(ell, idx).p)
            bxy, psi = _loop_angles(layout, kc, p)
            loop = _block_loop(layout, kc)
            outer_ids = np.array([node_id[i, k] for i, k in loop])
            rel0 = inner_pts[:, :2] - p
            rho0 = np.hypot(rel0[:, 0], rel0[:, 1])
            rho1 = np.hypot(*(bxy - p).T)
            if np.max(rho0) > 0.95 * np.min(rho1):
                raise ValueError("bridge end circle reaches the block boundary; stitching impossible")
            ang0 = np.arctan2(rel0[:, 1], rel0[:, 0])
            er = p / np.hypot(*p)
            base_ang = math.atan2(er[1], er[0])
            ang1 = psi + base_ang
            dang = np.angle(np.exp(1j * (ang1 - ang0)))
            n_g = layout.n_grade[ell]
            prev = inner_ids
            gtag = B.tag(f"glue j={tj / 2} side={'+' if s > 0 else '-'} p={idx}")
            for g in range(1, n_g):
                t = g / n_g
                rho = rho0 ** (1 - t) * rho1**t
                ang = ang0 + t * dang
                gx, gy = p[0] + rho * np.cos(ang), p[1] + rho * np.sin(ang)
                gz = geometry.graph_phi_gl(data, tj, gx, gy, steps=steps)
                ids = B.add(np.column_stack([gx, gy, gz]))
                B.strip(prev, ids, gtag)
                prev = ids
            B.strip(prev, outer_ids, gtag)
    verts = np.concatenate(B.verts)
    tris = np.concatenate(B.tris).astype(np.int64)
    tags = np.concatenate(B.tags).astype(np.int32)
    mesh = SurfaceMesh(verts, tris, tags, B.tag_names, data.group, m, two_J, layout)
    mesh.orient()
    return mesh


def build_initial_surface(
    two_J: int,
    m: int,
    pv: Optional[balance.ParamVector] = None,
    resolution: int = 16,
    **kw,
) -> tuple[SurfaceMesh, geometry.SurfaceData]:
    """Prepare the surface data (solving for ``pv`` if absent) and mesh it.

    Extra keyword arguments go to :func:`geometry.prepare_surface`.
    """
    data = geometry.prepare_surface(two_J, m, pv, **kw)
    return build_mesh(data, resolution), data
