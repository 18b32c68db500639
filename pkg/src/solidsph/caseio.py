"""Case-file loading: the XML subset used by the solid-mechanics cases,
particle geometry generation (box, cylinder) with per-body refinement, and
resolution of mk identifiers, BC target sets, notches and measure planes.

Only the vocabulary the solid cases actually use is interpreted; other
host-framework elements are skipped with a logged notice so upstream files
still load.
"""

from __future__ import annotations

import logging
import math
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import expr as ex
from . import fracture, kernel_geom
from .core import (Body, BoundaryCondition, CaseConfig, CaseError,
                   KernelKind, MaterialParams, Model, ParticleArrays, Quad,
                   StepAlgorithm, normalize_elastic_constants)

logger = logging.getLogger("solidsph")

MAX_QUADS = 512

_VAR_RE = re.compile(r"#([A-Za-z_][A-Za-z0-9_]*)")


def _resolve_num(text, varmap, where):
    """Numeric attribute values may be arithmetic over #newvar references."""
    def sub(m):
        name = m.group(1)
        if name not in varmap:
            raise CaseError(f"unknown variable #{name} in {where}")
        return f"({varmap[name]!r})"

    expanded = _VAR_RE.sub(sub, text.strip())
    try:
        node = ex._Parser(expanded, {}).parse()
        val = ex.eval_node(node, None)
    except ex.ExprError as err:
        raise CaseError(f"bad numeric value {text!r} in {where}: {err}") from None
    if val is ex.SKIP:
        raise CaseError(f"bad numeric value {text!r} in {where}")
    return float(val)


def _attr(elem, name, varmap, where, default=None, required=False):
    raw = elem.get(name)
    if raw is None:
        if required:
            raise CaseError(f"missing attribute {name!r} in {where}")
        return default
    return _resolve_num(raw, varmap, f"{where}@{name}")


def _parse_bool(raw, where):
    val = raw.strip().lower()
    if val in ("true", "1", "yes", "on"):
        return True
    if val in ("false", "0", "no", "off"):
        return False
    raise CaseError(f"bad boolean {raw!r} in {where}")


# -- geometry ---------------------------------------------------------------

def _axis_centers(origin, length, dp, clamp_min1):
    count = int(round(length / dp))
    if count >= 1:
        return origin + (np.arange(count) + 0.5) * dp
    if clamp_min1:
        return np.array([origin + 0.5 * length])
    return np.array([])


def generate_box(origin, size, dp_body, dim=3, rho0=1.0, y_plane=0.0,
                 clamp_min1=False):
    """Cell-centered lattice filling the box; V0 = dp^d (unit out-of-plane
    thickness in 2D).  Returns (positions, V0, m0)."""
    origin = np.asarray(origin, dtype=np.float64)
    size = np.asarray(size, dtype=np.float64)
    if np.any(size <= 0.0) and not (dim == 2 and np.all(size[[0, 2]] > 0.0)):
        raise CaseError("box size must be positive along every used axis")
    axes = []
    for ax in range(3):
        if dim == 2 and ax == 1:
            axes.append(np.array([y_plane]))
            continue
        centers = _axis_centers(origin[ax], size[ax], dp_body, clamp_min1)
        if centers.size == 0:
            raise CaseError("box produced zero particles "
                            f"(extent {size[ax]!r} at dp {dp_body!r})")
        axes.append(centers)
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    pos = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    v0 = dp_body ** 2 if dim == 2 else dp_body ** 3
    V0 = np.full(pos.shape[0], v0)
    return pos, V0, rho0 * V0


def generate_cylinder(p0, p1, radius, dp_body, dim=3, rho0=1.0):
    """Axis-aligned lattice clipped to the cylinder radius; V0 = dp^3."""
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    if dim != 3:
        raise CaseError("cylinders are only supported in 3D cases")
    delta = p1 - p0
    axis = int(np.argmax(np.abs(delta)))
    scale = max(np.abs(delta).max(), 1e-12)
    for ax in range(3):
        if ax != axis and abs(delta[ax]) > 1e-9 * scale:
            raise CaseError("only axis-aligned cylinders are supported")
    lo, hi = sorted((p0[axis], p1[axis]))
    axial = _axis_centers(lo, hi - lo, dp_body, clamp_min1=False)
    if axial.size == 0:
        raise CaseError("cylinder produced zero particles along its axis")
    k = int(math.ceil(radius / dp_body)) + 1
    offsets = (np.arange(-k, k) + 0.5) * dp_body
    perp = [ax for ax in range(3) if ax != axis]
    g1, g2 = np.meshgrid(offsets, offsets, indexing="ij")
    keep = g1 ** 2 + g2 ** 2 <= radius * radius
    if not keep.any():
        raise CaseError("cylinder radius too small for the particle spacing")
    o1 = g1[keep]
    o2 = g2[keep]
    m = o1.size
    pos = np.empty((m * axial.size, 3))
    pos[:, axis] = np.repeat(axial, m)
    pos[:, perp[0]] = np.tile(o1 + p0[perp[0]], axial.size)
    pos[:, perp[1]] = np.tile(o2 + p0[perp[1]], axial.size)
    V0 = np.full(pos.shape[0], dp_body ** 3)
    return pos, V0, rho0 * V0


def _generate_shapes(shapes, dp, dim, y_plane, rho0=1.0, clamp_min1=False):
    parts = [
        generate_box(s["point"], s["size"], dp, dim, rho0, y_plane,
                     clamp_min1)
        if s["kind"] == "box" else
        generate_cylinder(s["p0"], s["p1"], s["radius"], dp, dim, rho0)
        for s in shapes
    ]
    pos = np.concatenate([p[0] for p in parts])
    V0 = np.concatenate([p[1] for p in parts])
    m0 = np.concatenate([p[2] for p in parts])
    return pos, V0, m0


# -- target sets -------------------------------------------------------------

def resolve_bc_targets(body, mkid, aux_geometries, dp, where):
    """Whole body (None) or particles within the base spacing of the mkid
    auxiliary geometry (resolved once, reference configuration)."""
    if mkid is None:
        return None
    aux = aux_geometries.get(mkid)
    if aux is None:
        raise CaseError(f"{where}: mkid {mkid} does not name an auxiliary "
                        "geometry")
    tree = cKDTree(aux)
    dist, _ = tree.query(body.state.X)
    idx = np.flatnonzero(dist < dp)
    if idx.size == 0:
        raise CaseError(f"{where}: empty target set (auxiliary geometry "
                        f"mk={mkid} too far from body {body.mk})")
    return idx.astype(np.int64)


def resolve_measure_plane(body, quad):
    """Particles within dp_body of the quad's plane and inside its in-plane
    extent; empty sets are allowed (warned by the caller)."""
    scale = max(np.abs(quad.points).max(), 1.0)
    origin, nhat, e1h, e2h, poly = kernel_geom._quad_frame(quad, scale)
    X = body.state.X
    d = (X - origin) @ nhat
    near = np.abs(d) <= body.dp_body * (1.0 + 1e-9)
    idx = np.flatnonzero(near)
    if idx.size == 0:
        return idx.astype(np.int64)
    loc = (X[idx] - origin) @ np.stack([e1h, e2h], axis=1)
    inside = kernel_geom._points_in_poly(loc, poly)
    return idx[inside].astype(np.int64)


# -- raw XML parse -----------------------------------------------------------

@dataclass
class _RawBody:
    mk: int
    cards: dict = field(default_factory=dict)
    bcs: list = field(default_factory=list)
    notches: list = field(default_factory=list)
    planes: list = field(default_factory=list)
    where: str = ""


@dataclass
class _RawCase:
    path: str
    dp: float = 0.0
    coefh: float = 1.0
    cfl: float = 0.2
    gravity: np.ndarray = None
    dim: int = 3
    y_plane: float = 0.0
    kernel: KernelKind = KernelKind.WENDLAND
    algo: StepAlgorithm = StepAlgorithm.VERLET
    time_max: float = None
    time_out: float = None
    shapes: list = field(default_factory=list)
    expressions: list = field(default_factory=list)
    bodies: list = field(default_factory=list)
    dt_override: float = None
    contcoeff: float = 1.0
    notices: list = field(default_factory=list)


def _notice(raw, msg):
    raw.notices.append(msg)
    logger.debug("%s: %s", raw.path, msg)


def _quad_from(elem, varmap, where):
    pts = []
    for tag in ("p1", "p2", "p3", "p4"):
        child = elem.find(tag)
        if child is None:
            raise CaseError(f"{where}: missing corner {tag}")
        pts.append([_attr(child, ax, varmap, f"{where}/{tag}", required=True)
                    for ax in ("x", "y", "z")])
    return Quad(points=np.asarray(pts))


def parse_case(path):
    try:
        tree = ET.parse(path)
    except (OSError, ET.ParseError) as err:
        raise CaseError(f"cannot read case file {path}: {err}") from None
    root = tree.getroot()
    raw = _RawCase(path=str(path), gravity=np.zeros(3))
    varmap = {}

    const = root.find("./casedef/constantsdef")
    if const is not None:
        for elem in const:
            if elem.tag == "gravity":
                raw.gravity = np.array([
                    _attr(elem, ax, varmap, "gravity", default=0.0)
                    for ax in ("x", "y", "z")])
            elif elem.tag == "coefh":
                raw.coefh = _attr(elem, "value", varmap, "coefh", required=True)
            elif elem.tag == "cflnumber":
                raw.cfl = _attr(elem, "value", varmap, "cflnumber",
                                required=True)
            else:
                _notice(raw, f"ignoring constantsdef element <{elem.tag}>")

    geom = root.find("./casedef/geometry")
    if geom is None:
        raise CaseError("case has no <geometry> section")
    definition = geom.find("definition")
    if definition is None or definition.get("dp") is None:
        raise CaseError("geometry definition with dp attribute is required")
    raw.dp = _resolve_num(definition.get("dp"), varmap, "definition@dp")
    pmin = definition.find("pointmin")
    pmax = definition.find("pointmax")
    if pmin is not None and pmax is not None:
        ymin = _attr(pmin, "y", varmap, "pointmin", default=0.0)
        ymax = _attr(pmax, "y", varmap, "pointmax", default=0.0)
        if ymin == ymax:
            raw.dim = 2
            raw.y_plane = ymin

    mainlist = geom.find("./commands/mainlist")
    if mainlist is None:
        raise CaseError("geometry has no <commands><mainlist>")
    current_mk = None
    for elem in mainlist:
        if elem.tag == "newvar":
            for name, value in elem.attrib.items():
                varmap[name] = _resolve_num(value, varmap, f"newvar@{name}")
        elif elem.tag == "setmkbound":
            current_mk = int(elem.get("mk"))
        elif elem.tag == "drawbox":
            if current_mk is None:
                raise CaseError("drawbox before any setmkbound")
            fill = elem.findtext("boxfill", default="solid").strip()
            if fill != "solid":
                _notice(raw, f"boxfill mode {fill!r} treated as solid")
            point = elem.find("point")
            size = elem.find("size")
            if point is None or size is None:
                raise CaseError("drawbox requires <point> and <size>")
            raw.shapes.append({
                "mk": current_mk, "kind": "box",
                "point": [_attr(point, ax, varmap, "drawbox/point",
                                default=0.0) for ax in ("x", "y", "z")],
                "size": [_attr(size, ax, varmap, "drawbox/size",
                               default=0.0) for ax in ("x", "y", "z")],
            })
        elif elem.tag == "drawcylinder":
            if current_mk is None:
                raise CaseError("drawcylinder before any setmkbound")
            pts = elem.findall("point")
            if len(pts) != 2:
                raise CaseError("drawcylinder requires two <point> children")
            raw.shapes.append({
                "mk": current_mk, "kind": "cylinder",
                "radius": _resolve_num(elem.get("radius"), varmap,
                                       "drawcylinder@radius"),
                "p0": [_attr(pts[0], ax, varmap, "drawcylinder/point",
                             default=0.0) for ax in ("x", "y", "z")],
                "p1": [_attr(pts[1], ax, varmap, "drawcylinder/point",
                             default=0.0) for ax in ("x", "y", "z")],
            })
        else:
            _notice(raw, f"ignoring geometry command <{elem.tag}>")

    if root.find("./casedef/motion") is not None:
        _notice(raw, "ignoring <motion> section (deformable bodies move "
                      "through the solid solver)")

    for uexp in root.iterfind("./execution/special/mathexpressions/"
                              "userexpression"):
        eid = int(uexp.get("id"))
        locals_el = uexp.find("locals")
        expr_el = uexp.find("expression")
        if expr_el is None or expr_el.get("value") is None:
            raise CaseError(f"userexpression id={eid} has no expression value")
        raw.expressions.append({
            "id": eid,
            "locals": locals_el.get("value", "") if locals_el is not None else "",
            "source": expr_el.get("value"),
        })

    defs = root.find("./execution/special/deformstrucs")
    if defs is None:
        raise CaseError("case has no <special><deformstrucs> section")
    for elem in defs:
        where = f"deformstrucs/{elem.tag}"
        if elem.tag == "timestep":
            raw.dt_override = _attr(elem, "value", varmap, where,
                                    required=True)
        elif elem.tag == "contcoeff":
            raw.contcoeff = _attr(elem, "value", varmap, where, required=True)
        elif elem.tag == "deformstrucbody":
            raw.bodies.append(_parse_body(elem, varmap, raw))
        else:
            _notice(raw, f"ignoring deformstrucs element <{elem.tag}>")
    if not raw.bodies:
        raise CaseError("deformstrucs defines no deformstrucbody")

    params = root.find("./execution/parameters")
    if params is not None:
        for elem in params:
            if elem.tag == "parameter":
                key = elem.get("key")
                if key == "StepAlgorithm":
                    raw.algo = StepAlgorithm(int(elem.get("value")))
                elif key == "Kernel":
                    raw.kernel = KernelKind(int(elem.get("value")))
                elif key == "TimeMax":
                    raw.time_max = _resolve_num(elem.get("value"), varmap,
                                                "parameter TimeMax")
                elif key == "TimeOut":
                    raw.time_out = _resolve_num(elem.get("value"), varmap,
                                                "parameter TimeOut")
                else:
                    _notice(raw, f"ignoring parameter {key!r}")
            else:
                _notice(raw, f"ignoring parameters element <{elem.tag}>")
    if raw.time_max is None or raw.time_out is None:
        raise CaseError("parameters must define TimeMax and TimeOut")
    return raw


_BODY_VALUE_CARDS = {
    "density", "youngmod", "poissratio", "u_lambda", "u_mu", "u_bulk",
    "constitmodel", "mapfac", "nbsrange", "yieldstress", "hardening",
    "restcoef", "kfric", "Gc", "pflenscale", "pflim", "avfactor",
}


def _parse_body(elem, varmap, raw):
    mk = int(elem.get("mkbound"))
    body = _RawBody(mk=mk, where=f"deformstrucbody mkbound={mk}")
    for child in elem:
        where = f"{body.where}/{child.tag}"
        if child.tag in _BODY_VALUE_CARDS:
            body.cards[child.tag] = _attr(child, "value", varmap, where,
                                          required=True)
        elif child.tag == "artvisc":
            body.cards["beta1"] = _attr(child, "factor1", varmap, where,
                                        default=0.2)
            body.cards["beta2"] = _attr(child, "factor2", varmap, where,
                                        default=0.0)
        elif child.tag == "fracture":
            body.cards["fracture"] = _parse_bool(child.get("value", "true"),
                                                 where)
        elif child.tag == "kernelcorrection":
            body.cards["kernel_correction"] = _parse_bool(
                child.get("value", "true"), where)
        elif child.tag == "restrictphi":
            body.cards["restrictphi"] = int(child.get("value"))
        elif child.tag in ("bcvel", "bcforce"):
            body.bcs.append(_parse_bc(child, varmap, where))
        elif child.tag == "notch":
            body.notches.append(_quad_from(child, varmap, where))
        elif child.tag == "measureplane":
            body.planes.append(_quad_from(child, varmap, where))
        else:
            _notice(raw, f"ignoring {where}")
    if len(body.notches) > MAX_QUADS:
        raise CaseError(f"{body.where}: more than {MAX_QUADS} notches")
    if len(body.planes) > MAX_QUADS:
        raise CaseError(f"{body.where}: more than {MAX_QUADS} measure planes")
    return body


def _parse_bc(elem, varmap, where):
    const = []
    exprs = []
    for ax in ("x", "y", "z"):
        raw_c = elem.get(ax)
        raw_e = elem.get(ax + "e")
        if raw_c is not None and raw_e is not None:
            raise CaseError(f"{where}: both {ax} and {ax}e given")
        const.append(_resolve_num(raw_c, varmap, f"{where}@{ax}")
                     if raw_c is not None else None)
        exprs.append(int(raw_e) if raw_e is not None else None)
    bc = {
        "kind": "vel" if elem.tag == "bcvel" else "force",
        "mkid": int(elem.get("mkid")) if elem.get("mkid") is not None else None,
        "const": tuple(const),
        "expr": tuple(exprs),
        "tst": _attr(elem, "tst", varmap, where, default=0.0),
        "tend": _attr(elem, "tend", varmap, where, default=math.inf),
        "where": where,
    }
    if elem.tag == "bcforce":
        if elem.get("type") is None:
            raise CaseError(f"{where}: bcforce requires a type attribute")
        bc["ftype"] = int(elem.get("type"))
        if bc["ftype"] not in (1, 2, 3):
            raise CaseError(f"{where}: bcforce type must be 1, 2 or 3")
    return bc


# -- case assembly -----------------------------------------------------------

def _material_from_cards(cards, mk):
    where = f"mkbound={mk}"
    if "density" not in cards:
        raise CaseError(f"density is required (body {where})")
    lam, mu, kappa = normalize_elastic_constants(
        E=cards.get("youngmod"),
        nu=cards.get("poissratio"),
        lam=cards.get("u_lambda"),
        mu=cards.get("u_mu"),
        kappa=cards.get("u_bulk"),
        where=where)
    beta1 = cards.get("beta1", cards.get("avfactor", 0.2))
    model = Model(int(cards.get("constitmodel", 1)))
    return MaterialParams(
        rho0=cards["density"], lam=lam, mu=mu, kappa=kappa, model=model,
        beta1=beta1, beta2=cards.get("beta2", 0.0),
        Gc=cards.get("Gc", 0.0), eps0=cards.get("pflenscale", 0.0),
        s_l=cards.get("pflim", 0.1),
        sigma_y0=cards.get("yieldstress", 0.0),
        H_hard=cards.get("hardening", 0.0),
        restcoef=cards.get("restcoef", 1.0),
        kfric=cards.get("kfric", 0.0))


def build_case(raw, dp_scale=1.0, mapfac=None, eps0=None, cfl=None,
               time_max=None, time_out=None, dt_override=None,
               kernel_correction=None):
    """Assemble a runnable CaseConfig from the parsed file, applying
    optional benchmark-scaling overrides (dp := dp * dp_scale)."""
    dp = raw.dp * dp_scale
    config = CaseConfig(
        dp=dp, coefh=raw.coefh, cfl=raw.cfl if cfl is None else cfl,
        kernel=raw.kernel, step_algorithm=raw.algo,
        time_max=raw.time_max if time_max is None else time_max,
        time_out=raw.time_out if time_out is None else time_out,
        dim=raw.dim, gravity=raw.gravity.copy(),
        dt_override=raw.dt_override if dt_override is None else dt_override,
        contcoeff=raw.contcoeff)
    config.notices = list(raw.notices)

    body_mks = {b.mk for b in raw.bodies}
    for rbody in raw.bodies:
        if not any(s["mk"] == rbody.mk for s in raw.shapes):
            raise CaseError(f"{rbody.where}: no geometry drawn for this mk")

    # auxiliary (non-deformable) geometries at the base spacing; counts are
    # clamped to >= 1 per axis so thin BC strips stay addressable
    for mk in sorted({s["mk"] for s in raw.shapes} - body_mks):
        shapes = [s for s in raw.shapes if s["mk"] == mk]
        pos, _, _ = _generate_shapes(shapes, dp, raw.dim, raw.y_plane,
                                     clamp_min1=True)
        config.aux_geometries[mk] = pos

    for entry in raw.expressions:
        try:
            ast = ex.parse(entry["source"], entry["locals"])
        except ex.ExprError as err:
            raise CaseError(
                f"userexpression id={entry['id']}: {err}") from None
        config.expressions[entry["id"]] = ast

    for rbody in raw.bodies:
        cards = dict(rbody.cards)
        if mapfac is not None:
            cards["mapfac"] = mapfac
        if eps0 is not None:
            cards["pflenscale"] = eps0
        if kernel_correction is not None:
            cards["kernel_correction"] = kernel_correction
        mat = _material_from_cards(cards, rbody.mk)
        mat.contcoeff = config.contcoeff
        frac = bool(cards.get("fracture", False))
        if frac and mat.model == Model.J2:
            config.notices.append(
                f"body mk={rbody.mk}: fracture disabled (J2 plasticity)")
            logger.info("body mk=%d: fracture disabled (J2 plasticity)",
                        rbody.mk)
            frac = False
        mat.validate(frac, where=f"mk={rbody.mk}")

        mf = cards.get("mapfac", 1.0)
        if mf < 1 or abs(mf - round(mf)) > 1e-9:
            raise CaseError(f"{rbody.where}: mapfac must be a positive "
                            "integer")
        dp_body = dp / int(round(mf))
        shapes = [s for s in raw.shapes if s["mk"] == rbody.mk]
        pos, V0, m0 = _generate_shapes(shapes, dp_body, raw.dim, raw.y_plane,
                                       rho0=mat.rho0)
        state = ParticleArrays.from_reference(pos, V0, mat.rho0)
        h = kernel_geom.smoothing_length(dp_body, raw.coefh, raw.dim)
        body = Body(
            mk=rbody.mk, state=state, material=mat, dp_body=dp_body, h=h,
            dim=raw.dim, fracture=frac,
            notches=list(rbody.notches),
            restrictphi_expr=cards.get("restrictphi"),
            nbsrange=int(cards["nbsrange"]) if "nbsrange" in cards else None,
            kernel_correction=bool(cards.get("kernel_correction", True)),
            f0=raw.gravity.copy())
        if raw.dim == 2:
            body.f0[1] = 0.0
        if frac and mat.eps0 < dp_body:
            config.notices.append(
                f"body mk={rbody.mk}: pflenscale {mat.eps0!r} below the "
                f"particle spacing {dp_body!r}")
        try:
            body.adjacency = kernel_geom.build_adjacency(
                pos, V0, h, raw.dim, raw.kernel,
                nbsrange=body.nbsrange, dp_body=dp_body,
                notches=body.notches, correction=body.kernel_correction)
        except CaseError as err:
            raise CaseError(f"{rbody.where}: {err}") from None

        for bc_raw in rbody.bcs:
            for eid in bc_raw["expr"]:
                if eid is not None and eid not in config.expressions:
                    raise CaseError(f"{bc_raw['where']}: unknown expression "
                                    f"id {eid}")
            bc = BoundaryCondition(
                kind=bc_raw["kind"], ftype=bc_raw.get("ftype", 0),
                mkid=bc_raw["mkid"], const=bc_raw["const"],
                expr=bc_raw["expr"], tst=bc_raw["tst"], tend=bc_raw["tend"])
            bc.target = resolve_bc_targets(
                body, bc.mkid, config.aux_geometries, dp, bc_raw["where"])
            body.bcs.append(bc)

        for quad in rbody.planes:
            body.measure_planes.append(quad)
            idx = resolve_measure_plane(body, quad)
            if idx.size == 0:
                config.notices.append(
                    f"body mk={rbody.mk}: empty measure-plane particle set")
                logger.warning("body mk=%d: empty measure-plane particle set",
                               rbody.mk)
            body.measure_sets.append(idx)

        config.bodies.append(body)

    config.validate()
    for body in config.bodies:
        if body.restrictphi_expr is not None:
            fracture.restrictphi_values(body, config.expressions, 0.0, 0.0)
    return config


def load_case(path, **overrides):
    """Parse and assemble a case file into a validated CaseConfig."""
    return build_case(parse_case(path), **overrides)
