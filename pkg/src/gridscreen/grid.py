"""Grid model: case parsing, network matrices, and equilibrium state.

A grid is a weighted multigraph of buses and branches together with the
per-bus dynamic parameters (inertia, damping, net power injection) needed
by the swing dynamics. Cases are read either from MATPOWER-style ``.m``
text or from this package's native JSON schema, and every parsed grid is
validated (connectivity, positive parameters, balanced injections) before
any downstream module sees it.

Angles are expressed in radians and powers in per-unit on the system MVA
base. Branch susceptances are taken as the reciprocal series reactance
under a flat voltage profile.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

KIND_GENERATOR = "generator"
KIND_CONDENSER = "condenser"
KIND_LOAD = "load"
_KINDS = (KIND_GENERATOR, KIND_CONDENSER, KIND_LOAD)

JSON_FORMAT_VERSION = "1"

#: Relative tolerance on the net injection imbalance accepted by
#: :func:`equilibrium_angles`.
BALANCE_RTOL = 1e-9

#: Relative tolerance on the equilibrium residual ``||L theta - p||_inf``.
RESIDUAL_RTOL = 1e-9


class GridError(Exception):
    """Base class for grid model failures."""


class CaseParseError(GridError):
    """Malformed case input. Carries the offending line when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TopologyError(GridError):
    """The branch set does not connect every bus."""


class UnknownBusError(GridError):
    """A branch or setting references a bus id that does not exist."""


class BalanceError(GridError):
    """Net injections do not sum to zero within tolerance."""


@dataclass(frozen=True)
class GridDefaults:
    """Fill-in parameters for case formats that lack dynamic data.

    Machines at generator buses get ``gen_inertia`` / ``gen_damping``.
    Load and condenser buses get the median generator damping and a
    ``load_inertia_scale`` fraction of the median generator inertia.
    Branches without an explicit rating get ``limit_margin`` times their
    equilibrium flow magnitude, floored at ``limit_floor`` per-unit so a
    lightly loaded branch still has a meaningful rating.
    """

    gen_inertia: float = 1.0
    gen_damping: float = 1.0
    load_inertia_scale: float = 0.5
    limit_margin: float = 2.0
    limit_floor: float = 0.1


@dataclass(frozen=True)
class Bus:
    id: int
    inertia: float
    damping: float
    injection: float
    kind: str = KIND_LOAD


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    susceptance: float
    limit: float
    transformer: bool = False


@dataclass(frozen=True)
class Grid:
    """Validated network with dynamic parameters.

    ``monitored`` holds branch indices (positions in ``branches``) whose
    overload is tracked; ``reference`` is the bus id whose angle is pinned
    to zero. ``meta`` carries provenance notes and is ignored by equality.
    """

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    monitored: tuple[int, ...]
    reference: int
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.buses:
            raise TopologyError("grid has no buses")
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise CaseParseError(f"duplicate bus ids: {dup}")
        index = {bus_id: k for k, bus_id in enumerate(ids)}
        object.__setattr__(self, "_index", index)
        for bus in self.buses:
            if not (bus.inertia > 0 and math.isfinite(bus.inertia)):
                raise CaseParseError(f"bus {bus.id}: inertia must be positive")
            if not (bus.damping > 0 and math.isfinite(bus.damping)):
                raise CaseParseError(f"bus {bus.id}: damping must be positive")
            if not math.isfinite(bus.injection):
                raise CaseParseError(f"bus {bus.id}: injection must be finite")
            if bus.kind not in _KINDS:
                raise CaseParseError(f"bus {bus.id}: unknown kind {bus.kind!r}")
        if not self.branches:
            raise TopologyError("grid has no branches")
        for e, br in enumerate(self.branches):
            if br.from_bus not in index or br.to_bus not in index:
                raise UnknownBusError(
                    f"branch {e} references unknown bus "
                    f"{br.from_bus if br.from_bus not in index else br.to_bus}"
                )
            if br.from_bus == br.to_bus:
                raise CaseParseError(f"branch {e} is a self loop at bus {br.from_bus}")
            if not (br.susceptance > 0 and math.isfinite(br.susceptance)):
                raise CaseParseError(f"branch {e}: susceptance must be positive")
            if not (br.limit > 0 and math.isfinite(br.limit)):
                raise CaseParseError(f"branch {e}: limit must be positive")
        if self.reference not in index:
            raise UnknownBusError(f"reference bus {self.reference} does not exist")
        seen = set()
        for e in self.monitored:
            if not 0 <= e < len(self.branches):
                raise UnknownBusError(f"monitored branch index {e} out of range")
            if e in seen:
                raise CaseParseError(f"monitored branch index {e} repeated")
            seen.add(e)
        _check_connected(self)

    @property
    def n_buses(self):
        return len(self.buses)

    @property
    def n_branches(self):
        return len(self.branches)

    def bus_index(self, bus_id):
        """Position of a bus id in the bus tuple."""
        try:
            return self._index[bus_id]
        except KeyError:
            raise UnknownBusError(f"bus {bus_id} does not exist") from None

    def branch_between(self, a, b):
        """Indices of branches joining bus ids a and b, in either direction."""
        return tuple(
            e
            for e, br in enumerate(self.branches)
            if {br.from_bus, br.to_bus} == {a, b}
        )

    def injections(self):
        return np.array([b.injection for b in self.buses])

    def inertias(self):
        return np.array([b.inertia for b in self.buses])

    def dampings(self):
        return np.array([b.damping for b in self.buses])


def _check_connected(grid):
    n = grid.n_buses
    adj = [[] for _ in range(n)]
    for br in grid.branches:
        i, j = grid.bus_index(br.from_bus), grid.bus_index(br.to_bus)
        adj[i].append(j)
        adj[j].append(i)
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        for nb in adj[stack.pop()]:
            if not seen[nb]:
                seen[nb] = True
                stack.append(nb)
    if not seen.all():
        missing = [grid.buses[k].id for k in np.flatnonzero(~seen)[:8]]
        raise TopologyError(
            f"grid is not connected; {int((~seen).sum())} buses unreachable "
            f"from bus {grid.buses[0].id} (e.g. {missing})"
        )


def branch_arrays(grid):
    """Incidence arrays (from_idx, to_idx, susceptance, limit) as ndarrays."""
    fr = np.array([grid.bus_index(b.from_bus) for b in grid.branches], dtype=np.int64)
    to = np.array([grid.bus_index(b.to_bus) for b in grid.branches], dtype=np.int64)
    beta = np.array([b.susceptance for b in grid.branches])
    limit = np.array([b.limit for b in grid.branches])
    return fr, to, beta, limit


def build_laplacian(grid, scale=None):
    """Weighted graph Laplacian of the grid.

    Parameters
    ----------
    grid : Grid
    scale : dict[int, float], optional
        Multiplicative susceptance factors keyed by branch index, used to
        derate branches (a faulted branch keeps 2/3 of its susceptance).

    Returns
    -------
    ndarray of shape (n, n)
    """
    n = grid.n_buses
    lap = np.zeros((n, n))
    for e, br in enumerate(grid.branches):
        w = br.susceptance
        if scale is not None and e in scale:
            w = w * scale[e]
        i, j = grid.bus_index(br.from_bus), grid.bus_index(br.to_bus)
        lap[i, i] += w
        lap[j, j] += w
        lap[i, j] -= w
        lap[j, i] -= w
    return lap


def equilibrium_angles(grid, laplacian=None):
    """Steady-state bus angles solving ``L theta = p`` with the reference at zero.

    Raises BalanceError when injections do not sum to zero within
    ``BALANCE_RTOL`` and GridError when the solve residual exceeds
    ``RESIDUAL_RTOL`` relative to ``||p||_inf``.
    """
    p = grid.injections()
    scale = np.abs(p).sum()
    if abs(p.sum()) > BALANCE_RTOL * max(scale, 1.0):
        raise BalanceError(
            f"injections sum to {p.sum():.3e} (total magnitude {scale:.3e})"
        )
    lap = build_laplacian(grid) if laplacian is None else laplacian
    theta, *_ = np.linalg.lstsq(lap, p, rcond=None)
    theta = theta - theta[grid.bus_index(grid.reference)]
    p_inf = np.abs(p).max() if p.size else 0.0
    residual = np.abs(lap @ theta - p).max()
    if residual > RESIDUAL_RTOL * max(p_inf, 1e-300):
        raise GridError(
            f"equilibrium residual {residual:.3e} exceeds tolerance "
            f"{RESIDUAL_RTOL * p_inf:.3e}"
        )
    return theta


def branch_flows(grid, theta):
    """Per-branch flows ``beta * (theta_i - theta_j)`` at given angles."""
    fr, to, beta, _ = branch_arrays(grid)
    return beta * (theta[fr] - theta[to])


# ---------------------------------------------------------------------------
# MATPOWER-style case text


def _strip_comment(line):
    cut = line.find("%")
    return line if cut < 0 else line[:cut]


def _read_matrix(lines, start, name):
    """Collect numeric rows until the closing ``];`` of a matrix block."""
    rows = []
    k = start
    while k < len(lines):
        raw = _strip_comment(lines[k]).strip()
        k += 1
        if raw.startswith("]"):
            return rows, k
        if not raw:
            continue
        body = raw.rstrip(";").strip()
        if body.endswith("]"):
            body = body[:-1].rstrip(";").strip()
            closed = True
        else:
            closed = False
        if body:
            toks = body.replace(",", " ").split()
            try:
                rows.append(([float(t) for t in toks], k))
            except ValueError as exc:
                raise CaseParseError(f"{name}: bad numeric row ({exc})", line=k)
        if closed:
            return rows, k
    raise CaseParseError(f"{name}: matrix block never closed", line=start)


def _require_columns(row, line, need, name):
    if len(row) < need:
        raise CaseParseError(
            f"{name}: expected at least {need} columns, got {len(row)}", line=line
        )


def parse_matpower_case(text, defaults=None, monitored=None):
    """Parse MATPOWER-style case text into a validated Grid.

    Only the columns that matter to the lossless swing model are read:
    bus id / type / Pd, generator bus / Pg / status, and branch endpoints /
    reactance / rateA / tap ratio / status. Branch ratings of zero are
    replaced by ``defaults.limit_margin`` times the equilibrium flow (with
    the ``limit_floor`` applied), and net injections are shifted to sum to
    zero exactly.
    """
    defaults = defaults or GridDefaults()
    lines = text.splitlines()
    base_mva = None
    sections = {}
    k = 0
    while k < len(lines):
        raw = _strip_comment(lines[k]).strip()
        k += 1
        if not raw:
            continue
        if raw.startswith("mpc.baseMVA"):
            try:
                base_mva = float(raw.split("=", 1)[1].strip().rstrip(";"))
            except (IndexError, ValueError):
                raise CaseParseError("could not read baseMVA", line=k)
            continue
        for name in ("bus", "gen", "branch"):
            head = f"mpc.{name}"
            if raw.startswith(head) and "=" in raw and "[" in raw:
                if name in sections:
                    raise CaseParseError(f"section mpc.{name} appears twice", line=k)
                sections[name], k = _read_matrix(lines, k, f"mpc.{name}")
                break
    for name in ("bus", "gen", "branch"):
        if name not in sections:
            raise CaseParseError(f"missing section mpc.{name}")
    if base_mva is None or base_mva <= 0:
        raise CaseParseError("missing or non-positive mpc.baseMVA")

    load_mw = {}
    bus_type = {}
    order = []
    for row, line in sections["bus"]:
        _require_columns(row, line, 3, "mpc.bus")
        bus_id = int(row[0])
        if bus_id in bus_type:
            raise CaseParseError(f"mpc.bus: duplicate bus id {bus_id}", line=line)
        btype = int(row[1])
        if btype == 4:
            continue
        bus_type[bus_id] = btype
        load_mw[bus_id] = row[2]
        order.append(bus_id)

    gen_mw = {}
    for row, line in sections["gen"]:
        _require_columns(row, line, 8, "mpc.gen")
        if row[7] <= 0:
            continue
        bus_id = int(row[0])
        if bus_id not in bus_type:
            raise UnknownBusError(f"generator row at line {line} references bus {bus_id}")
        gen_mw[bus_id] = gen_mw.get(bus_id, 0.0) + row[1]

    branches = []
    pending = []
    for row, line in sections["branch"]:
        _require_columns(row, line, 11, "mpc.branch")
        if row[10] <= 0:
            continue
        fb, tb = int(row[0]), int(row[1])
        for bus_id in (fb, tb):
            if bus_id not in bus_type:
                raise UnknownBusError(f"branch at line {line} references bus {bus_id}")
        x = row[3]
        if x <= 0:
            raise CaseParseError("mpc.branch: reactance must be positive", line=line)
        rate_a = row[5]
        limit = rate_a / base_mva if rate_a > 0 else None
        if limit is None:
            pending.append(len(branches))
        branches.append(
            Branch(
                from_bus=fb,
                to_bus=tb,
                susceptance=1.0 / x,
                limit=limit if limit is not None else 1.0,
                transformer=row[8] != 0,
            )
        )

    gen_kind = {
        bus_id: (KIND_GENERATOR if mw > 0 else KIND_CONDENSER)
        for bus_id, mw in gen_mw.items()
    }
    load_m = defaults.load_inertia_scale * defaults.gen_inertia
    load_d = defaults.gen_damping

    injections = np.array(
        [(gen_mw.get(b, 0.0) - load_mw[b]) / base_mva for b in order]
    )
    injections -= injections.mean()

    buses = []
    for pos, bus_id in enumerate(order):
        kind = gen_kind.get(bus_id, KIND_LOAD)
        if kind == KIND_GENERATOR:
            m, d = defaults.gen_inertia, defaults.gen_damping
        else:
            m, d = load_m, load_d
        buses.append(
            Bus(
                id=bus_id,
                inertia=m,
                damping=d,
                injection=float(injections[pos]),
                kind=kind,
            )
        )

    reference = next(
        (b for b in order if bus_type[b] == 3), order[0] if order else 0
    )
    if not branches:
        raise TopologyError("case has no in-service branches")
    grid = Grid(
        buses=tuple(buses),
        branches=tuple(branches),
        monitored=tuple(range(len(branches))) if monitored is None else tuple(monitored),
        reference=reference,
        meta={
            "base_mva": base_mva,
            "load_bus_count": sum(1 for b in order if load_mw[b] > 0),
            "generator_count": sum(1 for k in gen_kind.values() if k == KIND_GENERATOR),
            "condenser_count": sum(1 for k in gen_kind.values() if k == KIND_CONDENSER),
            "transformer_count": sum(1 for b in branches if b.transformer),
        },
    )
    if pending:
        grid = _fill_missing_limits(grid, pending, defaults)
    return grid


def _fill_missing_limits(grid, pending, defaults):
    """Rate unrated branches from their equilibrium flow magnitude."""
    theta = equilibrium_angles(grid)
    flows = branch_flows(grid, theta)
    new_branches = list(grid.branches)
    for e in pending:
        base = max(abs(flows[e]), defaults.limit_floor)
        new_branches[e] = replace(new_branches[e], limit=defaults.limit_margin * base)
    return replace(grid, branches=tuple(new_branches))


# ---------------------------------------------------------------------------
# Native JSON schema


def _json_field(obj, key, types, where):
    if key not in obj:
        raise CaseParseError(f"{where}: missing field {key!r}")
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, types):
        raise CaseParseError(f"{where}.{key}: wrong type {type(val).__name__}")
    return val


def parse_grid_json(text):
    """Parse the native JSON grid document (format_version 1)."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseParseError(f"invalid JSON: {exc}")
    if not isinstance(doc, dict):
        raise CaseParseError("top level must be an object")
    version = _json_field(doc, "format_version", str, "document")
    if version != JSON_FORMAT_VERSION:
        raise CaseParseError(
            f"document.format_version: unsupported version {version!r}"
        )
    raw_buses = _json_field(doc, "buses", list, "document")
    raw_branches = _json_field(doc, "branches", list, "document")
    buses = []
    for k, item in enumerate(raw_buses):
        where = f"buses[{k}]"
        if not isinstance(item, dict):
            raise CaseParseError(f"{where}: must be an object")
        buses.append(
            Bus(
                id=int(_json_field(item, "id", int, where)),
                inertia=float(_json_field(item, "m", (int, float), where)),
                damping=float(_json_field(item, "d", (int, float), where)),
                injection=float(_json_field(item, "p", (int, float), where)),
                kind=_json_field(item, "kind", str, where)
                if "kind" in item
                else KIND_LOAD,
            )
        )
    branches = []
    for k, item in enumerate(raw_branches):
        where = f"branches[{k}]"
        if not isinstance(item, dict):
            raise CaseParseError(f"{where}: must be an object")
        branches.append(
            Branch(
                from_bus=int(_json_field(item, "from", int, where)),
                to_bus=int(_json_field(item, "to", int, where)),
                susceptance=float(_json_field(item, "beta", (int, float), where)),
                limit=float(_json_field(item, "limit", (int, float), where)),
                transformer=bool(item.get("transformer", False)),
            )
        )
    monitored = doc.get("monitored")
    if monitored is None:
        monitored = list(range(len(branches)))
    if not isinstance(monitored, list) or not all(
        isinstance(e, int) and not isinstance(e, bool) for e in monitored
    ):
        raise CaseParseError("document.monitored: must be a list of branch indices")
    reference = doc.get("reference", buses[0].id if buses else 0)
    meta = doc.get("meta", {})
    if not isinstance(meta, dict):
        raise CaseParseError("document.meta: must be an object")
    return Grid(
        buses=tuple(buses),
        branches=tuple(branches),
        monitored=tuple(monitored),
        reference=int(reference),
        meta=dict(meta),
    )


def grid_to_json(grid, indent=2):
    """Serialize a grid to the native JSON document, round-trip exact."""
    doc = {
        "format_version": JSON_FORMAT_VERSION,
        "buses": [
            {"id": b.id, "m": b.inertia, "d": b.damping, "p": b.injection, "kind": b.kind}
            for b in grid.buses
        ],
        "branches": [
            {
                "from": b.from_bus,
                "to": b.to_bus,
                "beta": b.susceptance,
                "limit": b.limit,
                "transformer": b.transformer,
            }
            for b in grid.branches
        ],
        "monitored": list(grid.monitored),
        "reference": grid.reference,
        "meta": grid.meta,
    }
    return json.dumps(doc, indent=indent)


def load_grid(path, defaults=None):
    """Read a grid from a ``.m`` case file or a native ``.json`` document."""
    with open(path) as fh:
        text = fh.read()
    if str(path).endswith(".json"):
        return parse_grid_json(text)
    return parse_matpower_case(text, defaults=defaults)
