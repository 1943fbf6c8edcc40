"""File formats: shot files, delimited tables, plain-text reports.

Shot file layout (UTF-8, ``\\n`` line ends)::

    # L=5 experiment=demo params={"omega": 11.46}
    shot_id,basis,pre,post
    0,z,ggggg,grgrg
    1,z,ggggg,rgrgg

The ``#`` line is optional on input; ``params`` is compact JSON with sorted
keys. ``pre``/``post`` accept the {0,1} alphabet and are normalized to {g,r}.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ShotFileError, ValidationError
from .hamiltonian import QuantumState, normalize_bitstring
from .measurement import BASES, ShotSet, postselect_shots

SHOT_COLUMNS = ("shot_id", "basis", "pre", "post")


def atomic_write(path, data) -> Path:
    """Write text or bytes to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": "\n"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


# --------------------------------------------------------------------------
# shot files

def format_shots(shots: ShotSet) -> str:
    meta = shots.metadata
    exp = str(meta.get("experiment", "")).replace(" ", "_") or "-"
    params = {k: v for k, v in meta.items() if k != "experiment"}
    lines = [f"# L={shots.L} experiment={exp} params={_json(params)}", ",".join(SHOT_COLUMNS)]
    lines += [f"{i},{shots.basis},{pre},{post}"
              for i, pre, post in zip(shots.ids, shots.pre, shots.post)]
    return "\n".join(lines) + "\n"


def write_shot_file(path, shots: ShotSet) -> Path:
    return atomic_write(path, format_shots(shots))


def _parse_header(line: str) -> dict:
    meta = {}
    body = line[1:].strip()
    head, sep, params = body.partition("params=")
    for tok in head.split():
        k, _, v = tok.partition("=")
        if k == "L":
            meta["L"] = v
        elif k == "experiment":
            meta["experiment"] = v
    if sep:
        try:
            meta["params"] = json.loads(params)
        except json.JSONDecodeError as exc:
            raise ShotFileError(f"header parameter echo is not valid JSON: {exc}") from exc
    return meta


def ingest_shot_file(path, expected_L: Optional[int] = None, *, postselect: bool = False,
                     required_pre: Optional[str] = None) -> ShotSet:
    """Parse and validate a shot file; every malformed line is reported by number."""
    path = Path(path)
    if not path.is_file():
        raise ShotFileError(f"shot file {path} does not exist")
    lines = path.read_text(encoding="utf-8").splitlines()
    header, start = {}, 0
    while start < len(lines) and (lines[start].startswith("#") or not lines[start].strip()):
        if lines[start].startswith("#"):
            header.update(_parse_header(lines[start]))
        start += 1
    if start >= len(lines):
        raise ShotFileError(f"{path}: no shots")
    if tuple(c.strip() for c in lines[start].split(",")) != SHOT_COLUMNS:
        raise ShotFileError(f"{path}:{start + 1}: expected column header {','.join(SHOT_COLUMNS)}")
    L = expected_L
    if "L" in header:
        try:
            hL = int(header["L"])
        except ValueError:
            raise ShotFileError(f"{path}: header L={header['L']!r} is not an integer")
        if L is not None and hL != L:
            raise ShotFileError(f"{path}: header declares L={hL}, expected {L}")
        L = hL
    errors, ids, pre, post, bases = [], [], [], [], set()
    for n, line in enumerate(lines[start + 1:], start=start + 2):
        if not line.strip():
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 4:
            errors.append(f"line {n}: expected 4 fields, got {len(parts)}")
            continue
        sid, basis, a, b = parts
        if basis not in BASES:
            errors.append(f"line {n}: unknown basis tag {basis!r}")
            continue
        try:
            a = normalize_bitstring(a)
            b = normalize_bitstring(b)
        except ValidationError as exc:
            errors.append(f"line {n}: {exc}")
            continue
        if L is None:
            L = len(b)
        if len(a) != L or len(b) != L:
            errors.append(f"line {n}: string length {len(a)}/{len(b)} does not match L={L}")
            continue
        try:
            ids.append(int(sid))
        except ValueError:
            errors.append(f"line {n}: shot id {sid!r} is not an integer")
            continue
        bases.add(basis)
        pre.append(a)
        post.append(b)
    if errors:
        shown = "\n  ".join(errors[:20])
        more = f"\n  ... {len(errors) - 20} more" if len(errors) > 20 else ""
        raise ShotFileError(f"{path}: {len(errors)} malformed line(s):\n  {shown}{more}")
    if not post:
        raise ShotFileError(f"{path}: no shots")
    if len(bases) > 1:
        raise ShotFileError(f"{path}: mixed bases {sorted(bases)} in one shot set")
    if len(set(ids)) != len(ids):
        raise ShotFileError(f"{path}: duplicate shot ids")
    meta = dict(header.get("params", {}))
    if header.get("experiment", "-") != "-":
        meta["experiment"] = header["experiment"]
    shots = ShotSet(L, bases.pop(), tuple(pre), tuple(post), tuple(ids), meta)
    if postselect:
        shots = postselect_shots(shots, required_pre)
    return shots


# --------------------------------------------------------------------------
# tables and reports

def fmt_number(x) -> str:
    """Locale-independent, round-trippable number formatting."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if x != x:
            return "nan"
        if x in (float("inf"), float("-inf")):
            return "inf" if x > 0 else "-inf"
        return f"{x:.10g}"
    return str(x)


@dataclass
class Table:
    name: str
    columns: Sequence[str]        # "name [unit]"; unit "1" for dimensionless
    rows: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def __post_init__(self):
        for c in self.columns:
            if not (c.endswith("]") and "[" in c):
                raise ValidationError(f"column {c!r} lacks a unit header")

    def add(self, *values):
        if len(values) != len(self.columns):
            raise ValidationError(f"row has {len(values)} values, table {self.name} "
                                  f"has {len(self.columns)} columns")
        self.rows.append(tuple(values))

    def to_delimited(self) -> str:
        lines = [",".join(self.columns)]
        lines += [",".join(fmt_number(v) for v in row) for row in self.rows]
        lines += [f"# {s}" for s in self.notes]
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        cells = [list(self.columns)] + [[fmt_number(v) for v in row] for row in self.rows]
        widths = [max(len(r[k]) for r in cells) for k in range(len(self.columns))]
        out = [f"== {self.name} =="]
        for n, row in enumerate(cells):
            out.append("  ".join(c.rjust(w) for c, w in zip(row, widths)).rstrip())
            if n == 0:
                out.append("  ".join("-" * w for w in widths))
        out += [f"note: {s}" for s in self.notes]
        return "\n".join(out) + "\n"


def write_table(path, table: Table) -> Path:
    return atomic_write(path, table.to_delimited())


def read_table(path) -> tuple:
    """(columns, rows as lists of str) from a delimited table."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines()
             if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ValidationError(f"{path}: empty table")
    return lines[0].split(","), [ln.split(",") for ln in lines[1:]]


@dataclass
class Report:
    metadata: dict
    tables: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def render(self, fmt: str = "table") -> str:
        if fmt not in ("table", "delimited"):
            raise ValidationError(f"unknown report format {fmt!r}")
        head = [f"# {k}: {_json(self.metadata[k]) if not isinstance(self.metadata[k], str) else self.metadata[k]}"
                for k in sorted(self.metadata)]
        head += [f"# warning: {w}" for w in self.warnings]
        parts = ["\n".join(head) + "\n"]
        for t in self.tables:
            if fmt == "table":
                parts.append(t.to_text())
            else:
                parts.append(f"# table: {t.name}\n" + t.to_delimited())
        return "\n".join(parts)


def emit_report(path, report: Report, fmt: str = "table") -> Path:
    text = report.render(fmt)
    try:
        return atomic_write(path, text)
    except OSError as exc:
        raise ValidationError(f"cannot write report to {path}: {exc}") from exc


# --------------------------------------------------------------------------
# states and ensembles

def save_state(path, state: QuantumState, metadata: Optional[dict] = None) -> Path:
    import io as _io
    buf = _io.BytesIO()
    np.savez_compressed(buf, kind=np.array(state.kind), data=state.data, L=np.array(state.L),
                        metadata=np.array(_json(metadata or {})))
    return atomic_write(path, buf.getvalue())


def load_state(path) -> tuple:
    with np.load(path, allow_pickle=False) as z:
        state = QuantumState(str(z["kind"]), z["data"], int(z["L"]))
        meta = json.loads(str(z["metadata"]))
    return state, meta


def save_ensemble(path, ensemble) -> Path:
    """Members as stacked arrays: seeds, fidelities, ρ_j, predicted distributions."""
    import io as _io
    m = ensemble.members
    buf = _io.BytesIO()
    np.savez_compressed(
        buf, L=np.array(ensemble.L), seed=np.array(-1 if ensemble.seed is None else ensemble.seed),
        labels=np.array(list(ensemble.labels), dtype=str),
        seeds=np.array([x.seed for x in m], dtype=np.uint64),
        fidelity=np.array([x.fidelity for x in m]),
        rho=np.stack([x.rho.data for x in m]),
        z=np.stack([x.z_dist for x in m]),
        x=np.stack([np.stack(x.x_dists) if x.x_dists else np.zeros((0, 1 << ensemble.L))
                    for x in m]),
        omega_scale=np.array([x.realization.omega_scale for x in m]),
        delta_offset=np.array([x.realization.delta_offset for x in m]),
        positions=np.stack([x.realization.geometry.positions for x in m]),
        a=np.array(m[0].realization.geometry.a))
    return atomic_write(path, buf.getvalue())


def load_ensemble(path):
    from .dynamics import NoiseRealization
    from .inference import EnsembleMember, PriorEnsemble
    from .lattice import RingGeometry
    with np.load(path, allow_pickle=False) as z:
        L = int(z["L"])
        seed = int(z["seed"])
        members = []
        for j in range(len(z["seeds"])):
            geom = RingGeometry(L=L, a=float(z["a"]), positions=z["positions"][j], perturbed=True)
            real = NoiseRealization(geom, float(z["omega_scale"][j]), float(z["delta_offset"][j]),
                                    int(z["seeds"][j]))
            members.append(EnsembleMember(int(z["seeds"][j]), real,
                                          QuantumState("density", z["rho"][j], L), z["z"][j],
                                          tuple(z["x"][j]), float(z["fidelity"][j])))
        labels = tuple(str(s) for s in z["labels"])
    return PriorEnsemble(L, tuple(members), None if seed < 0 else seed, labels)


def format_state(state: QuantumState) -> str:
    """Plain-text export: ``index,re,im`` per amplitude, or ``row,col,re,im`` per density entry."""
    if state.kind == "pure":
        lines = ["index,re,im"] + [f"{i},{fmt_number(v.real)},{fmt_number(v.imag)}"
                                   for i, v in enumerate(state.data)]
    else:
        rows, cols = np.nonzero(state.data)
        lines = ["row,col,re,im"] + [f"{r},{c},{fmt_number(state.data[r, c].real)},"
                                     f"{fmt_number(state.data[r, c].imag)}"
                                     for r, c in zip(rows, cols)]
    return "\n".join(lines) + "\n"
