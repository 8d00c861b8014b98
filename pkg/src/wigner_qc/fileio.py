"""Run configuration, curve and snapshot files.

Curve files come in two encodings sharing one header layout:

* ``.npz`` -- exact binary (float64 arrays), used for resumable sweeps;
* ``.csv`` -- RFC-4180 text with ``#`` header lines and every real written
  with 17 significant digits, so it also round-trips exactly.  Columns:
  ``t, g, tr_lc2, tr_lq2, tr_t2, purity, s2, mass, tr_rhs2``.

Snapshots are ``.npz`` files holding a JSON header and the ``(n_q, n_p)``
array, plus a ``.txt`` sidecar with the same metadata as ``key: value``.
"""
from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .diagnostics import DiagnosticRecord, GCurve
from .experiments import PointResult, SharedSetup
from .grid import PhaseSpaceField, WignerState, make_grid
from .operators import COUPLINGS, BathParams, DuffingParams, ModelParams
from .propagator import MONITOR_POLICIES, SCHEMES

FORMAT_VERSION = 1
OUTPUT_ENV = "WIGNER_QC_OUTPUT"
CSV_COLUMNS = ("t", "g", "tr_lc2", "tr_lq2", "tr_t2", "purity", "s2", "mass", "tr_rhs2")
_RECORD_FOR_CSV = {"s2": "entropy_s2"}
SNAPSHOT_MODES = ("signed", "abs")
_UMASK = os.umask(0)
os.umask(_UMASK)


class ConfigError(ValueError):
    pass


class FileFormatError(ValueError):
    pass


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


@dataclass
class RunConfig:
    hbar: float
    D: float
    coupling: str = "momentum_only"
    m: float = 1.0
    B: float = 10.0
    C: float = 1.0
    A: float = 1.0
    omega: float = 5.35
    q0: float = 0.0
    p0: float = 0.0
    sigma_q2: float = 0.05
    q_min: float = -6.0
    q_max: float = 6.0
    p_min: float = -12.0
    p_max: float = 12.0
    n_q: int = 256
    n_p: int = 256
    dt: float | None = None
    t_final: float = 20.0
    scheme: str = "rk4"
    samples_per_period: int = 64
    snapshot_times: list = field(default_factory=list)
    snapshot_mode: str = "signed"
    mass_tolerance: float = 1e-6
    boundary_tolerance: float = 1e-8
    dealias: bool = False
    monitor_policy: str = "raise"
    output_dir: str | None = None
    label: str = "run"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def check(key, cond, msg):
            if not cond:
                raise ConfigError(f"{key}: {msg} (got {getattr(self, key)!r})")

        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and not math.isfinite(v):
                raise ConfigError(f"{f.name}: must be finite (got {v!r})")
        check("hbar", self.hbar > 0, "must be positive")
        check("D", self.D > 0, "must be positive (zeta0 = hbar^2/D)")
        check("coupling", self.coupling in COUPLINGS, f"must be one of {COUPLINGS}")
        check("sigma_q2", 0 < self.sigma_q2 <= 0.05, "must lie in (0, 0.05] to stay localised")
        check("scheme", self.scheme in SCHEMES, f"must be one of {SCHEMES}")
        check("monitor_policy", self.monitor_policy in MONITOR_POLICIES, f"must be one of {MONITOR_POLICIES}")
        check("snapshot_mode", self.snapshot_mode in SNAPSHOT_MODES, f"must be one of {SNAPSHOT_MODES}")
        check("samples_per_period", int(self.samples_per_period) >= 8, "must be >= 8")
        check("t_final", self.t_final > 0, "must be positive")
        if self.dt is not None:
            check("dt", 0 < self.dt < self.t_final, "must be in (0, t_final)")
        for key in ("n_q", "n_p"):
            check(key, int(getattr(self, key)) == getattr(self, key) and getattr(self, key) >= 16,
                  "must be an integer >= 16")
        check("q_max", self.q_max > self.q_min, "must exceed q_min")
        check("p_max", self.p_max > self.p_min, "must exceed p_min")
        for s in self.snapshot_times:
            check("snapshot_times", 0 <= float(s) <= self.t_final, "entries must lie in [0, t_final]")
        for key, cls, names in (("m", DuffingParams, ("m", "B", "C", "A", "omega")),):
            try:
                cls(**{n: getattr(self, n) for n in names})
            except ValueError as exc:
                raise ConfigError(f"duffing parameters: {exc}") from None

    @property
    def zeta0(self) -> float:
        return self.hbar ** 2 / self.D

    def shared(self) -> SharedSetup:
        return SharedSetup(
            grid=make_grid(self.q_min, self.q_max, self.p_min, self.p_max, self.n_q, self.n_p),
            duffing=DuffingParams(self.m, self.B, self.C, self.A, self.omega),
            coupling=self.coupling, q0=self.q0, p0=self.p0, sigma_q2=self.sigma_q2,
            t_final=self.t_final, samples_per_period=int(self.samples_per_period), dt=self.dt,
            scheme=self.scheme, snapshot_times=tuple(float(s) for s in self.snapshot_times),
            mass_tolerance=self.mass_tolerance, boundary_tolerance=self.boundary_tolerance,
            dealias=self.dealias, monitor_policy=self.monitor_policy)

    def output_path(self) -> Path:
        return Path(self.output_dir) if self.output_dir else default_output_root() / self.label

    def to_dict(self) -> dict:
        return asdict(self)


_INT_KEYS = {"n_q", "n_p", "samples_per_period"}


def config_from_dict(data: dict, source: str = "<dict>") -> RunConfig:
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{source}: unknown key(s) {', '.join(unknown)}")
    missing = [k for k in ("hbar", "D") if k not in data]
    if missing:
        raise ConfigError(f"{source}: missing required key(s) {', '.join(missing)}")
    clean = {}
    for k, v in data.items():
        if k in _INT_KEYS and isinstance(v, float) and v.is_integer():
            v = int(v)
        if k in ("hbar", "D", "dt") and isinstance(v, str):
            try:
                v = float(v)
            except ValueError:
                raise ConfigError(f"{source}: {k}: not a number ({v!r})") from None
        clean[k] = v
    try:
        return RunConfig(**clean)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def read_config_data(path: str | os.PathLike) -> dict:
    """Parse a YAML configuration into a plain mapping without validating it."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ConfigError(f"{path}: parse error at {where}: {exc.problem}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping of keys to values")
    return data


def load_config(path: str | os.PathLike) -> RunConfig:
    """Read a flat YAML key/value run configuration, filling defaults."""
    return config_from_dict(read_config_data(path), str(path))


def _atomic_write(path: Path, writer, mode: str = "wb") -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if "b" in mode else {"encoding": "utf-8", "newline": ""})) as fh:
            writer(fh)
        os.chmod(tmp, 0o666 & ~_UMASK)  # mkstemp creates 0600
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _params_to_dict(params: ModelParams) -> dict:
    return {"duffing": asdict(params.duffing), "bath": asdict(params.bath)}


def _params_from_dict(d: dict) -> ModelParams:
    return ModelParams(DuffingParams(**d["duffing"]), BathParams(**d["bath"]))


def curve_header(curve: GCurve, echo: dict | None = None) -> dict:
    return {
        "format": "wigner-qc-curve",
        "format_version": FORMAT_VERSION,
        "zeta0": curve.zeta0,
        "samples": len(curve),
        "params": _params_to_dict(curve.params),
        "config": echo or {},
    }


def _check_header(header: dict, kind: str, path) -> None:
    if header.get("format") != kind:
        raise FileFormatError(f"{path}: not a {kind} file")
    if header.get("format_version") != FORMAT_VERSION:
        raise FileFormatError(f"{path}: format version {header.get('format_version')} "
                              f"is not supported (expected {FORMAT_VERSION})")


def _rows_to_curve(header: dict, rows: np.ndarray, path) -> GCurve:
    if rows.shape[0] != header["samples"]:
        raise FileFormatError(f"{path}: truncated, {rows.shape[0]} rows but header declares {header['samples']}")
    t = rows[:, 0] if len(rows) else rows
    if len(rows) > 1 and np.any(np.diff(t) <= 0):
        raise FileFormatError(f"{path}: t is not strictly increasing")
    recs = []
    for r in rows:
        vals = dict(zip(CSV_COLUMNS, (float(x) for x in r)))
        recs.append(DiagnosticRecord(t=vals["t"], g=vals["g"], tr_lc2=vals["tr_lc2"], tr_lq2=vals["tr_lq2"],
                                     tr_t2=vals["tr_t2"], tr_rhs2=vals["tr_rhs2"], purity=vals["purity"],
                                     entropy_s2=vals["s2"], mass=vals["mass"]))
    return GCurve(_params_from_dict(header["params"]), recs)


def _curve_rows(curve: GCurve) -> np.ndarray:
    cols = [curve.column(_RECORD_FOR_CSV.get(c, c)) for c in CSV_COLUMNS]
    return np.column_stack(cols) if len(curve) else np.zeros((0, len(CSV_COLUMNS)))


def write_curve(curve: GCurve, path: str | os.PathLike, echo: dict | None = None) -> Path:
    """Write a curve; encoding chosen by suffix (.npz exact binary, .csv decimal)."""
    path = Path(path)
    header = curve_header(curve, echo)
    rows = _curve_rows(curve)
    if path.suffix == ".npz":
        header["encoding"] = "binary-float64"

        def w(fh):
            np.savez(fh, header=np.array(json.dumps(header)), rows=rows)
        _atomic_write(path, w)
    elif path.suffix == ".csv":
        header["encoding"] = "decimal-17g"

        def w(fh):
            for key in ("format", "format_version", "encoding", "zeta0", "samples"):
                fh.write(f"# {key}: {json.dumps(header[key])}\n")
            fh.write(f"# params: {json.dumps(header['params'])}\n")
            fh.write(f"# config: {json.dumps(header['config'])}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for r in rows:
                writer.writerow([format(float(x), ".17g") for x in r])
        _atomic_write(path, w, "w")
    else:
        raise ValueError(f"unsupported curve file suffix {path.suffix!r} (use .npz or .csv)")
    return path


def read_curve_with_header(path: str | os.PathLike) -> tuple[GCurve, dict]:
    path = Path(path)
    if path.suffix == ".npz":
        try:
            with np.load(path, allow_pickle=False) as z:
                header = json.loads(str(z["header"]))
                rows = np.array(z["rows"], dtype=np.float64)
        except (OSError, ValueError, KeyError) as exc:
            raise FileFormatError(f"{path}: unreadable curve file ({exc})") from None
        _check_header(header, "wigner-qc-curve", path)
        return _rows_to_curve(header, rows.reshape(-1, len(CSV_COLUMNS)), path), header
    if path.suffix == ".csv":
        header: dict = {}
        lines = path.read_text(encoding="utf-8").splitlines()
        body = []
        for line in lines:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(":")
                header[key.strip()] = json.loads(value.strip())
            else:
                body.append(line)
        _check_header(header, "wigner-qc-curve", path)
        reader = csv.reader(body)
        columns = next(reader, None)
        if tuple(columns or ()) != CSV_COLUMNS:
            raise FileFormatError(f"{path}: unexpected columns {columns}")
        data = [[float(x) for x in row] for row in reader if row]
        rows = np.array(data, dtype=np.float64).reshape(-1, len(CSV_COLUMNS))
        return _rows_to_curve(header, rows, path), header
    raise ValueError(f"unsupported curve file suffix {path.suffix!r}")


def read_curve(path: str | os.PathLike) -> GCurve:
    return read_curve_with_header(path)[0]


def write_plot_data(curve: GCurve, path: str | os.PathLike, extra: dict[str, np.ndarray] | None = None) -> Path:
    """Whitespace-separated columns for gnuplot: t g tr_lc2 tr_lq2 tr_t2 purity s2 mass [extra...]."""
    path = Path(path)
    rows = _curve_rows(curve)[:, :8]
    names = list(CSV_COLUMNS[:8])
    if extra:
        names += list(extra)
        rows = np.column_stack([rows] + [np.asarray(v) for v in extra.values()])

    def w(fh):
        fh.write(f"# zeta0 = {curve.zeta0:.12g}\n# " + " ".join(names) + "\n")
        np.savetxt(fh, rows, fmt="%.10e")
    _atomic_write(path, w, "w")
    return path


def write_snapshot(state: WignerState, mode: str, path: str | os.PathLike,
                   params: ModelParams | None = None) -> Path:
    """Dump a Wigner field (signed, or |rho| in abs mode) with a text sidecar."""
    if mode not in SNAPSHOT_MODES:
        raise ValueError(f"mode must be one of {SNAPSHOT_MODES}, got {mode!r}")
    path = Path(path)
    values = np.abs(state.values) if mode == "abs" else np.array(state.values)
    header = {
        "format": "wigner-qc-snapshot",
        "format_version": FORMAT_VERSION,
        "mode": mode,
        "t": state.t,
        "mass0": state.mass0,
        "grid": state.grid.to_dict(),
        "params": _params_to_dict(params) if params is not None else None,
        "layout": "row-major (n_q, n_p), row = q index",
    }

    def w(fh):
        np.savez(fh, header=np.array(json.dumps(header)), values=values)
    _atomic_write(path, w)
    sidecar = path.with_suffix(".txt")

    def ws(fh):
        for k, v in header.items():
            fh.write(f"{k}: {json.dumps(v)}\n")
        fh.write(f"min: {values.min()!r}\nmax: {values.max()!r}\n")
    _atomic_write(sidecar, ws, "w")
    return path


def read_snapshot(path: str | os.PathLike) -> tuple[WignerState, dict]:
    path = Path(path)
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        values = np.array(z["values"], dtype=np.float64)
    _check_header(header, "wigner-qc-snapshot", path)
    grid = make_grid(**header["grid"])
    if values.shape != grid.shape:
        raise FileFormatError(f"{path}: array shape {values.shape} does not match grid {grid.shape}")
    if not np.isfinite(values).all():
        raise FileFormatError(f"{path}: non-finite values")
    return WignerState(PhaseSpaceField(grid, values), header["t"], header["mass0"]), header


# Sweep point persistence -------------------------------------------------

def curve_path(base: Path) -> Path:
    return Path(f"{base}.curve.npz")


def snapshot_path(base: Path, t: float) -> Path:
    return Path(f"{base}.snap_t{t:g}.npz")


def point_echo(shared: SharedSetup, hbar: float, D: float) -> dict:
    return {"hbar": hbar, "D": D, "shared": shared.to_dict()}


def write_point(result: PointResult, shared: SharedSetup, base: Path, snapshot_mode: str = "signed") -> None:
    hbar, D = result.raw.params.bath.hbar, result.raw.params.bath.D
    echo = point_echo(shared, hbar, D)
    echo["solver"] = {"dt": result.config.dt, "sample_every": result.config.sample_every}
    echo["violations"] = list(result.violations)
    for t, state in sorted(result.snapshots.items()):
        write_snapshot(state, snapshot_mode, snapshot_path(base, t), result.raw.params)
    write_curve(result.raw, Path(f"{base}.curve.csv"), echo)
    # The binary curve is written last: its presence marks the point complete.
    write_curve(result.raw, curve_path(base), echo)


def point_complete(base: Path, shared: SharedSetup, hbar: float, D: float) -> bool:
    path = curve_path(base)
    if not path.exists():
        return False
    try:
        _, header = read_curve_with_header(path)
    except (FileFormatError, ValueError):
        return False
    cfg = header.get("config", {})
    want = json.loads(json.dumps(point_echo(shared, hbar, D)))
    return cfg.get("hbar") == want["hbar"] and cfg.get("D") == want["D"] and cfg.get("shared") == want["shared"]
