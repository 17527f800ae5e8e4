"""Run configuration, sweep orchestration, result records and reports."""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .control import (
    ControlRegion,
    GainOperator,
    build_truncated_system,
    hautus_check,
    solve_are,
)
from .dynamics import (
    RNG_NAME,
    SimulationConfig,
    SpectralState,
    SteadyState,
    decay_fit,
    initial_state,
    simulate,
    steady_solve,
)
from .errors import MemstabError
from .io import atomic_write_text, load_toml
from .spectral import CoupledSpectrum, FourierBasis, PhysicalParams, TorusGrid

log = logging.getLogger(__name__)

FIT_NORMS = ("l2", "h1h2", "l2_z", "h1_z", "l2_w", "h2_w")
ARE_TOL = 1e-8
DEFAULT_REGION = [0.0, "pi", 0.0, "pi"]


# ---------------------------------------------------------------------------
# single-run configuration (TOML)


def params_from_table(table: dict) -> PhysicalParams:
    return PhysicalParams(
        float(table["eta"]),
        float(table["kappa"]),
        float(table["lambda"]),
        float(table.get("nu", 0.0)),
    )


def region_from_table(table: dict | None) -> ControlRegion:
    spec = (table or {}).get("region", DEFAULT_REGION)
    return ControlRegion.parse(spec)


def initial_from_table(table: dict | None, basis: FourierBasis, base: Path | None = None) -> SpectralState:
    table = dict(table or {})
    kind = table.get("kind", "random")
    if kind == "file":
        path = Path(table["path"])
        if base is not None and not path.is_absolute():
            path = base / path
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        z = np.asarray(data["z"], float)
        z = z[:, 0] + 1j * z[:, 1]
        if z.shape != (basis.size,):
            raise ValueError("initial file does not match the basis size")
        amp = table.get("amplitude")
        if amp is not None and np.linalg.norm(z) > 0:
            z = z * (float(amp) / np.linalg.norm(z))
        return SpectralState(z, np.zeros(basis.size, complex), 0.0)
    return initial_state(
        basis,
        kind=kind,
        amplitude=table.get("amplitude", 1.0),
        seed=int(table.get("seed", 0)),
        decay=float(table.get("decay", 2.0)),
        modes=table.get("modes"),
    )


def forcing_from_table(table: dict | None, basis: FourierBasis) -> np.ndarray | None:
    """``[steady] forcing = [[k1, k2, a_cos, a_sin], ...]``."""
    if not table or "forcing" not in table:
        return None
    return basis.trig_field([tuple(t) for t in table["forcing"]])


@dataclass
class RunConfig:
    """Parsed single-run TOML file (used by the ``gain``, ``steady`` and
    ``simulate`` verbs)."""

    params: PhysicalParams
    cutoff: int
    grid: int | None
    dt: float
    horizon: float
    dealias: bool
    record_every: int
    model: str
    scheme: str
    region: ControlRegion
    control_enabled: bool
    gain_path: str | None
    initial: dict
    steady: dict
    base: Path

    @classmethod
    def load(cls, path) -> RunConfig:
        path = Path(path)
        return cls.from_dict(load_toml(path), path.parent)

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> RunConfig:
        disc = d.get("discretization", {})
        ctrl = d.get("control", {})
        return cls(
            params=params_from_table(d["params"]),
            cutoff=int(disc.get("cutoff", 6)),
            grid=disc.get("grid"),
            dt=float(disc.get("dt", 1e-3)),
            horizon=float(disc.get("horizon", 10.0)),
            dealias=bool(disc.get("dealias", True)),
            record_every=int(disc.get("record_every", 1)),
            model=disc.get("model", "nonlinear" if d.get("steady") else "linear"),
            scheme=disc.get("scheme", "strang"),
            region=region_from_table(ctrl),
            control_enabled=bool(ctrl.get("enabled", True)),
            gain_path=ctrl.get("gain_path"),
            initial=d.get("initial", {}),
            steady=d.get("steady", {}),
            base=base or Path("."),
        )

    @property
    def basis(self) -> FourierBasis:
        return FourierBasis(self.cutoff)

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base / p

    def grid_size(self) -> int:
        if self.grid is not None:
            return int(self.grid)
        return max(3 * self.cutoff + 1, 2 * self.cutoff + 2)

    def steady_state(self) -> SteadyState | None:
        if not self.steady:
            return None
        if "file" in self.steady:
            with open(self.resolve(self.steady["file"]), encoding="utf-8") as fh:
                return SteadyState.from_dict(json.load(fh))
        f = forcing_from_table(self.steady, self.basis)
        if f is None:
            return None
        grid = TorusGrid(self.basis, self.grid_size())
        return steady_solve(f, self.params, grid, tol=float(self.steady.get("tol", 1e-12)),
                            dealias=self.dealias)

    def synthesize_gain(self, cross_check: bool = True) -> GainOperator:
        sys = build_truncated_system(self.params, self.basis, self.region)
        hautus_check(CoupledSpectrum.from_basis(sys.params, self.basis), self.region, sys.params.nu)
        return solve_are(sys, cross_check=cross_check)

    def simulation(self, gain: GainOperator | None, steady: SteadyState | None) -> SimulationConfig:
        return SimulationConfig(
            params=self.params,
            cutoff=self.cutoff,
            dt=self.dt,
            horizon=self.horizon,
            grid=self.grid_size(),
            gain=gain if self.control_enabled else None,
            steady=steady,
            region=self.region,
            dealias=self.dealias,
            record_every=self.record_every,
            model=self.model,
            scheme=self.scheme,
        )


# ---------------------------------------------------------------------------
# sweeps


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


@dataclass
class ExperimentSpec:
    name: str
    params: dict
    discretization: dict
    region: list
    initial: dict
    seeds: list
    output_dir: Path
    fit: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path, output_dir=None) -> ExperimentSpec:
        path = Path(path)
        return cls.from_dict(load_toml(path), output_dir=output_dir, base=path.parent)

    @classmethod
    def from_dict(cls, d: dict, output_dir=None, base: Path | None = None) -> ExperimentSpec:
        params = {k: [float(x) for x in _as_list(v)] for k, v in d.get("params", {}).items()}
        for key in ("eta", "kappa", "lambda", "nu"):
            if key not in params:
                raise ValueError(f"experiment spec misses params.{key}")
        out = output_dir or d.get("output_dir", f"runs/{d.get('name', 'experiment')}")
        out = Path(out)
        if base is not None and output_dir is None and not out.is_absolute():
            out = Path.cwd() / out
        init = dict(d.get("initial", {}))
        seeds = [int(s) for s in _as_list(init.pop("seeds", init.pop("seed", 0)))]
        spec = cls(
            name=str(d.get("name", "experiment")),
            params=params,
            discretization=dict(d.get("discretization", {})),
            region=d.get("control", {}).get("region", DEFAULT_REGION),
            initial=init,
            seeds=seeds,
            output_dir=out,
            fit=dict(d.get("fit", {})),
            raw=d,
        )
        for point in spec.points():
            PhysicalParams(point["eta"], point["kappa"], point["lambda"], point["nu"]).check_shift()
        return spec

    def points(self) -> list[dict]:
        keys = ("eta", "kappa", "lambda", "nu")
        grids = [self.params[k] for k in keys]
        out = []
        for combo in itertools.product(*grids):
            for seed in self.seeds:
                p = dict(zip(keys, combo))
                p["seed"] = seed
                out.append(p)
        return out

    def spec_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


@dataclass
class RunRecord:
    spec_hash: str
    run_id: str
    config: dict
    gain: dict = field(default_factory=dict)
    rates: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    wall_time: float = 0.0
    error: str | None = None
    outputs: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.error is None and bool(self.verdicts) and all(self.verdicts.values())

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> RunRecord:
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})

    def recheck(self) -> dict:
        """Recompute verdicts from the stored numbers alone."""
        return evaluate_verdicts(self.gain, self.rates, self.thresholds, self.error)


def evaluate_verdicts(gain: dict, rates: dict, thresholds: dict, error) -> dict:
    if error is not None:
        return {"run_completed": False}
    v = {
        "are_residual": gain["residual"] < thresholds["are_residual"],
        "closed_loop_abscissa": gain["closed_loop_abscissa"] < 0.0,
        "decay_rate": rates["closed"]["l2"] <= thresholds["decay_rate"],
    }
    return {k: bool(x) for k, x in v.items()}


def _run_id(point: dict) -> str:
    return "eta{eta:g}_kappa{kappa:g}_lambda{lambda:g}_nu{nu:g}_seed{seed}".format(**point)


def run_point(spec: ExperimentSpec, point: dict) -> RunRecord:
    """Spectrum -> split -> Hautus -> gain -> open/closed simulation -> fit."""
    t0 = time.perf_counter()
    disc = spec.discretization
    window = float(spec.fit.get("window_fraction", 0.5))
    margin = float(spec.fit.get("margin_fraction", 0.05))
    cfg = RunConfig.from_dict(
        {
            "params": {k: point[k] for k in ("eta", "kappa", "lambda", "nu")},
            "discretization": {**disc, "model": disc.get("model", "linear")},
            "control": {"region": spec.region},
            "initial": {**spec.initial, "seed": point["seed"]},
        }
    )
    nu = point["nu"]
    rec = RunRecord(
        spec_hash=spec.spec_hash(),
        run_id=_run_id(point),
        config={
            "params": cfg.params.as_dict(),
            "cutoff": cfg.cutoff,
            "grid": cfg.grid_size(),
            "dt": cfg.dt,
            "horizon": cfg.horizon,
            "record_every": cfg.record_every,
            "model": cfg.model,
            "scheme": cfg.scheme,
            "region": cfg.region.as_list(),
            "initial": {**spec.initial, "seed": point["seed"], "rng": RNG_NAME},
            "fit_window_fraction": window,
        },
        thresholds={"are_residual": ARE_TOL, "decay_rate": -nu + margin * nu},
    )
    out = spec.output_dir / rec.run_id
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            gain = cfg.synthesize_gain(cross_check=True)
        rec.gain = {
            "nu_used": gain.params.nu,
            "residual": gain.residual,
            "closed_loop_abscissa": gain.closed_loop_abscissa,
            "crosscheck": gain.crosscheck,
            "warnings": [str(w.message) for w in caught],
        }
        x0 = initial_from_table(cfg.initial, cfg.basis)
        steady = cfg.steady_state()
        rates = {}
        for label, g in (("open", None), ("closed", gain)):
            res = simulate(cfg.simulation(g, steady), x0)
            rates[label] = {n: decay_fit(res.series, window, n).rate for n in FIT_NORMS}
            csv_path = out / f"{label}.csv"
            atomic_write_text(csv_path, res.series.to_csv())
            rec.outputs[label] = str(csv_path)
        rec.rates = rates
    except MemstabError as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
    rec.verdicts = evaluate_verdicts(rec.gain, rec.rates, rec.thresholds, rec.error)
    rec.wall_time = time.perf_counter() - t0
    atomic_write_text(out / "record.json", json.dumps(rec.to_dict(), indent=2, sort_keys=True))
    return rec


def _run_point_star(args):
    return run_point(*args)


def worker_count(n_points: int) -> int:
    env = os.environ.get("MEMSTAB_WORKERS")
    limit = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(limit, n_points))


def run_experiment(spec: ExperimentSpec, workers: int | None = None) -> list[RunRecord]:
    """Run every sweep point; module errors are recorded per run, never raised."""
    points = spec.points()
    if not points:
        return []
    n = workers if workers is not None else worker_count(len(points))
    jobs = [(spec, p) for p in points]
    if n <= 1:
        records = [run_point(*j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            records = list(pool.map(_run_point_star, jobs))
    summary = report_json(records)
    atomic_write_text(spec.output_dir / "summary.json", json.dumps(summary, indent=2, sort_keys=True))
    return records


# ---------------------------------------------------------------------------
# reports


def report_json(records) -> dict:
    return {
        "format": "memstab-report/1",
        "records": [r.to_dict() for r in records],
        "failures": [
            {"run_id": r.run_id, "rules": [k for k, v in r.verdicts.items() if not v], "error": r.error}
            for r in records
            if not r.passed
        ],
    }


def report(records) -> tuple[str, dict, int]:
    """Render a verdict table; exit code is 1 iff any verdict failed."""
    records = list(records)
    rules = sorted({k for r in records for k in r.verdicts})
    lines = []
    head = ["run_id"] + rules + ["closed_rate", "threshold"]
    lines.append("  ".join(head))
    for r in records:
        cells = [r.run_id]
        for k in rules:
            v = r.verdicts.get(k)
            cells.append("-" if v is None else ("PASS" if v else "FAIL"))
        rate = r.rates.get("closed", {}).get("l2")
        cells.append("-" if rate is None else f"{rate:.4f}")
        thr = r.thresholds.get("decay_rate")
        cells.append("-" if thr is None else f"{thr:.4f}")
        lines.append("  ".join(cells))
    data = report_json(records)
    for f in data["failures"]:
        msg = f"FAILED {f['run_id']}: " + ", ".join(f["rules"])
        if f["error"]:
            msg += f" ({f['error']})"
        lines.append(msg)
    code = 1 if data["failures"] else 0
    lines.append(f"{len(records) - len(data['failures'])}/{len(records)} runs passed")
    return "\n".join(lines) + "\n", data, code


def load_records(path) -> list[RunRecord]:
    """Records from a summary JSON, a single record JSON, or a run directory."""
    path = Path(path)
    if path.is_dir():
        if (path / "summary.json").exists():
            return load_records(path / "summary.json")
        return [load_records(p)[0] for p in sorted(path.glob("*/record.json"))]
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    if "records" in d:
        return [RunRecord.from_dict(r) for r in d["records"]]
    return [RunRecord.from_dict(d)]


def bundled_spec(name: str) -> Path:
    path = Path(__file__).parent / "data" / f"{name}.toml"
    if not path.exists():
        raise FileNotFoundError(f"no bundled experiment named {name!r}")
    return path
