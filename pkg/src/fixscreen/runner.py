"""Batch sweeps over the scenario grid and everything downstream of them.

A run directory holds::

    manifest.json          config snapshot, scenarios, case status, file hashes
    matrices/<name>.*      one transfer matrix per configuration
    signatures/<name>.*    signature vs. the healthy baseline (c000 is the self-check)
    reports/               per-config reports and the summary table
    figures/               rendered images
    work/                  per-frequency partial results while a sweep is running

The unit of parallel work is one frequency: the healthy operator is factorized
once and every configuration's channels at that frequency are derived from it.
Results land in pre-indexed slots, so outputs do not depend on ``jobs``.
"""

from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis as an
from .io import (atomic_write_bytes, atomic_write_text, file_sha256, stable_hash,
                 write_image, write_sidecar)
from .phantom import PhantomSpec, apply_defect, build_phantom, material_image
from .scenario import (CRACK_DIAMETERS, CRACK_POSITIONS, LOOSENING_ARCS, LOOSENING_POSITIONS,
                       LOOSENING_THICKNESSES, SIDE, DefectSpec, Scenario, SweepPlan,
                       default_scenario_grid, default_sweep_plan)
from .signature import (AMPLITUDE, PHASE, build_signature, export_matrix, import_matrix,
                        normalization_max, render_image)
from .solver import (QUALITY_OK, SolverError, SolverSettings, TransferMatrix, field_snapshot,
                     load_transfer_matrix, save_transfer_matrix, solve_frequency,
                     support_union)

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"


@dataclass
class RunConfig:
    """Everything that pins an experiment. Defaults are the desk-scale run."""

    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    grid_h: float = 0.5e-3
    freq_stride: int = 10
    frequencies: list | None = None   # explicit list overrides the 1..300 kHz grid
    solver: SolverSettings = field(default_factory=SolverSettings)
    analysis: an.AnalysisParams = field(default_factory=an.AnalysisParams)
    crack_positions: tuple = CRACK_POSITIONS
    crack_diameters: tuple = CRACK_DIAMETERS
    loosening_positions: tuple = LOOSENING_POSITIONS
    loosening_thicknesses: tuple = LOOSENING_THICKNESSES
    loosening_arcs: tuple = LOOSENING_ARCS
    calibration_angle: float = SIDE
    matrix_format: str = "bin"

    def plan(self) -> SweepPlan:
        n = self.phantom.sensor_count
        if self.frequencies is not None:
            sensors = tuple(range(n))
            return SweepPlan(tuple(self.frequencies), sensors, sensors, n)
        return default_sweep_plan(n, self.freq_stride)

    def scenario_grid(self) -> list[Scenario]:
        return default_scenario_grid(self.crack_positions, self.crack_diameters,
                                     self.loosening_positions, self.loosening_thicknesses,
                                     self.loosening_arcs)

    def to_dict(self) -> dict:
        return {
            "phantom": self.phantom.to_dict(),
            "grid_h": self.grid_h,
            "freq_stride": self.freq_stride,
            "frequencies": self.frequencies,
            "solver": self.solver.to_dict(),
            "analysis": self.analysis.to_dict(),
            "scenarios": {
                "crack_positions": list(self.crack_positions),
                "crack_diameters": list(self.crack_diameters),
                "loosening_positions": list(self.loosening_positions),
                "loosening_thicknesses": list(self.loosening_thicknesses),
                "loosening_arcs": list(self.loosening_arcs),
            },
            "calibration_angle": self.calibration_angle,
            "matrix_format": self.matrix_format,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        unknown = set(d) - {"phantom", "grid_h", "freq_stride", "frequencies", "solver",
                            "analysis", "scenarios", "calibration_angle", "matrix_format"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        if "phantom" in d:
            kwargs["phantom"] = PhantomSpec.from_dict(d["phantom"])
        if "solver" in d:
            kwargs["solver"] = SolverSettings.from_dict(d["solver"])
        if "analysis" in d:
            kwargs["analysis"] = an.AnalysisParams.from_dict(d["analysis"])
        for key in ("grid_h", "freq_stride", "frequencies", "calibration_angle", "matrix_format"):
            if key in d:
                kwargs[key] = d[key]
        for key, values in d.get("scenarios", {}).items():
            kwargs[key] = tuple(values)
        return cls(**kwargs)

    def config_hash(self) -> str:
        return stable_hash(self.to_dict())


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return RunConfig.from_dict(json.load(fh))


def save_config(cfg: RunConfig, path) -> None:
    atomic_write_text(path, json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def select_scenarios(grid: list[Scenario], spec: str | None) -> list[Scenario]:
    """Filter like ``"1-4,30,crack"``; the healthy baseline is always kept."""
    if not spec:
        return list(grid)
    wanted = {0}
    for token in (t.strip() for t in spec.split(",")):
        if not token:
            continue
        if token in ("crack", "loosening", "healthy"):
            wanted |= {s.config_id for s in grid if s.label == token}
        elif "-" in token:
            lo, hi = (int(x) for x in token.split("-"))
            wanted |= set(range(lo, hi + 1))
        else:
            wanted.add(int(token.lstrip("c")))
    ids = {s.config_id for s in grid}
    bad = sorted(wanted - ids)
    if bad:
        raise ValueError(f"scenario filter names unknown configs {bad}")
    return [s for s in grid if s.config_id in wanted]


class Manifest:
    def __init__(self, root: Path, data: dict):
        self.root = root
        self.data = data

    @classmethod
    def open(cls, root: Path, cfg: RunConfig | None = None) -> "Manifest":
        path = root / MANIFEST
        if path.exists():
            data = json.loads(path.read_text())
            if cfg is not None and data["config_hash"] != cfg.config_hash():
                raise ValueError(f"{root} was produced with a different configuration; "
                                 "use a fresh output directory")
            return cls(root, data)
        if cfg is None:
            raise FileNotFoundError(f"no {MANIFEST} in {root}")
        now = _timestamp()
        data = {
            "config_hash": cfg.config_hash(),
            "config": cfg.to_dict(),
            "scenarios": [s.to_dict() for s in cfg.scenario_grid()],
            "cases": {},
            "files": {},
            "created": now,
            "updated": now,
        }
        return cls(root, data)

    @property
    def config(self) -> RunConfig:
        return RunConfig.from_dict(self.data["config"])

    def record_file(self, path: Path) -> None:
        rel = path.relative_to(self.root).as_posix()
        self.data["files"][rel] = file_sha256(path)

    def file_ok(self, rel: str) -> bool:
        path = self.root / rel
        return rel in self.data["files"] and path.exists() \
            and file_sha256(path) == self.data["files"][rel]

    def case_done(self, name: str) -> bool:
        case = self.data["cases"].get(name)
        return bool(case and case.get("status") == "done"
                    and all(self.file_ok(f) for f in case.get("files", [])))

    def save(self) -> None:
        self.data["updated"] = _timestamp()
        d = self.data
        # one scenario per line keeps the grid greppable
        parts = ["{"]
        keys = list(d)
        for i, key in enumerate(keys):
            sep = "," if i < len(keys) - 1 else ""
            if key == "scenarios":
                rows = ",\n".join("    " + json.dumps(s, sort_keys=True) for s in d[key])
                parts.append(f'  "scenarios": [\n{rows}\n  ]{sep}')
            else:
                body = json.dumps(d[key], indent=2, sort_keys=True).replace("\n", "\n  ")
                parts.append(f"  {json.dumps(key)}: {body}{sep}")
        parts.append("}")
        atomic_write_text(self.root / MANIFEST, "\n".join(parts) + "\n")


def _timestamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


class SweepInterrupted(RuntimeError):
    """Raised when a sweep stops early on request; partial work is kept."""


# Worker state, set once per process so phantoms are not re-pickled per task.
_WORKER = {}


def _init_worker(base, variants, plan, settings, support):
    _WORKER.update(base=base, variants=variants, plan=plan, settings=settings, support=support)


def _frequency_task(index: int, names: list[str]):
    w = _WORKER
    variants = [w["variants"][n] for n in names]
    try:
        res = solve_frequency(w["base"], w["plan"], index, variants, w["settings"], w["support"])
    except (SolverError, ValueError) as exc:
        return index, {}, "failed", {n: str(exc) for n in ["c000", *names]}
    cols = {"c000": res.base}
    errors = {}
    for i, n in enumerate(names):
        if res.variants[i] is None:
            errors[n] = res.errors[i]
        else:
            cols[n] = res.variants[i]
    return index, cols, res.quality, errors


def _partial_path(root: Path, index: int) -> Path:
    return root / "work" / f"f{index:04d}.npz"


def _load_partial(path: Path) -> tuple[dict, str]:
    if not path.exists():
        return {}, QUALITY_OK
    with np.load(path) as npz:
        cols = {k: npz[k] for k in npz.files if k != "__quality__"}
        quality = str(npz["__quality__"]) if "__quality__" in npz.files else QUALITY_OK
    return cols, quality


def _save_partial(path: Path, cols: dict, quality: str) -> None:
    import io as _io

    buf = _io.BytesIO()
    np.savez(buf, __quality__=np.array(quality), **cols)
    atomic_write_bytes(path, buf.getvalue())


@dataclass
class SweepSummary:
    solved: list
    skipped: list
    failed: dict
    signatures: list


def sweep(cfg: RunConfig, out_dir, jobs: int = 1, scenarios: str | None = None,
          stop_after: int | None = None) -> SweepSummary:
    """Solve the healthy baseline and the selected scenarios, then build signatures.

    Configurations whose matrices are already recorded in the manifest with a
    matching hash are skipped. Per-frequency partial results are kept in
    ``work/`` until every pending configuration is written, so an interrupted
    sweep resumes at frequency granularity. ``stop_after`` interrupts after
    that many frequency tasks (used to exercise resumption).
    """
    root = Path(out_dir)
    for sub in ("matrices", "signatures", "reports", "figures", "work"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    manifest = Manifest.open(root, cfg)
    manifest.save()

    grid = cfg.scenario_grid()
    selected = select_scenarios(grid, scenarios)
    pending = [s for s in selected if not manifest.case_done(s.name)]
    skipped = [s.name for s in selected if s not in pending]
    plan = cfg.plan()
    failed = {}

    if pending:
        base = build_phantom(cfg.phantom, cfg.grid_h)
        all_variants = {s.name: apply_defect(base, s.defect) for s in grid if s.defect}
        support = support_union(base, list(all_variants.values()))
        names = [s.name for s in pending if s.defect]
        variants = {n: all_variants[n] for n in names}
        failed = _run_frequencies(root, base, variants, names, plan, cfg.solver, support,
                                  jobs, stop_after)
        _write_matrices(manifest, cfg, pending, plan, failed)
        manifest.save()

    sig_names = _write_signatures(manifest, selected)
    if all(manifest.case_done(s.name) for s in selected):
        for p in sorted((root / "work").glob("*.npz")):
            p.unlink()
    manifest.save()
    return SweepSummary([s.name for s in pending if s.name not in failed], skipped,
                        failed, sig_names)


def _run_frequencies(root, base, variants, names, plan, settings, support, jobs, stop_after):
    todo = []
    for k in range(len(plan.frequencies)):
        cols, _ = _load_partial(_partial_path(root, k))
        missing = [n for n in names if n not in cols]
        if "c000" not in cols or missing:
            todo.append((k, missing))

    errors: dict[str, str] = {}

    def store(index, cols, quality, errs):
        path = _partial_path(root, index)
        old, old_quality = _load_partial(path)
        old.update(cols)
        if old_quality != QUALITY_OK:
            quality = old_quality
        if cols:
            _save_partial(path, old, quality)
        for n, msg in errs.items():
            errors.setdefault(n, f"{plan.frequencies[index]:g} Hz: {msg}")

    done = 0
    if jobs <= 1:
        _init_worker(base, variants, plan, settings, support)
        try:
            for k, missing in todo:
                if stop_after is not None and done >= stop_after:
                    raise SweepInterrupted(f"stopped after {done} frequency tasks")
                store(*_frequency_task(k, missing))
                done += 1
        finally:
            _WORKER.clear()
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                                 initargs=(base, variants, plan, settings, support)) as pool:
            futures = [pool.submit(_frequency_task, k, missing) for k, missing in todo]
            for fut in futures:
                if stop_after is not None and done >= stop_after:
                    for f in futures:
                        f.cancel()
                    raise SweepInterrupted(f"stopped after {done} frequency tasks")
                store(*fut.result())
                done += 1
    return errors


def _write_matrices(manifest: Manifest, cfg: RunConfig, pending, plan, errors) -> None:
    root = manifest.root
    nf = len(plan.frequencies)
    partials = [_load_partial(_partial_path(root, k)) for k in range(nf)]
    quality = [q for _, q in partials]
    for s in pending:
        if s.name in errors or "c000" in errors:
            msg = errors.get(s.name) or errors.get("c000")
            manifest.data["cases"][s.name] = {"status": "failed", "error": msg, "files": []}
            continue
        if any(s.name not in cols for cols, _ in partials):
            manifest.data["cases"][s.name] = {"status": "failed", "files": [],
                                              "error": "missing frequency results"}
            continue
        data = np.stack([cols[s.name] for cols, _ in partials], axis=1)
        tm = TransferMatrix(data, plan, s.config_id, cfg.grid_h, cfg.solver.to_dict(), quality)
        paths = save_transfer_matrix(tm, root / "matrices" / s.name, cfg.matrix_format)
        for p in paths:
            manifest.record_file(p)
        manifest.data["cases"][s.name] = {
            "status": "done", "error": None, "quality": quality,
            "files": [p.relative_to(root).as_posix() for p in paths],
        }


def _write_signatures(manifest: Manifest, selected) -> list[str]:
    root = manifest.root
    if not manifest.case_done("c000"):
        return []
    healthy = load_transfer_matrix(root / "matrices" / "c000")
    written = []
    for s in selected:
        if not manifest.case_done(s.name):
            continue
        rel = f"signatures/{s.name}.csv"
        meta_rel = f"signatures/{s.name}.meta"
        if manifest.file_ok(rel) and manifest.file_ok(meta_rel):
            written.append(s.name)
            continue
        tm = healthy if s.config_id == 0 else load_transfer_matrix(root / "matrices" / s.name)
        path = export_matrix(build_signature(tm, healthy), root / rel)
        manifest.record_file(path)
        manifest.record_file(root / meta_rel)
        written.append(s.name)
    return written


def _library(manifest: Manifest) -> list[an.LibraryEntry]:
    entries = []
    for sd in manifest.data["scenarios"]:
        rel = f"signatures/{sd['name']}.csv"
        if not (manifest.root / rel).exists():
            continue
        defect = sd["defect"]
        entries.append(an.LibraryEntry(import_matrix(manifest.root / rel), sd["label"],
                                       sd["config_id"], None if defect is None else defect["angle"]))
    return entries


def analyze_run(run_dir, params: an.AnalysisParams | None = None) -> dict:
    """Reports for every signature, the summary table and leave-one-out accuracy."""
    root = Path(run_dir)
    manifest = Manifest.open(root)
    cfg = manifest.config
    params = params or cfg.analysis
    scen = {sd["config_id"]: sd for sd in manifest.data["scenarios"]}
    library = _library(manifest)
    if not library:
        raise FileNotFoundError(f"{root} has no signatures; run a sweep first")
    missing = [sd["name"] for sd in manifest.data["scenarios"]
               if manifest.data["cases"].get(sd["name"], {}).get("status") == "done"
               and not (root / f"signatures/{sd['name']}.csv").exists()]

    sizes, energies = [], []
    for e in library:
        d = scen[e.config_id]["defect"]
        if d and d["kind"] == "crack" and math.isclose(d["angle"], cfg.calibration_angle):
            sizes.append(d["diameter"])
            energies.append(an.extract_features(e.signature, params).total_energy)
    calibration = an.Calibration(np.array(sizes), np.array(energies)) if sizes else None
    if calibration is not None and not calibration.monotone:
        calibration = None

    angles = cfg.phantom.sensor_angles()
    rows = []
    rule_confusion: dict = {}
    nn_confusion: dict = {}
    for e in library:
        sd = scen[e.config_id]
        report = an.analyze(e.signature, angles, params, library, calibration)
        name = sd["name"]
        atomic_write_text(root / "reports" / f"{name}.txt", report.to_text())
        write_sidecar(root / "reports" / f"{name}.kv", report.to_keyvalue())
        manifest.record_file(root / "reports" / f"{name}.txt")
        manifest.record_file(root / "reports" / f"{name}.kv")

        true_label = sd["label"]
        nn_label = report.nearest["label"] if report.nearest else None
        true_angle = sd["defect"]["angle"] if sd["defect"] else None
        err = None
        if true_angle is not None and report.location_estimate is not None:
            err = math.degrees(an.angular_error(report.location_estimate, true_angle))
        rule_confusion.setdefault(true_label, {}).setdefault(report.classification, 0)
        rule_confusion[true_label][report.classification] += 1
        if nn_label is not None:
            nn_confusion.setdefault(true_label, {}).setdefault(nn_label, 0)
            nn_confusion[true_label][nn_label] += 1
        rows.append({
            "config_id": sd["config_id"], "name": name, "true_label": true_label,
            "predicted_label": report.classification, "confidence": report.confidence,
            "severity": report.severity, "size_estimate": report.size_estimate,
            "bands": len(report.evidence.bands), "onset_hz": report.evidence.onset_frequency,
            "true_angle_deg": None if true_angle is None else math.degrees(true_angle),
            "location_deg": (None if report.location_estimate is None
                             else math.degrees(report.location_estimate)),
            "location_error_deg": err, "nn_label": nn_label,
            "nn_config": report.nearest["config_id"] if report.nearest else None,
        })

    defect_rows = [r for r in rows if r["true_label"] != an.HEALTHY]
    nn_scored = [r for r in defect_rows if r["nn_label"] is not None]
    loo = (sum(r["nn_label"] == r["true_label"] for r in nn_scored) / len(nn_scored)
           if nn_scored else None)
    summary = {
        "configs": len(rows),
        "defect_configs": len(defect_rows),
        "loo_nn_accuracy": loo,
        "rule_accuracy": (sum(r["predicted_label"] == r["true_label"] for r in defect_rows)
                          / len(defect_rows) if defect_rows else None),
        "healthy_correct": all(r["predicted_label"] == an.HEALTHY
                               for r in rows if r["true_label"] == an.HEALTHY),
        "rule_confusion": rule_confusion,
        "nn_confusion": nn_confusion,
        "calibration": None if calibration is None else {
            "angle": cfg.calibration_angle, "sizes": calibration.sizes.tolist(),
            "energies": calibration.energies.tolist()},
        "missing_signatures": missing,
        "params": params.to_dict(),
    }

    cols = list(rows[0])
    lines = [",".join(cols)]
    for r in sorted(defect_rows, key=lambda r: r["config_id"]):
        lines.append(",".join("" if r[c] is None else
                              (repr(r[c]) if isinstance(r[c], float) else str(r[c])) for c in cols))
    atomic_write_text(root / "reports" / "summary.csv", "\n".join(lines) + "\n")
    write_sidecar(root / "reports" / "summary.kv", summary)
    manifest.record_file(root / "reports" / "summary.csv")
    manifest.record_file(root / "reports" / "summary.kv")
    manifest.save()
    summary["rows"] = sorted(rows, key=lambda r: r["config_id"])
    return summary


def render_run(target, channels=(AMPLITUDE, PHASE), normalization: str = "per-run",
               fmt: str = "pgm", snapshot: tuple | None = None) -> list[Path]:
    """Signature images for a run directory or a single signature CSV.

    ``snapshot`` = (config name or id, frequency Hz, actuator) additionally
    renders the field magnitude for that single solve.
    """
    target = Path(target)
    written = []
    if target.is_file():
        sig = import_matrix(target)
        for ch in channels:
            out = target.with_name(f"{target.stem}_{ch}.{fmt}")
            write_image(out, render_image(sig, ch, "per-run"))
            written.append(out)
        return written

    manifest = Manifest.open(target)
    sigs = {p.stem: import_matrix(p) for p in sorted((target / "signatures").glob("*.csv"))}
    scale = max((normalization_max(s) for s in sigs.values()), default=0.0)
    for name, sig in sigs.items():
        for ch in channels:
            out = target / "figures" / f"{name}_{ch}.{fmt}"
            write_image(out, render_image(sig, ch, normalization, scale))
            manifest.record_file(out)
            written.append(out)
    if snapshot is not None:
        out = render_snapshot(manifest.config, target / "figures", *snapshot, fmt=fmt)
        manifest.record_file(out)
        written.append(out)
    manifest.save()
    return written


def snapshot_field(cfg: RunConfig, config, frequency: float, actuator: int) -> np.ndarray:
    grid = cfg.scenario_grid()
    cid = int(str(config).lstrip("c"))
    scenario = next(s for s in grid if s.config_id == cid)
    ph = build_phantom(cfg.phantom, cfg.grid_h)
    if scenario.defect is not None:
        ph = apply_defect(ph, scenario.defect)
    return field_snapshot(ph, frequency, actuator, cfg.solver)


def field_image(field: np.ndarray) -> np.ndarray:
    """|Re p| scaled to 0..255, +y up; outside the phantom is black."""
    mag = np.abs(field.real)
    peak = np.nanmax(mag)
    img = np.where(np.isfinite(mag), mag / peak if peak > 0 else 0.0, 0.0)
    img = np.floor(img * 255 + 0.5).astype(np.uint8)
    return np.ascontiguousarray(img.T[::-1])


def render_snapshot(cfg: RunConfig, out_dir, config, frequency: float, actuator: int,
                    fmt: str = "pgm") -> Path:
    field = snapshot_field(cfg, config, frequency, actuator)
    cid = int(str(config).lstrip("c"))
    out = Path(out_dir) / f"field_c{cid:03d}_{frequency:g}Hz_a{actuator}.{fmt}"
    write_image(out, field_image(field))
    return out


def dominant_wavenumber(profile: np.ndarray, h: float) -> float:
    """Spatial frequency (cycles/m) of the strongest non-DC component of a 1D profile."""
    x = np.asarray(profile, dtype=float)
    x = x - x.mean()
    spec = np.abs(np.fft.rfft(x * np.hanning(x.size)))
    k = np.fft.rfftfreq(x.size, d=h)
    spec[0] = 0.0
    return float(k[int(np.argmax(spec))])


def phantom_debug(cfg: RunConfig, out_path, defect: DefectSpec | None = None) -> Path:
    ph = build_phantom(cfg.phantom, cfg.grid_h)
    if defect is not None:
        ph = apply_defect(ph, defect)
    out = Path(out_path)
    write_image(out, material_image(ph))
    return out


def verify_run(run_dir) -> list[str]:
    """Relative paths whose content no longer matches the manifest hash."""
    manifest = Manifest.open(Path(run_dir))
    return [rel for rel in sorted(manifest.data["files"]) if not manifest.file_ok(rel)]
