"""Latin-hypercube screen of three-node circuits for adaptation and ASI.

Every (topology, sample) pair is simulated independently:

1. pre-adapt at u = 0.5 and step to 0.6; compute precision and sensitivity;
2. only if the circuit adapts and detects the step, pre-adapt at 0.3, step
   to 0.36 and compare the two responses with the ASI metric.

Work is split into one shard per topology. Shards run in a process pool and
a single writer appends them to a JSON-lines file in topology order, so the
file does not depend on the worker count. After each shard the writer
records the file length and its SHA-256 in a checkpoint, which is what a
resumed run verifies before appending.
"""

from __future__ import annotations

import hashlib
import json
import logging
import multiprocessing as mp
import os
import time
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from .config import RunConfig
from .integrate import IntegrationError, PreAdaptationError, SteadyStateClass, step_response
from .kinetics import build_rhs, circuit_from_topology, edge_names
from .metrics import MetricError, adaptation_metrics, asi_metric
from .topology import Topology

log = logging.getLogger(__name__)

# a sample whose pre-adaptation takes longer is classified rather than chased
SCREEN_T_MAX = 1e5
CHECKPOINT_NAME = "checkpoint.json"


class CheckpointError(RuntimeError):
    """A checkpoint does not match the result file or the run configuration."""


@dataclass(frozen=True)
class SampleSpec:
    n_samples: int
    seed: int = 0
    k_range: tuple[float, float] = (0.1, 10.0)
    K_range: tuple[float, float] = (0.001, 100.0)

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        for lo, hi in (self.k_range, self.K_range):
            if not 0 < lo < hi:
                raise ValueError(f"invalid range ({lo}, {hi})")


def lhs_unit(n: int, dim: int, rng) -> np.ndarray:
    """n Latin-hypercube points in [0, 1)^dim."""
    return qmc.LatinHypercube(dim, rng=rng).random(n)


def lhs_sample(spec: SampleSpec, dim: int, kinds=None, stream=()) -> np.ndarray:
    """Log-uniform Latin-hypercube samples, shape (n_samples, dim).

    Parameters
    ----------
    kinds : sequence of {"k", "K"}, optional
        Range used by each column. Defaults to alternating k, K, the layout
        of a topology's (k, K) pairs.
    stream : sequence of int
        Extra entropy mixed into the seed, e.g. the topology id, so that
        each topology gets its own reproducible sample set.
    """
    if kinds is None:
        kinds = ["k", "K"] * (dim // 2) + ["k"] * (dim % 2)
    if len(kinds) != dim:
        raise ValueError("one range kind per dimension required")
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, *stream]))
    unit = lhs_unit(spec.n_samples, dim, rng)
    ranges = {"k": spec.k_range, "K": spec.K_range}
    lo = np.log10([ranges[k][0] for k in kinds])
    hi = np.log10([ranges[k][1] for k in kinds])
    return 10.0 ** (lo + unit * (hi - lo))


def topology_samples(t: Topology, spec: SampleSpec) -> tuple[list[str], np.ndarray]:
    """Edge names and samples of shape (n_samples, n_edges, 2) holding (k, K)."""
    names = edge_names(t)
    flat = lhs_sample(spec, 2 * len(names), stream=(t.id,))
    return names, flat.reshape(spec.n_samples, len(names), 2)


def params_digest(values: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(values, dtype="<f8").tobytes()).hexdigest()[:16]


def _classify_pre(result) -> str:
    return {
        SteadyStateClass.OSCILLATORY: "oscillatory",
        SteadyStateClass.TIMED_OUT: "timed-out",
        SteadyStateClass.STIFF_FAILED: "stiff-failed",
    }.get(result.classification, "failed")


def screen_circuit(circuit, cfg: RunConfig | None = None, t_max: float = SCREEN_T_MAX) -> dict:
    """Adaptation and, if it adapts, ASI outcome of one circuit as a record body."""
    cfg = cfg or RunConfig()
    fld = build_rhs(circuit)
    out = {"classification": "ok", "adaptation": None, "asi": None}
    opts = dict(max_steps=cfg.max_steps, t_max=t_max, rtol=cfg.rtol, atol=cfg.atol, tol=cfg.steady_state_tol)
    try:
        high = step_response(fld, *cfg.high_step, **opts)
    except PreAdaptationError as exc:
        out["classification"] = _classify_pre(exc.result)
        return out
    except IntegrationError:
        out["classification"] = "stiff-failed"
        return out
    if not high.equilibrated:
        out["classification"] = "not-equilibrated"
    try:
        m = adaptation_metrics(high, *cfg.high_step, relative_precision=cfg.relative_precision)
    except MetricError:
        out["classification"] = "zero-output"
        return out
    out["adaptation"] = {
        "precision_ratio": m.precision_ratio, "sensitivity": m.sensitivity, "delta_u": m.delta_u,
        "adapts": m.adapts, "detects": m.detects}
    if not (m.adapts and m.detects) or not high.equilibrated:
        return out
    try:
        low = step_response(fld, *cfg.low_step, **opts)
        a = asi_metric(low, high, mode=cfg.asi_mode)
    except PreAdaptationError as exc:
        out["classification"] = "low-" + _classify_pre(exc.result)
        return out
    except (IntegrationError, MetricError):
        out["classification"] = "low-failed"
        return out
    out["asi"] = {"relative_difference": a.relative_difference, "asi": a.asi,
                  "reference_amplitude": a.reference_amplitude}
    return out


def _shard(args) -> tuple[int, list[dict], float]:
    code, spec, cfg = args
    t = Topology(code)
    names, samples = topology_samples(t, spec)
    records = []
    start = time.perf_counter()
    for i, values in enumerate(samples):
        params = {n: (float(k), float(K)) for n, (k, K) in zip(names, values)}
        c = circuit_from_topology(t, params, cfg.constitutive_fraction)
        body = screen_circuit(c, cfg)
        records.append({"topology_id": code, "sample_index": i, "params_digest": params_digest(values), **body})
    return code, records, time.perf_counter() - start


def _sha256_prefix(path: Path, length: int) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        remaining = length
        while remaining > 0:
            chunk = fh.read(min(1 << 20, remaining))
            if not chunk:
                break
            h.update(chunk)
            remaining -= len(chunk)
    return h.hexdigest()


def _config_digest(codes, spec: SampleSpec, cfg: RunConfig) -> str:
    settings = cfg.to_dict()
    settings.pop("workers")
    blob = json.dumps({"topologies": list(codes), "spec": asdict(spec), "config": settings}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _load_checkpoint(ck_dir: Path, out: Path, digest: str) -> tuple[int, int]:
    """(completed shards, verified byte offset) from an existing checkpoint."""
    path = ck_dir / CHECKPOINT_NAME
    try:
        state = json.loads(path.read_text())
        done, offset, sha, cfg = state["completed"], state["offset"], state["sha256"], state["config"]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if cfg != digest:
        raise CheckpointError("checkpoint was written by a run with a different configuration")
    if not out.exists() or out.stat().st_size < offset:
        raise CheckpointError(f"result file {out} is shorter than the checkpointed {offset} bytes")
    if _sha256_prefix(out, offset) != sha:
        raise CheckpointError(f"result file {out} does not match the checkpoint hash")
    return int(done), int(offset)


def _save_checkpoint(ck_dir: Path, done: int, offset: int, sha: str, digest: str) -> None:
    tmp = ck_dir / (CHECKPOINT_NAME + ".tmp")
    tmp.write_text(json.dumps({"completed": done, "offset": offset, "sha256": sha, "config": digest}))
    os.replace(tmp, ck_dir / CHECKPOINT_NAME)


def run_screen(
    topologies,
    spec: SampleSpec,
    out,
    workers: int = 1,
    checkpoint=None,
    restart: bool = False,
    cfg: RunConfig | None = None,
    stop_after: int | None = None,
) -> dict:
    """Screen ``topologies`` and return the aggregate report.

    Records go to ``out`` (JSON lines, sorted by topology then sample), the
    aggregate to ``out`` with suffix ``.report.json`` and per-topology wall
    times to ``.timing.json``. Only the timing file varies between runs.

    Parameters
    ----------
    checkpoint : path, optional
        Directory for resume state. An existing checkpoint is resumed after
        verifying the result file; a mismatch raises :class:`CheckpointError`
        unless ``restart`` is set, which discards previous output.
    stop_after : int, optional
        Stop after this many shards have been written in this call.
    """
    codes = sorted({t.id if isinstance(t, Topology) else int(t) for t in topologies})
    if not codes:
        raise ValueError("no topologies to screen")
    out = Path(out)
    cfg = cfg or RunConfig()
    digest = _config_digest(codes, spec, cfg)
    ck_dir = Path(checkpoint) if checkpoint is not None else None
    done, offset = 0, 0
    if ck_dir is not None:
        ck_dir.mkdir(parents=True, exist_ok=True)
        if restart:
            (ck_dir / CHECKPOINT_NAME).unlink(missing_ok=True)
        elif (ck_dir / CHECKPOINT_NAME).exists():
            done, offset = _load_checkpoint(ck_dir, out, digest)
            log.info("resuming after %d of %d topologies", done, len(codes))
    if done == 0:
        out.write_bytes(b"")
    timing_path = out.with_suffix(".timing.json")
    timing = _read_json(timing_path) if done else {}
    h = hashlib.sha256()
    with open(out, "r+b") as fh:
        fh.truncate(offset)
        # rebuild the running hash over the verified prefix
        fh.seek(0)
        h.update(fh.read(offset))
        fh.seek(offset)
        tasks = [(code, spec, cfg) for code in codes[done:]]
        if stop_after is not None:
            tasks = tasks[:stop_after]
        for code, records, wall in _map(tasks, workers):
            blob = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records).encode()
            fh.write(blob)
            fh.flush()
            os.fsync(fh.fileno())
            h.update(blob)
            offset += len(blob)
            done += 1
            timing[str(code)] = wall
            if ck_dir is not None:
                _save_checkpoint(ck_dir, done, offset, h.hexdigest(), digest)
    timing_path.write_text(json.dumps(timing, sort_keys=True))
    report = aggregate(read_records(out))
    report["complete"] = done == len(codes)
    out.with_suffix(".report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    return report


def _map(tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        yield from map(_shard, tasks)
        return
    with mp.get_context("fork").Pool(workers) as pool:
        yield from pool.imap(_shard, tasks, chunksize=1)


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except (OSError, ValueError):
        return {}


def read_records(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def aggregate(records) -> dict:
    """Counts and fractions per sample and per topology.

    A sample is adapting when it adapts and detects the step; ASI fractions
    are taken among adapting samples.
    """
    classes = Counter(r["classification"] for r in records)
    per_topology: dict[int, dict] = {}
    n_adapt = n_asi = 0
    for r in records:
        tally = per_topology.setdefault(r["topology_id"], {"samples": 0, "adapting": 0, "asi": 0})
        tally["samples"] += 1
        a = r["adaptation"]
        if a and a["adapts"] and a["detects"]:
            tally["adapting"] += 1
            n_adapt += 1
            if r["asi"] and r["asi"]["asi"]:
                tally["asi"] += 1
                n_asi += 1
    n = len(records)
    n_top = len(per_topology)
    top_adapt = sum(1 for t in per_topology.values() if t["adapting"])
    top_asi = sum(1 for t in per_topology.values() if t["asi"])
    return {
        "samples": n,
        "topologies": n_top,
        "adapting": n_adapt,
        "asi": n_asi,
        "adapting_fraction": n_adapt / n if n else 0.0,
        "asi_fraction_of_adapting": n_asi / n_adapt if n_adapt else 0.0,
        "topologies_adapting": top_adapt,
        "topologies_asi": top_asi,
        "topology_adapting_fraction": top_adapt / n_top if n_top else 0.0,
        "topology_asi_fraction_of_adapting": top_asi / top_adapt if top_adapt else 0.0,
        "classifications": dict(sorted(classes.items())),
        "excluded": n - classes.get("ok", 0),
        "per_topology": {str(k): v for k, v in sorted(per_topology.items())},
    }


def random_topologies(n: int, seed: int = 0) -> list[Topology]:
    """n distinct nontrivial topologies drawn reproducibly."""
    from .topology import enumerate_nontrivial

    pool = enumerate_nontrivial()
    idx = np.random.default_rng(seed).choice(len(pool), size=n, replace=False)
    return [pool[i] for i in sorted(idx)]
