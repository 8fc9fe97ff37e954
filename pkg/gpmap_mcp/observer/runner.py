"""Dict-returning orchestrators behind the MCP tools and the CLI.

Each function loads a scenario (file path or preset name), calls into the
library, and folds every `GPMapError` into

    {"success": False, "error": str, "error_kind": "config" | "runtime", ...}

The `gpmap_mcp` logger is captured for the duration of the call and
returned as `logs`; unless `verbose=True` it goes through `compact_log`
and the response carries `log_lines_dropped`.
"""

from __future__ import annotations

import io
import logging
import os
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple

import numpy as np

import gpmap_mcp.observer.stepping as stepping
from gpmap_mcp._log_compact import compact_log
from gpmap_mcp.architect import config as config_mod
from gpmap_mcp.architect.geometry import intersect
from gpmap_mcp.errors import ConfigInvalid, GPMapError
from gpmap_mcp.observer.diagnostics import diagnose_config, diagnose_run, validate_config
from gpmap_mcp.observer.metrics import membership_counts
from gpmap_mcp.observer.outputs import dump_packets as read_packet_rows

LOGGER = logging.getLogger(__name__)

LOG_FORMAT = "[%(levelname)s] [%(name)s] %(message)s"
RESULTS_DIR = ".gpmap_mcp_results"


@contextmanager
def _capture_logs(verbose: bool) -> Iterator[io.StringIO]:
    buf = io.StringIO()
    handler = logging.StreamHandler(buf)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root = logging.getLogger("gpmap_mcp")
    previous = root.level
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    try:
        yield buf
    finally:
        root.removeHandler(handler)
        root.setLevel(previous)


def _finish(response: Dict[str, Any], buf: io.StringIO, verbose: bool) -> Dict[str, Any]:
    text = buf.getvalue()
    if verbose:
        response["logs"] = text
        return response
    logs, dropped = compact_log(text)
    response["logs"] = logs
    if dropped:
        response["log_lines_dropped"] = dropped
    return response


def _failure(exc: Exception) -> Dict[str, Any]:
    if isinstance(exc, ConfigInvalid):
        return {
            "success": False,
            "error": str(exc),
            "error_kind": "config",
            "diagnostics": list(exc.diagnostics),
        }
    return {"success": False, "error": f"{type(exc).__name__}: {exc}", "error_kind": "runtime"}


def _overlap_pairs(cfg: config_mod.ScenarioConfig) -> List[Tuple[int, int]]:
    subs = {a.id: a.subdomain() for a in cfg.agents}
    ids = sorted(subs)
    return [(j, i) for k, j in enumerate(ids) for i in ids[k + 1:] if intersect(subs[j], subs[i]) is not None]


def list_presets() -> Dict[str, Any]:
    return {"success": True, "presets": config_mod.list_presets(), "preset_dir": str(config_mod.PRESET_DIR)}


def validate_scenario(config: str, verbose: bool = False) -> Dict[str, Any]:
    """Parse and validate a scenario; echo the normalized config on success.

    Returns:
        {success, config_path, config, warnings, logs, error?, error_kind?, diagnostics?}
    """
    with _capture_logs(verbose) as buf:
        try:
            path = config_mod.resolve_config_path(config)
            cfg = config_mod.load_config(path)
            warnings = validate_config(cfg)
        except GPMapError as exc:
            return _finish(_failure(exc), buf, verbose)
        response = {
            "success": True,
            "config_path": str(path.resolve()),
            "config": config_mod.config_to_dict(cfg),
            "warnings": warnings,
        }
        return _finish(response, buf, verbose)


def diagnose_scenario(config: str, verbose: bool = False) -> Dict[str, Any]:
    """Static smell tests on a scenario without running it.

    Returns:
        {success, anomalies, edges, overlap_pairs, membership_histogram, logs, ...}

    `membership_histogram[k]` counts eval grid points lying in exactly k
    subdomains. `success` is True even when anomalies are present; only a
    config that fails to parse is a failure.
    """
    with _capture_logs(verbose) as buf:
        try:
            cfg = config_mod.load_config(config)
            anomalies = diagnose_config(cfg)
            counts = membership_counts([a.subdomain() for a in cfg.agents], cfg.eval_grid())
        except GPMapError as exc:
            return _finish(_failure(exc), buf, verbose)
        histogram = np.bincount(counts, minlength=len(cfg.agents) + 1)
        response = {
            "success": True,
            "anomalies": anomalies,
            "edges": [list(e) for e in stepping.communication_edges(cfg)],
            "overlap_pairs": [list(p) for p in _overlap_pairs(cfg)],
            "membership_histogram": [int(c) for c in histogram],
        }
        return _finish(response, buf, verbose)


def _summary(artifacts: stepping.RunArtifacts) -> Dict[str, Any]:
    def final(world: Optional[stepping.World]) -> Optional[Dict[str, Any]]:
        if world is None or not world.history:
            return None
        m = world.history[-1].metrics
        return {
            "network_local_rmse": m.network_local_rmse,
            "network_local_nlpd": m.network_local_nlpd,
            "network_overlap_rmse": m.network_overlap_rmse,
            "network_overlap_nlpd": m.network_overlap_nlpd,
        }

    shared = artifacts.shared
    return {
        "steps": len(shared.history),
        "agents": len(shared.agents),
        "edges": len(shared.edges),
        "retained": {str(i): len(a.retained) for i, a in shared.agents.items()},
        "shared": final(shared),
        "self_only": final(artifacts.baseline),
    }


def default_out_dir(config: str, seed: int) -> Path:
    stem = Path(str(config)).stem or "scenario"
    return Path(os.environ.get("GPMAP_MCP_RESULTS", RESULTS_DIR)).expanduser().resolve() / f"{stem}_seed{seed}"


def run_scenario(
    config: str,
    out_dir: Optional[str] = None,
    seed: Optional[int] = None,
    baseline: Optional[bool] = None,
    optimizer: Optional[str] = None,
    predictor: Optional[str] = None,
    steps: Optional[int] = None,
    verbose: bool = False,
) -> Dict[str, Any]:
    """Run the shared world (and baseline), write the run directory, report.

    Full per-step data goes to files under `out_dir` (default
    `$GPMAP_MCP_RESULTS/<config stem>_seed<seed>`) so the response stays small.

    Returns:
        {success, out_dir, files, summary, anomalies, warnings, logs,
         log_lines_dropped?, error?, error_kind?, diagnostics?}
    """
    with _capture_logs(verbose) as buf:
        try:
            cfg = config_mod.load_config(config).with_overrides(
                seed=seed, baseline=baseline, optimizer=optimizer, predictor=predictor, steps=steps
            )
            warnings = validate_config(cfg)
        except GPMapError as exc:
            return _finish(_failure(exc), buf, verbose)

        target = Path(out_dir).expanduser() if out_dir else default_out_dir(config, cfg.run.seed)
        try:
            artifacts = stepping.run_scenario(cfg, target)
            anomalies = diagnose_run(artifacts)
        except GPMapError as exc:
            LOGGER.error("run failed: %s", exc)
            return _finish(_failure(exc), buf, verbose)

        response = {
            "success": True,
            "out_dir": str(target.resolve()),
            "files": artifacts.files,
            "summary": _summary(artifacts),
            "anomalies": anomalies,
            "warnings": warnings,
        }
        return _finish(response, buf, verbose)


def dump_packets(run_dir: str, limit: Optional[int] = None) -> Dict[str, Any]:
    """Decode a run's `packets.bin` into rows."""
    path = Path(run_dir).expanduser()
    if not path.is_dir():
        return {"success": False, "error": f"Run directory not found: {run_dir}", "error_kind": "runtime"}
    try:
        rows = read_packet_rows(path, limit=limit)
    except GPMapError as exc:
        return _failure(exc)
    return {"success": True, "count": len(rows), "packets": rows}
