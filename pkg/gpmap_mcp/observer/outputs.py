"""Run directory writer and packet-log reader.

Every file is a pure function of the run: fixed row order, shortest
round-trip float formatting, no timestamps. `run_manifest.json` is written
last and carries the sha256 of every other file.
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Union

import pandas as pd

from gpmap_mcp.architect.config import config_to_dict
from gpmap_mcp.errors import IoFailure
from gpmap_mcp.observer.agents import predict
from gpmap_mcp.protocol.packets import read_packet_log, write_packet_log

if TYPE_CHECKING:
    from gpmap_mcp.observer.stepping import RunArtifacts, World

LOGGER = logging.getLogger(__name__)

MANIFEST = "run_manifest.json"
PACKET_LOG = "packets.bin"
HISTORY = "shared_vs_self_metrics_history.csv"
HISTORY_COLUMNS = [
    "t",
    "shared_local_rmse",
    "self_local_rmse",
    "shared_overlap_rmse",
    "self_overlap_rmse",
    "shared_nlpd",
    "self_nlpd",
]


def coord_names(dim: int) -> List[str]:
    if dim == 1:
        return ["x"]
    if dim == 2:
        return ["x", "y"]
    return [f"x{k + 1}" for k in range(dim)]


def _frame(points, names: List[str], **extra) -> pd.DataFrame:
    df = pd.DataFrame(points, columns=names)
    for key, values in extra.items():
        df[key] = values
    return df


def metrics_history_rows(artifacts: "RunArtifacts") -> List[Dict[str, Any]]:
    """One row per step t = 1..T; self-only columns are None without a baseline."""
    rows = []
    base = artifacts.baseline.history if artifacts.baseline is not None else []
    for k, rec in enumerate(artifacts.shared.history):
        m = rec.metrics
        b = base[k].metrics if k < len(base) else None
        rows.append({
            "t": rec.step,
            "shared_local_rmse": m.network_local_rmse,
            "self_local_rmse": b.network_local_rmse if b else None,
            "shared_overlap_rmse": m.network_overlap_rmse,
            "self_overlap_rmse": b.network_overlap_rmse if b else None,
            "shared_nlpd": m.network_local_nlpd,
            "self_nlpd": b.network_local_nlpd if b else None,
        })
    return rows


def sent_packets(world: "World"):
    """(receiver_id, packet) for every packet sent, in step then edge order."""
    for rec in world.history:
        for (j, i) in sorted(rec.sent):
            for p in rec.sent[(j, i)]:
                yield i, p


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_outputs(artifacts: "RunArtifacts", out_dir: Union[str, Path]) -> Dict[str, str]:
    """Write the run directory; returns {file name: absolute path}."""
    out = Path(out_dir)
    world = artifacts.shared
    names = coord_names(artifacts.config.dim)
    grid = world.eval_grid
    predictor = artifacts.config.protocol.local_predictor
    written: Dict[str, Path] = {}

    def csv(name: str, df: pd.DataFrame) -> None:
        path = out / name
        df.to_csv(path, index=False)
        written[name] = path

    try:
        out.mkdir(parents=True, exist_ok=True)
        csv("truth_grid.csv", _frame(grid, names, z=world.field.evaluate(grid)))
        for i, agent in world.agents.items():
            local = agent.subdomain.contains(grid)
            mean, _ = predict(agent, grid[local], predictor)
            csv(f"final_mean_agent_{i}.csv", _frame(grid[local], names, z=mean))
            csv(f"measurements_agent_{i}.csv", _frame([m.location for m in agent.data.raw], names))
            pkts = agent.retained
            csv(
                f"retained_packets_agent_{i}.csv",
                _frame(
                    [p.location for _, p in pkts],
                    names,
                    time=[t for t, _ in pkts],
                    mean=[p.mean for _, p in pkts],
                    variance=[p.variance for _, p in pkts],
                ),
            )
        csv(HISTORY, pd.DataFrame(metrics_history_rows(artifacts), columns=HISTORY_COLUMNS))

        log_path = out / PACKET_LOG
        write_packet_log(log_path, sent_packets(world))
        written[PACKET_LOG] = log_path

        manifest = {
            "config": config_to_dict(artifacts.config),
            "seed": artifacts.config.run.seed,
            "files": {name: _sha256(path) for name, path in sorted(written.items())},
        }
        manifest_path = out / MANIFEST
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        written[MANIFEST] = manifest_path
    except OSError as exc:
        raise IoFailure(f"cannot write run outputs to {out}: {exc}") from exc

    artifacts.files = {name: str(path.resolve()) for name, path in written.items()}
    LOGGER.info("wrote %d files to %s", len(written), out)
    return artifacts.files


def dump_packets(run_dir: Union[str, Path], limit: Optional[int] = None) -> List[Dict[str, Any]]:
    """Rows of a run's packet log: step, sender, receiver, coordinates, mean, variance."""
    entries = read_packet_log(Path(run_dir) / PACKET_LOG)
    if limit is not None:
        entries = entries[:limit]
    rows = []
    for receiver, p in entries:
        row: Dict[str, Any] = {"step": p.step, "sender": p.sender_id, "receiver": receiver}
        row.update(zip(coord_names(p.dim), p.location))
        row["mean"] = p.mean
        row["variance"] = p.variance
        rows.append(row)
    return rows
