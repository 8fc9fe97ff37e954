import os
import sys

sys.path.append(os.path.dirname(os.path.dirname(__file__)))

from typing import Any, Optional

from fastmcp import FastMCP

import gpmap_mcp.architect.patcher as patcher
from gpmap_mcp.observer import runner

# Create the MCP server instance
mcp = FastMCP("gpmap MCP")


@mcp.tool()
def health_check() -> dict:
    """Returns the server status and initialization state."""
    return {"status": "ready", "version": "0.1.0"}


@mcp.tool()
def list_presets() -> dict:
    """Lists the bundled scenario presets (usable wherever a config path is accepted)."""
    return runner.list_presets()


@mcp.tool()
def validate_scenario(config: str, verbose: bool = False) -> dict:
    """Parses and validates a scenario TOML (path or preset name) and echoes the normalized config.

    Failures carry `error_kind: "config"` and a `diagnostics` list naming each offending key.
    """
    return runner.validate_scenario(config, verbose=verbose)


@mcp.tool()
def diagnose_scenario(config: str, verbose: bool = False) -> dict:
    """Static smell tests on a scenario: graph connectivity, overlaps without quadrature nodes, coverage gaps, plus the directed edge list and a subdomain-membership histogram of the eval grid."""
    return runner.diagnose_scenario(config, verbose=verbose)


@mcp.tool()
def run_scenario(
    config: str,
    out_dir: Optional[str] = None,
    seed: Optional[int] = None,
    baseline: Optional[bool] = None,
    optimizer: Optional[str] = None,
    predictor: Optional[str] = None,
    steps: Optional[int] = None,
    verbose: bool = False,
) -> dict:
    """Runs a scenario (shared-information world plus, unless disabled, the self-only baseline) and writes the CSV/manifest/packet-log run directory.

    Returns final network metrics for both worlds and run-time anomalies (rising greedy trace, silent edges, shared run worse than baseline). Per-step data lives in the files listed under `files`.

    `verbose=False` (default) compacts the captured log to step summaries, warnings, and errors; the response carries `log_lines_dropped` when filtering happened.
    """
    return runner.run_scenario(
        config,
        out_dir=out_dir,
        seed=seed,
        baseline=baseline,
        optimizer=optimizer,
        predictor=predictor,
        steps=steps,
        verbose=verbose,
    )


@mcp.tool()
def dump_packets(run_dir: str, limit: Optional[int] = None) -> dict:
    """Decodes a run directory's packets.bin into rows of step, sender, receiver, coordinates, mean, variance."""
    return runner.dump_packets(run_dir, limit=limit)


@mcp.tool()
def update_config_field(config_path: str, section: str, key: str, new_value: Any) -> dict:
    """Sets one key of a scenario TOML (e.g. section='protocol', key='beta'; or section='agents.2', key='radius'), validates the whole scenario, and rewrites the file in normalized form."""
    return patcher.update_config_field(config_path, section, key, new_value)


def main() -> None:
    port = int(os.environ.get("GPMAP_MCP_PORT", "8000"))
    mcp.run(
        transport="streamable-http",
        host="127.0.0.1",
        port=port,
        path="/mcp",
        stateless_http=True,
        json_response=True,
    )


if __name__ == "__main__":
    main()
