"""Exception hierarchy for the simulator library.

The library layer raises these; the orchestrators in `observer/runner.py`
catch them and fold them into the `{"success": False, "error": ...}` shape
the MCP tools and the CLI report.
"""

from typing import Iterable, List


class GPMapError(Exception):
    """Base class for every error raised by gpmap_mcp."""


class SingularSystem(GPMapError):
    """A covariance system could not be factorized even after jitter."""


class DegenerateOverlap(GPMapError):
    """An overlap region has no quadrature node inside it (near-tangent shapes)."""


class NotBoxRegion(GPMapError):
    """The closed-form BTIP integral was requested on a non-box overlap."""


class MalformedPacket(GPMapError):
    """A packet record is truncated, non-finite, or carries a non-positive variance."""


class EmptyLibrary(GPMapError):
    """A receiver got no candidate packets this step."""


class EmptyEvaluationSet(GPMapError):
    """A metric was asked to average over zero points."""


class SamplingFailed(GPMapError):
    """Rejection sampling found no point inside a subdomain."""


class IoFailure(GPMapError):
    """Writing or reading run outputs failed."""


class ConfigInvalid(GPMapError):
    """A scenario config failed to parse or validate.

    `diagnostics` holds one `"<dotted.key>: <message>"` entry per problem so
    a caller can show every issue at once instead of fixing them one by one.
    """

    def __init__(self, diagnostics: Iterable[str]):
        self.diagnostics: List[str] = list(diagnostics)
        super().__init__("; ".join(self.diagnostics) or "invalid config")
