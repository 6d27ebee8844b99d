"""
CSV schemas, trajectory reader/writer and the per-run manifest.

Floats are written with 17 significant digits so that a reloaded file
reproduces the arrays bit for bit.
"""

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .dynamics import Trajectory
from .exceptions import ConfigError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"

SUMMARY_COLUMNS = (
    "k", "h", "delta_k", "mu_x_k", "mu_a_k", "sup_err", "extension_err",
    "l2_vel_err", "l2_ctrl_err", "endpoint_err", "var_uk", "uk_passed",
)
SOLVER_COLUMNS = ("iter", "cost", "gnorm", "T")
RESIDUAL_COLUMNS = ("condition", "residual", "tol", "passed")
TABLE_COLUMNS = (
    "tau", "a1", "a2", "sb1", "sb2", "s", "T_opt", "t_contact",
    "a1_raw", "a2_raw", "sb1_raw", "sb2_raw", "s_raw", "T_opt_raw", "t_contact_raw", "matched",
)


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def trajectory_header(n: int, d: int, m: int) -> list[str]:
    return (
        ["t"]
        + [f"x_{i + 1}" for i in range(n)]
        + [f"u_{i + 1}" for i in range(n)]
        + [f"a_{i + 1}" for i in range(d)]
        + [f"g_{i + 1}" for i in range(m)]
        + [f"eta_{i + 1}" for i in range(m)]
        + ["residual"]
    )


def write_trajectory(traj: Trajectory, path: Path) -> Path:
    """One row per node; cell quantities (a, eta, residual) are blank on the last node."""
    n = traj.states.shape[1]
    d = traj.controls_a.shape[1]
    m = traj.g_values.shape[1]
    rows = []
    for j in range(traj.k + 1):
        row = [traj.times[j], *traj.states[j], *traj.controls_u[j]]
        if j < traj.k:
            row += [*traj.controls_a[j], *traj.g_values[j], *traj.eta[j], traj.residual[j]]
        else:
            row += [None] * d + [*traj.g_values[j]] + [None] * (m + 1)
        rows.append(row)
    return write_rows(path, trajectory_header(n, d, m), rows)


def _count(header: list[str], prefix: str) -> int:
    return sum(1 for name in header if name.startswith(prefix) and name[len(prefix):].isdigit())


def read_trajectory(path: Path) -> Trajectory:
    """
    Reload a trajectory CSV.

    Raises:
        ConfigError: missing file or a header that does not follow the schema
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError("trajectory file not found", str(path))
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        body = [row for row in reader if row]
    if not header or header[0] != "t" or header[-1] != "residual":
        raise ConfigError("not a trajectory CSV", str(path))
    n, d, m = _count(header, "x_"), _count(header, "a_"), _count(header, "g_")
    if header != trajectory_header(n, d, m) or len(body) < 2:
        raise ConfigError("trajectory CSV does not match its schema", str(path))

    def block(start: int, width: int, rows) -> np.ndarray:
        return np.array([[float(v) for v in r[start:start + width]] for r in rows]).reshape(len(rows), width)

    times = np.array([float(r[0]) for r in body])
    states = block(1, n, body)
    controls_u = block(1 + n, n, body)
    cells = body[:-1]
    col = 1 + 2 * n
    controls_a = block(col, d, cells)
    g_values = block(col + d, m, body)
    eta = block(col + d + m, m, cells)
    residual = np.array([float(r[-1]) for r in cells])
    velocities = np.diff(states, axis=0) / np.diff(times)[:, None]
    return Trajectory(
        times=times,
        states=states,
        controls_u=controls_u,
        controls_a=controls_a,
        velocities=velocities,
        eta=eta,
        g_values=g_values,
        residual=residual,
    )


def write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
    logger.debug("wrote %s", path)
    return path


# ─── Run manifest ────────────────────────────────────────────

def file_sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """What a run did: command, config hash, version, times and emitted files."""
    command: str
    config_sha256: str | None = None
    effective_config: dict | None = None
    version: str = __version__
    started_at: str = field(default_factory=_utc_now)
    finished_at: str | None = None
    files: list[str] = field(default_factory=list)

    def write(self, out_dir: Path) -> Path:
        """List every file under out_dir (except the manifest) and write manifest.json once."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        self.finished_at = _utc_now()
        self.files = sorted(
            str(p.relative_to(out_dir)) for p in out_dir.rglob("*")
            if p.is_file() and p.name != MANIFEST_NAME
        )
        path = out_dir / MANIFEST_NAME
        payload = {
            "command": self.command,
            "config_sha256": self.config_sha256,
            "version": self.version,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "files": self.files,
            "config": self.effective_config,
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return path
