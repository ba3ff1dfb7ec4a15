import json
import os
from typing import Optional
import numpy as np
import pandas as pd
from app.config import settings
from app.services.exceptions import InvalidSystem
from app.services.linear_model import OverdeterminedSystem
from app.services.logging import logger
from app.services.mdp_sim import FeatureMap, MarkovRewardProcess
from app.services.total_projections import SolveTrace

"""
CSV Storage Handler for the Normalized Projections Application.

This module is the file-backed persistence layer: it reads and writes linear systems, Markov
reward processes, solver traces and experiment reports under one output directory.

Key features:
- System files with header phi_0..phi_{n-1},v,d, one row per equation
- Process files as a CSV triplet (P, R, Phi) plus a JSON metadata file {m, n, gamma, seed}
- Report tables validated against declared column schemas and stamped with schema_version
- Report metadata (config echo, config hash, bounds) as <name>.json

Report files never carry wall time, so rerunning a config rewrites identical bytes.
"""

TABLE_SCHEMAS: dict[str, list[str]] = {
    "outlier/errors": [
        "state", "mean_error_normalized", "mean_error_least_squares",
        "mean_abs_error_normalized", "mean_abs_error_least_squares",
    ],
    "steps/traces": ["variant", *SolveTrace.COLUMNS],
    "steps/summary": ["variant", "final_err", "iterations_to_tolerance"],
    "momentum/traces": ["beta", "k", "mean_err"],
    "momentum/summary": ["beta", "final_mean_err", "converged"],
    "rl/estimators": [
        "repetition", "mc_distance", "td_distance", "oracle_gap", "degenerate_pairs",
        "bound_lhs", "bound_rhs", "bound_holds", "classic_lhs", "classic_rhs", "classic_holds",
    ],
    "rl/traces": ["repetition", "estimator", *SolveTrace.COLUMNS],
}


TABLE_FORMATS = ("csv",)


class storage:
    """
    File storage rooted at one output directory.
    Relative paths passed to the methods resolve against that directory.
    """
    def __init__(self, out_dir: Optional[str] = None, fmt: str = "csv"):
        """
        Create the storage and its directory.

        Args:
            out_dir (str, optional): Output directory; settings.OUTPUT_DIR by default.
            fmt (str): Table format, one of TABLE_FORMATS.
        Raises:
            InvalidSystem: If the format is not supported.
        """
        if fmt not in TABLE_FORMATS:
            logger.error(f"Unsupported table format {fmt}")
            raise InvalidSystem(f"table format must be one of {list(TABLE_FORMATS)}, got {fmt}")
        self.fmt = fmt
        self.out_dir = out_dir or settings.OUTPUT_DIR
        os.makedirs(self.out_dir, exist_ok=True)

    def _path(self, path: str) -> str:
        return path if os.path.isabs(path) else os.path.join(self.out_dir, path)

    def read_system(self, path: str) -> OverdeterminedSystem:
        """
        Read a system CSV.

        Args:
            path (str): File with columns phi_0..phi_{n-1}, v and optionally d.
        Returns:
            OverdeterminedSystem: The system; d is uniform when the column is absent.
        Raises:
            InvalidSystem: If the file has no phi columns, no v column, or invalid values.
        """
        try:
            frame = pd.read_csv(self._path(path))
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            logger.error(f"Error reading system {path}: {str(e)}")
            raise InvalidSystem(f"cannot read system file {path}: {str(e)}")
        phi_columns = sorted(
            (c for c in frame.columns if c.startswith("phi_")),
            key=lambda c: int(c.split("_", 1)[1]),
        )
        if not phi_columns or "v" not in frame.columns:
            logger.error(f"System file {path} has columns {list(frame.columns)}")
            raise InvalidSystem("system file needs columns phi_0..phi_{n-1} and v")
        d = frame["d"].to_numpy(dtype=float) if "d" in frame.columns else None
        return OverdeterminedSystem(frame[phi_columns].to_numpy(dtype=float), frame["v"].to_numpy(dtype=float), d)

    def write_system(self, sys: OverdeterminedSystem, path: str) -> str:
        """Write a system CSV and return its path."""
        frame = pd.DataFrame(sys.Phi, columns=[f"phi_{j}" for j in range(sys.n)])
        frame["v"] = sys.V
        frame["d"] = sys.d
        target = self._path(path)
        frame.to_csv(target, index=False)
        return target

    def write_mrp(self, mrp: MarkovRewardProcess, Phi, prefix: str, seed: Optional[int] = None) -> list[str]:
        """
        Write a process as <prefix>_P.csv, <prefix>_R.csv, <prefix>_Phi.csv and <prefix>_meta.json.

        Args:
            mrp (MarkovRewardProcess): The process.
            Phi: m×n features or FeatureMap.
            prefix (str): Path prefix.
            seed (int, optional): Seed the instance was generated from.
        Returns:
            list[str]: The four written paths.
        """
        Phi = Phi.Phi if isinstance(Phi, FeatureMap) else FeatureMap(Phi).Phi
        base = self._path(prefix)
        paths = [f"{base}_P.csv", f"{base}_R.csv", f"{base}_Phi.csv", f"{base}_meta.json"]
        pd.DataFrame(mrp.P).to_csv(paths[0], index=False)
        pd.DataFrame(mrp.R).to_csv(paths[1], index=False)
        pd.DataFrame(Phi, columns=[f"phi_{j}" for j in range(Phi.shape[1])]).to_csv(paths[2], index=False)
        meta = {"m": mrp.m, "n": Phi.shape[1], "gamma": mrp.gamma, "seed": seed}
        with open(paths[3], "w") as f:
            json.dump(meta, f, indent=2, sort_keys=True)
        return paths

    def read_mrp(self, prefix: str) -> tuple[MarkovRewardProcess, FeatureMap, dict]:
        """
        Read a process written by write_mrp.

        Args:
            prefix (str): Path prefix.
        Returns:
            tuple[MarkovRewardProcess, FeatureMap, dict]: Process, features and metadata.
        Raises:
            InvalidSystem: If the files are missing or disagree with the metadata.
        """
        base = self._path(prefix)
        try:
            with open(f"{base}_meta.json") as f:
                meta = json.load(f)
            P = pd.read_csv(f"{base}_P.csv").to_numpy(dtype=float)
            R = pd.read_csv(f"{base}_R.csv").to_numpy(dtype=float)
            Phi = pd.read_csv(f"{base}_Phi.csv").to_numpy(dtype=float)
        except (OSError, ValueError) as e:
            logger.error(f"Error reading process {prefix}: {str(e)}")
            raise InvalidSystem(f"cannot read process files {prefix}: {str(e)}")
        if P.shape != (meta["m"], meta["m"]) or Phi.shape != (meta["m"], meta["n"]):
            raise InvalidSystem(f"process files disagree with metadata {meta}")
        return MarkovRewardProcess(P, R, float(meta["gamma"])), FeatureMap(Phi), meta

    def write_trace(self, trace: SolveTrace, path: str) -> str:
        """Write a trace as CSV k,err,g,theta,alpha,skipped and return its path."""
        target = self._path(path)
        trace.to_frame().to_csv(target, index=False)
        return target

    def write_report(self, report, name: Optional[str] = None) -> list[str]:
        """
        Write every table of a report as <name>_<table>.<fmt> and its metadata as <name>.json.

        Args:
            report (ExperimentReport): The report.
            name (str, optional): File stem; the experiment name by default.
        Returns:
            list[str]: Written paths.
        Raises:
            InvalidSystem: If a table's columns differ from its declared schema.
        """
        name = name or report.name
        paths = []
        for table, frame in report.tables.items():
            expected = TABLE_SCHEMAS.get(f"{report.name}/{table}")
            if expected is None or list(frame.columns) != expected:
                logger.error(f"Table {report.name}/{table} has columns {list(frame.columns)}, expected {expected}")
                raise InvalidSystem(f"table {report.name}/{table} does not match its schema")
            out = frame.copy()
            out["schema_version"] = settings.SCHEMA_VERSION
            target = self._path(f"{name}_{table}.{self.fmt}")
            out.to_csv(target, index=False, float_format="%.17g")
            paths.append(target)
        target = self._path(f"{name}.json")
        with open(target, "w") as f:
            json.dump(report.metadata(), f, indent=2, sort_keys=True, default=_json_default)
        paths.append(target)
        logger.info(f"Wrote report {name} ({len(paths)} files) to {self.out_dir}")
        return paths


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return str(value)
