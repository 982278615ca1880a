from .config import KEYS, RunConfig, apply_axis, parse_config
from .launch import (ExperimentMatrix, RunOutcome, VerifyResult, execute, read_snapshot, run,
                     run_matrix, verify_against_serial, write_snapshot)

__all__ = [
    "KEYS", "RunConfig", "apply_axis", "parse_config",
    "ExperimentMatrix", "RunOutcome", "VerifyResult", "execute", "read_snapshot", "run",
    "run_matrix", "verify_against_serial", "write_snapshot",
]
