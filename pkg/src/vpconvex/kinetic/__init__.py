from .drivers import PicardResult, RunResult, Scenario, picard_run, self_consistent_run
from .ensemble import DiagnosticsRecord, QTracker, compute_diagnostics, deposit, q_tracker, write_diagnostics_csv
from .initial import InitialData, ParticleEnsemble, ValidationReport, sample_ensemble, validate_initial

__all__ = [
    "DiagnosticsRecord",
    "InitialData",
    "ParticleEnsemble",
    "PicardResult",
    "QTracker",
    "RunResult",
    "Scenario",
    "ValidationReport",
    "compute_diagnostics",
    "deposit",
    "picard_run",
    "q_tracker",
    "sample_ensemble",
    "self_consistent_run",
    "validate_initial",
    "write_diagnostics_csv",
]
