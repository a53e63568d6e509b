from .cases import CASES, FINAL_TIMES, get_case
from .runner import ErrorAccumulator, ReferenceStore, error_norms, run_case
from .report import convergence_table
from .worker import SweepWorker
