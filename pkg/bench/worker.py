"""
Refinement sweeps: independent levels run in worker processes
"""
import logging
import uuid
from concurrent.futures import ProcessPoolExecutor, as_completed
from datetime import datetime
from pathlib import Path
from typing import List, Optional, Sequence

from tqdm import tqdm

import config
from aleufe.models import CaseConfig, ConvergenceReport, ErrorRecord, SweepJob
from bench.cases import get_case
from bench.runner import ReferenceStore, run_case, run_reference

logger = logging.getLogger(__name__)


def _run_level_worker(cfg_data: dict) -> dict:
    """
    Module-level function for running one level in a worker process.
    Must stay at module level to be picklable.

    Args:
        cfg_data: CaseConfig dump

    Returns:
        ErrorRecord dump
    """
    cfg = CaseConfig(**cfg_data)
    return run_case(cfg).model_dump()


def level_configs(base: CaseConfig, levels: Sequence[int]) -> List[CaseConfig]:
    """One configuration per 1/N level, tau following h unless tau was decoupled"""
    out = []
    for n in sorted(levels):
        h = 1.0 / n
        update = {"h": h, "tau": h if not base.allow_unequal else base.tau, "eta": h / 2}
        if base.output_dir:
            update["output_dir"] = str(Path(base.output_dir) / f"h1_{n}")
        out.append(CaseConfig(**{**base.model_dump(), **update}))
    return out


class SweepWorker:
    """Runs the levels of a refinement sweep and collects a convergence report"""

    def __init__(self, base: CaseConfig, levels: Sequence[int], max_workers: Optional[int] = None):
        """
        Args:
            base: Configuration shared by all levels (h, tau, eta are replaced per level)
            levels: Cells per side of each level, e.g. (16, 32, 64, 128)
            max_workers: Process cap (defaults to ALEUFE_THREADS)
        """
        self.base = base
        self.levels = sorted(levels)
        self.max_workers = max(1, min(max_workers or config.ALEUFE_THREADS, len(self.levels)))
        self.jobs: List[SweepJob] = [SweepJob(job_id=str(uuid.uuid4()), config=cfg)
                                     for cfg in level_configs(base, self.levels)]

    def prepare_reference(self) -> Optional[str]:
        """Run the level one halving beyond the finest for the coupled case's reference domains"""
        if self.base.case != "coupled" or not self.base.reference_dir:
            return None
        finest = self.levels[-1] * 2
        store = ReferenceStore(self.base.reference_dir)
        cfg = level_configs(self.base, [finest])[0]
        T = cfg.T or get_case(cfg.case).T
        if store.has(T) and store.has(cfg.tau):
            logger.info(f"reusing reference run in {self.base.reference_dir}")
            return self.base.reference_dir
        logger.info(f"running reference level 1/{finest}")
        run_reference(cfg, self.base.reference_dir)
        return self.base.reference_dir

    def run(self) -> ConvergenceReport:
        """
        Run every level; failures are logged and recorded on the job, the sweep continues

        Returns:
            ConvergenceReport of the completed levels
        """
        self.prepare_reference()
        for job in self.jobs:
            job.status = "running"
            job.started_at = datetime.now()
        if self.max_workers == 1:
            for job in tqdm(self.jobs, desc=f"{self.base.case} k={self.base.k}", unit="level"):
                self._finish(job, lambda: run_case(job.config))
        else:
            with ProcessPoolExecutor(max_workers=self.max_workers) as pool:
                futures = {pool.submit(_run_level_worker, job.config.model_dump()): job for job in self.jobs}
                for future in tqdm(as_completed(futures), total=len(futures),
                                   desc=f"{self.base.case} k={self.base.k}", unit="level"):
                    job = futures[future]
                    self._finish(job, lambda: ErrorRecord(**future.result()))
        records = [job.record for job in self.jobs if job.record is not None]
        failed = [job for job in self.jobs if job.status == "failed"]
        if failed:
            logger.warning(f"⚠️  {len(failed)} level(s) failed: {', '.join(j.config.label for j in failed)}")
        return ConvergenceReport(case=self.base.case, k=self.base.k, records=records)

    def _finish(self, job: SweepJob, produce) -> None:
        try:
            job.record = produce()
            job.status = "completed"
            logger.info(f"Job {job.job_id} ({job.config.label}) completed")
        except Exception as e:
            job.status = "failed"
            job.error = str(e)
            logger.error(f"Error processing job {job.job_id} ({job.config.label}): {e}")
        finally:
            job.finished_at = datetime.now()
