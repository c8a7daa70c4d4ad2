"""Append-only metrics stream (CSV: run_id,stage,epoch,metric,value)."""

from pathlib import Path
from typing import Dict, List, Optional, Union

import pandas as pd
from loguru import logger

from dimaug.exceptions import MetricsError
from dimaug.models import MetricsRecord


METRIC_COLUMNS = ['run_id', 'stage', 'epoch', 'metric', 'value']


class MetricsWriter:
    """Write metric rows for one run, keeping (stage, epoch) ordering monotone.

    Stages are appended in sequence; once a new stage starts, earlier stages are closed. Within
    a stage epochs never decrease.
    """

    def __init__(self, path: Union[str, Path], run_id: str):
        """Append to ``path``, creating it with a header when missing."""
        self.path = Path(path)
        self.run_id = run_id
        self._stages: List[str] = []
        self._last_epoch: Optional[int] = None
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def _check_order(self, stage: str, epoch: int) -> None:
        if self._stages and self._stages[-1] == stage:
            if self._last_epoch is not None and epoch < self._last_epoch:
                raise MetricsError(f'Metrics for stage {stage!r} went back from epoch {self._last_epoch} to {epoch}')
        elif stage in self._stages:
            raise MetricsError(f'Stage {stage!r} was already closed in run {self.run_id}')
        else:
            self._stages.append(stage)
        self._last_epoch = epoch

    def write(self, stage: str, epoch: int, metrics: Dict[str, float]) -> List[MetricsRecord]:
        """Append one row per named metric."""
        self._check_order(stage, epoch)
        records = [
            MetricsRecord(run_id=self.run_id, stage=stage, epoch=epoch, metric=name, value=float(value))
            for name, value in metrics.items()
        ]
        if not records:
            return records
        frame = pd.DataFrame([r.model_dump() for r in records], columns=METRIC_COLUMNS)
        write_header = not self.path.exists() or self.path.stat().st_size == 0
        frame.to_csv(self.path, mode='a', header=write_header, index=False)
        logger.debug(f'metrics {stage}/{epoch}: {metrics}')
        return records


def read_metrics(path: Union[str, Path]) -> pd.DataFrame:
    """Load a metrics CSV as a DataFrame."""
    path = Path(path)
    if not path.is_file():
        raise MetricsError(f'Metrics file not found: {path}')
    return pd.read_csv(path, dtype={'run_id': str, 'stage': str, 'metric': str})
