"""
CSV Report Writer
Writes report tables atomically so a failed run never leaves a partial file
"""

import os
import tempfile
from pathlib import Path
from typing import Optional

import pandas as pd

from src.core.exceptions import ReportError
from src.core.logger import logger
from src.domain.interfaces import IReportWriter, PathLike


class CsvReportWriter(IReportWriter):
    """Report writer producing comma-separated files with a header row"""

    def __init__(self, float_format: Optional[str] = None):
        """
        Initialize CSV writer

        Args:
            float_format: printf-style format for float cells; None keeps full repr precision
        """
        self.float_format = float_format

    def write(self, table: pd.DataFrame, path: PathLike) -> Path:
        """
        Write one report table

        Args:
            table: Rows to write, column order preserved
            path: Destination file

        Returns:
            Path actually written
        """
        target = Path(path)
        try:
            target.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp_name = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
            os.close(fd)
            try:
                table.to_csv(tmp_name, index=False, float_format=self.float_format, lineterminator="\n")
                os.replace(tmp_name, target)
            except BaseException:
                Path(tmp_name).unlink(missing_ok=True)
                raise
        except OSError as e:
            logger.error(f"Error writing report {target}: {str(e)}")
            raise ReportError(f"Failed to write report {target}: {str(e)}") from e
        logger.info(f"Wrote {len(table)} rows to {target}")
        return target
