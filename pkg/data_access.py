# data_access.py

import sqlite3
import time
from typing import Dict, List, Any, Optional, Tuple

from utils import setup_logger

logger = setup_logger('data_access')


class RunsDatabase:
    """Ledger of toolkit runs (one row per command invocation, sweep points separately)"""

    def __init__(self, db_path: str):
        self.db_path = db_path

    def _connect(self):
        conn = sqlite3.connect(self.db_path)
        conn.row_factory = sqlite3.Row
        return conn

    def _rows(self, query: str, params: Tuple = ()) -> List[Dict[str, Any]]:
        conn = self._connect()
        try:
            return [dict(row) for row in conn.execute(query, params).fetchall()]
        finally:
            conn.close()

    def record_run(self, command: str, scenario: str, config_digest: str, status: str,
                   exit_code: int, output_dir: str, summary: str) -> int:
        """Insert a run row and return its id"""
        conn = self._connect()
        try:
            cursor = conn.execute(
                '''
                INSERT INTO runs
                (command, scenario, config_digest, status, exit_code, output_dir, summary, created_at)
                VALUES (?, ?, ?, ?, ?, ?, ?, ?)
                ''',
                (command, scenario, config_digest, status, exit_code, output_dir, summary, int(time.time()))
            )
            conn.commit()
            return cursor.lastrowid
        finally:
            conn.close()

    def record_sweep(self, run_id: int, axis: str, points: List[Tuple[int, float, str]]):
        """Store the per-point metrics of a sweep under its run, all or nothing"""
        conn = self._connect()
        try:
            conn.executemany(
                '''
                INSERT INTO sweep_points (run_id, axis, point_index, value, metrics)
                VALUES (?, ?, ?, ?, ?)
                ''',
                [(run_id, axis, index, value, metrics) for index, value, metrics in points]
            )
            conn.commit()
        except Exception as e:
            conn.rollback()
            logger.error(f"Recording sweep points for run {run_id} failed: {e}")
            raise
        finally:
            conn.close()

    def get_run(self, run_id: int) -> Optional[Dict[str, Any]]:
        rows = self._rows('SELECT * FROM runs WHERE id = ?', (run_id,))
        return rows[0] if rows else None

    def get_recent_runs(self, limit: int = 20) -> List[Dict[str, Any]]:
        """Most recent runs first"""
        return self._rows(
            '''
            SELECT id, command, scenario, config_digest, status, exit_code, output_dir, created_at
            FROM runs
            ORDER BY id DESC
            LIMIT ?
            ''',
            (limit,)
        )

    def get_runs_for_digest(self, config_digest: str) -> List[Dict[str, Any]]:
        """All runs of one exact configuration"""
        return self._rows('SELECT * FROM runs WHERE config_digest = ? ORDER BY id ASC', (config_digest,))

    def get_sweep_points(self, run_id: int) -> List[Dict[str, Any]]:
        return self._rows(
            'SELECT point_index, axis, value, metrics FROM sweep_points WHERE run_id = ? ORDER BY point_index ASC',
            (run_id,)
        )

    def count_runs(self, status: Optional[str] = None) -> int:
        if status is None:
            rows = self._rows('SELECT COUNT(*) AS total FROM runs')
        else:
            rows = self._rows('SELECT COUNT(*) AS total FROM runs WHERE status = ?', (status,))
        return rows[0]["total"]
