# runs_schema.py

import os
import sqlite3

from utils import setup_logger

logger = setup_logger('runs_schema')

def setup_runs_database(db_path: str):
    """Set up the run ledger schema (idempotent)."""
    logger.info(f"Setting up runs database at {db_path}")

    # Create directory if it doesn't exist
    directory = os.path.dirname(db_path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    conn = sqlite3.connect(db_path)
    cursor = conn.cursor()

    try:
        # One row per command invocation
        cursor.execute('''
        CREATE TABLE IF NOT EXISTS runs (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            command TEXT NOT NULL,
            scenario TEXT NOT NULL,
            config_digest TEXT NOT NULL,
            status TEXT NOT NULL,
            exit_code INTEGER NOT NULL,
            output_dir TEXT,
            summary TEXT,
            created_at INTEGER NOT NULL
        )
        ''')

        # Per-point metrics of sweeps
        cursor.execute('''
        CREATE TABLE IF NOT EXISTS sweep_points (
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            run_id INTEGER NOT NULL,
            axis TEXT NOT NULL,
            point_index INTEGER NOT NULL,
            value REAL NOT NULL,
            metrics TEXT NOT NULL,
            UNIQUE(run_id, point_index),
            FOREIGN KEY(run_id) REFERENCES runs(id)
        )
        ''')

        cursor.execute('CREATE INDEX IF NOT EXISTS idx_runs_digest ON runs(config_digest)')
        cursor.execute('CREATE INDEX IF NOT EXISTS idx_runs_command ON runs(command)')

        conn.commit()
        logger.info("Runs database setup completed")

    except Exception as e:
        conn.rollback()
        logger.error(f"Error setting up runs database: {e}")
        raise
    finally:
        conn.close()
