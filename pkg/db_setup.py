# db_setup.py

import sys

from runs_schema import setup_runs_database
from utils import get_runs_db_path, setup_logger

logger = setup_logger('db_setup')

def setup_databases(db_path: str = None) -> bool:
    """Create the run ledger database."""
    db_path = db_path or get_runs_db_path()
    if not db_path:
        logger.error("RUNS_DB_PATH is not set; nothing to set up")
        return False
    try:
        setup_runs_database(db_path)
        logger.info("Database setup completed successfully!")
        return True
    except Exception as e:
        logger.error(f"Database setup failed: {e}")
        return False

if __name__ == "__main__":
    success = setup_databases()
    sys.exit(0 if success else 1)
