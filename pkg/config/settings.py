import os
import logging
from typing import List
from dotenv import load_dotenv

import colorlog

# Load environment variables
load_dotenv()


class Config:
    """Configuration class for the stochastic Hamiltonian toolkit"""

    # Parallel ensemble configuration
    LSH_THREADS: int = int(os.getenv('LSH_THREADS', str(os.cpu_count() or 1)))
    LSH_CHUNK_PATHS: int = int(os.getenv('LSH_CHUNK_PATHS', '500'))

    # Simulation defaults
    DEFAULT_DT: float = float(os.getenv('LSH_DEFAULT_DT', '1e-3'))
    DEFAULT_PATHS: int = int(os.getenv('LSH_DEFAULT_PATHS', '10000'))

    # Output configuration
    OUTPUT_DIR: str = os.getenv('LSH_OUTPUT_DIR', './results')
    SCHEMA_VERSION: str = '1.0'

    # Logging Configuration
    LOG_LEVEL: str = os.getenv('LOG_LEVEL', 'INFO')
    LOG_FILE: str = os.getenv('LOG_FILE', './logs/lsh.log')

    @classmethod
    def setup_logging(cls, level: str = None):
        """Setup logging configuration"""
        log_dir = os.path.dirname(cls.LOG_FILE)
        if log_dir:
            os.makedirs(log_dir, exist_ok=True)

        console = colorlog.StreamHandler()
        console.setFormatter(colorlog.ColoredFormatter(
            '%(log_color)s%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        ))
        file_handler = logging.FileHandler(cls.LOG_FILE)
        file_handler.setFormatter(logging.Formatter(
            '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
        ))

        logging.basicConfig(
            level=getattr(logging, (level or cls.LOG_LEVEL).upper()),
            handlers=[file_handler, console],
            force=True
        )

        return logging.getLogger(__name__)

    @classmethod
    def validate_config(cls):
        """Validate configuration values"""
        errors: List[str] = []

        if cls.LSH_THREADS < 1:
            errors.append("LSH_THREADS must be at least 1")

        if cls.LSH_CHUNK_PATHS < 1:
            errors.append("LSH_CHUNK_PATHS must be at least 1")

        if not cls.DEFAULT_DT > 0:
            errors.append("LSH_DEFAULT_DT must be positive")

        if cls.DEFAULT_PATHS < 1:
            errors.append("LSH_DEFAULT_PATHS must be at least 1")

        if cls.LOG_LEVEL.upper() not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            errors.append(f"LOG_LEVEL {cls.LOG_LEVEL!r} is not a logging level")

        if errors:
            raise ValueError(f"Configuration errors: {'; '.join(errors)}")

        return True


# Create global config instance
config = Config()
