"""
Writing result envelopes and tables

JSON keeps every float at full repr precision, so 64-bit values survive a
write/read cycle unchanged. CSV tables are written with %.17g for the same
reason.
"""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from config import config

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'


def convert_numpy_types(value: Any) -> Any:
    """Convert numpy (and complex) values to native Python types, recursively"""
    if isinstance(value, dict):
        return {str(key): convert_numpy_types(item) for key, item in value.items()}
    elif isinstance(value, (list, tuple)):
        return [convert_numpy_types(item) for item in value]
    elif isinstance(value, (np.integer, np.int64, np.int32)):
        return int(value)
    elif isinstance(value, (np.floating, np.float64, np.float32)):
        return float(value)
    elif isinstance(value, np.bool_):
        return bool(value)
    elif isinstance(value, (complex, np.complexfloating)):
        return [float(value.real), float(value.imag)]
    elif isinstance(value, np.ndarray):
        return convert_numpy_types(value.tolist())
    elif isinstance(value, pd.DataFrame):
        return convert_numpy_types(value.to_dict(orient='list'))
    else:
        return value


def envelope_payload(envelope, include_tables: bool = False) -> dict:
    payload = envelope.to_dict()
    if include_tables and envelope.tables:
        payload['tables'] = dict(envelope.tables)
    return convert_numpy_types(payload)


def envelope_json(envelope, include_tables: bool = False) -> str:
    return json.dumps(envelope_payload(envelope, include_tables), indent=2)


def write_table(table: pd.DataFrame, path) -> str:
    path = Path(path)
    if path.parent and not path.parent.exists():
        os.makedirs(path.parent, exist_ok=True)
    table.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Wrote {len(table)} rows to {path}")
    return str(path)


def table_paths(out, names) -> Dict[str, Path]:
    """results/run.json -> results/run_<table>.csv"""
    out = Path(out)
    return {name: out.with_name(f"{out.stem}_{name}.csv") for name in names}


def emit(envelope, out: Optional[str] = None, fmt: str = 'json') -> Optional[str]:
    """
    Emit an envelope. With `out` and format csv the tables go to sibling CSV
    files named after the JSON file. Without `out`, format csv writes
    <OUTPUT_DIR>/<command>.json plus its tables and format json prints the
    envelope to stdout with tables embedded.
    """
    if out is None:
        if fmt != 'csv':
            print(envelope_json(envelope, include_tables=True))
            return None
        out = Path(config.OUTPUT_DIR) / f"{envelope.command}.json"
        logger.info(f"No output path given, writing {envelope.command} results under {config.OUTPUT_DIR}")

    out = Path(out)
    if out.parent and not out.parent.exists():
        os.makedirs(out.parent, exist_ok=True)

    if fmt == 'csv':
        paths = table_paths(out, envelope.tables)
        written = {name: write_table(table, paths[name]) for name, table in envelope.tables.items()}
        payload = envelope_payload(envelope)
        payload['table_files'] = written
        payload = json.dumps(payload, indent=2)
    else:
        payload = envelope_json(envelope, include_tables=True)

    out.write_text(payload + '\n', encoding='utf-8')
    logger.info(f"Wrote {envelope.command} results to {out}")
    return str(out)
