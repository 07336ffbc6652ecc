from typing import Sequence, Type
from pathlib import Path
import csv

import pandas as pd

from ..errors import CoopNetError


def read_strict_csv(path: Path, columns: Sequence[str], error: Type[CoopNetError]) -> pd.DataFrame:
    """Read an unquoted UTF-8 CSV whose header must equal ``columns`` exactly.

    Every cell is returned as a string; blank cells are ''. Rows with a different number
    of fields raise ``error`` naming the file line.
    """
    path = Path(path)
    try:
        raw = pd.read_csv(path, header=None, dtype=str, keep_default_na=False,
                          quoting=csv.QUOTE_NONE, encoding='utf-8')
    except pd.errors.EmptyDataError:
        raise error(f"{path}: file is empty, expected header {','.join(columns)}")
    except pd.errors.ParserError as e:
        raise error(f"{path}: malformed row ({str(e).strip()}); fields must not contain commas")

    header = [str(c).strip() for c in raw.iloc[0].tolist()]
    if header != list(columns):
        raise error(f"{path}: line 1: header must be exactly {','.join(columns)}, got {','.join(header)}")

    frame = raw.iloc[1:].reset_index(drop=True)
    frame.columns = list(columns)
    short = frame.isna().any(axis=1).to_numpy()
    if short.any():
        line = int(short.argmax()) + 2
        raise error(f"{path}: line {line}: expected {len(columns)} fields")
    return frame
