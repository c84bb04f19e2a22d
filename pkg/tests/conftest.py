import sys
from pathlib import Path

import numpy as np
import pytest

# Ensure project root is on sys.path so `import src...` works during tests
ROOT = Path(__file__).resolve().parents[1]
root_str = str(ROOT)
if root_str not in sys.path:
    sys.path.insert(0, root_str)


@pytest.fixture
def gen() -> np.random.Generator:
    """테스트마다 같은 난수열"""
    return np.random.default_rng(20240607)


def random_conditioned(gen: np.random.Generator, m: int, n: int, cond: float) -> np.ndarray:
    """m x n matrix whose singular values span [1/cond, 1] (times a random scale)."""
    r = min(m, n)
    u, _ = np.linalg.qr(gen.standard_normal((m, r)))
    v, _ = np.linalg.qr(gen.standard_normal((n, r)))
    s = np.logspace(0.0, -np.log10(cond), r) if r > 1 else np.ones(1)
    scale = 10.0 ** gen.uniform(-2, 2)
    return scale * (u * s) @ v.T


def random_spd(gen: np.random.Generator, d: int) -> np.ndarray:
    m = gen.standard_normal((d, d))
    a = m @ m.T + d * np.eye(d)
    return 0.5 * (a + a.T)


def read_csv_minimal(text: str) -> list[list[str]]:
    """따옴표 처리만 하는 최소 CSV 판독기 (csv 모듈과 독립)"""
    rows, field, row, quoted, i = [], "", [], False, 0
    while i < len(text):
        ch = text[i]
        if quoted:
            if ch == '"' and text[i + 1 : i + 2] == '"':
                field += '"'
                i += 1
            elif ch == '"':
                quoted = False
            else:
                field += ch
        elif ch == '"':
            quoted = True
        elif ch == ",":
            row.append(field)
            field = ""
        elif ch == "\n":
            row.append(field)
            rows.append(row)
            row, field = [], ""
        else:
            field += ch
        i += 1
    return rows
