"""Regenerate the alist files bundled in ``bmdrkit/data``."""

from pathlib import Path

import numpy as np

from bmdrkit.coding import ParityCheckMatrix, make_ira_code, save_alist
from bmdrkit.numerics import RngStream

OUT = Path(__file__).resolve().parents[1] / "src" / "bmdrkit" / "data"

HAMMING_7_4 = np.array([
    [1, 1, 0, 1, 1, 0, 0],
    [1, 0, 1, 1, 0, 1, 0],
    [0, 1, 1, 1, 0, 0, 1],
])


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    save_alist(ParityCheckMatrix.from_dense(HAMMING_7_4), OUT / "hamming_7_4.alist")
    code = make_ira_code(648, 432, RngStream(20240648).substream("ira"))
    assert code.rank == 216
    save_alist(code, OUT / "ldpc_648_432.alist")


if __name__ == "__main__":
    main()
