"""Binary LDPC codes: regular Gallager construction, encoding, sum-product decoding.

LLRs follow the convention ``log P(bit=0) / P(bit=1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as _k


def gf2_rref(H: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Reduced row echelon form over GF(2); returns (R, pivot columns)."""
    R = (np.asarray(H) % 2).astype(np.uint8).copy()
    m, n = R.shape
    pivots = []
    row = 0
    for col in range(n):
        if row == m:
            break
        hit = np.flatnonzero(R[row:, col])
        if hit.size == 0:
            continue
        r = row + hit[0]
        if r != row:
            R[[row, r]] = R[[r, row]]
        others = np.flatnonzero(R[:, col])
        others = others[others != row]
        R[others] ^= R[row]
        pivots.append(col)
        row += 1
    return R[:row], pivots


@dataclass
class LdpcCode:
    """Parity-check code with a systematic encoder derived from ``H``.

    ``k`` information bits are placed on ``info_cols``; any further free
    columns (present when ``H`` is rank deficient) are held at zero so the
    rate is exactly ``k / n``.
    """

    H: np.ndarray  # [m, n] uint8
    k: int
    max_iters: int = 50
    _rref: np.ndarray = field(init=False, repr=False)
    pivots: list = field(init=False, repr=False)
    info_cols: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.H = (np.asarray(self.H) % 2).astype(np.uint8)
        if not np.all(self.H.sum(axis=0) > 0):
            raise ValueError("every column of H must take part in a check")
        self._rref, self.pivots = gf2_rref(self.H)
        free = np.setdiff1d(np.arange(self.n), self.pivots)
        if self.k > free.size:
            raise ValueError(f"H has only {free.size} free columns, cannot carry {self.k} bits")
        self.info_cols = free[: self.k]
        rows, cols = np.nonzero(self.H)  # edges sorted by check
        self._edge_chk = rows.astype(np.int64)
        self._edge_var = cols.astype(np.int64)
        self._chk_ptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=self.m))]).astype(np.int64)
        self._chk_edges = np.arange(rows.size, dtype=np.int64)
        by_var = np.argsort(cols, kind="stable")
        self._var_ptr = np.concatenate([[0], np.cumsum(np.bincount(cols, minlength=self.n))]).astype(np.int64)
        self._var_edges = by_var.astype(np.int64)

    @property
    def n(self) -> int:
        return self.H.shape[1]

    @property
    def m(self) -> int:
        return self.H.shape[0]

    @property
    def rate(self) -> float:
        return self.k / self.n

    def encode(self, info: np.ndarray) -> np.ndarray:
        """Info bits ``[..., k]`` to codewords ``[..., n]`` with ``H c = 0``."""
        info = np.asarray(info, dtype=np.uint8)
        if info.shape[-1] != self.k:
            raise ValueError(f"expected {self.k} info bits, got {info.shape[-1]}")
        c = np.zeros(info.shape[:-1] + (self.n,), dtype=np.uint8)
        c[..., self.info_cols] = info
        free_part = self._rref[:, self.info_cols].astype(np.int64)
        c[..., self.pivots] = (info.astype(np.int64) @ free_part.T) % 2
        return c

    def syndrome(self, c: np.ndarray) -> np.ndarray:
        return (np.asarray(c, dtype=np.int64) @ self.H.T.astype(np.int64)) % 2

    def decode(self, llr: np.ndarray, iters: int | None = None):
        """Sum-product decoding of ``[..., n]`` channel LLRs.

        Returns ``(info bits, success flags, iterations used)``.  A word
        stops updating as soon as its hard decision satisfies every check.
        """
        iters = self.max_iters if iters is None else iters
        llr = np.asarray(llr, dtype=np.float64)
        if llr.shape[-1] != self.n:
            raise ValueError(f"expected {self.n} LLRs, got {llr.shape[-1]}")
        lead = llr.shape[:-1]
        hard, done, used = _k.bp_decode(
            np.ascontiguousarray(llr.reshape(-1, self.n)),
            self._edge_chk, self._edge_var, self._chk_ptr, self._chk_edges,
            self._var_ptr, self._var_edges, int(iters),
        )
        info = hard[:, self.info_cols]
        return info.reshape(lead + (self.k,)), done.reshape(lead), used.reshape(lead)


def gallager_matrix(n: int, d_v: int = 3, d_c: int = 9, seed: int = 0) -> np.ndarray:
    """Regular ``(d_v, d_c)`` parity-check matrix: ``d_v`` stacked permuted bands."""
    if n % d_c:
        raise ValueError(f"code length {n} must be a multiple of d_c={d_c}")
    rng = np.random.default_rng(seed)
    rows = n // d_c
    band = np.zeros((rows, n), dtype=np.uint8)
    for r in range(rows):
        band[r, r * d_c:(r + 1) * d_c] = 1
    parts = [band] + [band[:, rng.permutation(n)] for _ in range(d_v - 1)]
    return np.vstack(parts)


def regular_code(n: int, d_v: int = 3, d_c: int = 9, seed: int = 0, max_iters: int = 50) -> LdpcCode:
    """Rate ``1 - d_v/d_c`` Gallager code of length ``n``."""
    H = gallager_matrix(n, d_v, d_c, seed)
    return LdpcCode(H, k=n - H.shape[0], max_iters=max_iters)


def write_alist(H: np.ndarray) -> str:
    """Serialize a binary matrix in the standard ``alist`` text layout."""
    H = np.asarray(H) % 2
    m, n = H.shape
    cols = [np.flatnonzero(H[:, j]) + 1 for j in range(n)]
    rows = [np.flatnonzero(H[i]) + 1 for i in range(m)]
    dv = max(len(c) for c in cols)
    dc = max(len(r) for r in rows)
    pad = lambda ix, w: " ".join(str(x) for x in list(ix) + [0] * (w - len(ix)))
    lines = [f"{n} {m}", f"{dv} {dc}", " ".join(str(len(c)) for c in cols), " ".join(str(len(r)) for r in rows)]
    lines += [pad(c, dv) for c in cols]
    lines += [pad(r, dc) for r in rows]
    return "\n".join(lines) + "\n"


def read_alist(text: str) -> np.ndarray:
    """Parse ``alist`` text into a dense ``uint8`` matrix (column lists are authoritative)."""
    tok = [int(x) for x in text.split()]
    try:
        n, m, dv, dc = tok[:4]
        pos = 4
        col_deg = tok[pos:pos + n]
        pos += n
        row_deg = tok[pos:pos + m]
        pos += m
        H = np.zeros((m, n), dtype=np.uint8)
        for j in range(n):
            ix = tok[pos:pos + dv]
            pos += dv
            for i in ix[: col_deg[j]]:
                H[i - 1, j] = 1
        check = np.zeros_like(H)
        for i in range(m):
            ix = tok[pos:pos + dc]
            pos += dc
            for j in ix[: row_deg[i]]:
                check[i, j - 1] = 1
    except (ValueError, IndexError) as e:
        raise ValueError(f"malformed alist: {e}") from None
    if not np.array_equal(H, check):
        raise ValueError("alist row and column lists disagree")
    return H
