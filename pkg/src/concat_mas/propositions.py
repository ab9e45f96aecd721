"""Grid checks of the exact expected-utility model behind the benefit predictor."""
from __future__ import annotations

import time
from dataclasses import dataclass

from .benefit import correction_threshold, exact_euc, taylor_benefit

GRID = [i / 100 for i in range(1, 100)]
ZERO_TOL = 1e-12


@dataclass
class Check:
    name: str
    passed: bool
    detail: str


def _sign(x: float) -> int:
    return 0 if abs(x) <= ZERO_TOL else (1 if x > 0 else -1)


def check_sign() -> Check:
    bad = [(ck, c) for ck in GRID for c in GRID
           if _sign(exact_euc(ck, c)) != _sign(c - correction_threshold(ck))]
    return Check("sign", not bad, f"{len(bad)} mismatches on {len(GRID) ** 2} points")


def check_monotonicity() -> Check:
    bad = 0
    for ck in GRID:
        row = [exact_euc(ck, c) for c in GRID]
        bad += sum(1 for a, b in zip(row, row[1:]) if b < a - ZERO_TOL)
    for c in GRID:
        col = [exact_euc(ck, c) for ck in GRID]
        bad += sum(1 for a, b in zip(col, col[1:]) if b > a + ZERO_TOL)
    return Check("monotonicity", bad == 0, f"{bad} violations")


def check_zero_point() -> Check:
    worst = 0.0
    for i in range(5, 100, 5):
        ck = i / 100
        worst = max(worst, abs(exact_euc(ck, correction_threshold(ck))))
    return Check("zero point", worst <= 1e-9, f"max |EUC at threshold| = {worst:.3e}")


def check_threshold_identities() -> Check:
    mid = correction_threshold(0.5)
    worst = max(abs(correction_threshold(c) + correction_threshold(1 - c) - 1.0) for c in GRID)
    inc = all(correction_threshold(a) < correction_threshold(b) for a, b in zip(GRID, GRID[1:]))
    ok = mid == 0.5 and worst <= 1e-12 and inc
    return Check("threshold identities", ok, f"t(0.5)={mid!r}, max symmetry error {worst:.3e}, increasing={inc}")


def check_taylor() -> Check:
    worst = 0.0
    for ck in GRID:
        if not 0.2 - 1e-12 <= ck <= 0.8 + 1e-12:
            continue
        for c in GRID:
            if abs(c - 0.5) <= 0.05 + 1e-12:
                worst = max(worst, abs(exact_euc(ck, c) - taylor_benefit(ck, c)))
    return Check("taylor fidelity", worst <= 0.02, f"max |exact - taylor| = {worst:.5f}")


def run_all() -> tuple[list[Check], float]:
    start = time.perf_counter()
    checks = [check_sign(), check_monotonicity(), check_zero_point(), check_threshold_identities(), check_taylor()]
    return checks, time.perf_counter() - start
