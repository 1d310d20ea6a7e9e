"""
Built-in checks for a healthy build: gradients, shuffle bijectivity,
early-stopping behaviour, and the TV and metric oracles.
"""
import logging
import math
import time
from typing import Callable, List, Tuple

import numpy as np

from engine.errors import EXIT_NUMERICAL, EXIT_OK
from engine.gradcheck import check_gradients, check_layer_types
from engine.mosaic import MosaicGrid, grid_for_block_size, shuffle_block, unshuffle_mosaic
from engine.optimize import EsConfig, EsDecision, EsState, es_observe
from engine.regularizers import tv
from utils.metrics import background_variance, psnr
from utils.seqio import FrameSequence, MaskSequence

logger = logging.getLogger(__name__)

CheckResult = Tuple[bool, str]


def check_gradient(seed: int) -> CheckResult:
    report = check_gradients(seed=seed)
    layers = check_layer_types(seed=seed)
    failed = [name for name, r in layers.items() if not r.passed]
    worst = max([report.max_rel_error] + [r.max_rel_error for r in layers.values()])
    detail = (f"max rel error {worst:.2e} over z/gamma/beta and {len(layers)} layer types, "
              f"{report.excluded} kinks skipped")
    if failed:
        detail += f"; failing layers: {', '.join(failed)}"
    return report.passed and not failed, detail


def check_shuffle(seed: int, cases: int = 200) -> CheckResult:
    rng = np.random.default_rng(seed)
    for _ in range(cases):
        t = int(rng.integers(1, 10))
        h, w = (int(d) for d in rng.integers(1, 17, size=2))
        frames = list(rng.random((t, h, w)))
        back = unshuffle_mosaic(shuffle_block(frames, grid_for_block_size(t)))
        if not all(np.array_equal(a, b) for a, b in zip(frames, back)):
            return False, f"roundtrip failed for T={t}, {h}x{w}"

    example = shuffle_block([np.array([[0, 1], [2, 3]]), np.array([[4, 5], [6, 7]])], MosaicGrid(2, 1))
    if not np.array_equal(example.data, [[0, 1], [4, 5], [2, 3], [6, 7]]):
        return False, "grid 2x1 worked example mismatch"
    return True, f"{cases} random roundtrips exact"


def check_early_stopping(_seed: int) -> CheckResult:
    cfg = EsConfig(patience=50, patience_start=50)
    es = EsState(cfg)
    stop = None
    for t in range(1, 201):
        if es_observe(es, float((t - 100) ** 2), t, cfg) is EsDecision.STOP:
            stop = t
            break
    if stop != 150 or es.best_iter != 100:
        return False, f"parabola: stop {stop}, best {es.best_iter} (expected 150, 100)"

    es = EsState(cfg)
    for t in range(1, 201):
        if es_observe(es, 1000.0 - t, t, cfg) is EsDecision.STOP:
            return False, f"decreasing curve stopped at {t}"
    return True, "parabola stops at 150 with best 100; decreasing curve runs to the cap"


def check_tv(_seed: int) -> CheckResult:
    value = tv(np.array([[0.0, 1.0], [2.0, 3.0]]))
    flat = tv(np.full((4, 4), 0.3))
    return value == 6.0 and flat == 0.0, f"tv(example)={value}, tv(constant)={flat}"


def check_metrics(_seed: int) -> CheckResult:
    static = FrameSequence.from_luma([np.full((4, 4), 0.5)] * 3)
    full = MaskSequence([np.ones((4, 4), dtype=bool)] * 3)
    static_var = background_variance(static, full)

    one_pixel = FrameSequence.from_luma([np.zeros((1, 1)), np.full((1, 1), 2.0 / 255.0)])
    pair_var = background_variance(one_pixel, MaskSequence([np.ones((1, 1), dtype=bool)] * 2))

    db = psnr(np.zeros((8, 8)), np.full((8, 8), 0.1))
    ok = static_var == 0.0 and math.isclose(pair_var, 1.0, rel_tol=1e-9) and math.isclose(db, 20.0, rel_tol=1e-9)
    return ok, f"static {static_var}, two-value {pair_var:.6f}, psnr {db:.6f} dB"


CHECKS: List[Tuple[str, Callable[[int], CheckResult]]] = [
    ("gradient", check_gradient),
    ("shuffle roundtrip", check_shuffle),
    ("early stopping", check_early_stopping),
    ("tv oracle", check_tv),
    ("metrics oracle", check_metrics),
]


def run_checks(seed: int = 0) -> List[Tuple[str, bool, str]]:
    results = []
    for name, check in CHECKS:
        started = time.perf_counter()
        try:
            ok, detail = check(seed)
        except Exception as e:
            logger.error(f"Check {name} raised: {e}", exc_info=True)
            ok, detail = False, f"{e.__class__.__name__}: {e}"
        logger.debug(f"{name} took {time.perf_counter() - started:.2f}s")
        results.append((name, ok, detail))
    return results


def cmd_selftest(cfg) -> int:
    results = run_checks(cfg.values["seed"])

    print("\n" + "=" * 70)
    print(" TURBDIP SELFTEST")
    print("=" * 70)
    for name, ok, detail in results:
        print(f"{'✅ PASS' if ok else '❌ FAIL'}  {name:<20} {detail}")
    print("=" * 70)

    failed = [name for name, ok, _ in results if not ok]
    if failed:
        print(f" {len(failed)} of {len(results)} checks failed: {', '.join(failed)}")
        print("=" * 70 + "\n")
        return EXIT_NUMERICAL
    print(f" All {len(results)} checks passed")
    print("=" * 70 + "\n")
    return EXIT_OK
