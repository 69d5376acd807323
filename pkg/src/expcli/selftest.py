"""Built-in contract checks for the numeric kernels and the loss stack.

Each contract returns ``(passed, detail)``. :func:`cmd_selftest` runs them all
and exits 3 naming every failing contract.
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from src.kernels import EXACT, PROFILES, log_softmax_bi, matmul_bi
from src.policy import PolicyConfig, grad_surrogate, init_params, sample_batch, sample_response
from src.policy.backprop import surrogate_value
from src.policy.sampling import rng_stream
from src.rlcore import AdvMode, LossConfig, LossVariant, assemble_loss, compute_advantages, ratio_triple
from src.rollout import assign_advantages, delta_stats, generate_batch, recompute_old, refresh_current
from src.tasks import TaskSpec, gen_prompts

logger = logging.getLogger(__name__)

ContractResult = Tuple[bool, str]


@dataclass
class SelfTestHooks:
    """Injection points for exercising the contracts against broken kernels."""

    matmul: Callable = matmul_bi


_POLICY = PolicyConfig(vocab_size=16, context_window=6, embed_dim=8, hidden_dim=12)
_TASK = TaskSpec(prompt_len=3, target_len=2, alphabet_size=6)
_GROUP = 4


def _fixture(seed: int = 7):
    params = init_params(_POLICY, seed)
    prompts = gen_prompts(_TASK, 4, seed, window=_POLICY.context_window, vocab_size=_POLICY.vocab_size)
    return params, prompts


def check_batch_invariance(hooks: SelfTestHooks) -> ContractResult:
    """Every output row is bitwise independent of which other rows share the call."""
    rng = np.random.default_rng(11)
    a = rng.standard_normal((9, 37))
    b = rng.standard_normal((37, 5))
    logits = rng.standard_normal((9, 21)) * 4.0
    for name, profile in PROFILES.items():
        full = hooks.matmul(a, b, profile)
        for lo, hi in ((0, 1), (4, 5), (2, 7), (8, 9)):
            part = hooks.matmul(a[lo:hi], b, profile)
            if not np.array_equal(part, full[lo:hi]):
                return False, f"matmul rows {lo}:{hi} differ from full batch under {name}"
        lsm = log_softmax_bi(logits, profile)
        for i in range(logits.shape[0]):
            if not np.array_equal(log_softmax_bi(logits[i : i + 1], profile)[0], lsm[i]):
                return False, f"log_softmax row {i} differs from full batch under {name}"
    return True, f"{len(PROFILES)} profiles"


def check_determinism(hooks: SelfTestHooks) -> ContractResult:
    """Repeated sampling, any worker count and single-trajectory sampling agree bitwise."""
    params, prompts = _fixture()
    for name, profile in PROFILES.items():
        runs = [
            generate_batch(params, prompts, _GROUP, profile, rng_seed=5, max_len=_TASK.max_len, workers=w)
            for w in (1, 1, 3)
        ]
        first = runs[0]
        for other in runs[1:]:
            for x, y in zip(first.trajectories, other.trajectories):
                if not (
                    np.array_equal(x.response_tokens, y.response_tokens)
                    and np.array_equal(x.field_array("logp_rollout"), y.field_array("logp_rollout"))
                ):
                    return False, f"trajectory ({x.prompt_id}, {x.group_index}) not reproducible under {name}"

        batched = sample_batch(
            params,
            [p.tokens for p in prompts],
            [rng_stream(9, p.id, 0) for p in prompts],
            profile,
            _TASK.max_len,
        )
        for p, s in zip(prompts, batched):
            tokens, logp = sample_response(params, p.tokens, profile, rng_stream(9, p.id, 0), _TASK.max_len)
            if list(tokens) != list(s.tokens) or not np.array_equal(logp, s.logp_rollout):
                return False, f"batched sampling differs from single sampling for prompt {p.id} under {name}"
    return True, f"{len(PROFILES)} profiles"


def check_gradient(hooks: SelfTestHooks, h: float = 1e-6, tol: float = 1e-5) -> ContractResult:
    """Analytic gradient against central differences on a sample of coordinates."""
    params, prompts = _fixture()
    batch = generate_batch(params, prompts, 2, EXACT, rng_seed=3, max_len=_TASK.max_len)
    rng = np.random.default_rng(17)
    coeffs = [rng.standard_normal(len(t)) for t in batch.trajectories]
    _, grad = grad_surrogate(params, batch, coeffs, EXACT, rmsnorm_eps=_POLICY.rmsnorm_eps)

    worst = 0.0
    for name in params.names():
        tensor = getattr(params, name)
        for _ in range(3):
            idx = tuple(int(rng.integers(0, s)) for s in tensor.shape)
            values = []
            for sign in (1.0, -1.0):
                shifted = params.copy()
                getattr(shifted, name)[idx] += sign * h
                values.append(surrogate_value(shifted, batch, coeffs, EXACT, rmsnorm_eps=_POLICY.rmsnorm_eps))
            numeric = (values[0] - values[1]) / (2.0 * h)
            analytic = float(getattr(grad, name)[idx])
            err = abs(numeric - analytic) / max(1.0, abs(numeric), abs(analytic))
            worst = max(worst, err)
            if err > tol:
                return False, f"d/d{name}{list(idx)}: analytic {analytic:.8g} vs numeric {numeric:.8g}"
    return True, f"max relative error {worst:.2e}"


def check_ratio_identity(hooks: SelfTestHooks, trials: int = 200) -> ContractResult:
    """r_train = r_rollout * r_corr to relative 1e-12."""
    rng = np.random.default_rng(23)
    for _ in range(trials):
        lc, lo, lr = (-rng.exponential(2.0, size=16) for _ in range(3))
        triple = ratio_triple(lc, lo, lr)
        rel = np.abs(triple.r_train - triple.r_rollout * triple.r_corr) / np.abs(triple.r_train)
        if np.max(rel) > 1e-12:
            return False, f"relative error {np.max(rel):.3e}"
    return True, f"{trials} random batches"


def check_zero_mismatch(hooks: SelfTestHooks) -> ContractResult:
    """Equal profiles give delta = 0 and every correction reduces to plain recompute."""
    params, prompts = _fixture()
    batch = generate_batch(params, prompts, _GROUP, EXACT, rng_seed=13, max_len=_TASK.max_len)
    batch = recompute_old(params, batch, EXACT, _POLICY.rmsnorm_eps)
    stats = delta_stats(batch)
    if stats.max_abs != 0.0:
        return False, f"max |delta| = {stats.max_abs:.3e} with identical profiles"

    moved = params.copy()
    moved.b2 += np.linspace(-0.3, 0.3, moved.b2.size)
    batch = refresh_current(moved, batch, EXACT, _POLICY.rmsnorm_eps)
    batch = assign_advantages(batch, compute_advantages(batch.rewards, AdvMode.GRPO_GROUP, _GROUP))

    base = assemble_loss(batch, LossConfig(variant=LossVariant.GRPO_RECOMPUTE))
    for variant in (LossVariant.GRPO_BYPASS, LossVariant.TIS, LossVariant.SRS, LossVariant.TIS_SRS):
        out = assemble_loss(batch, LossConfig(variant=variant))
        if out.loss != base.loss:
            return False, f"{variant.value} loss {out.loss!r} != grpo_recompute loss {base.loss!r}"
        if out.rejection_rate != 0.0 or out.tis_truncation_rate != 0.0:
            return False, f"{variant.value} rejects or truncates with zero mismatch"
    return True, f"{stats.token_count} tokens"


CONTRACTS: Dict[str, Callable[[SelfTestHooks], ContractResult]] = {
    "batch_invariance": check_batch_invariance,
    "determinism": check_determinism,
    "gradient_check": check_gradient,
    "ratio_identity": check_ratio_identity,
    "zero_mismatch": check_zero_mismatch,
}


def run_contracts(hooks: Optional[SelfTestHooks] = None) -> List[Tuple[str, bool, str]]:
    hooks = hooks or SelfTestHooks()
    results = []
    for name, check in CONTRACTS.items():
        try:
            passed, detail = check(hooks)
        except Exception as exc:  # a crash is a failed contract, reported by name
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, passed, detail))
    return results


def cmd_selftest(hooks: Optional[SelfTestHooks] = None) -> int:
    """Run every contract; 0 when all pass, 3 otherwise."""
    logger.info("=" * 60)
    logger.info("Self-test")
    logger.info("=" * 60)
    start = time.time()

    results = run_contracts(hooks)
    for name, passed, detail in results:
        if passed:
            logger.info(f"[OK] {name}: {detail}")
        else:
            logger.error(f"[ERROR] {name}: {detail}")

    failed = [name for name, passed, _ in results if not passed]
    logger.info(f"Self-test finished in {time.time() - start:.2f}s")
    if failed:
        logger.error(f"Failing contracts: {', '.join(failed)}")
        return 3
    return 0
