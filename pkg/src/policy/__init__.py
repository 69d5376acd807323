"""Tiny autoregressive softmax policy with analytic gradients."""

from .model import (
    BOS_ID,
    EOS_ID,
    FIRST_CONTENT_ID,
    PAD_ID,
    Gradient,
    PolicyConfig,
    PolicyParams,
    batch_logprobs,
    context_windows,
    forward_batch,
    forward_logits,
    init_params,
    sequence_logprobs,
)
from .sampling import (
    SampledResponse,
    greedy_batch,
    greedy_decode,
    rng_stream,
    sample_batch,
    sample_response,
)
from .backprop import grad_surrogate, surrogate_value
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "BOS_ID",
    "EOS_ID",
    "FIRST_CONTENT_ID",
    "PAD_ID",
    "Gradient",
    "PolicyConfig",
    "PolicyParams",
    "batch_logprobs",
    "context_windows",
    "forward_batch",
    "forward_logits",
    "init_params",
    "sequence_logprobs",
    "SampledResponse",
    "greedy_batch",
    "greedy_decode",
    "rng_stream",
    "sample_batch",
    "sample_response",
    "grad_surrogate",
    "surrogate_value",
    "load_checkpoint",
    "save_checkpoint",
]
