"""Simile property probing toolkit.

Builds multiple-choice probes that mask the shared property of a closed
simile, evaluates masked language models on them (zero-shot, fine-tuned,
component-ablated), fine-tunes models with a joint masked-prediction plus
knowledge-embedding objective, and runs a frozen-encoder sentiment probe
and representation analysis on the results.
"""

from simile_probe.records import (
    MASK_SENTINEL,
    UNK_SENTINEL,
    ProbeItem,
    SimileRecord,
    Span,
)

__version__ = "0.1.0"

__all__ = [
    "MASK_SENTINEL",
    "UNK_SENTINEL",
    "ProbeItem",
    "SimileRecord",
    "Span",
    "__version__",
]
