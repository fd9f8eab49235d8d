"""Correspondence matching with partial optimal transport and message flow.

Arrays go in and out as numpy: feature grids are float32 [H, W, C], masks are
uint8 [H, W], transport plans are float64 [rows, cols].
"""

from ._cmatch import (
    CmatchError,
    ConvergenceError,
    best_match,
    confusion,
    cosine_cost,
    evaluate,
    exact_transport,
    fb_iou,
    generate_episode,
    iou,
    mean_iou,
    message_flow,
    positional_encoding,
    prior_mask,
    probability_map,
    read_tensor,
    select_matched_mass,
    solve,
    synthetic_episode,
    threshold,
    write_tensor,
)
from ._cmatch import run_match as _run_match


def run_match(episode, out, params="", **options):
    """Runs the pipeline on an episode directory and writes `out`.

    Keyword options use the config-file keys (ot_mode, mfm, lambda, tau,
    seed, ...). Booleans become on/off.
    """
    text = {}
    for key, value in options.items():
        if isinstance(value, bool):
            value = "on" if value else "off"
        text[key] = str(value)
    return _run_match(str(episode), str(out), str(params), text)


__all__ = [
    "CmatchError",
    "ConvergenceError",
    "best_match",
    "confusion",
    "cosine_cost",
    "evaluate",
    "exact_transport",
    "fb_iou",
    "generate_episode",
    "iou",
    "mean_iou",
    "message_flow",
    "positional_encoding",
    "prior_mask",
    "probability_map",
    "read_tensor",
    "run_match",
    "select_matched_mass",
    "solve",
    "synthetic_episode",
    "threshold",
    "write_tensor",
]
