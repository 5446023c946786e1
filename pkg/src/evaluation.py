import logging

import numpy as np

logger = logging.getLogger(__name__)

_ORDS = {"l1": 1, "l2": 2}


def relative_error(estimate, truth, norm: str = "l2") -> float:
    """||estimate - truth|| / ||truth||; the absolute error when truth is zero."""
    estimate, truth = np.asarray(estimate), np.asarray(truth)
    diff = np.linalg.norm(estimate - truth, ord=_ORDS[norm])
    scale = np.linalg.norm(truth, ord=_ORDS[norm])
    return float(diff / scale) if scale > 0 else float(diff)


def summarize(values) -> dict:
    """max/min/mean/std (population) of a non-empty sample."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return {}
    return {"max": float(values.max()), "min": float(values.min()),
            "mean": float(values.mean()), "std": float(values.std())}


def round_metrics(metrics, ndigits=6) -> dict:
    m = {}
    for k, v in metrics.items():
        if isinstance(v, float):
            m[k] = float(f"{v:.{ndigits}g}")
        elif isinstance(v, dict):
            m[k] = round_metrics(v, ndigits)
        else:
            m[k] = v
    return m


class ReconstructionEvaluator:
    """
    Relative l1/l2 errors of a reconstruction against its ground truth.
    """

    def __init__(self, norms: tuple[str, ...] = ("l1", "l2"), success_tol: float = 1e-4):
        unknown = set(norms) - set(_ORDS)
        if unknown:
            raise NotImplementedError(f"Error norms {sorted(unknown)} are not implemented.")
        self.norms = norms
        self.success_tol = success_tol

    def evaluate(self, estimate, truth) -> dict:
        metrics = {f"err_{norm}": relative_error(estimate, truth, norm) for norm in self.norms}
        logger.debug(f"Evaluated reconstruction: {metrics}")
        return metrics

    def recovered(self, estimate, truth) -> bool:
        """Exact recovery up to the relative l2 tolerance."""
        return relative_error(estimate, truth, "l2") < self.success_tol
