"""Frame-sequence comparison metrics for evaluating interpolations."""

from __future__ import annotations

import numpy as np

from .formats import FgsSequence
from .grid import DEFAULT_RHO_MAX

MASS_EPS = 1e-8


def _sentinel(x: float):
    """JSON has no Infinity; report it as the string "inf"."""
    if np.isinf(x):
        return "inf"
    return float(x)


def eval_metrics(
    pred: FgsSequence, truth: FgsSequence, rho_max: float = DEFAULT_RHO_MAX
) -> dict:
    """Per-frame MAE / RMSE / PSNR / mass error on the density field.

    PSNR uses rho_max as the peak; identical frames report "inf".
    """
    if (pred.nx, pred.ny) != (truth.nx, truth.ny):
        raise ValueError(
            f"grid mismatch: prediction {pred.nx}x{pred.ny} vs truth {truth.nx}x{truth.ny}"
        )
    if len(pred.frames) != len(truth.frames):
        raise ValueError(
            f"frame count mismatch: {len(pred.frames)} vs {len(truth.frames)}"
        )
    for seq, label in ((pred, "prediction"), (truth, "truth")):
        if "density" not in seq.field_names():
            raise ValueError(f"{label} has no density field")

    frames = []
    maes, rmses, psnrs, masses = [], [], [], []
    for i, (pf, tf) in enumerate(zip(pred.frames, truth.frames)):
        diff = pf["density"] - tf["density"]
        mae = float(np.abs(diff).mean())
        rmse = float(np.sqrt((diff * diff).mean()))
        psnr = float("inf") if rmse == 0.0 else 20.0 * np.log10(rho_max / rmse)
        tmass = float(tf["density"].sum())
        mass = abs(float(pf["density"].sum()) - tmass) / max(tmass, MASS_EPS)
        frames.append(
            {
                "index": i,
                "mae": mae,
                "rmse": rmse,
                "psnr": _sentinel(psnr),
                "mass_err": mass,
            }
        )
        maes.append(mae)
        rmses.append(rmse)
        psnrs.append(psnr)
        masses.append(mass)

    def agg(xs):
        return {"mean": _sentinel(float(np.mean(xs))), "max": _sentinel(float(np.max(xs)))}

    return {
        "frames": frames,
        "aggregate": {
            "mae": agg(maes),
            "rmse": agg(rmses),
            "psnr": agg(psnrs),
            "mass_err": agg(masses),
        },
    }
