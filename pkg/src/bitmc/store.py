"""Saving and loading fitted variational states.

A model file is a ``.npz`` archive holding the factor arrays plus a
JSON-encoded header with the solver kind, prior, temperature and scale
posterior parameters — enough to rebuild the state for evaluation and
for the risk certificate.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import DataError
from .hinge_vb import FactorizationState
from .logit_vb import LogitState
from .model import PriorConfig
from .scales import ScalePosterior
from .special import GigParams, gig_moments

_FORMAT = "bitmc-model-v1"


def _scale_header(scales) -> list:
    out = []
    for sp in scales:
        if sp.family == "inv-gamma":
            out.append({"family": "inv-gamma", "shape": sp.params[0], "scale": sp.params[1]})
        else:
            (gig,) = sp.params
            out.append({"family": "gig", "a": gig.a, "b": gig.b, "eta": gig.eta})
    return out


def _rebuild_scale(entry, prior: PriorConfig) -> ScalePosterior:
    import math

    from .scales import _checked_kl, _kl_gig_gamma, _kl_inv_gamma
    from .special import digamma

    if entry["family"] == "inv-gamma":
        shape, scale = float(entry["shape"]), float(entry["scale"])
        mean_inv = shape / scale
        mean_log = math.log(scale) - digamma(shape)
        kl = _checked_kl(_kl_inv_gamma(shape, scale, prior.alpha, prior.beta))
        return ScalePosterior("inv-gamma", (shape, scale), mean_inv, mean_log, kl)
    gig = GigParams(a=float(entry["a"]), b=float(entry["b"]), eta=float(entry["eta"]))
    mom = gig_moments(gig)
    kl = _checked_kl(_kl_gig_gamma(gig, prior.alpha, prior.beta))
    return ScalePosterior("gig", (gig,), mom.mean_inv, mom.mean_log, kl)


def save_model(path, solver: str, state, prior: PriorConfig, lam: float | None) -> None:
    """Write a fitted state to ``path`` as a ``.npz`` archive."""
    meta = {
        "format": _FORMAT,
        "solver": solver,
        "prior": {"family": prior.family, "alpha": prior.alpha,
                  "beta": prior.beta, "k": prior.k},
        "lam": lam,
    }
    if solver == "hinge":
        meta["scales"] = _scale_header(state.scales)
        np.savez(
            path, meta=json.dumps(meta),
            left=state.left, right=state.right,
            var_left=state.var_left, var_right=state.var_right,
        )
    else:
        meta["scales"] = _scale_header(state.scales)
        np.savez(
            path, meta=json.dumps(meta),
            mean_left=state.mean_left, cov_left=state.cov_left,
            mean_right=state.mean_right, cov_right=state.cov_right,
            xi=state.xi,
        )


def load_model(path):
    """Read a model archive; returns (solver, state, prior, lam)."""
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read model file {path}: {exc}") from exc
    with archive:
        try:
            meta = json.loads(str(archive["meta"]))
        except KeyError as exc:
            raise DataError(f"{path}: not a model archive (no meta entry)") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: corrupt model header ({exc})") from exc
        if meta.get("format") != _FORMAT:
            raise DataError(f"{path}: unknown model format {meta.get('format')!r}")
        prior = PriorConfig(
            family=meta["prior"]["family"], alpha=meta["prior"]["alpha"],
            beta=meta["prior"]["beta"], k=meta["prior"]["k"],
        )
        scales = tuple(_rebuild_scale(e, prior) for e in meta["scales"])
        if meta["solver"] == "hinge":
            state = FactorizationState(
                left=archive["left"], right=archive["right"],
                var_left=archive["var_left"], var_right=archive["var_right"],
                scales=scales,
            )
        else:
            state = LogitState(
                mean_left=archive["mean_left"], cov_left=archive["cov_left"],
                mean_right=archive["mean_right"], cov_right=archive["cov_right"],
                scales=scales, xi=archive["xi"],
            )
        lam = meta.get("lam")
        return meta["solver"], state, prior, None if lam is None else float(lam)
