"""Vertical decomposition: random disjoint partition of hidden neurons.

Hidden-layer parameters travel with their neuron and come back untouched;
only the shared output bias is reconciled (weighted average) on reassembly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import MlpModel


class IntegrityError(ValueError):
    """Neuron coverage is not disjoint and exhaustive."""


@dataclass
class SubnetAssignment:
    """Maps every hidden neuron to exactly one active site for a round."""

    round_id: int
    site_of_neuron: np.ndarray  # [n2] ints in [0, s)
    s: int

    def neurons_of(self, site: int) -> np.ndarray:
        """Global neuron indices carried by a site, ascending."""
        return np.flatnonzero(self.site_of_neuron == site)


@dataclass
class Subnet:
    """A site's shard of the global model plus the neuron indices it carries."""

    model: MlpModel
    neuron_indices: np.ndarray


def partition(n2: int, s: int, rng: np.random.Generator, round_id: int = 0) -> SubnetAssignment:
    """Uniformly random balanced partition: seeded shuffle chopped into s chunks."""
    if s < 1:
        raise ValueError("s must be >= 1")
    if s > n2:
        raise ValueError(f"cannot split {n2} hidden neurons over {s} sites: "
                         "a site would receive zero neurons")
    perm = rng.permutation(n2)
    site_of = np.empty(n2, dtype=np.int64)
    base, extra = divmod(n2, s)
    start = 0
    for site in range(s):
        size = base + (1 if site < extra else 0)
        site_of[perm[start:start + size]] = site
        start += size
    return SubnetAssignment(round_id, site_of, s)


def extract(global_model: MlpModel, asn: SubnetAssignment, site: int) -> Subnet:
    """Copy out the rows/columns belonging to one site's neurons."""
    if not 0 <= site < asn.s:
        raise ValueError(f"site {site} out of range for {asn.s} sites")
    ix = asn.neurons_of(site)
    sub = MlpModel(
        w1=global_model.w1[ix].copy(),
        b1=global_model.b1[ix].copy(),
        bn_gamma=global_model.bn_gamma[ix].copy(),
        bn_beta=global_model.bn_beta[ix].copy(),
        bn_mean=global_model.bn_mean[ix].copy(),
        bn_var=global_model.bn_var[ix].copy(),
        w2=global_model.w2[:, ix].copy(),
        b2=global_model.b2.copy(),
    )
    return Subnet(sub, ix)


def reassemble(subnets: list[Subnet], asn: SubnetAssignment,
               b2_weights: np.ndarray | None = None) -> MlpModel:
    """Place subnet parameters back by neuron index; average the shared b2.

    With untrained subnets this is the exact inverse of extract().
    """
    n2 = len(asn.site_of_neuron)
    seen = np.zeros(n2, dtype=bool)
    for sn in subnets:
        if seen[sn.neuron_indices].any():
            raise IntegrityError("duplicate neuron coverage in reassembly")
        seen[sn.neuron_indices] = True
    if not seen.all():
        raise IntegrityError(f"missing neurons in reassembly: {np.flatnonzero(~seen)[:8]}")

    if b2_weights is None:
        b2_weights = np.full(len(subnets), 1.0 / len(subnets))
    b2_weights = np.asarray(b2_weights, dtype=np.float64)
    if len(b2_weights) != len(subnets):
        raise ValueError("one b2 weight per subnet required")

    ref = subnets[0].model
    n1 = ref.w1.shape[1]
    n3 = ref.w2.shape[0]
    dt = ref.dtype
    out = MlpModel(
        w1=np.empty((n2, n1), dtype=dt), b1=np.empty(n2, dtype=dt),
        bn_gamma=np.empty(n2, dtype=dt), bn_beta=np.empty(n2, dtype=dt),
        bn_mean=np.empty(n2, dtype=dt), bn_var=np.empty(n2, dtype=dt),
        w2=np.empty((n3, n2), dtype=dt), b2=np.zeros(n3, dtype=np.float64),
    )
    for sn, wgt in zip(subnets, b2_weights):
        ix = sn.neuron_indices
        m = sn.model
        out.w1[ix] = m.w1
        out.b1[ix] = m.b1
        out.bn_gamma[ix] = m.bn_gamma
        out.bn_beta[ix] = m.bn_beta
        out.bn_mean[ix] = m.bn_mean
        out.bn_var[ix] = m.bn_var
        out.w2[:, ix] = m.w2
        out.b2 += wgt * m.b2
    out.b2 = out.b2.astype(dt)
    return out
