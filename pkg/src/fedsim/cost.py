"""Closed-form FLOP and byte accounting.

FLOPs follow the weight-dominated analytic count (batch-norm, bias, softmax
and activation work excluded; proximal/normalization terms excluded since
they do not scale with the batch size). Byte counts cover the full
parameter vector at 4 bytes per value, doubled for download + upload.
"""

from __future__ import annotations

from dataclasses import dataclass

from .nn import MlpModel, parameter_count

AVERAGING_KINDS = ("fedavg", "fedprox", "moon", "fedadam", "fednova")
IST_KINDS = ("ist", "istprox")
ALL_KINDS = AVERAGING_KINDS + IST_KINDS

BYTES_PER_VALUE = 4  # single precision


@dataclass
class ArchSpec:
    """Dimensions that drive the per-batch cost formulas."""

    n1: int
    n2: int
    n3: int
    b: int
    s_active: int

    def __post_init__(self):
        if min(self.n1, self.n2, self.n3, self.b, self.s_active) < 1:
            raise ValueError("all ArchSpec fields must be >= 1")


@dataclass
class CostLedger:
    """Monotone cumulative counters; the engine owns exactly one per run."""

    cumulative_flops: float = 0.0
    cumulative_bytes: int = 0


def flops_per_local_batch(arch: ArchSpec, algorithm: str,
                          site_neurons: int | None = None) -> float:
    """FLOPs for one local batch at one site.

    Base count is 4*n1*n2*b + 6*n2*n3*b (forward + backward over the two
    weight matrices). The contrastive method pays 4*b*n1*n2 extra for its
    representation passes. Subnet methods use the site's actual hidden
    width instead of n2.
    """
    if algorithm not in ALL_KINDS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    n2 = arch.n2
    if algorithm in IST_KINDS:
        n2 = site_neurons if site_neurons is not None else arch.n2 // arch.s_active
    base = 4.0 * arch.n1 * n2 * arch.b + 6.0 * n2 * arch.n3 * arch.b
    if algorithm == "moon":
        base += 4.0 * arch.b * arch.n1 * n2
    return base


def bytes_per_round(arch: ArchSpec, algorithm: str, model: MlpModel) -> int:
    """Bytes shipped in one communication round (download + upload).

    Averaging family: every active site moves the full model both ways.
    Subnet family: each parameter moves once each way regardless of s,
    except the replicated output bias which every site carries.
    """
    if algorithm not in ALL_KINDS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    p = parameter_count(model)
    if algorithm in IST_KINDS:
        return 2 * p * BYTES_PER_VALUE + 2 * (arch.s_active - 1) * arch.n3 * BYTES_PER_VALUE
    return 2 * arch.s_active * p * BYTES_PER_VALUE


def charge_round(ledger: CostLedger, arch: ArchSpec, algorithm: str,
                 local_rounds: int, model: MlpModel,
                 site_neuron_counts: list[int] | None = None) -> None:
    """Accumulate one round's training FLOPs and synchronization bytes.

    A round with zero local training still pays its communication. For the
    subnet family, pass the realized per-site neuron counts so uneven
    partitions are charged exactly.
    """
    if local_rounds < 0:
        raise ValueError("local_rounds must be >= 0")
    if algorithm in IST_KINDS:
        counts = site_neuron_counts
        if counts is None:
            counts = [arch.n2 // arch.s_active] * arch.s_active
        flops = sum(flops_per_local_batch(arch, algorithm, site_neurons=c)
                    for c in counts) * local_rounds
    else:
        flops = flops_per_local_batch(arch, algorithm) * local_rounds * arch.s_active
    ledger.cumulative_flops += flops
    ledger.cumulative_bytes += bytes_per_round(arch, algorithm, model)
