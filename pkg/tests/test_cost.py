import numpy as np
import pytest

from fedsim import cost, nn
from fedsim.cost import (ArchSpec, CostLedger, bytes_per_round, charge_round,
                         flops_per_local_batch)
from fedsim.rng import substream

PAPER_ARCH = ArchSpec(n1=3072, n2=1000, n3=200, b=32, s_active=10)


def model_for(arch: ArchSpec) -> nn.MlpModel:
    return nn.init_model(arch.n1, arch.n2, arch.n3, substream(0, "cm"))


class TestFlopsPerBatch:
    def test_reference_dims_averaging_family(self):
        # 4*3072*1000*32 + 6*1000*200*32
        assert flops_per_local_batch(PAPER_ARCH, "fedavg") == 431_616_000
        for kind in ("fedprox", "fedadam", "fednova"):
            assert flops_per_local_batch(PAPER_ARCH, kind) == 431_616_000

    def test_moon_surcharge(self):
        # + 4*b*n1*n2 = 393,216,000 for the extra representation passes
        assert (flops_per_local_batch(PAPER_ARCH, "moon")
                == 431_616_000 + 393_216_000)

    def test_ist_uses_site_width(self):
        got = flops_per_local_batch(PAPER_ARCH, "ist", site_neurons=100)
        assert got == 4 * 3072 * 100 * 32 + 6 * 100 * 200 * 32
        # default site width is n2 // s_active
        assert flops_per_local_batch(PAPER_ARCH, "ist") == got

    def test_linear_in_batch_size(self):
        a = ArchSpec(10, 20, 5, 8, 4)
        b = ArchSpec(10, 20, 5, 16, 4)
        assert 2 * flops_per_local_batch(a, "fedavg") == flops_per_local_batch(b, "fedavg")

    def test_unknown_algorithm(self):
        with pytest.raises(ValueError):
            flops_per_local_batch(PAPER_ARCH, "sgd")


class TestBytesPerRound:
    def test_averaging_formula(self):
        m = model_for(PAPER_ARCH)
        p = nn.parameter_count(m)
        assert bytes_per_round(PAPER_ARCH, "fedavg", m) == 2 * 10 * p * 4
        for kind in ("fedprox", "moon", "fedadam", "fednova"):
            assert bytes_per_round(PAPER_ARCH, kind, m) == 2 * 10 * p * 4

    def test_tripling_sites_triples_averaging_bytes(self):
        m = model_for(PAPER_ARCH)
        one = bytes_per_round(PAPER_ARCH, "fedavg", m)
        arch3 = ArchSpec(3072, 1000, 200, 32, 30)
        assert bytes_per_round(arch3, "fedavg", m) == 3 * one

    def test_ist_formula(self):
        m = model_for(PAPER_ARCH)
        p = nn.parameter_count(m)
        got = bytes_per_round(PAPER_ARCH, "ist", m)
        assert got == 2 * p * 4 + 2 * 9 * 200 * 4

    def test_ist_nearly_independent_of_sites(self):
        # only the replicated output bias grows with s: < 0.1% at these dims
        m = model_for(PAPER_ARCH)
        b1 = bytes_per_round(ArchSpec(3072, 1000, 200, 32, 1), "ist", m)
        b10 = bytes_per_round(PAPER_ARCH, "ist", m)
        assert b10 > b1
        assert (b10 - b1) / b1 < 1e-3

    def test_single_site_ist_equals_plain_transfer(self):
        arch = ArchSpec(8, 16, 4, 32, 1)
        m = model_for(arch)
        assert bytes_per_round(arch, "ist", m) == 2 * nn.parameter_count(m) * 4


class TestChargeRound:
    def test_accumulates_flops_and_bytes(self):
        arch = ArchSpec(8, 16, 4, 32, 2)
        m = model_for(arch)
        led = CostLedger()
        charge_round(led, arch, "fedavg", local_rounds=3, model=m)
        per_batch = flops_per_local_batch(arch, "fedavg")
        assert led.cumulative_flops == per_batch * 3 * 2
        assert led.cumulative_bytes == bytes_per_round(arch, "fedavg", m)
        charge_round(led, arch, "fedavg", local_rounds=3, model=m)
        assert led.cumulative_flops == 2 * per_batch * 3 * 2
        assert led.cumulative_bytes == 2 * bytes_per_round(arch, "fedavg", m)

    def test_ist_uneven_site_counts_charged_exactly(self):
        arch = ArchSpec(8, 7, 4, 32, 2)
        m = model_for(arch)
        led = CostLedger()
        charge_round(led, arch, "ist", 1, m, site_neuron_counts=[4, 3])
        want = (flops_per_local_batch(arch, "ist", site_neurons=4)
                + flops_per_local_batch(arch, "ist", site_neurons=3))
        assert led.cumulative_flops == want

    def test_zero_local_rounds_still_pays_communication(self):
        arch = ArchSpec(8, 16, 4, 32, 2)
        m = model_for(arch)
        led = CostLedger()
        charge_round(led, arch, "fedavg", 0, m)
        assert led.cumulative_flops == 0
        assert led.cumulative_bytes > 0

    def test_monotone_over_mixed_rounds(self):
        arch = ArchSpec(8, 16, 4, 32, 4)
        m = model_for(arch)
        led = CostLedger()
        seen = []
        for k, kind in enumerate(("fedavg", "moon", "ist", "fednova")):
            counts = [4, 4, 4, 4] if kind in cost.IST_KINDS else None
            charge_round(led, arch, kind, k, m, site_neuron_counts=counts)
            seen.append((led.cumulative_flops, led.cumulative_bytes))
        assert seen == sorted(seen)

    def test_negative_local_rounds_rejected(self):
        arch = ArchSpec(8, 16, 4, 32, 2)
        with pytest.raises(ValueError):
            charge_round(CostLedger(), arch, "fedavg", -1, model_for(arch))


class TestMoonOverheadRatio:
    def test_exact_ratio_formula(self):
        # (8 n1 n2 + 6 n2 n3) / (4 n1 n2 + 6 n2 n3) at any dims
        for n1, n2, n3 in ((3072, 1000, 200), (64, 256, 20), (5, 7, 3)):
            arch = ArchSpec(n1, n2, n3, 32, 10)
            ratio = (flops_per_local_batch(arch, "moon")
                     / flops_per_local_batch(arch, "fedprox"))
            want = (8 * n1 * n2 + 6 * n2 * n3) / (4 * n1 * n2 + 6 * n2 * n3)
            assert ratio == want

    def test_ratio_near_two_at_reference_dims(self):
        ratio = (flops_per_local_batch(PAPER_ARCH, "moon")
                 / flops_per_local_batch(PAPER_ARCH, "fedprox"))
        assert ratio == pytest.approx(1.95, abs=0.05)


class TestArchSpecValidation:
    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            ArchSpec(0, 1, 1, 1, 1)
        with pytest.raises(ValueError):
            ArchSpec(1, 1, 1, 32, 0)
