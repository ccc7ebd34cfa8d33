import math

import numpy as np
import pytest

from mcassort import mcdlp
from mcassort.mcdlp import McdlpVariant
from mcassort.model import (
    AssortmentFamily,
    CustomerType,
    Instance,
    Mnl,
    Tabular,
    choice_prob,
    instance_from_dict,
    instance_to_dict,
    no_purchase_prob,
    split_inventory,
)


def _single_type_instance(probs, q=1.0, patience=1, revenues=None, T=1):
    n = len(probs)
    ct = CustomerType(
        id=0,
        arrival=q,
        revenues=tuple(revenues) if revenues else (1.0,) * n,
        choice=Tabular(entries={}, item_probs=tuple(probs)),
        patience=patience,
    )
    return Instance.single_level(
        T=T, inventories=[1] * n, types=(ct,),
        family=AssortmentFamily.size_capped(1), matching_with_timeouts=True,
    )


class TestValidate:
    def test_trivial_instance_valid(self):
        inst = _single_type_instance([0.5])
        assert inst.validate().ok

    def test_arrival_mass_exceeds_one(self):
        types = tuple(
            CustomerType(id=j, arrival=0.6, revenues=(1.0,),
                         choice=Tabular(entries={}, item_probs=(0.5,)), patience=1)
            for j in range(2)
        )
        inst = Instance.single_level(T=1, inventories=[1], types=types,
                                     family=AssortmentFamily.size_capped(1))
        report = inst.validate()
        assert not report.ok
        assert any("arrival mass" in v for v in report.violations)

    def test_substitutability_violation_detected(self):
        entries = {
            (0, frozenset({0})): 0.3,
            (0, frozenset({0, 1})): 0.4,  # adding item 1 must not raise item 0
            (1, frozenset({1})): 0.2,
            (1, frozenset({0, 1})): 0.2,
        }
        ct = CustomerType(id=0, arrival=1.0, revenues=(1.0, 1.0),
                          choice=Tabular(entries=entries), patience=1)
        inst = Instance.single_level(T=1, inventories=[1, 1], types=(ct,),
                                     family=AssortmentFamily.size_capped(2))
        report = inst.validate()
        assert any("substitutability" in v for v in report.violations)

    def test_both_patience_fields_rejected(self):
        ct = CustomerType(id=0, arrival=1.0, revenues=(1.0,),
                          choice=Tabular(entries={}, item_probs=(0.5,)),
                          patience=1, leave_prob=0.5)
        inst = Instance.single_level(T=1, inventories=[1], types=(ct,),
                                     family=AssortmentFamily.size_capped(1))
        assert any("exactly one" in v for v in inst.validate().violations)

    def test_matching_tag_requires_singletons(self):
        ct = CustomerType(id=0, arrival=1.0, revenues=(1.0, 1.0),
                          choice=Mnl(weights=(1.0, 1.0), no_purchase=1.0), patience=1)
        inst = Instance.single_level(T=1, inventories=[1, 1], types=(ct,),
                                     family=AssortmentFamily.size_capped(2),
                                     matching_with_timeouts=True)
        assert any("matching" in v for v in inst.validate().violations)


class TestChoiceProb:
    def test_mnl_symmetric(self):
        m = Mnl(weights=(1.0, 1.0), no_purchase=1.0)
        assert choice_prob(m, 0, {0, 1}) == pytest.approx(1 / 3)

    def test_mnl_equal_weight_single(self):
        m = Mnl(weights=(2.0,), no_purchase=2.0)
        assert choice_prob(m, 0, {0}) == pytest.approx(0.5)

    def test_tabular_lookup_identity(self):
        t = Tabular(entries={(0, frozenset({0, 1})): 0.25, (1, frozenset({0, 1})): 0.5})
        assert choice_prob(t, 1, {0, 1}) == 0.5

    def test_item_not_in_assortment_rejected(self):
        m = Mnl(weights=(1.0, 1.0), no_purchase=1.0)
        with pytest.raises(ValueError):
            choice_prob(m, 0, {1})

    def test_mnl_probabilities_sum_to_one_with_no_purchase(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(1, 6))
            w = tuple(float(x) for x in rng.uniform(0.1, 3.0, n))
            m = Mnl(weights=w, no_purchase=float(rng.uniform(0.1, 3.0)))
            S = frozenset(range(n))
            total = sum(choice_prob(m, i, S) for i in S) + no_purchase_prob(m, S)
            assert total == pytest.approx(1.0)

    def test_mnl_substitutability_property(self):
        # adding any item never raises an incumbent's probability
        rng = np.random.default_rng(1)
        for _ in range(100):
            n = int(rng.integers(2, 7))
            w = tuple(float(x) for x in rng.uniform(0.05, 4.0, n))
            m = Mnl(weights=w, no_purchase=float(rng.uniform(0.1, 2.0)))
            members = [i for i in range(n) if rng.random() < 0.5]
            if not members:
                members = [0]
            S = frozenset(members)
            outside = [i for i in range(n) if i not in S]
            if not outside:
                continue
            extra = outside[0]
            for i in S:
                assert choice_prob(m, i, S) >= choice_prob(m, i, S | {extra})


class TestSplitInventory:
    def test_single_item_three_units(self):
        ct = CustomerType(id=0, arrival=1.0, revenues=(2.0,),
                          choice=Tabular(entries={}, item_probs=(0.5,)), patience=1)
        inst = Instance.single_level(T=1, inventories=[3], types=(ct,),
                                     family=AssortmentFamily.size_capped(1))
        out = split_inventory(inst)
        assert out.n_items == 3
        assert all(it.inventory == 1 for it in out.items)
        assert out.types[0].revenues == (2.0, 2.0, 2.0)

    def test_unit_inventory_identity(self):
        inst = _single_type_instance([0.5, 0.3])
        assert split_inventory(inst) is inst

    def test_parent_map(self):
        ct = CustomerType(id=0, arrival=1.0, revenues=(1.0, 2.0),
                          choice=Tabular(entries={}, item_probs=(0.5, 0.25)), patience=1)
        inst = Instance.single_level(T=1, inventories=[2, 1], types=(ct,),
                                     family=AssortmentFamily.size_capped(1))
        out = split_inventory(inst)
        assert out.n_items == 3
        assert [it.parent for it in out.items] == [0, 0, 1]

    def test_preserves_total_inventory_and_lp_optimum(self):
        rng = np.random.default_rng(7)
        for trial in range(5):
            n = int(rng.integers(2, 4))
            m = int(rng.integers(1, 3))
            types = []
            for j in range(m):
                types.append(CustomerType(
                    id=j, arrival=float(0.9 / m),
                    revenues=tuple(float(x) for x in rng.uniform(0.5, 2.0, n)),
                    choice=Tabular(entries={}, item_probs=tuple(float(x) for x in rng.uniform(0.1, 0.9, n))),
                    patience=int(rng.integers(1, n + 1)),
                ))
            inst = Instance.single_level(
                T=5, inventories=[int(b) for b in rng.integers(1, 4, n)], types=tuple(types),
                family=AssortmentFamily.size_capped(1), matching_with_timeouts=True,
            )
            out = split_inventory(inst)
            assert sum(it.inventory for it in out.items) == sum(it.inventory for it in inst.items)
            o1 = mcdlp.solve_variant(inst, McdlpVariant.SINGLE_ITEM).objective
            o2 = mcdlp.solve_variant(out, McdlpVariant.SINGLE_ITEM).objective
            assert o1 == pytest.approx(o2, abs=1e-7)


class TestFamily:
    def test_enumeration_is_lexicographic_and_has_empty(self):
        fam = AssortmentFamily.size_capped(2)
        sets = fam.assortments(3)
        as_tuples = [tuple(sorted(s)) for s in sets]
        assert as_tuples[0] == ()
        assert as_tuples == sorted(as_tuples)
        assert len(sets) == 1 + 3 + 3

    def test_explicit_dedup_and_empty_always_present(self):
        fam = AssortmentFamily.explicit([[1, 0], [0, 1], [2]])
        assert len(fam.sets) == 3  # empty, {0,1}, {2}
        assert frozenset() in fam.sets

    def test_too_large_enumeration_rejected(self):
        fam = AssortmentFamily.size_capped(20)
        with pytest.raises(ValueError, match="column generation"):
            fam.assortments(30)


class TestRoundTrip:
    def test_json_roundtrip_lossless(self):
        from mcassort.simlab import random_norepeat_instance
        inst = random_norepeat_instance(seed=2, n=4, cap=2, m=3)
        assert instance_from_dict(instance_to_dict(inst)) == inst

    def test_tabular_roundtrip(self):
        entries = {(0, frozenset({0})): 0.5, (0, frozenset({0, 1})): 0.25,
                   (1, frozenset({1})): 0.5, (1, frozenset({0, 1})): 0.25}
        ct = CustomerType(id=0, arrival=(0.4, 0.6), revenues=(1.0, 2.0),
                          choice=Tabular(entries=entries), leave_prob=0.5)
        inst = Instance.single_level(T=2, inventories=[1, 1], types=(ct,),
                                     family=AssortmentFamily.explicit([[0], [1], [0, 1]]))
        back = instance_from_dict(instance_to_dict(inst))
        assert back.types[0].choice.entries == entries
        assert back.types[0].arrival == (0.4, 0.6)
        assert back == inst
