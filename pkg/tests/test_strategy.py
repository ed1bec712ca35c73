"""Policies and control classes."""
import numpy as np

from conftest import FixedDraw, random_valid_state

from lobmm.book import (
    BookConfig,
    ControlClass,
    ControlVector,
    EventKind,
    OrderEvent,
    admissible_controls,
    apply_control,
    apply_event,
    make_flat_book,
)
from lobmm.strategy import Naive11Policy, NullPolicy


class TestNullPolicy:
    def test_emits_all_absent(self, fig1):
        cfg, z = fig1
        u = NullPolicy().decide(0.3, z, cfg)
        assert u == ControlVector((-1, -1), (-1, -1))


class TestNaive11:
    def test_posts_both_best_limits(self, fig1):
        cfg, z = fig1
        u = Naive11Policy().decide(0.0, z, cfg)
        z1 = apply_control(z, u, cfg)
        s = z1.spread
        assert s in z1.ra and s in z1.rb
        assert z1.a[s - 1] == z.a[s - 1] + 1
        assert z1.b[s - 1] == z.b[s - 1] - 1

    def test_keeps_resting_orders(self, fig1):
        cfg, z = fig1
        pol = Naive11Policy()
        z1 = apply_control(z, pol.decide(0.0, z, cfg), cfg)
        u2 = pol.decide(0.1, z1, cfg)
        z2 = apply_control(z1, u2, cfg)
        assert z2 == z1  # idempotent once posted

    def test_reposts_after_price_move(self):
        cfg = BookConfig(K=2, a_inf=2, b_inf=2, m_bar=1)
        z = make_flat_book(cfg, depth=2, pa=102, pb=100)
        pol = Naive11Policy()
        z1 = apply_control(z, pol.decide(0.0, z, cfg), cfg)
        # an inside-spread ask narrows the spread: the resting orders are
        # no longer at the best limits
        z2 = apply_event(z1, OrderEvent(EventKind.LIMIT_ASK, 1),
                         FixedDraw(0.5), cfg)
        z3 = apply_control(z2, pol.decide(0.2, z2, cfg), cfg)
        s = z3.spread
        assert s in z3.ra and s in z3.rb

    def test_never_more_than_two_orders(self):
        rng = np.random.default_rng(14)
        cfg = BookConfig(K=2, a_inf=2, b_inf=2, m_bar=2)
        z = make_flat_book(cfg, depth=2, pa=102, pb=100)
        pol = Naive11Policy()
        from lobmm.book import all_events
        from lobmm.errors import EventImpossible

        for _ in range(60):
            z = apply_control(z, pol.decide(0.0, z, cfg), cfg)
            live = sum(1 for v in z.ra if v >= 0) + sum(1 for v in z.rb if v >= 0)
            assert live <= 2
            ev = all_events(2)[int(rng.integers(0, 10))]
            try:
                z = apply_event(z, ev, FixedDraw(float(rng.random())), cfg)
            except EventImpossible:
                pass


class TestClassNesting:
    def test_sets_nested_for_sampled_states(self):
        rng = np.random.default_rng(15)
        for _ in range(15):
            cfg, z = random_valid_state(rng, K=3, m=2)
            a1 = set((u.ra, u.rb) for u in admissible_controls(z, cfg, ControlClass.A1LIM))
            a2 = set((u.ra, u.rb) for u in admissible_controls(z, cfg, ControlClass.A2LIM))
            gen = set((u.ra, u.rb) for u in admissible_controls(z, cfg, ControlClass.GENERAL))
            assert a1 <= a2 <= gen
