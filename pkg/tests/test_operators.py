"""Operators: scripted edits, mixtures, reply parsing."""

import numpy as np
import pytest

from evoscope import expr
from evoscope.evolution import EvolutionConfig, run_evolution
from evoscope.operators import (
    MutationRequest,
    OperatorSpec,
    build_operator,
    best_two_opt_move,
    extract_genome,
    mutate,
    replace_subtree,
)
from evoscope.tasks import InvalidGenomeError, SymregDataset, SymregTask, TspTask
from evoscope.tasks.tsp import TspInstance, tour_length


def req_for(task, parents, seed=(0, 1, 0)):
    return MutationRequest(
        task_id=task.task_id,
        task_statement=task.task_desc(),
        parents=parents,
        attempt_index=0,
        seed=seed,
    )


def square_task():
    points = np.array([[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]])
    delta = points[:, None] - points[None, :]
    dist = np.sqrt((delta ** 2).sum(axis=2))
    return TspTask(TspInstance(4, dist, seed=0))


class TestTwoOpt:
    def test_forced_segment_reversal(self):
        # On the badly-ordered unit square the unique best move reverses
        # positions (1, 2): [0,1,2,3] -> [0,2,1,3].
        task = square_task()
        assert best_two_opt_move([0, 1, 2, 3], task.instance.dist) == [0, 2, 1, 3]

    def test_never_lengthens_the_tour(self):
        rng = np.random.default_rng(0)
        for trial in range(50):
            task = TspTask.random(9, seed=400 + trial % 5)
            parent = [int(v) for v in rng.permutation(9)]
            child = best_two_opt_move(parent, task.instance.dist)
            assert tour_length(child, task.instance.dist) <= tour_length(
                parent, task.instance.dist
            ) + 1e-12

    def test_local_optimum_returns_parent(self):
        task = square_task()
        optimal = [0, 2, 1, 3]
        assert best_two_opt_move(optimal, task.instance.dist) == optimal

    def test_operator_requires_tour_task(self):
        sym = SymregTask(SymregDataset.from_expression("x", ("x",), seed=0))
        with pytest.raises(ValueError):
            build_operator(OperatorSpec(kind="scripted-2opt"), sym)

    def test_determinism(self):
        task = TspTask.random(8, seed=7)
        op = build_operator(OperatorSpec(kind="scripted-2opt"), task)
        parents = [(task.canonical([3, 1, 4, 0, 2, 5, 6, 7]), -5.0)]
        a = op.propose(req_for(task, parents))
        b = op.propose(req_for(task, parents))
        assert a.genome == b.genome


class TestSubtree:
    def make_task(self):
        return SymregTask(SymregDataset.from_expression("x + v", ("x", "v"), seed=1))

    def test_emits_valid_child(self):
        task = self.make_task()
        op = build_operator(OperatorSpec(kind="scripted-subtree"), task)
        parents = [(task.canonical(task.parse_genome("x")), -1.0)]
        out = op.propose(req_for(task, parents))
        assert out.genome is not None
        task.evaluate(out.genome)

    def test_picks_best_of_candidates(self):
        task = self.make_task()
        op = build_operator(OperatorSpec(kind="scripted-subtree"), task)
        parents = [(task.canonical(task.parse_genome("x")), -1.0)]
        out = op.propose(req_for(task, parents))
        # The chosen child must be at least as fit as a fresh random draw
        # from the same seed budget would typically be; just sanity-check
        # determinism and validity here.
        again = op.propose(req_for(task, parents))
        assert task.canonical(out.genome) == task.canonical(again.genome)

    def test_replace_subtree_positions(self):
        node = expr.parse("x + v", ("x", "v"))
        replacement = expr.parse("1", ())
        # Preorder: 0 is the whole sum, 1 is x, 2 is v.
        assert expr.canonicalize(replace_subtree(node, 0, replacement)) == "1"
        assert expr.canonicalize(replace_subtree(node, 1, replacement)) == "1+v"
        assert expr.canonicalize(replace_subtree(node, 2, replacement)) == "1+x"


class TestShuffle:
    def test_tour_children_far_from_parent(self):
        task = TspTask.random(10, seed=8)
        op = build_operator(OperatorSpec(kind="scripted-shuffle"), task)
        parent = list(range(10))
        parents = [(task.canonical(parent), -5.0)]
        total = 0.0
        draws = 1000
        for a in range(draws):
            out = op.propose(req_for(task, parents, seed=(1, 1, a)))
            total += task.distance(out.genome, parent)
        assert total / draws >= 0.4

    def test_expression_tasks_get_fresh_expressions(self):
        task = SymregTask(SymregDataset.from_expression("x", ("x",), seed=2))
        op = build_operator(OperatorSpec(kind="scripted-shuffle"), task)
        parents = [(task.canonical(task.parse_genome("x")), -1.0)]
        out = op.propose(req_for(task, parents))
        assert out.genome is not None
        task.evaluate(out.genome)


class TestMixed:
    def spec(self, rho):
        return OperatorSpec(
            kind="mixed",
            strong=OperatorSpec(kind="scripted-2opt"),
            weak=OperatorSpec(kind="scripted-shuffle"),
            rho=rho,
        )

    def run_tags(self, rho, seed=0):
        task = TspTask.random(6, seed=9)
        op = build_operator(self.spec(rho), task)
        cfg = EvolutionConfig(n_init=8, parents_per_prompt=2, capacity=8,
                              offspring_per_generation=10, generations=10,
                              seed=seed)
        traj = run_evolution(cfg, task, op, "mix")
        return [r.operator_tag for r in traj.offspring()]

    def test_rho_zero_is_all_strong(self):
        assert set(self.run_tags(0.0)) == {"2opt"}

    def test_rho_one_is_all_weak(self):
        assert set(self.run_tags(1.0)) == {"shuffle"}

    def test_rho_half_frequency(self):
        task = TspTask.random(6, seed=9)
        op = build_operator(self.spec(0.5), task)
        parents = [(task.canonical(list(range(6))), -5.0)]
        weak = 0
        draws = 10_000
        for a in range(draws):
            out = op.propose(req_for(task, parents, seed=(2, 1, a)))
            weak += out.tag == "shuffle"
        assert abs(weak / draws - 0.5) <= 0.02

    def test_label_encodes_mixture(self):
        assert "rho0.25" in self.spec(0.25).label()

    def test_validation(self):
        with pytest.raises(ValueError):
            OperatorSpec(kind="mixed", rho=0.5).validate()
        with pytest.raises(ValueError):
            self.spec(1.5).validate()
        with pytest.raises(ValueError):
            OperatorSpec(kind="llm").validate()
        with pytest.raises(ValueError):
            OperatorSpec(kind="nonsense").validate()


class TestExtractGenome:
    def test_tour_from_json_object(self):
        task = square_task()
        text = 'Here you go: {"genome": "[0, 2, 1, 3]"} as requested.'
        assert extract_genome(text, task) == [0, 2, 1, 3]

    def test_tour_from_json_list_value(self):
        task = square_task()
        text = '{"genome": [0, 2, 1, 3]}'
        assert extract_genome(text, task) == [0, 2, 1, 3]

    def test_tour_from_bare_bracket_list(self):
        task = square_task()
        assert extract_genome("The best route is [3, 1, 0, 2].", task) == [3, 1, 0, 2]

    def test_expression_from_fenced_return(self):
        task = SymregTask(SymregDataset.from_expression("x + v", ("x", "v"), seed=0))
        text = "```python\ndef equation(x, v):\n    return x + v\n```"
        genome = extract_genome(text, task)
        assert expr.canonicalize(genome) == "v+x"

    def test_expression_python_spellings_normalised(self):
        task = SymregTask(SymregDataset.from_expression("x", ("x",), seed=0))
        genome = extract_genome("return np.sin(x) + x**2", task)
        assert expr.canonicalize(genome) == "sin(x)+x^2"

    def test_empty_reply_fails(self):
        task = square_task()
        with pytest.raises(InvalidGenomeError):
            extract_genome("", task)
        with pytest.raises(InvalidGenomeError):
            extract_genome("no genome here", task)

    def test_invalid_tour_inside_json_fails(self):
        task = square_task()
        with pytest.raises(InvalidGenomeError):
            extract_genome('{"genome": "[0, 1, 2, 2]"}', task)


class TestMutateWrapper:
    def test_one_shot_dispatch(self):
        task = square_task()
        out = mutate(
            OperatorSpec(kind="scripted-2opt"),
            req_for(task, [(task.canonical([0, 1, 2, 3]), -4.8)]),
            task,
        )
        assert out.genome == [0, 2, 1, 3]
