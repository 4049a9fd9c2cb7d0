import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from auxnas import archnet, trainer
from auxnas import autodiff as ad
from auxnas.archnet import BranchSpec
from auxnas.autodiff import Tensor
from auxnas.exceptions import ConfigurationError, ContractViolation
from auxnas.taskgen import iterate_indices
from auxnas.trainer import LambdaSchedule, Optimizer, TrainConfig


def _data(rng, n=64, d=5, K=1):
    x = rng.normal(size=(n, d))
    return x, [np.tanh(x[:, :1] * (k + 1)) + 0.1 * rng.normal(size=(n, 1)) for k in range(K + 1)]


def _nas(n_layers=2, width=5, K=1, seed=0, d=5):
    s = BranchSpec((width,) * n_layers)
    return archnet.build(s, [s] * K, d, "aux_nas", seed=seed)


def test_nas_objective_example():
    alphas = [Tensor(0.5) for _ in range(6)]
    out = trainer.nas_objective(Tensor(1.0), Tensor(2.0), alphas, 100.0)
    assert float(out.data) == 1.0 + 2.0 + 300.0


def test_nas_objective_rejects_negative_lambda():
    with pytest.raises(ContractViolation):
        trainer.nas_objective(Tensor(1.0), None, [], -1.0)


def test_lambda_schedule_linear_ramp():
    s = LambdaSchedule(100.0, 11)
    assert [s(i) for i in (0, 5, 10, 50)] == [0.0, 50.0, 100.0, 100.0]
    assert LambdaSchedule(3.0, 10, shape="constant")(0) == 3.0


@pytest.mark.parametrize("kw", [dict(optimizer="rmsprop"), dict(ramp="cosine"), dict(lr_schedule="step"), dict(epochs=-1),
                                dict(batch_size=1), dict(lr_w=-1.0), dict(lambda_end=-2.0)])
def test_train_config_validation(kw):
    with pytest.raises(ConfigurationError):
        TrainConfig(**kw)


def test_cosine_lr_factor():
    assert trainer.lr_factor("constant", 7, 10) == 1.0
    assert trainer.lr_factor("cosine", 0, 10) == 1.0
    assert trainer.lr_factor("cosine", 5, 10) == pytest.approx(0.5)
    assert trainer.lr_factor("cosine", 10, 10) == pytest.approx(0.0)


def test_cosine_schedule_decays_the_weight_learning_rate(rng, monkeypatch):
    x, y = _data(rng, n=64)
    seen = []

    class Spy(Optimizer):
        def step(self, store, grads, names):
            seen.append(self.lr)
            super().step(store, grads, names)

    monkeypatch.setattr(trainer, "Optimizer", Spy)
    s = BranchSpec((4,))
    trainer.train(archnet.build(s, [], 5, "single"), x, y[:1],
                  TrainConfig(epochs=2, batch_size=8, lr_schedule="cosine", lr_w=0.1))
    assert seen[0] == 0.1 and all(b < a for a, b in zip(seen, seen[1:]))
    assert len(seen) == 16


class RecordingOptimizer(Optimizer):
    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.seen = []

    def step(self, store, grads, names):
        self.seen.append(tuple(names))
        super().step(store, grads, names)


def test_alternate_step_updates_disjoint_groups(rng):
    net = _nas()
    x, y = _data(rng)
    opt_w, opt_a = RecordingOptimizer(lr=0.1), RecordingOptimizer(lr=0.1)
    before = net.params.copy()
    trainer.alternate_step(net, x, y, np.arange(8), np.arange(8, 16), opt_w, opt_a, 1.0)
    w_names, a_names = set(opt_w.seen[0]), set(opt_a.seen[0])
    alphas = set(net.params.names("alpha_P") + net.params.names("alpha_A"))
    assert a_names == alphas and w_names.isdisjoint(alphas)
    assert w_names | a_names == set(net.params.names())
    # the w-step leaves every alpha alone, so only the alpha-step moved them
    changed = {n for n in net.params.names() if not np.array_equal(net.params[n], before[n])}
    assert changed & alphas and changed - alphas


def test_alternate_step_rejects_overlap_and_other_modes(rng):
    x, y = _data(rng)
    net = _nas()
    with pytest.raises(ContractViolation, match="overlap"):
        trainer.alternate_step(net, x, y, np.arange(8), np.arange(7, 15), Optimizer(), Optimizer(), 0.0)
    g = archnet.build(BranchSpec((5,)), [BranchSpec((5,))], 5, "aux_g")
    with pytest.raises(ContractViolation):
        trainer.alternate_step(g, x, y, np.arange(8), np.arange(8, 16), Optimizer(), Optimizer(), 0.0)


def test_alphas_are_clamped_to_unit_interval(rng):
    net = _nas()
    x, y = _data(rng)
    trainer.alternate_step(net, x, y, np.arange(8), np.arange(8, 16), Optimizer(lr=0.0),
                           Optimizer(lr=1e3), 1e3)
    for n in net.params.names("alpha_P") + net.params.names("alpha_A"):
        assert 0.0 <= float(net.params[n]) <= 1.0
    assert all(float(net.params[n]) == 0.0 for n in net.params.names("alpha_P"))


def test_pruning_pressure_drives_alpha_p_down(rng):
    x, y = _data(rng, n=256)
    net = _nas()
    rep = trainer.train(net, x, y, TrainConfig(epochs=6, lambda_end=50.0, lr_alpha=0.05))
    assert max(trainer.final_alpha_p(rep)) < 0.02
    assert rep.final_lambda == 50.0


def test_lambda_zero_leaves_alpha_p_open(rng):
    x, y = _data(rng, n=256)
    rep = trainer.train(_nas(), x, y, TrainConfig(epochs=6, lambda_end=0.0))
    assert np.mean(trainer.final_alpha_p(rep)) > 0.1


def test_logged_r_is_lambda_times_alpha_sum(rng):
    x, y = _data(rng, n=128)
    net = _nas()
    rep = trainer.train(net, x, y, TrainConfig(epochs=2))
    last = rep.steps[-1]
    expected = last["lambda"] * sum(trainer.final_alpha_p(rep))
    assert abs(last["R"] - expected) <= 1e-12
    assert rep.final_R == last["R"]


def test_training_is_deterministic(rng):
    x, y = _data(rng, n=96)
    texts, params = [], []
    for _ in range(2):
        net = _nas(seed=3)
        rep = trainer.train(net, x, y, TrainConfig(epochs=2, seed=9))
        texts.append(rep.csv_text())
        params.append(archnet.to_dict(net))
    assert texts[0] == texts[1] and params[0] == params[1]
    assert texts[0].splitlines()[1].endswith(",")  # wall time left blank


@pytest.mark.parametrize("mode", ["aux_nas", "aux_g"])
def test_zero_learning_rate_is_a_fixed_point(mode, rng):
    x, y = _data(rng, n=64)
    s = BranchSpec((4, 4))
    net = archnet.build(s, [s], 5, mode)
    before = archnet.to_dict(net)
    trainer.train(net, x, y, TrainConfig(epochs=1, lr_w=0.0, lr_alpha=0.0, lambda_end=0.0))
    after = archnet.to_dict(net)
    # weights do not move; BN running statistics still update
    key = lambda d: {p["name"]: p for p in d["params"]}  # noqa: E731
    assert key(before) == key(after)


def test_freeze_alpha_p_keeps_aux_features_out(rng):
    x, y = _data(rng, n=128)
    net = _nas()
    rep = trainer.train(net, x, y, TrainConfig(epochs=2, freeze_alpha_p=True, lambda_end=0.0))
    assert max(trainer.final_alpha_p(rep)) == 0.0


def test_proximal_variant_also_prunes(rng):
    x, y = _data(rng, n=256)
    rep = trainer.train(_nas(), x, y, TrainConfig(epochs=6, lambda_end=50.0, proximal=True))
    assert max(trainer.final_alpha_p(rep)) < 0.02


def test_pruned_network_cannot_train(rng):
    x, y = _data(rng)
    net = archnet.prune(archnet.hard_zero_alpha_p(_nas()))
    with pytest.raises(ContractViolation):
        trainer.train(net, x, y[:1], TrainConfig(epochs=1))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported(rng):
    from auxnas.exceptions import TrainingDiverged
    x, y = _data(rng, n=64)
    y = [t * 1e200 for t in y]
    net = _nas()
    with pytest.raises(TrainingDiverged) as info:
        trainer.train(net, x, y, TrainConfig(epochs=3, lr_w=10.0))
    assert info.value.snapshot is not None


@settings(max_examples=20)
@given(n=st.integers(4, 300), b=st.integers(2, 40), seed=st.integers(0, 10**6))
def test_disjoint_pairs_never_share_samples(n, b, seed):
    if b > n // 2:
        with pytest.raises(ContractViolation):
            iterate_indices(n, b, seed, disjoint_pairs=True)
        return
    pairs = iterate_indices(n, b, seed, disjoint_pairs=True)
    seen = np.concatenate([np.concatenate(p) for p in pairs])
    assert len(seen) == len(set(seen.tolist())) == len(pairs) * 2 * b
    assert all(len(w) == len(a) == b for w, a in pairs)


def test_alpha_step_budget():
    assert trainer.alpha_step_budget(4000 * 8 // 10, TrainConfig(epochs=46)) == 46 * 50


def test_monitor_convergence_examples():
    rep = trainer.TrainReport("aux_nas", final_alphas={"alpha.aux0:0->pri:1": 0.01,
                                                       "alpha.pri:0->aux0:1": 0.7})
    ok = trainer.monitor_convergence(rep)
    assert ok.passed and ok.max_alpha_p == 0.01 and ok.alpha_a["mean"] == 0.7
    bad = trainer.TrainReport("aux_nas", final_alphas={"alpha.aux0:0->pri:1": 0.03})
    res = trainer.monitor_convergence([rep, bad])
    assert not res.passed and res.max_alpha_p == 0.03
    with pytest.raises(ContractViolation):
        trainer.monitor_convergence([])


def test_objective_parts_agree_with_root(rng):
    x, y = _data(rng, n=16)
    net = _nas()
    tape = ad.Tape()
    root, parts = trainer.objective(net, x, y, 2.0, tape)
    assert abs(float(root.data) - (parts["L_P"] + parts["L_A"] + parts["R"])) < 1e-12
