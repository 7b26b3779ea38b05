import math

import numpy as np
import pytest

from lastraj.errors import ConfigError, NumericalAbort
from lastraj.nn import autodiff as ad
from lastraj.nn.autodiff import Tape, Tensor
from lastraj.nn.models import Rollout
from lastraj.sampling import SamplerConfig
from lastraj.training import (
    LossProfile,
    ProfileKind,
    Trainer,
    TrainerConfig,
    anneal_temperature,
    batch_time_losses,
    discriminator_loss,
    evaluate_generator,
    feature_matching_loss,
    generator_adv_loss,
    time_alignment_losses,
    train,
)

from conftest import traj
from tiny import model_config_for, tiny_world_dataset

STD = LossProfile.make("Standard")


def test_time_losses_examples():
    real = traj([(0, 2, 1), (1, 4, 1)])
    assert time_alignment_losses(real, real) == (0.0, 0.0)
    assert time_alignment_losses(real, traj([(0, 3, 1), (1, 3, 1)])) == (1.0, 0.0)
    long = traj([(0, 2, 1), (1, 9, 9), (2, 9, 9)])
    short = traj([(0, 5, 3)])
    assert time_alignment_losses(long, short) == (3.0, 2.0)


def fake_roll(intra, inter, lengths):
    intra, inter = np.asarray(intra, float), np.asarray(inter, float)
    b, w = intra.shape
    return Rollout(Tensor(np.zeros((b, w, 3))), Tensor(intra), Tensor(inter), np.zeros((b, w), int),
                   np.asarray(lengths), np.zeros(b, bool), np.zeros((b, 1)))


def test_batch_time_losses_match_pairwise_and_ignore_tail(rng):
    real = [traj([(0, 2, 1), (1, 4, 1), (1, 1, 1)]), traj([(0, 5, 3)])]
    intra = rng.random((2, 4)) * 6
    inter = rng.random((2, 4)) * 6
    lengths = [2, 4]
    li, le = batch_time_losses(real, fake_roll(intra, inter, lengths), 1.0)
    fakes = [traj(list(zip([0] * n, intra[i, :n], inter[i, :n]))) for i, n in enumerate(lengths)]
    pair = [time_alignment_losses(r, f) for r, f in zip(real, fakes)]
    assert abs(li.value - np.mean([p[0] for p in pair])) <= 1e-12
    assert abs(le.value - np.mean([p[1] for p in pair])) <= 1e-12
    intra[0, 2:] = 1e6
    intra[1, 1:] = -7
    li2, _ = batch_time_losses(real, fake_roll(intra, inter, lengths), 1.0)
    assert li2.value == li.value


def test_discriminator_loss_examples(rng):
    half = np.full(8, 0.5)
    assert abs(discriminator_loss(half, half, STD).value - 2 * math.log(2)) <= 1e-12
    perfect = discriminator_loss(np.ones(4), np.zeros(4), STD).value
    assert 0 < perfect <= 2 * 1.1e-7
    for _ in range(20):
        dr, df = rng.random(5), rng.random(5)
        ref = -sum(math.log(min(max(x, 1e-7), 1 - 1e-7)) for x in dr) / 5 - sum(
            math.log(min(max(1 - x, 1e-7), 1 - 1e-7)) for x in df) / 5
        assert abs(discriminator_loss(dr, df, STD).value - ref) <= 1e-10
    w = LossProfile.make("Wasserstein")
    assert discriminator_loss(np.array([2.0, 4.0]), np.array([1.0]), w).value == 1.0 - 3.0


def test_generator_loss_examples():
    assert abs(generator_adv_loss(np.full(4, 0.5), STD).value - math.log(2)) <= 1e-12
    f = np.arange(6.0).reshape(2, 3)
    assert feature_matching_loss(f, Tensor(f)).value == 0
    ta = LossProfile.make("TimeAligned", 2.0)
    assert ta.lambda_time * (0.5 + 0.25) == 1.5
    assert generator_adv_loss(np.array([1.0, 3.0]), LossProfile.make("Wasserstein")).value == -2.0


def test_profile_invariants():
    with pytest.raises(ConfigError):
        LossProfile(ProfileKind.STANDARD, 1.0)
    assert LossProfile.make("FeatureMatching", 5.0).lambda_time == 0
    with pytest.raises(ConfigError):
        LossProfile.make("Hinge")


def test_anneal():
    assert anneal_temperature(0.1, 0.5, 0.1) == 0.1
    assert anneal_temperature(1.5, 0.5, 0.1) == 0.75
    alpha = 0.7
    tau, steps = 1.5, 0
    while tau > 0.1:
        tau = anneal_temperature(tau, alpha, 0.1)
        steps += 1
    assert steps == math.ceil(math.log(0.1 / 1.5) / math.log(alpha))
    default = TrainerConfig()
    tau = default.tau_init
    for _ in range(17):
        tau = anneal_temperature(tau, default.anneal, default.tau_min)
    assert abs(tau - 0.1) <= 1e-12


def test_trainer_config_validation():
    with pytest.raises(ConfigError):
        TrainerConfig(epochs=19)
    with pytest.raises(ConfigError):
        TrainerConfig(tau_min=2.0)


def run(profile="TimeAligned", strategy="LAS", epochs=1, batches=2, seed=0, n=60, **kw):
    ds, _ = tiny_world_dataset(n)
    cfg = TrainerConfig(epochs=epochs, batch_size=8, lr=1e-3, batches_per_epoch=batches, seed=seed, **kw)
    return ds, train(ds, SamplerConfig(strategy, 3, 8, seed=seed), cfg, LossProfile.make(profile),
                     model_config_for(ds))


def test_zero_epochs_leaves_params():
    ds, _ = tiny_world_dataset()
    from lastraj.nn.models import build_models, item_meta_from_dataset

    models = build_models(model_config_for(ds), item_meta_from_dataset(ds), 0)
    before = (models[0].params.checksum(), models[1].params.checksum())
    res = train(ds, SamplerConfig("LAS", 3, 8), TrainerConfig(epochs=0), STD, models=models)
    assert len(res.history) == 0
    assert (res.generator.params.checksum(), res.discriminator.params.checksum()) == before


def test_one_epoch_two_batches():
    _, res = run(epochs=1, batches=2)
    assert len(res.history) == 2
    assert res.history.taus() == [1.5, 1.5]
    assert res.tau == anneal_temperature(1.5, TrainerConfig().anneal, 0.1)


@pytest.mark.parametrize("profile", ["Standard", "TimeAligned", "FeatureMatching", "Wasserstein"])
def test_profiles_run_and_bookkeeping(profile):
    ds, res = run(profile=profile, epochs=3, batches=3, patience=3)
    recs = res.history.records
    assert [r.update for r in recs] == list(range(len(recs)))
    taus = res.history.taus()
    assert all(a >= b for a, b in zip(taus, taus[1:])) and min(taus) >= 0.1
    assert all(np.isfinite(r.loss_g) and np.isfinite(r.loss_d) for r in recs)
    lines = res.history.to_csv().strip().split("\n")
    assert lines[0] == "update,epoch,bucket,loss_d,loss_adv,loss_intra,loss_inter,loss_fm,loss_g,tau"


def test_las_history_single_bucket_and_rs_none():
    ds, res = run(strategy="LAS", epochs=2, batches=3)
    assert all(r.bucket is not None for r in res.history.records)
    _, res = run(strategy="RS", epochs=2, batches=3)
    assert all(r.bucket is None for r in res.history.records)
    assert ",," in res.history.to_csv().split("\n")[1]


def make_trainer(profile="TimeAligned"):
    ds, _ = tiny_world_dataset()
    from lastraj.nn.models import build_models, item_meta_from_dataset

    gen, disc = build_models(model_config_for(ds), item_meta_from_dataset(ds), 0)
    return ds, Trainer(gen, disc, LossProfile.make(profile), TrainerConfig(lr=1e-2))


@pytest.mark.parametrize("profile", ["TimeAligned", "FeatureMatching", "Wasserstein"])
def test_steps_touch_only_their_own_params(profile):
    ds, tr = make_trainer(profile)
    real = list(ds.trajectories[:6])
    ctx = np.array([t.context for t in real])
    tape = Tape()
    with tape:
        roll = tr.gen.rollout(ctx, 1.0, tr.rng)
    g0, d0 = tr.gen.params.checksum(), tr.disc.params.checksum()
    tr.discriminator_step(real, ctx, roll)
    g1, d1 = tr.gen.params.checksum(), tr.disc.params.checksum()
    assert g1 == g0 and d1 != d0
    tr.generator_step(real, ctx, roll, tape)
    g2, d2 = tr.gen.params.checksum(), tr.disc.params.checksum()
    assert d2 == d1 and g2 != g1


def test_wasserstein_spectral_norms():
    ds, tr = make_trainer("Wasserstein")
    for k in range(10):
        real = list(ds.trajectories[k * 5:(k + 1) * 5])
        tr.iteration(real, 1.0)
        for name in tr.disc.critic_matrices():
            w = tr.disc.params[name].value
            assert np.linalg.norm(w.reshape(w.shape[0], -1), 2) <= 1 + 1e-3


def test_nan_abort_dumps(tmp_path):
    ds, _ = tiny_world_dataset()
    from lastraj.nn.models import build_models, item_meta_from_dataset

    gen, disc = build_models(model_config_for(ds), item_meta_from_dataset(ds), 0)
    disc.params["disc.out.b"].value[:] = np.nan
    with pytest.raises(NumericalAbort) as info:
        train(ds, SamplerConfig("RS", 3, 8), TrainerConfig(epochs=1, batches_per_epoch=2), STD,
              models=(gen, disc), dump_dir=tmp_path)
    assert info.value.dump_path.exists()


def test_early_stopping_patience():
    _, res = run(epochs=18, batches=1, patience=1)
    g = res.history.epoch_g_loss
    if res.history.stopped_early:
        assert g[-1] >= min(g[:-1])
    assert len(g) <= 18


def test_training_determinism():
    _, a = run(epochs=2, batches=2, seed=5)
    _, b = run(epochs=2, batches=2, seed=5)
    assert a.history.to_csv() == b.history.to_csv()
    assert a.generator.params.checksum() == b.generator.params.checksum()


def test_evaluate_generator_shapes():
    ds, res = run(epochs=1, batches=1)
    report, generated = evaluate_generator(res.generator, ds.trajectories[:10], 0.1, 0, ds.meta)
    assert len(generated) == 10 and len(report.rows) == 10
    assert all(0 <= r.ks <= 1 for r in report.rows)
