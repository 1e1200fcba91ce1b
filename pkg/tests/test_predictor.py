from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

import src.predictor.model as predictor_model
from src.autograd import ops
from src.autograd.gradcheck import check_gradients
from src.autograd.tensor import Tape, Tensor, no_grad
from src.common import read_rows
from src.errors import ContractError, DimensionError, TrainingError
from src.ogm.augment import renormalize_trajectory, travel_heading
from src.ogm.dataset import CodeSequence, SequenceSample
from src.predictor.attention import CausalStack
from src.predictor.conditioning import Conditioning
from src.predictor.model import (
    LatentSource,
    PredictorConfig,
    RolloutMode,
    VariationalPredictor,
    elbo_loss,
    extrapolate,
    gaussian_kl,
    inference_net,
    predict_step,
    rollout,
)
from src.predictor.patches import PatchSpec, patchify, positional_encoding, unpatchify
from src.predictor.schedule import AnnealSchedule
from src.predictor.train import (
    LOSS_COLUMNS,
    TrainSettings,
    encode_dataset,
    evaluation_loss,
    load_predictor,
    make_batch,
    save_predictor,
    train_predictor,
    write_losses,
)
from src.representation.model import GaussianPosterior, VaeGan, VaeGanConfig
from src.scene.world import build_world, planned_trajectory
from src.scene.world import step as advance_world

TOY = PredictorConfig.from_preset("tiny", code_shape=(4, 4, 4), grid_size=16, t_obs=2, t_fut=3)
TOY_TRAIN = TrainSettings(steps=3, batch=2, lr=1e-3)
FLAT = AnnealSchedule(0.1, 0.1, 0, 0)


def _cond(rng, n: int, frames: int, size: int = 16) -> Conditioning:
    traj = np.zeros((n, frames, 3))
    traj[:, :, 0] = np.arange(frames) * 1.5
    traj[:, :, 1] = rng.normal(0, 0.1, size=(n, frames)).cumsum(axis=1)
    traj[:, 0, :2] = 0.0
    return Conditioning(
        maps=rng.integers(0, 2, size=(n, frames, 3, size, size)).astype(np.uint8),
        trajectory=traj,
        location=np.eye(3)[rng.integers(3, size=n)],
        aug=np.eye(6)[rng.integers(6, size=n)],
    )


def _codes(rng, n: int, frames: int) -> np.ndarray:
    return rng.standard_normal((n, frames, 4, 4, 4))


def _sequences(rng, n: int = 3, frames: int = 5) -> list[CodeSequence]:
    cond = _cond(rng, n, frames)
    codes = _codes(rng, n, frames)
    return [
        CodeSequence(codes[i], cond.maps[i], cond.trajectory[i], int(cond.location[i].argmax()), int(cond.aug[i].argmax()), 2, frames - 2)
        for i in range(n)
    ]


@pytest.fixture
def model(rng) -> VariationalPredictor:
    return VariationalPredictor(TOY, rng)


class TestPatches:
    def test_round_trip(self, rng):
        for _ in range(100):
            k = int(rng.choice([1, 4, 16]))
            side = int(rng.choice([4, 8]))
            spec = PatchSpec(k, int(rng.integers(1, 5)), side, side)
            z = Tensor(rng.standard_normal((int(rng.integers(1, 4)), *spec.code_shape)))
            assert np.array_equal(unpatchify(patchify(z, spec), spec).data, z.data)

    def test_full_scale_token_length(self, rng):
        spec = PatchSpec(4, 64, 4, 4)
        tokens = patchify(Tensor(rng.standard_normal((64, 4, 4))), spec)
        assert tokens.shape == (1, 4, 256)

    def test_single_patch_is_flatten(self, rng):
        z = rng.standard_normal((3, 4, 4))
        tokens = patchify(Tensor(z), PatchSpec(1, 3, 4, 4))
        assert np.array_equal(tokens.data[0, 0], z.reshape(-1))

    def test_row_major_quadrants(self, rng):
        z = rng.standard_normal((2, 4, 4))
        tokens = patchify(Tensor(z), PatchSpec(4, 2, 4, 4)).data[0]
        assert np.array_equal(tokens[1], z[:, 0:2, 2:4].reshape(-1))
        assert np.array_equal(tokens[2], z[:, 2:4, 0:2].reshape(-1))

    @pytest.mark.parametrize("k", [2, 3, 9])
    def test_bad_patch_count(self, k):
        with pytest.raises(ContractError):
            PatchSpec(k, 8, 4, 4)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            patchify(Tensor(np.zeros((2, 4, 4))), PatchSpec(4, 3, 4, 4))


class TestPositionalEncoding:
    def test_origin_alternates(self):
        assert np.array_equal(positional_encoding(0, 8), np.array([0.0, 1.0] * 4))

    def test_first_entry(self):
        assert positional_encoding(1, 16)[0] == pytest.approx(0.8415, abs=1e-4)

    def test_bounded(self):
        for t in range(0, 200, 7):
            assert np.all(np.abs(positional_encoding(t, 32)) <= 1.0)

    def test_odd_dim(self):
        with pytest.raises(ContractError):
            positional_encoding(3, 7)


class TestAttention:
    def test_appended_groups_leave_earlier_outputs(self, rng):
        stack = CausalStack(2, 8, 2, 16, rng)
        groups = [Tensor(rng.standard_normal((2, 3, 8))) for _ in range(2)]
        garbage = Tensor(rng.standard_normal((2, 3, 8)) * 1e3)
        with no_grad():
            short = stack.run(groups)
            long = stack.run([*groups, garbage])
        for a, b in zip(short, long[:2]):
            assert np.array_equal(a.data, b.data)

    def test_within_step_permutation(self, rng):
        stack = CausalStack(2, 8, 2, 16, rng)
        x = rng.standard_normal((1, 4, 8))
        perm = np.array([2, 0, 3, 1])
        with no_grad():
            out = stack.run([Tensor(x)])[0].data
            out_perm = stack.run([Tensor(x[:, perm])])[0].data
        assert np.allclose(out_perm, out[:, perm], rtol=0, atol=1e-12)

    def test_gradient_check(self, rng):
        stack = CausalStack(1, 8, 2, 16, rng, cross_dim=4)
        groups = [Tensor(rng.standard_normal((1, 2, 8))) for _ in range(2)]
        latents = [Tensor(rng.standard_normal((1, 1, 4))) for _ in range(2)]
        weights = [Tensor(rng.standard_normal((1, 2, 8))) for _ in range(2)]

        def loss() -> Tensor:
            outs = stack.run(groups, latents)
            return ops.reduce_sum(outs[0] * weights[0]) + ops.reduce_sum(outs[1] * weights[1])

        assert check_gradients(loss, stack.parameters() + groups, max_per_tensor=3) < 1e-4

    def test_missing_latent(self, rng):
        stack = CausalStack(1, 8, 2, 16, rng, cross_dim=4)
        with pytest.raises(DimensionError):
            stack(Tensor(np.zeros((1, 2, 8))), stack.new_cache())


class TestConditioning:
    def test_renormalize_follows_direction_of_travel(self):
        traj = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, 2.0, 0.0]])
        rel = renormalize_trajectory(traj, 1)
        assert np.array_equal(rel[1], np.zeros(3))
        assert np.allclose(rel[3], [2.0, 0.0, 0.0], atol=1e-12)
        assert np.allclose(rel[0], [0.0, 1.0, 0.0], atol=1e-12)

    def test_renormalize_keeps_z(self):
        traj = np.array([[0.0, 0.0, 0.5], [1.0, 0.0, 0.25], [2.0, 0.0, -1.0]])
        assert np.array_equal(renormalize_trajectory(traj, 1)[:, 2], traj[:, 2])

    def test_travel_heading_skips_standing_still(self):
        traj = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
        assert travel_heading(traj, 0) == pytest.approx(math.pi / 2)
        assert travel_heading(traj, 2) == pytest.approx(math.pi / 2)
        assert travel_heading(np.zeros((3, 3)), 1) == 0.0

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_window_matches_simulator_on_fork(self, seed):
        state = build_world("fork", seed)
        full = planned_trajectory(state, 100)
        assert abs(travel_heading(full, 90)) == pytest.approx(math.pi / 6, abs=1e-6)
        cond = Conditioning(
            maps=np.zeros((1, 100, 3, 4, 4), dtype=np.uint8),
            trajectory=full[None],
            location=np.eye(3)[[2]],
            aug=np.eye(6)[[0]],
        )
        for start in range(0, 81, 5):
            expected = planned_trajectory(state, 20)
            assert np.allclose(cond.window(start, 20).trajectory[0], expected, atol=1e-9), start
            for _ in range(5):
                state = advance_world(state)

    def test_window_slices_and_reanchors(self, rng):
        cond = _cond(rng, 2, 6)
        win = cond.window(2, 3)
        assert win.frames == 3 and win.maps.shape[1] == 3
        assert np.array_equal(win.maps, cond.maps[:, 2:5])
        assert np.allclose(win.trajectory[:, 0], 0.0)
        hop = np.linalg.norm(cond.trajectory[:, 3, :2] - cond.trajectory[:, 2, :2], axis=1)
        assert np.allclose(win.trajectory[:, 1, 0], hop)
        assert np.allclose(win.trajectory[:, 1, 1], 0.0, atol=1e-12)

    def test_window_past_end(self, rng):
        with pytest.raises(ContractError):
            _cond(rng, 1, 4).window(2, 3)

    def test_mismatched_inputs(self, rng):
        cond = _cond(rng, 2, 4)
        with pytest.raises(DimensionError):
            replace(cond, maps=cond.maps[:, :3])

    def test_dropout_hook(self, model, rng):
        bundle = model.encode_conditioning(_cond(rng, 3, 5), TOY.t_obs)
        assert bundle.dropped(rng, 0.0) is bundle
        gone = bundle.dropped(rng, 1.0)
        for t in (gone.map_tokens, gone.traj_tokens, gone.location_token, gone.aug_token):
            assert t is not None and not np.any(t.data)

    def test_disabled_families(self, rng):
        cfg = replace(TOY, use_map=False, use_traj=False)
        bundle = VariationalPredictor(cfg, rng).encode_conditioning(_cond(rng, 1, 5), cfg.t_obs)
        assert bundle.map_tokens is None and bundle.traj_tokens is None
        assert len(bundle.prefix_tokens()) == 2


class TestInferenceNets:
    def test_sigma_positive(self, model, rng):
        codes, cond = _codes(rng, 2, 5) * 50, _cond(rng, 2, 5)
        for source in LatentSource:
            for step in range(4):
                assert np.all(inference_net(model, source, codes, cond, step).sigma > 0)

    def test_visibility(self, model, rng):
        codes, cond = _codes(rng, 1, 5), _cond(rng, 1, 5)
        changed = codes.copy()
        changed[:, 3] += 1.0
        with no_grad():
            prior_a = inference_net(model, LatentSource.PRIOR, codes, cond, 3)
            prior_b = inference_net(model, LatentSource.PRIOR, changed, cond, 3)
            post_a = inference_net(model, LatentSource.POSTERIOR, codes, cond, 3)
            post_b = inference_net(model, LatentSource.POSTERIOR, changed, cond, 3)
        assert np.array_equal(prior_a.mu.data, prior_b.mu.data)
        assert np.array_equal(prior_a.log_var.data, prior_b.log_var.data)
        assert not np.array_equal(post_a.mu.data, post_b.mu.data)

    def test_prior_start_token(self, model, rng):
        with no_grad():
            dist = inference_net(model, LatentSource.PRIOR, _codes(rng, 1, 2), _cond(rng, 1, 2), 0)
        assert dist.mu.shape == (1, model.latent_dim)

    def test_deterministic_model_has_none(self, rng):
        det = VariationalPredictor(replace(TOY, stochastic=False), rng)
        assert not hasattr(det, "prior")
        with pytest.raises(ContractError):
            inference_net(det, LatentSource.PRIOR, _codes(rng, 1, 3), _cond(rng, 1, 3), 1)


class TestKl:
    def _gauss(self, mu: float, log_var: float) -> GaussianPosterior:
        return GaussianPosterior(Tensor(np.full((2, 3), mu)), Tensor(np.full((2, 3), log_var)))

    def test_unit_shift(self):
        assert np.allclose(gaussian_kl(self._gauss(1.0, 0.0), self._gauss(0.0, 0.0)).data, 0.5)

    def test_identical(self):
        assert not np.any(gaussian_kl(self._gauss(0.3, -1.0), self._gauss(0.3, -1.0)).data)

    def test_non_negative(self, rng):
        for _ in range(50):
            q = GaussianPosterior(Tensor(rng.standard_normal(6) * 2), Tensor(rng.standard_normal(6) * 2))
            p = GaussianPosterior(Tensor(rng.standard_normal(6) * 2), Tensor(rng.standard_normal(6) * 2))
            assert np.all(gaussian_kl(q, p).data >= -1e-12)


class TestRollout:
    def test_single_step_matches_predict_step(self, model, rng):
        observed, cond = _codes(rng, 2, 2), _cond(rng, 2, 3)
        with no_grad():
            result = rollout(model, observed, cond, 1, np.random.default_rng(3))
            direct = predict_step(model, observed, result.latents[0].value, cond)
        assert result.codes.shape == (2, 1, 4, 4, 4)
        assert np.array_equal(result.codes.data[:, 0], direct.data)

    def test_predict_step_is_deterministic(self, model, rng):
        observed, cond = _codes(rng, 1, 2), _cond(rng, 1, 3)
        s = rng.standard_normal((1, model.latent_dim))
        with no_grad():
            a = predict_step(model, observed, s, cond)
            b = predict_step(model, observed, s, cond)
        assert a.shape == (1, 4, 4, 4) and np.array_equal(a.data, b.data)

    def test_seeded_rollout_repeats(self, model, rng):
        observed, cond = _codes(rng, 2, 2), _cond(rng, 2, 5)
        with no_grad():
            a = rollout(model, observed, cond, 3, np.random.default_rng(9))
            b = rollout(model, observed, cond, 3, np.random.default_rng(9))
            c = rollout(model, observed, cond, 3, np.random.default_rng(10))
        assert np.array_equal(a.codes.data, b.codes.data)
        assert not np.array_equal(a.codes.data, c.codes.data)
        assert [lat.source for lat in a.latents] == [LatentSource.PRIOR] * 3

    def test_posterior_teacher_uses_posterior(self, model, rng):
        codes, cond = _codes(rng, 1, 5), _cond(rng, 1, 5)
        with no_grad():
            result = rollout(model, codes[:, :2], cond, 3, rng, RolloutMode.POSTERIOR_TEACHER, targets=codes)
        assert [lat.source for lat in result.latents] == [LatentSource.POSTERIOR] * 3
        assert len(result.kl) == 3

    def test_posterior_teacher_needs_targets(self, model, rng):
        with pytest.raises(ContractError):
            rollout(model, _codes(rng, 1, 2), _cond(rng, 1, 5), 3, rng, "posterior_teacher")

    def test_zero_steps(self, model, rng):
        with pytest.raises(ContractError):
            rollout(model, _codes(rng, 1, 2), _cond(rng, 1, 5), 0, rng)

    def test_deterministic_variant_ignores_rng(self, rng):
        det = VariationalPredictor(replace(TOY, stochastic=False), rng)
        observed, cond = _codes(rng, 1, 2), _cond(rng, 1, 5)
        with no_grad():
            a = rollout(det, observed, cond, 3, np.random.default_rng(1))
            b = rollout(det, observed, cond, 3, np.random.default_rng(2))
        assert np.array_equal(a.codes.data, b.codes.data) and not a.latents


class TestExtrapolate:
    def test_one_window_equals_rollout(self, model, rng):
        observed, cond = _codes(rng, 2, 2), _cond(rng, 2, 5)
        with no_grad():
            windowed = extrapolate(model, observed, cond, TOY.t_fut, np.random.default_rng(4))
            direct = rollout(model, observed, cond, TOY.t_fut, np.random.default_rng(4))
        assert np.array_equal(windowed.data, direct.codes.data)

    def test_thirty_frames_in_two_windows(self, rng, monkeypatch):
        cfg = replace(TOY, t_obs=5, t_fut=15)
        model = VariationalPredictor(cfg, rng)
        calls: list[int] = []
        real = predictor_model.rollout

        def counting(*args, **kwargs):
            calls.append(args[3])
            return real(*args, **kwargs)

        monkeypatch.setattr(predictor_model, "rollout", counting)
        with no_grad():
            out = extrapolate(model, _codes(rng, 1, 5), _cond(rng, 1, 35), 30, rng)
        assert out.shape == (1, 30, 4, 4, 4)
        assert calls == [15, 15]

    def test_partial_last_window(self, model, rng):
        with no_grad():
            out = extrapolate(model, _codes(rng, 1, 2), _cond(rng, 1, 9), 7, rng)
        assert out.shape == (1, 7, 4, 4, 4)

    def test_seeded(self, model, rng):
        observed, cond = _codes(rng, 1, 2), _cond(rng, 1, 8)
        with no_grad():
            a = extrapolate(model, observed, cond, 6, np.random.default_rng(0))
            b = extrapolate(model, observed, cond, 6, np.random.default_rng(0))
        assert np.array_equal(a.data, b.data)

    def test_short_conditioning(self, model, rng):
        with pytest.raises(ContractError):
            extrapolate(model, _codes(rng, 1, 2), _cond(rng, 1, 7), 6, rng)


class TestElbo:
    def test_perfect_prediction_has_zero_recon(self, rng):
        det = VariationalPredictor(replace(TOY, stochastic=False), rng)
        det.head.weight.data[:] = 0.0
        det.head.bias.data[:] = 0.0
        codes = np.broadcast_to(rng.standard_normal((1, 1, 4, 4, 4)), (1, 5, 4, 4, 4)).copy()
        with no_grad():
            loss = elbo_loss(det, codes, _cond(rng, 1, 5), 0.5, rng)
        assert loss.recon == 0.0 and loss.kl == 0.0

    def test_total_combines_parts(self, model, rng):
        with no_grad():
            loss = elbo_loss(model, _codes(rng, 2, 5), _cond(rng, 2, 5), 0.3, rng)
        assert loss.kl >= 0.0
        assert loss.total.item() == pytest.approx(loss.recon + 0.3 * loss.kl, rel=1e-12)

    def test_recon_alone_leaves_prior_untouched(self, model, rng):
        with Tape() as tape:
            loss = elbo_loss(model, _codes(rng, 2, 5), _cond(rng, 2, 5), 0.0, rng)
        tape.backward(loss.total)
        prior_grads = [p.grad for p in model.prior.parameters()]
        assert all(g is None or not np.any(g) for g in prior_grads)
        assert any(p.grad is not None and np.any(p.grad) for p in model.posterior.parameters())

    def test_too_few_frames(self, model, rng):
        with pytest.raises(ContractError):
            elbo_loss(model, _codes(rng, 1, 2), _cond(rng, 1, 2), 0.1, rng)


class TestAnnealSchedule:
    def test_default_endpoints(self):
        sched = AnnealSchedule()
        per_epoch = 100
        warm = sched.warmup_steps(per_epoch)
        assert sched.beta(warm, per_epoch) == 2e-6
        assert sched.beta(warm + 50_000, per_epoch) == 0.2
        assert sched.beta(warm + 25_000, per_epoch) == pytest.approx(0.1, abs=1e-5)

    def test_non_decreasing(self):
        sched = AnnealSchedule(ramp_steps=500)
        values = [sched.beta(step, 10) for step in range(0, 1000, 3)]
        assert all(a <= b for a, b in zip(values, values[1:]))

    def test_bad_range(self):
        with pytest.raises(ValueError):
            AnnealSchedule(beta_start=0.5, beta_end=0.1)


class TestTraining:
    def test_loss_curve_is_seeded(self, rng):
        seqs = _sequences(rng)
        a = train_predictor(seqs, TOY, FLAT, TOY_TRAIN, seed=2)
        b = train_predictor(seqs, TOY, FLAT, TOY_TRAIN, seed=2)
        assert a.losses == b.losses and len(a.losses) == TOY_TRAIN.steps
        assert all(row["beta"] == 0.1 for row in a.losses)

    def test_deterministic_variant_logs_no_kl(self, rng):
        run = train_predictor(_sequences(rng), replace(TOY, stochastic=False), FLAT, TOY_TRAIN)
        assert all(row["kl"] == 0.0 and row["beta"] == 0.0 for row in run.losses)

    def test_non_finite_loss_aborts(self, rng):
        seqs = _sequences(rng)
        for s in seqs:
            s.codes[3, 0, 0, 0] = np.nan
        with pytest.raises(TrainingError) as info:
            train_predictor(seqs, TOY, FLAT, TOY_TRAIN)
        assert info.value.step == 1

    def test_checkpoint_and_loss_log(self, rng, tmp_path):
        seqs = _sequences(rng)
        run = train_predictor(seqs, TOY, FLAT, TOY_TRAIN)
        again = load_predictor(save_predictor(tmp_path / "predictor.ckpt", run.model), TOY)
        assert evaluation_loss(again, seqs) == evaluation_loss(run.model, seqs)
        rows = read_rows(write_losses(tmp_path / "predictor_losses.csv", run))
        assert tuple(rows[0].keys()) == LOSS_COLUMNS and len(rows) == TOY_TRAIN.steps

    def test_short_sequences_rejected(self, rng):
        with pytest.raises(ContractError):
            make_batch(_sequences(rng, frames=4), 5)

    def test_encode_dataset(self, rng):
        vae = VaeGan(VaeGanConfig(grid_size=16, latent_channels=4, latent_size=4, width=4, max_width=8), rng)
        sample = SequenceSample(
            grids=rng.random((5, 16, 16)),
            maps=np.zeros((5, 3, 16, 16), dtype=np.uint8),
            trajectory=np.zeros((5, 3)),
            location=1,
            aug=2,
            t_obs=2,
            t_fut=3,
        )
        (seq,) = encode_dataset(vae, [sample])
        assert seq.codes.shape == (5, 4, 4, 4)
        assert (seq.location, seq.aug, seq.t_obs, seq.t_fut) == (1, 2, 2, 3)


@pytest.mark.slow
class TestTrainingAcceptance:
    def test_single_sequence_overfit(self, rng):
        seqs = _sequences(rng, n=1)
        settings = TrainSettings(steps=5000, batch=1, lr=1e-3, weight_decay=0.0, grad_clip=0.0)
        run = train_predictor(seqs, replace(TOY, stochastic=False), FLAT, settings)
        assert run.column("recon")[-100:].min() < 1e-4

    def test_kl_collapses_on_deterministic_data(self, rng):
        seqs = _sequences(rng, n=4)
        settings = TrainSettings(steps=1500, batch=4, lr=1e-3)
        run = train_predictor(seqs, TOY, AnnealSchedule(0.2, 0.2, 0, 0), settings)
        _, kl = evaluation_loss(run.model, seqs)
        assert kl / TOY.t_fut < 0.1
