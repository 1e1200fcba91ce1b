from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from src.errors import ContractError, DimensionError, FormatError
from src.ogm.augment import apply_augmentation
from src.ogm.dataset import (
    AUGMENTATIONS,
    CodeSequence,
    SequenceSample,
    decode_dataset,
    read_codes,
    read_dataset,
    write_codes,
    write_dataset,
)
from src.ogm.generate import GenerationSettings, generate_sequences
from src.ogm.grid import L_FREE, L_HIT, Cell, GridSpec, embed_ternary, scan_to_grid, ternarize
from src.ogm.pgm import decode_pgm, encode_pgm, read_pgm, write_pgm_stack
from src.scene.lidar import LidarScan, beam_angles, scan_from_segments
from src.scene.world import build_world, planned_trajectory
from src.scene.world import step as advance_world


def _sigmoid(v: float) -> float:
    return 1.0 / (1.0 + np.exp(-v))


def _random_sample(rng: np.random.Generator, spec: GridSpec, t_obs: int = 2, t_fut: int = 3, alt: bool = False) -> SequenceSample:
    total = t_obs + t_fut
    grids = rng.random((total, *spec.shape)).astype(np.float32).astype(np.float64)
    trajectory = np.zeros((total, 3))
    trajectory[1:, :2] = rng.standard_normal((total - 1, 2))
    return SequenceSample(
        grids=grids,
        maps=rng.integers(0, 2, size=(total, 3, *spec.shape)).astype(np.uint8),
        trajectory=trajectory,
        location=int(rng.integers(3)),
        aug=int(rng.integers(len(AUGMENTATIONS))),
        t_obs=t_obs,
        t_fut=t_fut,
        alt_grids=grids[::-1].copy() if alt else None,
    )


class TestScanToGrid:
    def test_all_sentinel_frees_beams(self):
        spec = GridSpec(64, 64, 0.5)
        scan = LidarScan(beam_angles(16), np.full(16, np.inf), 30.0)
        grid = scan_to_grid(scan, spec)
        assert np.all(grid <= 0.5)
        assert grid[31, 32] < 0.5 and grid[0, 32] < 0.5
        assert np.any(grid == 0.5)

    def test_single_return_along_x(self):
        spec = GridSpec()
        scan = LidarScan(beam_angles(4), np.array([np.inf, np.inf, 10.0, np.inf]), 30.0)
        grid = scan_to_grid(scan, spec)
        hi, hj = (int(v) for v in spec.point_to_cell(10.0, 0.0))
        assert grid[hi, hj] > 0.9
        assert grid[hi, hj] == pytest.approx(_sigmoid(L_HIT))
        assert np.all(grid[:hi, hj] == 0.5)
        preceding = grid[hi + 1 : spec.height // 2, hj]
        assert np.all(preceding < 0.5)
        assert np.all(preceding <= _sigmoid(L_FREE) + 1e-12)

    def test_mirror_symmetric_scene(self):
        spec = GridSpec(61, 61, 0.5)
        walls = np.array([[10.0, -15.0, 10.0, 15.0], [-10.0, -15.0, -10.0, 15.0]])
        grid = scan_to_grid(scan_from_segments(walls, 360, 30.0), spec)
        assert np.max(np.abs(grid - grid[:, ::-1])) <= 1e-12
        assert grid.max() > 0.9

    def test_probabilities_stay_in_unit_interval(self, rng):
        spec = GridSpec(48, 48, 0.5)
        for _ in range(5):
            segs = rng.uniform(-12, 12, size=(30, 4))
            grid = scan_to_grid(scan_from_segments(segs, 720, 30.0), spec)
            assert np.all((grid >= 0.0) & (grid <= 1.0))
            assert np.all(grid >= _sigmoid(-6.0) - 1e-15) and np.all(grid <= _sigmoid(6.0) + 1e-15)

    def test_nothing_behind_first_return(self):
        spec = GridSpec(65, 65, 0.5)
        wall = np.array([[5.0, -0.2, 5.0, 0.2]])
        scan = scan_from_segments(wall, 360, 30.0)
        grid = scan_to_grid(scan, spec)
        hi, hj = (int(v) for v in spec.point_to_cell(5.0, 0.0))
        assert np.all(grid[:hi, hj] == 0.5)


class TestTernarize:
    def test_unknown_grid(self):
        assert np.all(ternarize(np.full((4, 4), 0.5)) == Cell.OCCLUDED)

    def test_definition(self):
        out = ternarize(np.array([0.9, 0.1, 0.5]), 0.65, 0.35)
        assert out.tolist() == [Cell.OCCUPIED, Cell.FREE, Cell.OCCLUDED]

    def test_idempotent_through_embedding(self, rng):
        t = ternarize(rng.random((16, 16)))
        assert np.array_equal(ternarize(embed_ternary(t)), t)

    def test_threshold_order(self):
        with pytest.raises(ContractError):
            ternarize(np.zeros(2), 0.3, 0.6)


class TestAugmentation:
    spec = GridSpec(8, 8, 1.0)

    def test_identity_only_sets_id(self, rng):
        sample = _random_sample(rng, self.spec)
        out = apply_augmentation(sample, "identity")
        assert out.aug == 0
        assert np.array_equal(out.grids, sample.grids) and np.array_equal(out.trajectory, sample.trajectory)

    def test_mirror_is_involution(self, rng):
        for _ in range(100):
            sample = _random_sample(rng, self.spec, alt=True)
            twice = apply_augmentation(apply_augmentation(sample, "mirror_lr"), "mirror_lr")
            assert np.array_equal(twice.grids, sample.grids)
            assert np.array_equal(twice.maps, sample.maps)
            assert np.array_equal(twice.alt_grids, sample.alt_grids)
            assert np.array_equal(twice.trajectory, sample.trajectory)

    def test_four_quarter_turns(self, rng):
        for _ in range(100):
            sample = _random_sample(rng, self.spec)
            out = sample
            for _ in range(4):
                out = apply_augmentation(out, "rotate_90")
            assert np.array_equal(out.grids, sample.grids)
            assert np.array_equal(out.maps, sample.maps)
            assert np.array_equal(out.trajectory, sample.trajectory)

    def test_time_reverse_twice(self, rng):
        for _ in range(100):
            sample = _random_sample(rng, self.spec)
            once = apply_augmentation(sample, "time_reverse")
            assert np.array_equal(once.trajectory[0], np.zeros(3))
            twice = apply_augmentation(once, "time_reverse")
            assert np.array_equal(twice.grids, sample.grids)
            assert np.allclose(twice.trajectory, sample.trajectory, atol=1e-12)
            assert twice.aug == AUGMENTATIONS.index("time_reverse")

    def test_time_reverse_anchors_at_last_frame(self, rng):
        state = build_world("fork", 3)
        sample = _random_sample(rng, self.spec, t_obs=40, t_fut=60)
        sample = replace(sample, trajectory=planned_trajectory(state, 100))
        last = state
        for _ in range(99):
            last = advance_world(last)
        x0, y0, h = last.ego.pose
        c, s = np.cos(h), np.sin(h)
        expected = (state.ego.planned_path[:100][::-1] - [x0, y0]) @ np.array([[c, -s], [s, c]])
        out = apply_augmentation(sample, "time_reverse")
        assert np.allclose(out.trajectory[:, :2], expected, atol=1e-9)
        assert np.allclose(out.trajectory[:, 2], 0.0)

    @pytest.mark.parametrize("tag", ["mirror_lr", "rotate_90", "rotate_180", "rotate_270"])
    def test_rasters_and_trajectory_move_together(self, rng, tag):
        sample = _random_sample(rng, self.spec, t_obs=1, t_fut=1)
        xs, ys = self.spec.cell_centers()
        i, j = 1, 6
        sample.grids[:] = 0.0
        sample.grids[:, i, j] = 1.0
        sample.trajectory[:] = [xs[i, j], ys[i, j], 0.0]
        out = apply_augmentation(sample, tag)
        ni, nj = self.spec.point_to_cell(out.trajectory[0, 0], out.trajectory[0, 1])
        assert out.grids[0, int(ni), int(nj)] == 1.0

    def test_unknown_tag(self, rng):
        with pytest.raises(ContractError):
            apply_augmentation(_random_sample(rng, self.spec), "shear")


class TestDataset:
    spec = GridSpec(6, 5, 0.25)

    def test_empty_set_is_header_only(self, tmp_path):
        path = write_dataset(tmp_path / "empty.bin", [], self.spec)
        assert path.stat().st_size == 8 + 12 + 8 + 4
        spec, samples = read_dataset(path)
        assert spec == self.spec and samples == []

    def test_round_trip_is_bit_exact(self, rng, tmp_path):
        samples = [_random_sample(rng, self.spec, alt=bool(k % 2)) for k in range(10)]
        spec, back = read_dataset(write_dataset(tmp_path / "d.bin", samples, self.spec))
        assert spec == self.spec and len(back) == 10
        for a, b in zip(samples, back, strict=True):
            assert a.grids.tobytes() == b.grids.tobytes()
            assert a.maps.tobytes() == b.maps.tobytes()
            assert a.trajectory.tobytes() == b.trajectory.tobytes()
            assert (a.location, a.aug, a.t_obs, a.t_fut) == (b.location, b.aug, b.t_obs, b.t_fut)
            assert (a.alt_grids is None) == (b.alt_grids is None)
            if a.alt_grids is not None:
                assert a.alt_grids.tobytes() == b.alt_grids.tobytes()

    def test_corrupted_magic(self, rng, tmp_path):
        blob = bytearray(write_dataset(tmp_path / "d.bin", [_random_sample(rng, self.spec)], self.spec).read_bytes())
        blob[:8] = b"XXXXXXXX"
        with pytest.raises(FormatError) as info:
            decode_dataset(bytes(blob))
        assert info.value.offset == 0

    def test_truncated_file(self, rng, tmp_path):
        blob = write_dataset(tmp_path / "d.bin", [_random_sample(rng, self.spec)], self.spec).read_bytes()
        with pytest.raises(FormatError, match="truncated"):
            decode_dataset(blob[:-10])

    def test_spec_mismatch(self, rng, tmp_path):
        with pytest.raises(DimensionError):
            write_dataset(tmp_path / "d.bin", [_random_sample(rng, GridSpec(4, 4, 1.0))], self.spec)

    def test_short_sample_rejected(self, rng):
        with pytest.raises(ContractError):
            SequenceSample(np.zeros((3, 2, 2)), np.zeros((3, 3, 2, 2), np.uint8), np.zeros((3, 3)), 0, 0, 2, 2)

    def test_code_cache_round_trip(self, rng, tmp_path):
        seqs = [
            CodeSequence(rng.standard_normal((5, 2, 2, 2)), rng.integers(0, 2, (5, 3, 6, 5)).astype(np.uint8),
                         rng.standard_normal((5, 3)), 1, 2, 2, 3)
            for _ in range(3)
        ]
        shape, back = read_codes(write_codes(tmp_path / "codes.bin", seqs, (2, 2, 2)))
        assert shape == (2, 2, 2)
        for a, b in zip(seqs, back, strict=True):
            assert np.array_equal(a.codes, b.codes) and np.array_equal(a.maps, b.maps)


class TestPgm:
    def test_encoding(self):
        grid = np.array([[0.0, 0.5], [1.0, 0.2]])
        blob = encode_pgm(grid)
        assert blob.startswith(b"P5\n2 2\n255\n")
        assert decode_pgm(blob).tolist() == [[0, 128], [255, 51]]

    def test_stack(self, tmp_path):
        paths = write_pgm_stack(tmp_path, np.full((3, 4, 5), 0.5), "seq")
        assert [p.name for p in paths] == ["seq_000.pgm", "seq_001.pgm", "seq_002.pgm"]
        assert read_pgm(paths[1]).shape == (4, 5)

    def test_bad_header(self):
        with pytest.raises(FormatError):
            decode_pgm(b"P2\n1 1\n255\n\x00")

    @pytest.mark.parametrize(
        ("blob", "offset"),
        [
            (b"P5\nx 1\n255\n\x00", 3),
            (b"P5\n1 -1\n255\n\x00", 5),
            (b"P5\n0 1\n255\n", 3),
            (b"P5\n1 1\n1e3\n\x00", 7),
        ],
    )
    def test_bad_header_fields(self, blob, offset):
        with pytest.raises(FormatError) as info:
            decode_pgm(blob)
        assert info.value.offset == offset

    def test_bad_file_names_path(self, tmp_path):
        path = tmp_path / "broken.pgm"
        path.write_bytes(b"P5\nwide 1\n255\n\x00")
        with pytest.raises(FormatError) as info:
            read_pgm(path)
        assert info.value.path == str(path)


class TestGenerate:
    settings = GenerationSettings(GridSpec(32, 32, 4.0 / 3.0), t_obs=5, t_fut=5, n_beams=180, archetypes=("fork",))

    def test_deterministic_and_well_formed(self):
        a = generate_sequences(self.settings, [0, 1], progress=False)
        b = generate_sequences(self.settings, [0, 1], progress=False)
        for x, y in zip(a, b, strict=True):
            assert np.array_equal(x.grids, y.grids) and np.array_equal(x.maps, y.maps)
        sample = a[0]
        assert sample.grids.shape == (10, 32, 32)
        assert np.all((sample.grids >= 0) & (sample.grids <= 1))
        assert np.array_equal(sample.grids, sample.grids.astype(np.float32).astype(np.float64))
        assert np.array_equal(sample.trajectory[0], [0.0, 0.0, 0.0])

    def test_fork_counterfactual_shares_the_past(self):
        settings = replace(self.settings, t_fut=15)
        sample = generate_sequences(settings, [3], progress=False)[0]
        assert sample.alt_grids is not None
        assert np.array_equal(sample.alt_grids[:5], sample.grids[:5])
        assert not np.array_equal(sample.alt_grids[5:], sample.grids[5:])
