import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbmvad.clustering import ClusterMap
from rbmvad.config import RunConfig, derive_seed
from rbmvad.dataset import DatasetLayout, list_frames, load_dataset, read_labels
from rbmvad.detector import DetectorModel, ScaleModel
from rbmvad.graymap import GraymapError, read_pgm, to_gray, write_pgm
from rbmvad.modelio import (
    MAGIC,
    ModelFormatError,
    load_model,
    model_from_bytes,
    model_to_bytes,
    save_model,
)
from rbmvad.patches import ScaleConfig
from rbmvad.rbm import RbmParams
from rbmvad.synth import BackgroundSpec, Plant, render, synth_generate


# -- graymap ---------------------------------------------------------------

class TestGraymap:
    def test_round_trip_8bit(self, tmp_path):
        img = np.arange(12, dtype=np.int64).reshape(3, 4) * 20
        write_pgm(tmp_path / "a.pgm", img)
        back, maxval = read_pgm(tmp_path / "a.pgm")
        assert maxval == 255
        np.testing.assert_array_equal(back, img)

    def test_round_trip_16bit(self, tmp_path):
        img = np.array([[0, 300], [65535, 32768]])
        write_pgm(tmp_path / "a.pgm", img, maxval=65535)
        back, maxval = read_pgm(tmp_path / "a.pgm")
        assert maxval == 65535
        np.testing.assert_array_equal(back, img)

    def test_hand_written_16bit_bytes(self, tmp_path):
        # samples are big-endian: 0x8000 = 32768
        (tmp_path / "h.pgm").write_bytes(b"P5\n1 1\n65535\n\x80\x00")
        img, maxval = read_pgm(tmp_path / "h.pgm")
        assert img[0, 0] == 32768 and maxval == 65535

    def test_ascii_with_comment(self, tmp_path):
        (tmp_path / "a.pgm").write_bytes(b"P2\n# made by hand\n3 2\n9\n0 1 2\n3 4 9\n")
        img, maxval = read_pgm(tmp_path / "a.pgm")
        assert maxval == 9
        assert img.tolist() == [[0, 1, 2], [3, 4, 9]]

    @pytest.mark.parametrize("payload", [b"P6\n1 1\n255\n\x00", b"P5\n2 2\n255\n\x00", b"P5\n2"])
    def test_malformed(self, tmp_path, payload):
        (tmp_path / "bad.pgm").write_bytes(payload)
        with pytest.raises(GraymapError):
            read_pgm(tmp_path / "bad.pgm")

    def test_write_out_of_range(self, tmp_path):
        with pytest.raises(GraymapError):
            write_pgm(tmp_path / "x.pgm", np.array([[256]]))

    def test_to_gray(self):
        assert to_gray(np.array([0.0, 0.5, 1.0])).tolist() == [0, 128, 255]


# -- dataset ----------------------------------------------------------------

def write_frames(directory, images, maxval=255, start=0):
    directory.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(images):
        write_pgm(directory / f"{start + i:06d}.pgm", img, maxval)


class TestDataset:
    def test_empty_dir(self, tmp_path):
        (tmp_path / "frames").mkdir()
        with pytest.raises(ValueError, match="no frames"):
            load_dataset(DatasetLayout.from_root(tmp_path))

    def test_missing_dir(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            list_frames(tmp_path / "nowhere")

    def test_three_frames_in_order(self, tmp_path):
        d = tmp_path / "frames"
        d.mkdir()
        # written out of order, and with numbers that sort differently as text
        for n, value in [(10, 30), (8, 10), (9, 20)]:
            write_pgm(d / f"f{n}.pgm", np.full((2, 3), value))
        ds = load_dataset(DatasetLayout(d))
        assert len(ds) == 3
        assert ds.names == ("f8.pgm", "f9.pgm", "f10.pgm")
        np.testing.assert_allclose(ds.frames[:, 0, 0], np.array([10, 20, 30]) / 255)

    def test_sixteen_bit_normalization(self, tmp_path):
        write_frames(tmp_path / "frames", [np.full((2, 2), 32768)], maxval=65535)
        ds = load_dataset(DatasetLayout.from_root(tmp_path))
        assert ds.frames[0, 0, 0] == pytest.approx(0.50001, abs=1e-5)
        assert ds.frames[0, 0, 0] == 32768 / 65535

    def test_gap_in_numbering(self, tmp_path):
        d = tmp_path / "frames"
        write_frames(d, [np.zeros((2, 2))] * 2)
        write_pgm(d / "000005.pgm", np.zeros((2, 2)))
        with pytest.raises(ValueError, match="gap"):
            load_dataset(DatasetLayout(d))

    def test_inconsistent_dimensions(self, tmp_path):
        d = tmp_path / "frames"
        write_frames(d, [np.zeros((2, 2)), np.zeros((3, 2))])
        with pytest.raises(ValueError, match="differs"):
            load_dataset(DatasetLayout(d))

    def test_resize(self, tmp_path):
        write_frames(tmp_path / "frames", [np.full((4, 6), 51)] * 2)
        ds = load_dataset(DatasetLayout.from_root(tmp_path), (8, 12))
        assert ds.frames.shape == (2, 8, 12)
        np.testing.assert_allclose(ds.frames, 0.2)

    def test_labels_from_masks(self, tmp_path):
        write_frames(tmp_path / "frames", [np.zeros((4, 4))] * 3)
        m = np.zeros((4, 4))
        m[1, 1] = 255
        write_frames(tmp_path / "masks", [np.zeros((4, 4)), m, np.zeros((4, 4))])
        ds = load_dataset(DatasetLayout.from_root(tmp_path))
        assert ds.labels.tolist() == [0, 1, 0]
        assert ds.masks[1, 1, 1] and ds.masks.sum() == 1

    def test_labels_length_checked(self, tmp_path):
        (tmp_path / "labels.txt").write_text("0\n1\n")
        assert read_labels(tmp_path / "labels.txt").tolist() == [0, 1]
        with pytest.raises(ValueError):
            read_labels(tmp_path / "labels.txt", 3)


# -- synthetic data ---------------------------------------------------------

SPEC = BackgroundSpec(height=40, width=60, cell=10)


class TestSynth:
    def test_no_plants(self):
        frames, masks, labels = render(12, SPEC, seed=0)
        assert frames.shape == (12, 40, 60)
        assert not labels.any() and not masks.any()
        assert frames.min() >= 0 and frames.max() <= 1

    def test_plant_schedule(self):
        plant = Plant(10, 25, 5, 7, 8, 9, 1.0)
        frames, masks, labels = render(40, SPEC, [plant], seed=0)
        assert np.flatnonzero(labels).tolist() == list(range(10, 26))
        rect = np.zeros((40, 60), bool)
        rect[5:13, 7:16] = True
        for t in range(40):
            np.testing.assert_array_equal(masks[t], rect if 10 <= t <= 25 else np.zeros_like(rect))
        assert np.all(frames[10:26][:, rect] == 1.0)

    def test_seed_isolation(self):
        plant = [Plant(3, 6, 0, 0, 5, 5)]
        f1, m1, l1 = render(10, SPEC, plant, seed=1)
        f2, m2, l2 = render(10, SPEC, plant, seed=2)
        assert not np.array_equal(f1, f2)
        np.testing.assert_array_equal(l1, l2)
        np.testing.assert_array_equal(m1, m2)

    def test_deterministic(self):
        a = render(5, SPEC, seed=4)[0]
        b = render(5, SPEC, seed=4)[0]
        np.testing.assert_array_equal(a, b)

    @pytest.mark.parametrize("plant", [Plant(0, 1, 35, 0, 10, 5), Plant(0, 1, 0, -1, 3, 3),
                                       Plant(0, 99, 0, 0, 3, 3)])
    def test_out_of_bounds(self, plant):
        with pytest.raises(ValueError):
            render(10, SPEC, [plant])

    def test_parse(self):
        assert Plant.parse("1:2:3:4:5:6") == Plant(1, 2, 3, 4, 5, 6, 1.0)
        assert Plant.parse("1:2:3:4:5:6:0.25").intensity == 0.25
        with pytest.raises(ValueError):
            Plant.parse("1:2:3")

    def test_written_dataset_reloads(self, tmp_path):
        plant = Plant(2, 4, 10, 10, 6, 6)
        synth_generate(tmp_path, 8, SPEC, [plant], seed=3)
        ds = load_dataset(DatasetLayout.from_root(tmp_path))
        frames, masks, labels = render(8, SPEC, [plant], seed=3)
        np.testing.assert_array_equal(ds.frames, frames)
        np.testing.assert_array_equal(ds.masks, masks)
        np.testing.assert_array_equal(ds.labels, labels)


# -- config -----------------------------------------------------------------

configs = st.builds(
    RunConfig,
    scales=st.sampled_from([(1.0,), (1.0, 0.5), (1.0, 0.5, 0.25), (0.75, 0.3)]),
    k_detect=st.integers(1, 500),
    learning_rate=st.floats(1e-6, 10, allow_nan=False),
    beta=st.floats(1e-9, 1.0, allow_nan=False),
    gamma=st.integers(1, 50),
    persistent=st.booleans(),
    seed=st.integers(0, 2**63 - 1),
)


class TestConfig:
    @settings(max_examples=50, deadline=None)
    @given(configs)
    def test_round_trip(self, cfg):
        assert RunConfig.parse(cfg.emit()) == cfg

    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.scales == (1.0, 0.5, 0.25)
        assert (cfg.patch_h, cfg.patch_w, cfg.overlap) == (12, 18, 0.5)
        assert (cfg.k_cluster, cfg.k_detect, cfg.beta, cfg.gamma, cfg.chunk_length) == (4, 100, 0.003, 10, 20)
        assert cfg.frame_shape == (240, 360)

    def test_comments_and_blank_lines(self):
        cfg = RunConfig.parse("# tuned\n\ngamma = 5\nbeta=0.01  # trailing\n")
        assert cfg.gamma == 5 and cfg.beta == 0.01

    @pytest.mark.parametrize("text", ["nosuchkey=1", "gamma", "gamma=abc", "overlap=1.0", "k_detect=0"])
    def test_rejects(self, text):
        with pytest.raises(ValueError):
            RunConfig.parse(text)

    def test_overrides(self):
        cfg = RunConfig().with_overrides([("seed", "9"), ("scales", "1.0,0.5")])
        assert cfg.seed == 9 and cfg.scales == (1.0, 0.5)

    def test_derive_seed(self):
        assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
        assert len({derive_seed(1, 2, k) for k in range(50)}) == 50
        assert derive_seed(1, 2) != derive_seed(2, 2)


# -- model files ------------------------------------------------------------

def random_model(patch=(12, 18), seed=0):
    rng = np.random.default_rng(seed)
    sc = ScaleConfig((1.0, 0.5), patch[0], patch[1], 0.5)
    m = patch[0] * patch[1]
    scales = []
    for ratio, grid in zip(sc.ratios, [(5, 5), (2, 2)]):
        small = RbmParams.initialize(m, 4, rng, 0.5)
        labels = rng.integers(0, 3, size=grid) * 4 + 1
        rbms = {int(k): RbmParams.initialize(m, 7, rng, 0.5) for k in np.unique(labels)}
        scales.append(ScaleModel(ratio, small, ClusterMap(ratio, labels), rbms))
    shape = (patch[0] * 3, patch[1] * 3)
    return DetectorModel(shape, sc, scales, beta=0.0123, gamma=7, seed=2**40 + 3)


class TestModelIO:
    def test_round_trip_bytes(self, tmp_path):
        model = random_model()
        save_model(tmp_path / "m.bin", model)
        data = (tmp_path / "m.bin").read_bytes()
        assert data[:8] == MAGIC
        back = load_model(tmp_path / "m.bin")
        assert model_to_bytes(back) == data
        assert back.beta == model.beta and back.gamma == model.gamma and back.seed == model.seed
        for a, b in zip(model.scales, back.scales):
            assert a.cluster_rbm == b.cluster_rbm and a.cluster_map == b.cluster_map
            assert a.rbms.keys() == b.rbms.keys()
            assert all(a.rbms[k] == b.rbms[k] for k in a.rbms)

    def test_trained_model_round_trip(self, small_model):
        data = model_to_bytes(small_model)
        assert model_to_bytes(model_from_bytes(data)) == data

    def test_corrupt_magic(self):
        data = bytearray(model_to_bytes(random_model()))
        data[0] ^= 0xFF
        with pytest.raises(ModelFormatError, match="version"):
            model_from_bytes(bytes(data))

    def test_version_mismatch(self):
        data = bytearray(model_to_bytes(random_model()))
        data[8] = 99
        with pytest.raises(ModelFormatError, match="version 99"):
            model_from_bytes(bytes(data))

    @pytest.mark.parametrize("cut", [4, 20, 200, -1])
    def test_truncated(self, cut):
        data = model_to_bytes(random_model())
        with pytest.raises(ModelFormatError):
            model_from_bytes(data[:cut])

    def test_trailing_bytes(self):
        with pytest.raises(ModelFormatError):
            model_from_bytes(model_to_bytes(random_model()) + b"\x00")

    def test_patch_shape_check(self):
        data = model_to_bytes(random_model((12, 18)))
        model = model_from_bytes(data, (12, 18))
        assert model.scales[0].cluster_rbm.n_visible == 216
        with pytest.raises(ModelFormatError, match="216 visible units"):
            model_from_bytes(data, (8, 8))

    def test_little_endian_doubles(self):
        data = model_to_bytes(random_model())
        # header: magic, version, height, width, patch_h, patch_w, then overlap as f64
        assert data[12:16] == (36).to_bytes(4, "little")
        assert np.frombuffer(data[28:36], "<f8")[0] == 0.5
