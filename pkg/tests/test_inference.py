import io
import sys

import numpy as np
import pytest

from mrisynth.inference import (
    Predictor,
    SubprocessPredictor,
    ThresholdPredictor,
    WindowSpec,
    ensemble_logits,
    logits_to_mask,
    read_tensor,
    sliding_window_predict,
    tta_predict,
    write_tensor,
)

from conftest import make_grid


class ConstantPredictor(Predictor):
    def __init__(self, values):
        self.values = np.asarray(values, dtype=np.float32)
        self.num_classes = len(self.values)

    def predict(self, patch):
        spatial = patch.shape[1:]
        return np.broadcast_to(self.values[:, None, None, None],
                               (self.num_classes,) + spatial).copy()


class LinearPredictor(Predictor):
    """f(x) = x per channel: logits are the input itself."""

    def __init__(self, num_classes):
        self.num_classes = num_classes

    def predict(self, patch):
        return patch.copy()


class FlipMarkerPredictor(Predictor):
    """+1 when the patch equals the reference orientation, -1 otherwise."""

    num_classes = 1

    def __init__(self, reference):
        self.reference = np.asarray(reference)

    def predict(self, patch):
        hit = np.array_equal(patch[0], self.reference)
        value = 1.0 if hit else -1.0
        return np.full((1,) + patch.shape[1:], value, dtype=np.float32)


class TestSlidingWindow:
    def test_constant_predictor_partition_of_unity(self, rng):
        g = make_grid(rng.uniform(0, 1, (50, 44, 33)).astype(np.float32))
        model = ConstantPredictor([0.25, -1.5, 3.0])
        spec = WindowSpec(patch=(16, 16, 16), overlap=0.5)
        out = sliding_window_predict(g, model, spec)
        assert out.shape == (3, 50, 44, 33)
        for c, want in enumerate([0.25, -1.5, 3.0]):
            assert np.abs(out[c] - want).max() < 1e-6

    def test_single_window_returns_raw_output(self, rng):
        data = rng.uniform(0, 1, (16, 16, 16)).astype(np.float32)
        g = make_grid(data)
        model = LinearPredictor(1)
        spec = WindowSpec(patch=(16, 16, 16), overlap=0.5)
        out = sliding_window_predict(g, model, spec)
        assert np.array_equal(out[0], data)

    def test_linear_predictor_on_ramp_is_exact(self):
        ramp = np.broadcast_to(
            np.linspace(0, 1, 40, dtype=np.float32)[:, None, None],
            (40, 40, 40)).copy()
        g = make_grid(ramp)
        model = LinearPredictor(1)
        spec = WindowSpec(patch=(16, 16, 16), overlap=0.5)
        out = sliding_window_predict(g, model, spec)
        assert np.abs(out[0] - ramp).max() < 1e-5

    def test_small_volume_padded_and_unpadded(self, rng):
        data = rng.uniform(0, 1, (10, 12, 9)).astype(np.float32)
        g = make_grid(data)
        model = LinearPredictor(1)
        spec = WindowSpec(patch=(16, 16, 16))
        out = sliding_window_predict(g, model, spec)
        assert out.shape == (1, 10, 12, 9)
        assert np.array_equal(out[0], data)

    def test_multichannel_input(self, rng):
        a = make_grid(rng.uniform(0, 1, (20, 20, 20)).astype(np.float32))
        b = make_grid(rng.uniform(0, 1, (20, 20, 20)).astype(np.float32))
        model = LinearPredictor(2)
        spec = WindowSpec(patch=(16, 16, 16), overlap=0.5)
        out = sliding_window_predict([a, b], model, spec)
        assert np.abs(out[0] - a.data).max() < 1e-5
        assert np.abs(out[1] - b.data).max() < 1e-5

    def test_shape_mismatch_raises(self, rng):
        class Broken(Predictor):
            num_classes = 2

            def predict(self, patch):
                return np.zeros((2, 4, 4, 4), dtype=np.float32)

        g = make_grid(rng.uniform(0, 1, (20, 20, 20)).astype(np.float32))
        with pytest.raises(ValueError, match="predictor returned shape"):
            sliding_window_predict(g, Broken(), WindowSpec(patch=(16, 16, 16)))

    def test_nonfinite_logits_raise(self, rng):
        class NanModel(Predictor):
            num_classes = 1

            def predict(self, patch):
                out = np.zeros((1,) + patch.shape[1:], dtype=np.float32)
                out[0, 0, 0, 0] = np.nan
                return out

        g = make_grid(rng.uniform(0, 1, (16, 16, 16)).astype(np.float32))
        with pytest.raises(ValueError, match="non-finite"):
            sliding_window_predict(g, NanModel(), WindowSpec(patch=(16, 16, 16)))

    def test_spec_validation(self):
        with pytest.raises(ValueError, match="overlap"):
            WindowSpec(patch=(16, 16, 16), overlap=1.0)
        with pytest.raises(ValueError, match="patch"):
            WindowSpec(patch=(0, 16, 16))
        with pytest.raises(ValueError, match="blend_std_frac"):
            WindowSpec(patch=(16, 16, 16), blend_std_frac=0.0)


class TestTta:
    def test_equivariant_predictor_noop(self, rng):
        g = make_grid(rng.uniform(0, 1, (24, 24, 24)).astype(np.float32))
        model = ThresholdPredictor(threshold=0.5, gain=2.0)
        spec = WindowSpec(patch=(16, 16, 16), overlap=0.5)
        plain = sliding_window_predict(g, model, spec)
        tta = tta_predict(g, model, spec)
        assert np.abs(tta - plain).max() < 1e-6

    def test_orientation_marker_average(self, rng):
        # -0.75 = (+1 + 7 * -1) / 8 when only identity matches
        data = rng.uniform(0, 1, (8, 8, 8)).astype(np.float32)
        g = make_grid(data)
        model = FlipMarkerPredictor(data)
        spec = WindowSpec(patch=(8, 8, 8))
        out = tta_predict(g, model, spec)
        assert np.all(out == np.float32(-0.75))

    def test_constant_predictor_unchanged(self, rng):
        g = make_grid(rng.uniform(0, 1, (20, 20, 20)).astype(np.float32))
        model = ConstantPredictor([1.0, -2.0])
        spec = WindowSpec(patch=(16, 16, 16), overlap=0.5)
        out = tta_predict(g, model, spec)
        assert np.abs(out[0] - 1.0).max() < 1e-6
        assert np.abs(out[1] + 2.0).max() < 1e-6


class TestEnsemble:
    def test_single_input_identity(self, rng):
        logits = rng.normal(size=(2, 6, 6, 6)).astype(np.float32)
        out = ensemble_logits([logits])
        assert np.array_equal(out, logits)

    def test_opposite_inputs_cancel(self, rng):
        logits = rng.normal(size=(3, 5, 5, 5)).astype(np.float32)
        out = ensemble_logits([logits, -logits])
        assert np.all(out == 0.0)

    def test_constant_mean(self):
        shape = (1, 4, 4, 4)
        inputs = [np.full(shape, v, dtype=np.float32) for v in (1.0, 2.0, 6.0)]
        out = ensemble_logits(inputs)
        assert np.all(out == 3.0)

    def test_permutation_invariant(self, rng):
        xs = [rng.normal(size=(2, 4, 4, 4)).astype(np.float32) for _ in range(4)]
        a = ensemble_logits(xs)
        b = ensemble_logits(xs[::-1])
        assert np.allclose(a, b, atol=1e-7)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError, match="shapes differ"):
            ensemble_logits([np.zeros((2, 4, 4, 4)), np.zeros((3, 4, 4, 4))])

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="no logit"):
            ensemble_logits([])


class TestLogitsToMask:
    def test_dominant_lesion_class(self):
        logits = np.stack([np.zeros((4, 4, 4)), np.ones((4, 4, 4))])
        mask = logits_to_mask(logits, lesion_class=1)
        assert np.all(mask == 1)

    def test_tie_breaks_to_lowest_index(self):
        logits = np.full((2, 3, 3, 3), 0.5, dtype=np.float32)
        assert np.all(logits_to_mask(logits, lesion_class=1) == 0)
        assert np.all(logits_to_mask(logits, lesion_class=0) == 1)

    def test_matches_brute_force(self, rng):
        logits = rng.normal(size=(3, 8, 8, 8)).astype(np.float32)
        mask = logits_to_mask(logits, lesion_class=2)
        for i in range(8):
            for j in range(8):
                for k in range(8):
                    vals = [logits[c, i, j, k] for c in range(3)]
                    best = vals.index(max(vals))
                    assert mask[i, j, k] == (1 if best == 2 else 0)

    def test_constant_shift_invariance(self, rng):
        logits = rng.normal(size=(3, 6, 6, 6)).astype(np.float32)
        shifted = logits + 7.25
        assert np.array_equal(logits_to_mask(logits, 1),
                              logits_to_mask(shifted, 1))

    def test_bad_class_index(self):
        with pytest.raises(ValueError, match="out of range"):
            logits_to_mask(np.zeros((2, 4, 4, 4)), lesion_class=2)


class TestWireFormat:
    def test_roundtrip(self, rng):
        arr = rng.normal(size=(3, 5, 7, 2)).astype(np.float32)
        buf = io.BytesIO()
        write_tensor(buf, arr)
        buf.seek(0)
        back = read_tensor(buf)
        assert np.array_equal(back, arr)

    def test_bad_magic(self):
        with pytest.raises(ValueError, match="magic"):
            read_tensor(io.BytesIO(b"XXXX" + b"\x00" * 16))

    def test_truncated_payload(self, rng):
        arr = rng.normal(size=(2, 3, 3, 3)).astype(np.float32)
        buf = io.BytesIO()
        write_tensor(buf, arr)
        clipped = io.BytesIO(buf.getvalue()[:-8])
        with pytest.raises(ValueError, match="truncated"):
            read_tensor(clipped)

    def test_subprocess_predictor(self, rng):
        script = (
            "import sys\n"
            "import numpy as np\n"
            "from mrisynth.inference import read_tensor, write_tensor\n"
            "patch = read_tensor(sys.stdin.buffer)\n"
            "logits = np.stack([-patch[0], patch[0]])\n"
            "write_tensor(sys.stdout.buffer, logits)\n"
        )
        model = SubprocessPredictor([sys.executable, "-c", script],
                                    num_classes=2)
        g = make_grid(rng.uniform(0, 1, (8, 8, 8)).astype(np.float32))
        out = sliding_window_predict(g, model, WindowSpec(patch=(8, 8, 8)))
        assert np.array_equal(out[1], g.data)
        assert np.array_equal(out[0], -g.data)
