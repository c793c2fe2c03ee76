import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gazetrack.errors import LengthMismatch, SpecOutOfBounds
from gazetrack.glyphs import GLYPH_SIZE, bundled_glyphs, glyph, glyphs_from_mnist, read_idx, write_idx
from gazetrack.simulator import (
    Occluder,
    SceneSettings,
    SequenceSpec,
    apply_noise,
    classification_accuracy,
    generate_sequence,
    occluder_box,
    random_sequence_spec,
    read_pgm,
    read_sequence,
    render_clean,
    tracking_error,
    write_pgm,
    write_sequence,
)
from gazetrack.state_space import State


def test_bundled_glyphs_shape_and_binary():
    gl = bundled_glyphs()
    assert sorted(gl) == list(range(10))
    for img in gl.values():
        assert img.shape == (GLYPH_SIZE, GLYPH_SIZE)
        assert set(np.unique(img)) <= {0.0, 1.0}
        assert img.sum() > 30
    assert len({img.tobytes() for img in gl.values()}) == 10
    with pytest.raises(KeyError):
        glyph(11)


def test_idx_roundtrip_and_mnist_loader(tmp_path):
    rng = np.random.default_rng(0)
    images = (rng.random((20, 28, 28)) * 255).astype(np.uint8)
    labels = np.arange(20, dtype=np.uint8) % 10
    write_idx(tmp_path / "img.idx", images)
    write_idx(tmp_path / "lab.idx", labels)
    raw = (tmp_path / "img.idx").read_bytes()
    assert raw[:4] == bytes([0, 0, 0x08, 3])
    np.testing.assert_array_equal(read_idx(tmp_path / "img.idx"), images)
    gl = glyphs_from_mnist(tmp_path / "img.idx", tmp_path / "lab.idx")
    assert sorted(gl) == list(range(10))
    np.testing.assert_array_equal(gl[3], (images[3] >= 128).astype(float))


def test_idx_rejects_bad_magic(tmp_path):
    (tmp_path / "bad").write_bytes(b"\x01\x00\x08\x01\x00\x00\x00\x01\x00")
    with pytest.raises(ValueError):
        read_idx(tmp_path / "bad")


def test_static_sequence_frames_identical():
    spec = SequenceSpec(3, length=6, initial_velocity=(0.0, 0.0))
    frames, truth = generate_sequence(spec)
    for f in frames[1:]:
        np.testing.assert_array_equal(f, frames[0])
    assert all(s.position == truth[0].position for s in truth)


def test_no_bounce_moves_exactly_two_pixels():
    spec = SequenceSpec(1, frame_size=(100, 200), length=20, initial_position=(30.0, 50.0), bounce=False)
    _, truth = generate_sequence(spec)
    xs = np.array([s.position[0] for s in truth])
    np.testing.assert_array_equal(np.diff(xs), 2.0)
    assert all(s.position[1] == 50.0 for s in truth)


def test_noise_fraction_binomial():
    rng = np.random.default_rng(5)
    frame = np.zeros((250, 400))
    _, mask = apply_noise(frame, 0.3, rng)
    n = frame.size
    sd = np.sqrt(n * 0.3 * 0.7)
    assert abs(mask.sum() - 0.3 * n) < 3 * sd


def test_spec_validation():
    with pytest.raises(SpecOutOfBounds):
        generate_sequence(SequenceSpec(0, noise_fraction=1.5))
    with pytest.raises(SpecOutOfBounds):
        generate_sequence(SequenceSpec(0, length=10, occluder=Occluder(5, 12)))
    with pytest.raises(SpecOutOfBounds):
        generate_sequence(SequenceSpec(0, initial_position=(2.0, 50.0)))
    with pytest.raises(SpecOutOfBounds):
        generate_sequence(SequenceSpec(42))
    with pytest.raises(ValueError):
        Occluder(0, 3, side="middle")


def test_noisy_sequence_needs_rng_and_is_deterministic():
    spec = SequenceSpec(4, length=5, noise_fraction=0.3)
    with pytest.raises(ValueError):
        generate_sequence(spec)
    a, _ = generate_sequence(spec, rng=np.random.default_rng(9))
    b, _ = generate_sequence(spec, rng=np.random.default_rng(9))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_occluder_covers_half_the_target():
    occ = Occluder(0, 5, "left", 0.5)
    spec = SequenceSpec(0, length=5, initial_velocity=(0.0, 0.0), occluder=occ)
    frames, truth = generate_sequence(spec)
    clean = render_clean(SequenceSpec(0, length=5, initial_velocity=(0.0, 0.0)), bundled_glyphs(), truth)
    x0, x1, y0, y1 = occluder_box(occ, truth[0])
    assert (x1 - x0) * (y1 - y0) >= 0.5 * GLYPH_SIZE**2
    assert np.all(frames[0][y0:y1, x0:x1] == 0.0)
    outside = np.ones(frames[0].shape, bool)
    outside[y0:y1, x0:x1] = False
    np.testing.assert_array_equal(frames[0][outside], clean[0][outside])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_bounce_keeps_target_in_frame(seed):
    rng = np.random.default_rng(seed)
    spec = random_sequence_spec(int(rng.integers(10)), SceneSettings(length=150, speed=5.0), rng)
    _, truth = generate_sequence(spec)
    h, w = spec.frame_size
    half = (GLYPH_SIZE - 1) / 2
    for s in truth:
        assert half <= s.position[0] <= w - 1 - half
        assert half <= s.position[1] <= h - 1 - half


def test_random_spec_deterministic():
    s = SceneSettings(length=40)
    a = random_sequence_spec(2, s, np.random.default_rng(3))
    b = random_sequence_spec(2, s, np.random.default_rng(3))
    assert a == b
    assert a.occluder is not None and len(a.distractors) == 2
    assert all(g != 2 for g, _ in a.distractors)


def test_tracking_error_examples():
    truth = [State(position=(float(i), 2.0 * i)) for i in range(5)]
    assert tracking_error(truth, truth) == (0.0, 0.0)
    shifted = [State(position=(s.position[0] + 3, s.position[1] + 4)) for s in truth]
    assert tracking_error(shifted, truth) == pytest.approx((5.0, 0.0))
    est = [(0.0, 0.0), (10.0, 0.0)]
    assert tracking_error(est, [(0.0, 0.0), (0.0, 0.0)]) == pytest.approx((5.0, 5.0))
    with pytest.raises(LengthMismatch):
        tracking_error(truth[:3], truth)


def test_classification_accuracy_examples():
    eye = np.eye(3)
    assert classification_accuracy([eye[1]] * 4, 1) == 1.0
    assert classification_accuracy([np.full(3, 1 / 3)] * 2, 0) == 1.0
    assert classification_accuracy([eye[2], eye[2], eye[2], eye[0]], 2) == 0.75
    with pytest.raises(ValueError):
        classification_accuracy([], 0)


def test_pgm_roundtrip(tmp_path):
    img = np.round(np.random.default_rng(1).random((7, 11)) * 255) / 255
    write_pgm(tmp_path / "a.pgm", img)
    assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n11 7\n255\n")
    np.testing.assert_allclose(read_pgm(tmp_path / "a.pgm"), img, atol=1e-12)


def test_sequence_roundtrip(tmp_path):
    spec = SequenceSpec(6, length=4)
    frames, truth = generate_sequence(spec)
    write_sequence(tmp_path, frames, truth)
    f2, t2 = read_sequence(tmp_path)
    assert len(f2) == 4
    for a, b in zip(frames, f2):
        np.testing.assert_allclose(a, b, atol=1e-12)
    for a, b in zip(truth, t2):
        assert a.position == b.position and a.scale == pytest.approx(b.scale)
