"""Tokenization and positional codes, checked against naive loop references."""

import numpy as np
import pytest

from slotloc.encoding import positional_encoding, preprocess_clip, tokenize, untokenize


# --- reference implementations ------------------------------------------------

def pe_reference(T, gh, gw, dim):
    """Straightforward per-position loop version of the 3-axis sinusoid code."""
    d_axis = (dim // 6) * 2
    n_freq = d_axis // 2
    out = np.zeros((T, gh, gw, dim))
    for t in range(T):
        for h in range(gh):
            for w in range(gw):
                chans = []
                for pos in (t, h, w):
                    for i in range(n_freq):
                        chans.append(np.sin(pos / 10000 ** (2 * i / d_axis)))
                    for i in range(n_freq):
                        chans.append(np.cos(pos / 10000 ** (2 * i / d_axis)))
                out[t, h, w, : 3 * d_axis] = chans
    return out


def tokenize_reference(clip, p):
    T, H, W, C = clip.shape
    hp, wp = H // p, W // p
    out = np.zeros((T, hp, wp, p * p * C), dtype=np.float32)
    for t in range(T):
        for i in range(hp):
            for j in range(wp):
                out[t, i, j] = clip[t, i * p : (i + 1) * p, j * p : (j + 1) * p].reshape(-1)
    return out


# --- tokenize / untokenize ------------------------------------------------------

def test_tokenize_matches_reference():
    rng = np.random.default_rng(0)
    clip = rng.random((2, 12, 8, 3)).astype(np.float32)
    np.testing.assert_array_equal(tokenize(clip, 4), tokenize_reference(clip, 4))


def test_tokenize_shapes():
    clip = np.zeros((3, 16, 24, 3), dtype=np.float32)
    tok = tokenize(clip, 8)
    assert tok.shape == (3, 2, 3, 192)
    assert tok.dtype == np.float32


def test_tokenize_untokenize_inverse():
    rng = np.random.default_rng(1)
    clip = rng.random((2, 16, 16, 3)).astype(np.float32)
    np.testing.assert_array_equal(untokenize(tokenize(clip, 4), 4), clip)


def test_tokenize_rejects_bad_input():
    with pytest.raises(ValueError, match="multiple"):
        tokenize(np.zeros((1, 10, 16, 3), dtype=np.float32), 8)
    with pytest.raises(ValueError, match="T, H, W, 3"):
        tokenize(np.zeros((10, 16, 3), dtype=np.float32), 8)


# --- preprocess -----------------------------------------------------------------

def test_preprocess_identity_when_conforming():
    clip = np.random.default_rng(2).random((2, 16, 24, 3)).astype(np.float32)
    out = preprocess_clip(clip, 8)
    assert out is clip


def test_preprocess_rounds_to_patch_multiple():
    clip = np.random.default_rng(3).random((2, 30, 34, 3)).astype(np.float32)
    out = preprocess_clip(clip, 8)
    assert out.shape == (2, 32, 32, 3)
    assert out.dtype == np.float32


def test_preprocess_short_side():
    clip = np.random.default_rng(4).random((1, 32, 64, 3)).astype(np.float32)
    out = preprocess_clip(clip, 8, short_side=16)
    assert out.shape == (1, 16, 32, 3)


def test_preprocess_never_collapses_below_one_patch():
    clip = np.random.default_rng(5).random((1, 10, 10, 3)).astype(np.float32)
    out = preprocess_clip(clip, 8)
    assert out.shape == (1, 8, 8, 3)


def test_preprocess_constant_clip_survives_resize():
    clip = np.full((1, 30, 30, 3), 0.5, dtype=np.float32)
    out = preprocess_clip(clip, 8)
    np.testing.assert_allclose(out, 0.5, atol=1e-6)


def test_preprocess_rejects_bad_shape():
    with pytest.raises(ValueError):
        preprocess_clip(np.zeros((2, 16, 16, 4), dtype=np.float32), 8)


# --- positional encoding ---------------------------------------------------------

def test_pe_matches_loop_reference():
    got = positional_encoding(3, 4, 5, 32)
    want = pe_reference(3, 4, 5, 32)
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_pe_matches_loop_reference_non_divisible():
    # 20 % 6 != 0: 3 frequencies per axis, 2 zero channels at the tail
    got = positional_encoding(2, 3, 3, 20)
    want = pe_reference(2, 3, 3, 20)
    np.testing.assert_allclose(got, want, atol=1e-12)
    assert (got[..., 18:] == 0).all()


def test_pe_origin_code():
    pe = positional_encoding(2, 2, 2, 12)
    origin = pe[0, 0, 0]
    # [sin t | cos t | sin h | cos h | sin w | cos w], 2 freqs each at dim=12
    np.testing.assert_array_equal(origin, [0, 0, 1, 1] * 3)


def test_pe_axis_separability():
    pe = positional_encoding(3, 4, 5, 18)
    # t-block constant over h and w, h-block constant over t and w, etc.
    assert (pe[:, :1, :1, 0:6] == pe[:, :, :, 0:6]).all()
    assert (pe[:1, :, :1, 6:12] == pe[:, :, :, 6:12]).all()
    assert (pe[:1, :1, :, 12:18] == pe[:, :, :, 12:18]).all()


def test_pe_distinct_positions_distinct_codes():
    pe = positional_encoding(4, 6, 6, 30).reshape(-1, 30)
    uniq = np.unique(pe.round(12), axis=0)
    assert uniq.shape[0] == pe.shape[0]


def test_pe_bounded():
    pe = positional_encoding(5, 7, 7, 24)
    assert pe.min() >= -1.0 and pe.max() <= 1.0


def test_pe_rejects_small_dim():
    with pytest.raises(ValueError, match="dim"):
        positional_encoding(2, 2, 2, 4)
