import numpy as np
import pytest

from casediar import ndiff as nd
from casediar.models.cpd import Cpd, CpdConfig, change_labels, cpd_score, pick_changes, train_cpd
from casediar.models.data import MeetingData, segment_windows
from casediar.models.embedder import (Embedder, EmbedderConfig, attentive_pool, extract_window_dvectors,
                                      frame_dvectors, train_embedder)
from casediar.models.vad import Vad, VadConfig, smooth_speech, speech_mask, train_vad, vad_classify

import gradsuite


# -- frame d-vectors --------------------------------------------------------------

def test_baseline_widths():
    cfg = EmbedderConfig(acoustic_dim=40)
    assert cfg.spliced_width == 600
    model = Embedder(cfg, ["a", "b"], 0)
    out = frame_dvectors(np.zeros((20, 40)), None, cfg, model.params)
    assert out.shape == (20, 128)


def test_phone_char_widths():
    cfg = EmbedderConfig(acoustic_dim=40, levels=("phone", "character"))
    assert cfg.frame_input_width == 115 and cfg.spliced_width == 1725


def test_zero_weights_give_zero_frame_dvectors():
    cfg = gradsuite.tiny_config(("phone",), "plain")
    model = Embedder(cfg, ["a", "b"], 0)
    for _, t in model.params.items():
        t.value[...] = 0.0
    batch = gradsuite.tiny_batch(cfg)
    assert not frame_dvectors(batch.acoustic, batch.content, cfg, model.params).value.any()


def test_content_length_mismatch_rejected():
    cfg = gradsuite.tiny_config(("phone",), "plain")
    model = Embedder(cfg, ["a", "b"], 0)
    with pytest.raises(ValueError, match="rows"):
        frame_dvectors(np.zeros((6, 3)), np.zeros((5, 48)), cfg, model.params)
    with pytest.raises(ValueError):
        frame_dvectors(np.zeros((6, 3)), None, cfg, model.params)


def test_case_with_zero_content_equals_baseline_on_acoustic_weights():
    case_cfg = gradsuite.tiny_config(("phone", "character"), "plain")
    base_cfg = gradsuite.tiny_config((), "plain")
    case = Embedder(case_cfg, ["a", "b", "c"], 3)
    base = Embedder(base_cfg, ["a", "b", "c"], 3)
    F, W = case_cfg.acoustic_dim, case_cfg.frame_input_width
    for name, t in base.params.items():
        if name == "tdnn.0.W":
            Wc = case.params[name].value
            t.value[...] = np.concatenate([Wc[k * W:k * W + F] for k in range(3)])
        else:
            t.value[...] = case.params[name].value
    batch = gradsuite.tiny_batch(case_cfg, B=2, T=40)
    zeros = np.zeros_like(batch.content)
    a = frame_dvectors(batch.acoustic, zeros, case_cfg, case.params, 40).value
    b = frame_dvectors(batch.acoustic, None, base_cfg, base.params, 40).value
    np.testing.assert_allclose(a, b, atol=1e-12)


# -- attentive pooling ----------------------------------------------------------------

def _pool_params(H, D=3):
    cfg = gradsuite.tiny_config((), "plain", heads=H, dvector_dim=D)
    model = Embedder(cfg, ["a", "b"], 0)
    model.params["att.W2"].value[...] = 0.0  # uniform attention
    model.params["pool.W"].value[...] = np.eye(D)
    model.params["pool.b"].value[...] = 0.0
    return model.params


def test_pool_uniform_attention_identical_frames():
    params = _pool_params(1)
    v = np.array([[0.3, -1.0, 2.0]])
    pooled, penalty, A = attentive_pool(np.repeat(v, 4, axis=0), params)
    np.testing.assert_allclose(pooled.value, v, atol=1e-12)
    assert penalty.item() == pytest.approx(0.5625)


def test_pool_is_permutation_invariant():
    params = gradsuite.tiny_model("baseline")[0].params
    fd = np.random.default_rng(0).normal(size=(9, 4))
    perm = np.random.default_rng(1).permutation(9)
    a, pa, _ = attentive_pool(fd, params)
    b, pb, _ = attentive_pool(fd[perm], params)
    np.testing.assert_allclose(a.value, b.value, rtol=0, atol=1e-12)
    assert pa.item() == pytest.approx(pb.item(), abs=1e-12)


# -- gradient checks ------------------------------------------------------------------

@pytest.mark.parametrize("name", list(gradsuite.VARIANTS))
def test_gradients_every_variant(name):
    assert gradsuite.check_variant(name) < 1e-4


def test_adversarial_reversal_sign():
    assert gradsuite.reversal_sign_ok()


# -- training -------------------------------------------------------------------------

def _two_speaker_set(seed, n_segments=10, seg_len=250, F=4):
    rng = np.random.default_rng(seed)
    means = {"a": np.full(F, 1.0), "b": np.full(F, -1.0)}
    frames, segs, t = [], [], 0
    for j in range(n_segments):
        spk = "ab"[j % 2]
        frames.append(means[spk] + 0.5 * rng.normal(size=(seg_len, F)))
        segs.append((t, t + seg_len, spk))
        t += seg_len
    md = MeetingData("m", np.concatenate(frames))
    return md, segs


def _small_cfg(**kw):
    base = dict(acoustic_dim=4, left=2, right=2, hidden=(16, 16), dvector_dim=8, heads=2,
                attention_hidden=8, window_len=50, hop=50)
    base.update(kw)
    return EmbedderConfig(**base)


def test_two_disjoint_speakers_reach_high_heldout_accuracy():
    md, segs = _two_speaker_set(0)
    cfg = _small_cfg()
    held = {0, 1}
    ws = segment_windows([md], [segs], 50, 50, ["a", "b"], keep=lambda i, j: j not in held)
    hs = segment_windows([md], [segs], 50, 50, ["a", "b"], keep=lambda i, j: j in held)
    _, _, report = train_embedder(ws, cfg, 20, seed=0, held_out=hs, lr=3e-3)
    assert max(e["heldout_acc"] for e in report.epochs) >= 0.99


def test_zero_epochs_keep_initialisation_and_runs_repeat():
    md, segs = _two_speaker_set(1, n_segments=4)
    cfg = _small_cfg()
    ws = segment_windows([md], [segs], 50, 50, ["a", "b"])
    model, _, report = train_embedder(ws, cfg, 0, seed=5)
    init = Embedder(cfg, ["a", "b"], 5)
    assert all(np.array_equal(t.value, init.params[n].value) for n, t in model.params.items())
    assert report.epochs == []
    r1 = train_embedder(ws, cfg, 2, seed=5)[2]
    r2 = train_embedder(ws, cfg, 2, seed=5)[2]
    assert r1.epochs == r2.epochs


def test_resumed_training_matches_straight_run():
    md, segs = _two_speaker_set(2, n_segments=4)
    cfg = _small_cfg()
    ws = segment_windows([md], [segs], 50, 50, ["a", "b"])
    straight, _, rep = train_embedder(ws, cfg, 3, seed=1)
    m, opt, r = train_embedder(ws, cfg, 2, seed=1)
    m, _, r = train_embedder(ws, cfg, 1, seed=1, model=m, optimizer=opt, report=r)
    assert [e["epoch"] for e in r.epochs] == [1, 2, 3]
    assert all(np.array_equal(t.value, straight.params[n].value) for n, t in m.params.items())


def test_single_speaker_rejected():
    md, segs = _two_speaker_set(0, n_segments=2)
    ws = segment_windows([md], [[segs[0]]], 50, 50, ["a"])
    with pytest.raises(ValueError, match="2"):
        train_embedder(ws, _small_cfg(), 1)


# -- window extraction ----------------------------------------------------------------------

def test_window_counts_and_content_handling():
    cfg = gradsuite.tiny_config((), "plain")
    model = Embedder(cfg, ["a", "b"], 0)
    md = MeetingData("m", np.random.default_rng(0).normal(size=(800, 3)),
                     {"phone": np.zeros(800, dtype=np.int64)})
    embs = extract_window_dvectors(model, md, [(0, 500), (600, 720)])
    assert [e.segment_id for e in embs] == [0, 0, 0, 0, 1]
    assert all(e.vector.shape == (4,) for e in embs)
    bare = extract_window_dvectors(model, MeetingData("m", md.frames), [(0, 500), (600, 720)])
    assert all(np.array_equal(a.vector, b.vector) for a, b in zip(embs, bare))


def test_case_extraction_needs_alignment():
    cfg = gradsuite.tiny_config(("phone",), "plain")
    model = Embedder(cfg, ["a", "b"], 0)
    with pytest.raises(ValueError, match="phone"):
        extract_window_dvectors(model, MeetingData("m", np.zeros((300, 3))), [(0, 300)])


# -- VAD --------------------------------------------------------------------------------------

def _vad_stream(seed, T=3000, F=4):
    rng = np.random.default_rng(seed)
    frames = rng.normal(scale=0.01, size=(T, F))
    mask = np.zeros(T, dtype=bool)
    t = 0
    while t < T:
        n = int(rng.integers(50, 300))
        if rng.random() < 0.6:  # a speech run from a random "speaker"
            mask[t:t + n] = True
            frames[t:t + n] = rng.normal(loc=rng.choice([-1.5, 1.5], size=F), scale=0.5,
                                         size=(len(frames[t:t + n]), F))
        t += n
    return frames, mask


def test_vad_widths_and_posteriors():
    assert VadConfig(acoustic_dim=40).input_width == 2200
    model = Vad(VadConfig(acoustic_dim=4, context=3, hidden=(8,)), 0)
    post = vad_classify(model, np.random.default_rng(0).normal(size=(50, 4)))
    np.testing.assert_allclose(post.sum(axis=1), 1.0)
    assert post.min() >= 0 and post.max() <= 1


def test_vad_learns_silent_gaps():
    cfg = VadConfig(acoustic_dim=4, context=3, hidden=(16, 16))
    model, _, _ = train_vad([_vad_stream(s) for s in range(3)], cfg, 3, seed=0,
                            frames_per_epoch=4096, batch_size=128, lr=3e-3)
    frames, mask = _vad_stream(9)
    pred = vad_classify(model, frames)[:, 1] >= 0.5
    assert np.mean(pred == mask) >= 0.99


def test_smooth_speech_rules():
    post = np.array([0.9] * 30 + [0.1] * 5 + [0.9] * 30 + [0.1] * 40 + [0.9] * 10)
    assert smooth_speech(post, 0.5, min_speech=20, min_silence=20) == [(0, 65)]
    assert speech_mask(5, [(1, 3, "a")]).tolist() == [False, True, True, False, False]


# -- CPD --------------------------------------------------------------------------------------

# well separated means: every pair differs in at least two coordinates
CPD_SPEAKERS = 1.5 * np.array([[1, 1, 1, 1], [1, -1, 1, -1], [1, 1, -1, -1], [1, -1, -1, 1],
                                [-1, -1, -1, -1], [-1, 1, -1, 1]], dtype=float)


def _cpd_stream(seed, T=600):
    """Two speakers from a small fixed pool, one change at a random frame."""
    rng = np.random.default_rng(seed)
    a, b = rng.choice(len(CPD_SPEAKERS), size=2, replace=False)
    cut = int(rng.integers(150, T - 150))
    F = CPD_SPEAKERS.shape[1]
    frames = np.concatenate([CPD_SPEAKERS[a] + 0.3 * rng.normal(size=(cut, F)),
                             CPD_SPEAKERS[b] + 0.3 * rng.normal(size=(T - cut, F))])
    return frames, [(0, cut, "x"), (cut, T, "y")]


def test_pick_changes_rules():
    assert pick_changes(np.full(100, 0.3), 0.5, 50) == []
    s = np.zeros(100)
    s[40], s[50] = 0.8, 0.9
    assert pick_changes(s, 0.5, 50) == [50]
    with pytest.raises(ValueError):
        pick_changes(s, 1.0)


def test_change_labels():
    changes, edges = change_labels(30, [(0, 10, "a"), (10, 20, "b"), (25, 30, "a")])
    assert changes.tolist() == [10] and edges.tolist() == [0, 10, 20, 25, 30]


def test_cpd_detects_single_boundary():
    cfg = CpdConfig(acoustic_dim=4, context=20, rnn_hidden=16, tdnn_left=2, tdnn_right=2,
                    tdnn_hidden=(16,), dvector_dim=8)
    model, _, _ = train_cpd([_cpd_stream(s) for s in range(40)], cfg, 10, seed=0,
                            steps_per_epoch=40, batch_size=64, lr=1e-2)
    frames, segs = _cpd_stream(99)
    changes = pick_changes(cpd_score(model, frames), 0.5, 50)
    assert len(changes) == 1 and abs(changes[0] - segs[0][1]) <= 5


def test_cpd_gradient_check():
    cfg = CpdConfig(acoustic_dim=2, context=3, rnn_hidden=3, tdnn_left=1, tdnn_right=1,
                    tdnn_hidden=(4,), dvector_dim=3)
    model = Cpd(cfg, 0)
    rng = np.random.default_rng(0)
    for _, t in model.params.items():
        t.value[...] = rng.normal(scale=0.5, size=t.value.shape)
    batch = (rng.normal(size=(30, 2)), np.array([5, 12, 20]), np.array([1, 0, 1]))
    assert nd.finite_diff_check(model, batch, max_entries=None) < 1e-4
