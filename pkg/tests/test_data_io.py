import numpy as np
import pytest

from mermix.data import (
    Dataset,
    FormatError,
    Record,
    Sample,
    SynthConfig,
    default_class_names,
    make_batch,
    read_checkpoint,
    read_features,
    read_records,
    shuffle_split,
    split_by_session,
    synth_generate,
    write_checkpoint,
    write_features,
    write_records,
    xor_latent_bits,
)


def random_dataset(rng, n_utterances=10, dim=3, num_emotions=4):
    samples = []
    for i in range(n_utterances):
        samples.append(
            Sample(
                uid=f"utt{i:03d}",
                session=int(rng.integers(1, 6)),
                label=int(rng.integers(0, num_emotions)),
                audio=rng.standard_normal((int(rng.integers(1, 5)), dim)),
                text=rng.standard_normal((int(rng.integers(1, 5)), dim)),
            )
        )
    return Dataset(samples, num_emotions, default_class_names(num_emotions))


# -- byte layout -------------------------------------------------------------------


def test_empty_file_is_nine_bytes(tmp_path):
    path = str(tmp_path / "empty.mef")
    write_records([], path)
    assert (tmp_path / "empty.mef").stat().st_size == 9
    assert read_records(path) == []


def test_single_record_file_size_arithmetic(tmp_path):
    path = str(tmp_path / "one.mef")
    rec = Record("u1", 1, 0, 0, np.zeros((2, 3), dtype=np.float32))
    write_records([rec], path)
    expected = 9 + (2 + len("u1")) + 3 + 8 + 2 * 3 * 4
    assert (tmp_path / "one.mef").stat().st_size == expected


def test_roundtrip_byte_equality_50_records(tmp_path):
    rng = np.random.default_rng(0)
    dataset = random_dataset(rng, n_utterances=25)  # 50 records
    p1, p2 = str(tmp_path / "a.mef"), str(tmp_path / "b.mef")
    write_features(dataset, p1)
    write_features(read_features(p1), p2)
    assert (tmp_path / "a.mef").read_bytes() == (tmp_path / "b.mef").read_bytes()


def test_values_widen_to_float64_in_memory(tmp_path):
    path = str(tmp_path / "w.mef")
    dataset = random_dataset(np.random.default_rng(1), n_utterances=2)
    write_features(dataset, path)
    loaded = read_features(path)
    assert loaded.samples[0].audio.dtype == np.float64
    np.testing.assert_array_equal(
        loaded.samples[0].audio, dataset.samples[0].audio.astype(np.float32).astype(np.float64)
    )


def test_bad_magic_and_endianness_rejected(tmp_path):
    path = tmp_path / "bad.mef"
    write_records([], str(path))
    blob = bytearray(path.read_bytes())
    blob[0] ^= 0xFF
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="bad magic"):
        read_records(str(path))
    write_records([], str(path))
    blob = bytearray(path.read_bytes())
    blob[4] = 0x02
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError, match="endianness"):
        read_records(str(path))


def test_truncated_record_names_index(tmp_path):
    path = tmp_path / "trunc.mef"
    rng = np.random.default_rng(2)
    write_features(random_dataset(rng, n_utterances=2), str(path))
    blob = path.read_bytes()
    path.write_bytes(blob[:-5])
    with pytest.raises(FormatError, match=r"record 3"):
        read_records(str(path))


def test_duplicate_key_rejected_on_write_and_read(tmp_path):
    rec = Record("u1", 1, 0, 0, np.zeros((1, 2), dtype=np.float32))
    with pytest.raises(FormatError, match="duplicate key"):
        write_records([rec, rec], str(tmp_path / "dup.mef"))


def test_orphan_modality_rejected(tmp_path):
    path = str(tmp_path / "orphan.mef")
    write_records([Record("u1", 1, 0, 0, np.zeros((1, 2), dtype=np.float32))], path)
    with pytest.raises(FormatError, match="missing its paired modality"):
        read_features(path)


def test_mismatched_emotion_across_modalities_rejected(tmp_path):
    path = str(tmp_path / "mismatch.mef")
    write_records(
        [
            Record("u1", 1, 0, 0, np.zeros((1, 2), dtype=np.float32)),
            Record("u1", 1, 1, 1, np.zeros((1, 2), dtype=np.float32)),
        ],
        path,
    )
    with pytest.raises(FormatError, match="mismatched emotion/session"):
        read_features(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "trail.mef"
    write_features(random_dataset(np.random.default_rng(3), n_utterances=1), str(path))
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(FormatError, match="trailing bytes"):
        read_records(str(path))


def test_corrupting_any_byte_never_smears_structure(tmp_path):
    """Flip each byte in turn: the reader must error out or confine the damage
    to float payloads of a single record (the layout has no checksum, so
    payload bit-flips remain representable floats)."""
    path = tmp_path / "sweep.mef"
    dataset = random_dataset(np.random.default_rng(4), n_utterances=3, dim=2)
    write_features(dataset, str(path))
    original = path.read_bytes()
    reference = read_features(str(path))

    for offset in range(len(original)):
        corrupted = bytearray(original)
        corrupted[offset] ^= 0xFF
        path.write_bytes(bytes(corrupted))
        try:
            loaded = read_features(str(path))
        except FormatError:
            continue
        assert len(loaded.samples) == len(reference.samples), f"offset {offset}"
        damaged = 0
        for got, want in zip(loaded.samples, reference.samples):
            assert got.uid == want.uid, f"offset {offset}"
            assert got.session == want.session, f"offset {offset}"
            assert got.label == want.label, f"offset {offset}"
            assert got.audio.shape == want.audio.shape, f"offset {offset}"
            assert got.text.shape == want.text.shape, f"offset {offset}"
            same = np.array_equal(got.audio, want.audio, equal_nan=True) and np.array_equal(
                got.text, want.text, equal_nan=True
            )
            damaged += 0 if same else 1
        assert damaged == 1, f"offset {offset} damaged {damaged} records silently"


# -- checkpoints -------------------------------------------------------------------


def test_checkpoint_roundtrip(tmp_path):
    path = str(tmp_path / "ckpt.mef")
    rng = np.random.default_rng(5)
    params = {"layer0.w": rng.standard_normal((4, 4)), "layer0.b": rng.standard_normal(4)}
    vector = [8.0, 2.0, 1.0, 4.0, 1.0, 0.0]
    write_checkpoint(path, vector, params)
    got_vector, got_params = read_checkpoint(path)
    np.testing.assert_array_equal(got_vector, np.asarray(vector, dtype=np.float32))
    assert got_params["layer0.b"].shape == (4,)
    assert got_params["layer0.w"].shape == (4, 4)
    np.testing.assert_array_equal(
        got_params["layer0.w"], params["layer0.w"].astype(np.float32).astype(np.float64)
    )


def test_checkpoint_requires_config_header(tmp_path):
    path = str(tmp_path / "noheader.mef")
    write_records([Record("w", 1, 0, 2, np.zeros((2, 2), dtype=np.float32))], path)
    with pytest.raises(FormatError, match="__fusion_config__"):
        read_checkpoint(path)


# -- synthetic corpora ----------------------------------------------------------------


def test_synth_deterministic_bytes(tmp_path):
    cfg = SynthConfig(per_class_per_session=3)
    p1, p2 = str(tmp_path / "s1.mef"), str(tmp_path / "s2.mef")
    write_features(synth_generate(cfg, 7), p1)
    write_features(synth_generate(cfg, 7), p2)
    assert (tmp_path / "s1.mef").read_bytes() == (tmp_path / "s2.mef").read_bytes()
    write_features(synth_generate(cfg, 8), p2)
    assert (tmp_path / "s1.mef").read_bytes() != (tmp_path / "s2.mef").read_bytes()


def test_synth_zero_text_strength_removes_text_class_signal():
    cfg = SynthConfig(
        num_emotions=4, feature_dim=6, audio_strength=1.0, text_strength=0.0,
        per_class_per_session=50, noise=1.0,
    )
    dataset = synth_generate(cfg, 11)
    class_means = []
    for label in range(4):
        frames = np.concatenate([s.text for s in dataset.samples if s.label == label])
        class_means.append(frames.mean(axis=0))
    # With zero informativeness the text class-conditional means coincide at 0.
    for mean in class_means:
        assert np.abs(mean).max() < 0.1


def test_synth_text_only_classifier_is_at_chance_when_text_uninformative():
    from mermix.evaluate import confusion_matrix, predict_unimodal, weighted_accuracy
    from mermix.train import TrainConfig, train_unimodal

    cfg = SynthConfig(
        num_emotions=4, feature_dim=6, audio_strength=1.0, text_strength=0.0,
        per_class_per_session=30, noise=1.0,
    )
    dataset = synth_generate(cfg, 13)
    train_s = [s for s in dataset.samples if s.session != 5]
    test_s = [s for s in dataset.samples if s.session == 5]  # 480 train / 120 test per class*4
    assert len(test_s) >= 100
    tc = TrainConfig(learning_rate=1e-3, epochs=5, batch_size=32, seed=0)
    head, _ = train_unimodal(train_s, "text", cfg.feature_dim, 4, tc)
    preds = predict_unimodal(head, "text", test_s)
    cm = confusion_matrix([s.label for s in test_s], preds, 4)
    assert abs(weighted_accuracy(cm) - 0.25) <= 0.05


def test_xor_parity_bayes_oracle():
    """Latent-bit sign rules: unimodal stays at chance, the joint parity rule excels."""
    cfg = SynthConfig(
        num_emotions=2, feature_dim=8, mode="xor", noise=0.5, per_class_per_session=100,
    )
    seed = 17
    dataset = synth_generate(cfg, seed)
    assert len(dataset.samples) == 1000
    hits_uni = 0
    hits_joint = 0
    for s in dataset.samples:
        bit_a, bit_t = xor_latent_bits(s, cfg, seed)
        hits_uni += int(bit_a == s.label)  # best audio-only rule: read the bit as the label
        hits_joint += int((bit_a ^ bit_t) == s.label)
    assert abs(hits_uni / 1000 - 0.5) <= 0.03
    assert hits_joint / 1000 >= 0.97


def test_xor_pair_labels_encode_ordered_bits():
    cfg = SynthConfig(num_emotions=4, feature_dim=8, mode="xor", noise=0.3, per_class_per_session=10)
    seed = 19
    dataset = synth_generate(cfg, seed)
    hits = 0
    for s in dataset.samples:
        bit_a, bit_t = xor_latent_bits(s, cfg, seed)
        hits += int(2 * bit_a + bit_t == s.label)
    assert hits / len(dataset.samples) >= 0.97


def test_synth_validation():
    with pytest.raises(ValueError):
        SynthConfig(noise=0.0)
    with pytest.raises(ValueError):
        SynthConfig(audio_strength=1.5)
    with pytest.raises(ValueError):
        SynthConfig(mode="xor", num_emotions=3)
    with pytest.raises(ValueError):
        SynthConfig(t_min=4, t_max=3)
    with pytest.raises(ValueError):
        SynthConfig(num_emotions=9, feature_dim=8)


# -- splits ------------------------------------------------------------------------------


def test_split_by_session_sizes_and_partition():
    cfg = SynthConfig(num_emotions=2, feature_dim=4, per_class_per_session=5)
    dataset = synth_generate(cfg, 3)  # 10 per session, 50 total
    folds = split_by_session(dataset)
    assert len(folds) == 5
    all_test_ids = []
    for k, (train_s, test_s) in enumerate(folds, start=1):
        assert len(test_s) == 10 and len(train_s) == 40
        assert {s.session for s in test_s} == {k}
        assert all(s.session != k for s in train_s)
        assert not ({s.uid for s in train_s} & {s.uid for s in test_s})
        all_test_ids.extend(s.uid for s in test_s)
    assert sorted(all_test_ids) == sorted(s.uid for s in dataset.samples)


def test_split_by_session_balanced_class_counts():
    cfg = SynthConfig(num_emotions=4, feature_dim=4, per_class_per_session=6)
    dataset = synth_generate(cfg, 23)
    for _, test_s in split_by_session(dataset):
        counts = {c: 0 for c in range(4)}
        for s in test_s:
            counts[s.label] += 1
        assert set(counts.values()) == {6}


def test_split_by_session_missing_session_errors():
    cfg = SynthConfig(num_emotions=2, feature_dim=4, per_class_per_session=2)
    dataset = synth_generate(cfg, 1)
    dataset.samples = [s for s in dataset.samples if s.session != 3]
    with pytest.raises(ValueError, match="missing sessions \\[3\\]"):
        split_by_session(dataset)


def test_shuffle_split_disjoint_and_sized():
    cfg = SynthConfig(num_emotions=2, feature_dim=4, per_class_per_session=30)
    dataset = synth_generate(cfg, 2)
    train_s, test_s = shuffle_split(dataset.samples, 200, 100, np.random.default_rng(0))
    assert len(train_s) == 200 and len(test_s) == 100
    assert not ({s.uid for s in train_s} & {s.uid for s in test_s})
    with pytest.raises(ValueError):
        shuffle_split(dataset.samples, 250, 100, np.random.default_rng(0))


def test_make_batch_masks_and_dim_check():
    a = Sample("a", 1, 0, np.ones((2, 3)), np.ones((4, 3)))
    b = Sample("b", 1, 1, np.ones((3, 3)), np.ones((1, 3)))
    batch = make_batch([a, b])
    assert batch.audio.shape == (2, 3, 3)
    np.testing.assert_array_equal(batch.audio_mask, [[1, 1, 0], [1, 1, 1]])
    np.testing.assert_array_equal(batch.text_mask[1], [1, 0, 0, 0])
    with pytest.raises(ValueError, match="inconsistent feature dims"):
        make_batch([a, Sample("c", 1, 0, np.ones((2, 5)), np.ones((2, 5)))])
    with pytest.raises(ValueError):
        make_batch([])
